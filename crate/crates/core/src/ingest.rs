//! Neighborhood panel ingestion.
//!
//! A panel is one record per (neighborhood, year) carrying test counts, case
//! counts at three blood-lead thresholds and the child population. Rates are
//! never read from the file: they are always derived as `cases / tests`.
//!
//! Cells that are absent, or present with zero tests, are listed in the
//! panel's [`GapRegistry`] so that downstream stages never see a silent hole.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// United Hospital Fund neighborhood code (e.g. 201 for Greenpoint).
pub type GeoId = u32;

/// Calendar year.
pub type Year = i32;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate cell for geo_id {geo_id} in year {year}")]
    DuplicateCell { geo_id: GeoId, year: Year },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One neighborhood in one year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodYearRecord {
    pub geo_id: GeoId,
    pub geo_name: String,
    pub borough: String,
    pub year: Year,
    pub tests: u64,
    pub cases_5plus: u64,
    pub cases_10plus: u64,
    pub cases_15plus: u64,
    pub child_population: u64,
}

impl NeighborhoodYearRecord {
    /// Share of tests at or above 5 mcg/dL; `None` when no tests were run.
    pub fn rate_5plus(&self) -> Option<f64> {
        (self.tests > 0).then(|| self.cases_5plus as f64 / self.tests as f64)
    }

    /// First violated count-ordering invariant, if any.
    fn ordering_violation(&self) -> Option<String> {
        if self.cases_5plus > self.tests {
            Some(format!(
                "cases_5plus ({}) exceeds tests ({})",
                self.cases_5plus, self.tests
            ))
        } else if self.cases_10plus > self.cases_5plus {
            Some(format!(
                "cases_10plus ({}) exceeds cases_5plus ({})",
                self.cases_10plus, self.cases_5plus
            ))
        } else if self.cases_15plus > self.cases_10plus {
            Some(format!(
                "cases_15plus ({}) exceeds cases_10plus ({})",
                self.cases_15plus, self.cases_10plus
            ))
        } else {
            None
        }
    }
}

/// Inclusive range of accepted years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub first: Year,
    pub last: Year,
}

impl Default for YearRange {
    fn default() -> Self {
        YearRange {
            first: 2005,
            last: 2021,
        }
    }
}

impl YearRange {
    pub fn contains(&self, year: Year) -> bool {
        (self.first..=self.last).contains(&year)
    }
}

/// Maps logical fields onto the column names of the input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub geo_id: String,
    pub geo_name: String,
    pub borough: String,
    pub year: String,
    pub tests: String,
    pub cases_5plus: String,
    pub cases_10plus: String,
    pub cases_15plus: String,
    pub child_population: String,
    pub year_range: YearRange,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            geo_id: "geo_id".into(),
            geo_name: "geo_name".into(),
            borough: "borough".into(),
            year: "year".into(),
            tests: "tests".into(),
            cases_5plus: "cases_5plus".into(),
            cases_10plus: "cases_10plus".into(),
            cases_15plus: "cases_15plus".into(),
            child_population: "child_population".into(),
            year_range: YearRange::default(),
        }
    }
}

impl SchemaConfig {
    fn column_names(&self) -> [&str; 9] {
        [
            &self.geo_id,
            &self.geo_name,
            &self.borough,
            &self.year,
            &self.tests,
            &self.cases_5plus,
            &self.cases_10plus,
            &self.cases_15plus,
            &self.child_population,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapReason {
    /// No row for this (geo, year).
    Missing,
    /// Row present but `tests == 0`, so the rate is undefined.
    ZeroTests,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Gap {
    pub geo_id: GeoId,
    pub year: Year,
    pub reason: GapReason,
}

/// Cells without a defined rate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapRegistry {
    pub gaps: Vec<Gap>,
}

impl GapRegistry {
    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn contains(&self, geo_id: GeoId, year: Year) -> bool {
        self.gaps
            .iter()
            .any(|g| g.geo_id == geo_id && g.year == year)
    }
}

/// The full multi-year dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodPanel {
    records: Vec<NeighborhoodYearRecord>,
    years: Vec<Year>,
    geo_ids: Vec<GeoId>,
    gaps: GapRegistry,
    index: BTreeMap<(GeoId, Year), usize>,
}

impl NeighborhoodPanel {
    /// Builds a panel and derives its gap registry from the records.
    pub fn new(records: Vec<NeighborhoodYearRecord>) -> Result<Self, IngestError> {
        let mut panel = Self::with_gaps(records, GapRegistry::default())?;
        panel.gaps = panel.derive_gaps();
        Ok(panel)
    }

    /// Builds a panel with a caller-supplied gap registry, taken as is.
    /// [`validate_panel`] reports any inconsistency.
    pub fn with_gaps(
        mut records: Vec<NeighborhoodYearRecord>,
        gaps: GapRegistry,
    ) -> Result<Self, IngestError> {
        records.sort_by_key(|r| (r.geo_id, r.year));
        let mut index = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if index.insert((r.geo_id, r.year), i).is_some() {
                return Err(IngestError::DuplicateCell {
                    geo_id: r.geo_id,
                    year: r.year,
                });
            }
        }
        let years: BTreeSet<Year> = records.iter().map(|r| r.year).collect();
        let geo_ids: BTreeSet<GeoId> = records.iter().map(|r| r.geo_id).collect();
        Ok(NeighborhoodPanel {
            records,
            years: years.into_iter().collect(),
            geo_ids: geo_ids.into_iter().collect(),
            gaps,
            index,
        })
    }

    fn derive_gaps(&self) -> GapRegistry {
        let mut gaps = Vec::new();
        for &geo_id in &self.geo_ids {
            for &year in &self.years {
                match self.get(geo_id, year) {
                    None => gaps.push(Gap {
                        geo_id,
                        year,
                        reason: GapReason::Missing,
                    }),
                    Some(r) if r.tests == 0 => gaps.push(Gap {
                        geo_id,
                        year,
                        reason: GapReason::ZeroTests,
                    }),
                    Some(_) => {}
                }
            }
        }
        GapRegistry { gaps }
    }

    /// Records ordered by (geo_id, year).
    pub fn records(&self) -> &[NeighborhoodYearRecord] {
        &self.records
    }

    pub fn years(&self) -> &[Year] {
        &self.years
    }

    pub fn geo_ids(&self) -> &[GeoId] {
        &self.geo_ids
    }

    pub fn gaps(&self) -> &GapRegistry {
        &self.gaps
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, geo_id: GeoId, year: Year) -> Option<&NeighborhoodYearRecord> {
        self.index.get(&(geo_id, year)).map(|&i| &self.records[i])
    }

    pub fn rate_5plus(&self, geo_id: GeoId, year: Year) -> Option<f64> {
        self.get(geo_id, year).and_then(|r| r.rate_5plus())
    }

    /// Records of one year, in geo_id order.
    pub fn year_records(&self, year: Year) -> impl Iterator<Item = &NeighborhoodYearRecord> {
        self.geo_ids.iter().filter_map(move |&g| self.get(g, year))
    }

    /// Citywide test totals per year, in year order.
    pub fn yearly_test_totals(&self) -> Vec<(Year, u64)> {
        self.years
            .iter()
            .map(|&y| (y, self.year_records(y).map(|r| r.tests).sum()))
            .collect()
    }

    /// Most recent child population at or before `year`.
    pub fn child_population(&self, geo_id: GeoId, year: Year) -> Option<u64> {
        self.index
            .range((geo_id, Year::MIN)..=(geo_id, year))
            .next_back()
            .map(|(_, &i)| self.records[i].child_population)
    }

    /// Display name of a neighborhood (from its latest record).
    pub fn geo_name(&self, geo_id: GeoId) -> Option<&str> {
        self.index
            .range((geo_id, Year::MIN)..=(geo_id, Year::MAX))
            .next_back()
            .map(|(_, &i)| self.records[i].geo_name.as_str())
    }

    pub fn borough(&self, geo_id: GeoId) -> Option<&str> {
        self.index
            .range((geo_id, Year::MIN)..=(geo_id, Year::MAX))
            .next_back()
            .map(|(_, &i)| self.records[i].borough.as_str())
    }
}

/// A data row that was dropped during lenient parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub reason: String,
}

/// Outcome of a lenient parse: the retained panel plus the rows dropped.
#[derive(Debug, Clone)]
pub struct ParsedPanel {
    pub panel: NeighborhoodPanel,
    pub rejected: Vec<RejectedRow>,
    pub data_rows: usize,
}

/// JSON-serializable parse diagnostics, including the gap registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestDiagnostics {
    pub data_rows: usize,
    pub records: usize,
    pub rejected: Vec<RejectedRow>,
    pub gaps: GapRegistry,
}

impl ParsedPanel {
    pub fn diagnostics(&self) -> IngestDiagnostics {
        IngestDiagnostics {
            data_rows: self.data_rows,
            records: self.panel.len(),
            rejected: self.rejected.clone(),
            gaps: self.panel.gaps().clone(),
        }
    }
}

/// Parses a panel file, failing on the first malformed row.
pub fn parse_panel(
    path: impl AsRef<Path>,
    schema: &SchemaConfig,
) -> Result<NeighborhoodPanel, IngestError> {
    read_panel(File::open(path)?, schema)
}

/// Like [`parse_panel`], from any reader.
pub fn read_panel<R: Read>(
    reader: R,
    schema: &SchemaConfig,
) -> Result<NeighborhoodPanel, IngestError> {
    let parsed = read_rows(reader, schema, true)?;
    Ok(parsed.panel)
}

/// Parses a panel file, dropping malformed rows and reporting them.
pub fn parse_panel_lenient(
    path: impl AsRef<Path>,
    schema: &SchemaConfig,
) -> Result<ParsedPanel, IngestError> {
    read_panel_lenient(File::open(path)?, schema)
}

pub fn read_panel_lenient<R: Read>(
    reader: R,
    schema: &SchemaConfig,
) -> Result<ParsedPanel, IngestError> {
    read_rows(reader, schema, false)
}

fn read_rows<R: Read>(
    reader: R,
    schema: &SchemaConfig,
    strict: bool,
) -> Result<ParsedPanel, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut cols = [0usize; 9];
    for (slot, name) in cols.iter_mut().zip(schema.column_names()) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = BTreeSet::new();
    let mut data_rows = 0;
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        data_rows += 1;
        let outcome = row
            .map_err(|e| e.to_string())
            .and_then(|row| coerce_row(&row, &cols, schema));
        match outcome {
            Ok(rec) => {
                if !seen.insert((rec.geo_id, rec.year)) {
                    return Err(IngestError::DuplicateCell {
                        geo_id: rec.geo_id,
                        year: rec.year,
                    });
                }
                records.push(rec);
            }
            Err(reason) if strict => {
                return Err(IngestError::MalformedRow {
                    row: row_no,
                    reason,
                })
            }
            Err(reason) => rejected.push(RejectedRow {
                row: row_no,
                reason,
            }),
        }
    }
    Ok(ParsedPanel {
        panel: NeighborhoodPanel::new(records)?,
        rejected,
        data_rows,
    })
}

fn coerce_row(
    row: &csv::StringRecord,
    cols: &[usize; 9],
    schema: &SchemaConfig,
) -> Result<NeighborhoodYearRecord, String> {
    let field = |k: usize| -> Result<&str, String> {
        row.get(cols[k])
            .ok_or_else(|| format!("missing field `{}`", schema.column_names()[k]))
    };
    fn num<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T, String> {
        raw.parse::<T>()
            .map_err(|_| format!("cannot parse `{name}` from {raw:?}"))
    }
    let names = schema.column_names();
    let rec = NeighborhoodYearRecord {
        geo_id: num(names[0], field(0)?)?,
        geo_name: field(1)?.to_string(),
        borough: field(2)?.to_string(),
        year: num(names[3], field(3)?)?,
        tests: num(names[4], field(4)?)?,
        cases_5plus: num(names[5], field(5)?)?,
        cases_10plus: num(names[6], field(6)?)?,
        cases_15plus: num(names[7], field(7)?)?,
        child_population: num(names[8], field(8)?)?,
    };
    if let Some(reason) = rec.ordering_violation() {
        return Err(reason);
    }
    if !schema.year_range.contains(rec.year) {
        return Err(format!(
            "year {} outside {}..={}",
            rec.year, schema.year_range.first, schema.year_range.last
        ));
    }
    Ok(rec)
}

/// Writes the panel with the default column names.
pub fn write_panel<W: Write>(panel: &NeighborhoodPanel, writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in panel.records() {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    CaseOrdering {
        geo_id: GeoId,
        year: Year,
        detail: String,
    },
    YearOutOfRange {
        geo_id: GeoId,
        year: Year,
    },
    /// Cell without a defined rate that the registry does not list.
    UnregisteredGap { geo_id: GeoId, year: Year },
    /// Registry entry for a cell that has a defined rate.
    StaleGap { geo_id: GeoId, year: Year },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks record invariants against the default year range.
pub fn validate_panel(panel: &NeighborhoodPanel) -> ValidationReport {
    validate_panel_with(panel, YearRange::default())
}

pub fn validate_panel_with(panel: &NeighborhoodPanel, years: YearRange) -> ValidationReport {
    let mut violations = Vec::new();
    for r in panel.records() {
        if let Some(detail) = r.ordering_violation() {
            violations.push(Violation::CaseOrdering {
                geo_id: r.geo_id,
                year: r.year,
                detail,
            });
        }
        if !years.contains(r.year) {
            violations.push(Violation::YearOutOfRange {
                geo_id: r.geo_id,
                year: r.year,
            });
        }
    }
    for &geo_id in panel.geo_ids() {
        for &year in panel.years() {
            let undefined = panel.rate_5plus(geo_id, year).is_none();
            let listed = panel.gaps().contains(geo_id, year);
            if undefined && !listed {
                violations.push(Violation::UnregisteredGap { geo_id, year });
            } else if !undefined && listed {
                violations.push(Violation::StaleGap { geo_id, year });
            }
        }
    }
    for g in &panel.gaps().gaps {
        let known = panel.geo_ids().contains(&g.geo_id) && panel.years().contains(&g.year);
        if !known {
            violations.push(Violation::StaleGap {
                geo_id: g.geo_id,
                year: g.year,
            });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn record(geo_id: GeoId, year: Year, tests: u64, cases: u64) -> NeighborhoodYearRecord {
        NeighborhoodYearRecord {
            geo_id,
            geo_name: format!("Geo {geo_id}"),
            borough: "Brooklyn".into(),
            year,
            tests,
            cases_5plus: cases,
            cases_10plus: cases / 2,
            cases_15plus: cases / 4,
            child_population: tests * 2,
        }
    }

    fn grid_csv(geos: u32, years: std::ops::RangeInclusive<Year>) -> String {
        let mut s = String::from(
            "geo_id,geo_name,borough,year,tests,cases_5plus,cases_10plus,cases_15plus,child_population\n",
        );
        for g in 0..geos {
            for y in years.clone() {
                s.push_str(&format!(
                    "{},Area {},Queens,{},{},{},{},{},{}\n",
                    100 + g,
                    g,
                    y,
                    1000 + g,
                    10 + g,
                    5,
                    1,
                    3000
                ));
            }
        }
        s
    }

    #[test]
    fn full_grid_yields_every_record() {
        let csv = grid_csv(42, 2005..=2021);
        let panel = read_panel(csv.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(panel.len(), 42 * 17);
        assert_eq!(panel.years().len(), 17);
        assert_eq!(panel.geo_ids().len(), 42);
        assert!(panel.gaps().is_empty());
        assert!(validate_panel(&panel).is_clean());
    }

    #[test]
    fn header_only_is_empty_panel() {
        let csv = "geo_id,geo_name,borough,year,tests,cases_5plus,cases_10plus,cases_15plus,child_population\n";
        let panel = read_panel(csv.as_bytes(), &SchemaConfig::default()).unwrap();
        assert!(panel.is_empty());
        assert!(panel.gaps().is_empty());
    }

    #[test]
    fn cases_above_tests_is_malformed() {
        let csv = "geo_id,geo_name,borough,year,tests,cases_5plus,cases_10plus,cases_15plus,child_population\n\
                   201,Greenpoint,Brooklyn,2021,10,11,0,0,100\n";
        match read_panel(csv.as_bytes(), &SchemaConfig::default()) {
            Err(IngestError::MalformedRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "geo_id,geo_name,borough,year,tests\n";
        match read_panel(csv.as_bytes(), &SchemaConfig::default()) {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "cases_5plus"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_cell_is_rejected() {
        let csv = "geo_id,geo_name,borough,year,tests,cases_5plus,cases_10plus,cases_15plus,child_population\n\
                   201,Greenpoint,Brooklyn,2021,10,1,0,0,100\n\
                   201,Greenpoint,Brooklyn,2021,12,1,0,0,100\n";
        assert!(matches!(
            read_panel(csv.as_bytes(), &SchemaConfig::default()),
            Err(IngestError::DuplicateCell {
                geo_id: 201,
                year: 2021
            })
        ));
    }

    #[test]
    fn lenient_parse_accounts_for_every_row() {
        let csv = "geo_id,geo_name,borough,year,tests,cases_5plus,cases_10plus,cases_15plus,child_population\n\
                   201,Greenpoint,Brooklyn,2021,10,1,0,0,100\n\
                   202,Bad,Brooklyn,2021,ten,1,0,0,100\n\
                   203,Early,Brooklyn,1999,10,1,0,0,100\n\
                   204,Ok,Brooklyn,2021,0,0,0,0,100\n";
        let parsed = read_panel_lenient(csv.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(parsed.data_rows, 4);
        assert_eq!(parsed.panel.len() + parsed.rejected.len(), parsed.data_rows);
        assert_eq!(
            parsed.rejected.iter().map(|r| r.row).collect::<Vec<_>>(),
            vec![2, 3]
        );
        // zero-test cell is carried but registered as a gap
        assert_eq!(
            parsed.panel.gaps().gaps,
            vec![Gap {
                geo_id: 204,
                year: 2021,
                reason: GapReason::ZeroTests
            }]
        );
        let json = serde_json::to_string(&parsed.diagnostics()).unwrap();
        assert!(json.contains("zero_tests"));
    }

    #[test]
    fn custom_column_names() {
        let schema = SchemaConfig {
            geo_id: "GeoID".into(),
            tests: "Tests".into(),
            ..SchemaConfig::default()
        };
        let csv = "GeoID,geo_name,borough,year,Tests,cases_5plus,cases_10plus,cases_15plus,child_population\n\
                   201,Greenpoint,Brooklyn,2021,3760,97,20,5,9000\n";
        let panel = read_panel(csv.as_bytes(), &schema).unwrap();
        assert_eq!(panel.get(201, 2021).unwrap().tests, 3760);
    }

    #[test]
    fn missing_cell_is_registered() {
        let records = vec![record(1, 2020, 10, 1), record(1, 2021, 10, 1), record(2, 2021, 10, 1)];
        let panel = NeighborhoodPanel::new(records).unwrap();
        assert_eq!(
            panel.gaps().gaps,
            vec![Gap {
                geo_id: 2,
                year: 2020,
                reason: GapReason::Missing
            }]
        );
        assert!(validate_panel(&panel).is_clean());
    }

    #[test]
    fn validation_flags_case_ordering() {
        let mut bad = record(7, 2010, 100, 10);
        bad.cases_10plus = 11;
        let records = vec![record(6, 2010, 100, 10), bad];
        let panel = NeighborhoodPanel::new(records).unwrap();
        let report = validate_panel(&panel);
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::CaseOrdering { geo_id, year, .. } => assert_eq!((*geo_id, *year), (7, 2010)),
            v => panic!("unexpected {v:?}"),
        }
    }

    #[test]
    fn validation_flags_unregistered_gap() {
        let records = vec![record(1, 2020, 10, 1), record(1, 2021, 10, 1), record(2, 2021, 10, 1)];
        let panel = NeighborhoodPanel::with_gaps(records, GapRegistry::default()).unwrap();
        let report = validate_panel(&panel);
        assert_eq!(
            report.violations,
            vec![Violation::UnregisteredGap {
                geo_id: 2,
                year: 2020
            }]
        );
    }

    #[test]
    fn round_trip_is_stable() {
        let csv = grid_csv(5, 2018..=2021);
        let panel = read_panel(csv.as_bytes(), &SchemaConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_panel(&panel, &mut buf).unwrap();
        let again = read_panel(buf.as_slice(), &SchemaConfig::default()).unwrap();
        assert_eq!(panel, again);
    }

    #[test]
    fn population_falls_back_to_latest_prior_year() {
        let mut late = record(1, 2021, 10, 1);
        late.child_population = 77;
        let panel = NeighborhoodPanel::new(vec![record(1, 2019, 10, 1), late]).unwrap();
        assert_eq!(panel.child_population(1, 2020), Some(20));
        assert_eq!(panel.child_population(1, 2021), Some(77));
        assert_eq!(panel.child_population(1, 2018), None);
    }
}
