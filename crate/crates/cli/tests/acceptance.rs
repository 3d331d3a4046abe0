//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. The real-data check runs only when
//! `LEADALLOC_NYC_PANEL` points at the public panel (with an optional
//! `LEADALLOC_NYC_CONFIG` TOML for column names); otherwise it prints SKIP.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use leadalloc::cluster::{k_medoids, SeriesVector};
use leadalloc::evaluate::{normal_two_sided_p, two_proportion_ztest};
use leadalloc::ingest::{NeighborhoodPanel, NeighborhoodYearRecord};
use leadalloc::normalize::mean_normalize_year;
use leadalloc::optimize::{
    compute_shares, finalize_tests, grid_search, v2_share, AllocationPlan, AxisRange,
    ConstraintConfig, GridConfig, ShareVectors,
};
use leadalloc_cli::pipeline::{load_panel, run_optimize, PLAN_JSON};
use leadalloc_cli::{run_pipeline, FileConfig, RunConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/panel6.csv")
}

fn normalization_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut scale_breaks = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-4..1.0)).collect();
        let out = mean_normalize_year(&v).unwrap();
        let mean = out.iter().sum::<f64>() / n as f64;
        worst = worst.max((mean - 1.0).abs());
        let c = 2f64.powi(rng.gen_range(-20..=20));
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        if mean_normalize_year(&scaled).unwrap() != out {
            scale_breaks += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-9 && scale_breaks == 0 && elapsed < Duration::from_secs(1),
        format!("max |mean-1| = {worst:.2e}, scale mismatches = {scale_breaks}, {elapsed:.2?}"),
    )
}

fn random_panel(rng: &mut ChaCha8Rng, n: usize, years: &[i32]) -> NeighborhoodPanel {
    let mut records = Vec::new();
    for g in 1..=n as u32 {
        let pop = rng.gen_range(500..5000u64);
        for &year in years {
            let tests = rng.gen_range(50..400u64);
            let cases = rng.gen_range(0..=tests / 5);
            records.push(NeighborhoodYearRecord {
                geo_id: g,
                geo_name: format!("n{g}"),
                borough: "b".into(),
                year,
                tests,
                cases_5plus: cases,
                cases_10plus: cases / 2,
                cases_15plus: cases / 4,
                child_population: pop,
            });
        }
    }
    NeighborhoodPanel::new(records).unwrap()
}

fn identity_holds(shares: &ShareVectors, total: u64) -> bool {
    let Ok(v2) = v2_share(shares, 1.0, 0.0) else {
        return false;
    };
    let plan = AllocationPlan::new(shares, 1.0, 0.0, total).unwrap();
    v2 == shares.x && plan.delta_cases == 0.0
}

fn identity_baseline() -> Verdict {
    let mut checked = 0;
    let mut broken = 0;
    let fixture = load_panel(&RunConfig {
        input_path: fixture(),
        ..RunConfig::default()
    })
    .unwrap();
    let mut panels = vec![fixture];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let n = rng.gen_range(1..=30);
        panels.push(random_panel(&mut rng, n, &[2019, 2020, 2021]));
    }
    if let Ok(path) = std::env::var("LEADALLOC_NYC_PANEL") {
        if let Ok(cfg) = nyc_config(&path) {
            if let Ok(panel) = load_panel(&cfg) {
                panels.push(panel);
            }
        }
    }
    for panel in &panels {
        let year = *panel.years().last().unwrap();
        let shares = compute_shares(panel, year, 3).unwrap();
        checked += 1;
        if !identity_holds(&shares, 100_000) {
            broken += 1;
        }
    }
    verdict(broken == 0, format!("{checked} panels, {broken} mismatches"))
}

/// Written from the definitions alone: score, normalize, apportion, check the
/// floor and the population cap, keep the first strict maximum in (p1, p2)
/// lexicographic order.
fn enumerate_argmax(
    x: &[f64],
    y: &[f64],
    rates: &[f64],
    populations: &[u64],
    total: u64,
    p1s: &[f64],
    p2s: &[f64],
    floor: f64,
) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for &a in p1s {
        for &b in p2s {
            if a + b <= 0.0 {
                continue;
            }
            let mut share = Vec::with_capacity(x.len());
            let mut negative = false;
            for i in 0..x.len() {
                let s = x[i] * a + y[i] * b;
                negative |= s < 0.0;
                share.push(s / (a + b));
            }
            if negative {
                continue;
            }
            if (0..x.len()).any(|i| share[i] < floor * x[i]) {
                continue;
            }
            let tests = finalize_tests(&share, total);
            if (0..x.len()).any(|i| tests[i] > populations[i]) {
                continue;
            }
            let mut gain = 0.0;
            for i in 0..x.len() {
                gain += rates[i] * (share[i] - x[i]);
            }
            let gain = total as f64 * gain;
            match best {
                Some((_, _, g)) if gain <= g => {}
                _ => best = Some((a, b, gain)),
            }
        }
    }
    best.map(|(a, b, _)| (a, b))
}

fn optimizer_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = GridConfig {
        p1: AxisRange::new(-1.0, 1.0, 0.2).unwrap(),
        p2: AxisRange::new(0.0, 1.0, 0.1).unwrap(),
    };
    let constraints = ConstraintConfig::default();
    let start = Instant::now();
    let (mut agree, mut instances, mut infeasible) = (0, 0, 0);
    while instances < 40 {
        let n = rng.gen_range(1..=5);
        let panel = random_panel(&mut rng, n, &[2020, 2021]);
        let shares = compute_shares(&panel, 2021, 2).unwrap();
        let pops: Vec<u64> = shares
            .geo_ids
            .iter()
            .map(|&g| panel.child_population(g, 2021).unwrap())
            .collect();
        // mostly below the summed cap so the cap binds on some points only
        let total = rng.gen_range(100..=pops.iter().sum::<u64>() / 2);
        let expected = enumerate_argmax(
            &shares.x,
            &shares.y,
            &shares.rates,
            &pops,
            total,
            &grid.p1.values(),
            &grid.p2.values(),
            constraints.floor_fraction,
        );
        instances += 1;
        match (grid_search(&panel, &shares, total, &grid, &constraints), expected) {
            (Ok(out), Some(point)) if (out.best.p1, out.best.p2) == point => agree += 1,
            (Err(_), None) => {
                agree += 1;
                infeasible += 1;
            }
            _ => {}
        }
    }
    let elapsed = start.elapsed();
    verdict(
        agree == instances && instances - infeasible >= 20 && elapsed < Duration::from_secs(5),
        format!(
            "{agree}/{instances} instances agree ({infeasible} infeasible), {} grid points, {elapsed:.2?}",
            grid.points().len()
        ),
    )
}

fn kmedoids_recovery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let levels = [0.5, 1.0, 1.8];
    let (mut recovered, mut monotone) = (0, 0);
    for _ in 0..100 {
        let mut ids: Vec<u32> = (1..=12).map(|i| i * 7 + rng.gen_range(0..7)).collect();
        ids.shuffle(&mut rng);
        let mut series = Vec::new();
        let mut truth: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); 3];
        for (i, &g) in ids.iter().enumerate() {
            let group = i % 3;
            truth[group].insert(g);
            series.push(SeriesVector {
                geo_id: g,
                values: (0..17)
                    .map(|_| levels[group] + rng.gen_range(-0.045..0.045))
                    .collect(),
            });
        }
        series.shuffle(&mut rng);
        let out = k_medoids(&series, 3, None, 100).unwrap();
        let mut found: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); 3];
        for (&g, &c) in &out.membership {
            found[c].insert(g);
        }
        found.sort();
        truth.sort();
        if found == truth {
            recovered += 1;
        }
        if out.cost_history.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    verdict(
        recovered >= 95 && monotone == 100,
        format!("recovered {recovered}/100, monotone cost {monotone}/100"),
    )
}

fn ztest() -> Verdict {
    let (c1, c2, n) = (2860.0, 3270.0, 260_000.0);
    let t = two_proportion_ztest(c1, n, c2, n).unwrap();
    let pooled = (c1 + c2) / (2.0 * n);
    let oracle = (c2 - c1) / n / (pooled * (1.0 - pooled) * 2.0 / n).sqrt();
    let p196 = normal_two_sided_p(1.96);
    verdict(
        (t.z - oracle).abs() <= 1e-6 && t.p_value < 0.05 && (p196 - 0.05).abs() <= 1e-4,
        format!(
            "z = {:.6} (oracle {oracle:.6}), p = {:.3e}, p(1.96) = {p196:.6}",
            t.z, t.p_value
        ),
    )
}

fn nyc_config(panel: &str) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Ok(path) = std::env::var("LEADALLOC_NYC_CONFIG") {
        FileConfig::load(Path::new(&path))
            .and_then(|f| f.apply(&mut cfg))
            .map_err(|e| e.to_string())?;
    }
    cfg.input_path = PathBuf::from(panel);
    Ok(cfg)
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

fn nyc_reproduction() -> Verdict {
    let Ok(path) = std::env::var("LEADALLOC_NYC_PANEL") else {
        return Verdict::Skip("LEADALLOC_NYC_PANEL not set".into());
    };
    let run = || -> Result<(Vec<String>, Vec<String>), String> {
        let wide_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let narrow_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = nyc_config(&path)?;
        cfg.output_dir = wide_dir.path().to_path_buf();

        // forecast is checked on its own; the case figures use the stated total
        let forecast = {
            let probe = RunConfig {
                total_tests_override: None,
                ..cfg.clone()
            };
            run_pipeline(&probe)
                .map_err(|e| e.to_string())?
                .distribution
                .forecast_total_tests
        };
        cfg.total_tests_override = Some(260_000);
        cfg.grid = GridConfig::wide();
        let wide = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        let narrow_cfg = RunConfig {
            output_dir: narrow_dir.path().to_path_buf(),
            grid: GridConfig::narrow(),
            ..cfg.clone()
        };
        run_optimize(&narrow_cfg).map_err(|e| e.to_string())?;
        let narrow = AllocationPlan::from_json(
            &fs::read_to_string(narrow_dir.path().join(PLAN_JSON)).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;

        let r = &wide.report;
        let slope = wide.distribution.share_regression.map(|f| f.slope);
        let lower_manhattan = r.reallocation_pct.get(&310).copied().flatten();
        let checks = [
            ("baseline cases", within(r.cases_v1, 2860.0, 0.10), format!("{:.0}", r.cases_v1)),
            ("optimized cases", within(r.cases_v2, 3270.0, 0.10), format!("{:.0}", r.cases_v2)),
            (
                "improvement",
                r.improvement_pct.is_some_and(|p| (p - 14.3).abs() <= 3.0),
                format!("{:?}", r.improvement_pct),
            ),
            ("delta", within(r.delta_cases, 410.0, 0.15), format!("{:.1}", r.delta_cases)),
            (
                "forecast",
                forecast.is_some_and(|t| within(t as f64, 260_000.0, 0.15)),
                format!("{forecast:?}"),
            ),
            (
                "share slope",
                slope.is_some_and(|s| (s - 1.04).abs() <= 0.05),
                format!("{slope:?}"),
            ),
            (
                "geo 310",
                lower_manhattan.is_some_and(|p| (p - 25.0).abs() <= 10.0),
                format!("{lower_manhattan:?}"),
            ),
            (
                "grid robustness",
                narrow.v2_tests == wide.plan.v2_tests,
                format!(
                    "wide ({}, {}) narrow ({}, {})",
                    wide.plan.p1, wide.plan.p2, narrow.p1, narrow.p2
                ),
            ),
        ];
        let mut passed = Vec::new();
        let mut failed = Vec::new();
        for (name, ok, detail) in checks {
            let line = format!("{name} {detail}");
            if ok {
                passed.push(line)
            } else {
                failed.push(line)
            }
        }
        Ok((passed, failed))
    };
    match run() {
        Ok((passed, failed)) => verdict(
            failed.is_empty(),
            format!("ok: [{}] failed: [{}]", passed.join("; "), failed.join("; ")),
        ),
        Err(e) => Verdict::Fail(format!("pipeline error: {e}")),
    }
}

fn determinism() -> Verdict {
    let start = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for dir in &dirs {
        let cfg = RunConfig {
            input_path: fixture(),
            output_dir: dir.path().to_path_buf(),
            emit_trace: true,
            ..RunConfig::default()
        };
        if let Err(e) = run_pipeline(&cfg) {
            return Verdict::Fail(format!("fixture run failed: {e}"));
        }
        let mut names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        files.push(
            names
                .into_iter()
                .map(|n| (n.clone(), fs::read(dir.path().join(n)).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    let elapsed = start.elapsed() / 2;
    verdict(
        files[0] == files[1] && elapsed < Duration::from_secs(10),
        format!("{} artifacts identical, {elapsed:.2?} per run", files[0].len()),
    )
}

fn apportionment() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut bad_sum, mut bad_dev) = (0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let shares: Vec<f64> = raw.iter().map(|r| r / sum).collect();
        let total = rng.gen_range(0..=1_000_000u64);
        let tests = finalize_tests(&shares, total);
        if tests.iter().sum::<u64>() != total {
            bad_sum += 1;
        }
        for (t, s) in tests.iter().zip(&shares) {
            let dev = (*t as f64 - s * total as f64).abs();
            worst = worst.max(dev);
            if dev >= 1.0 {
                bad_dev += 1;
            }
        }
    }
    verdict(
        bad_sum == 0 && bad_dev == 0,
        format!("sum mismatches {bad_sum}, entries off by >= 1: {bad_dev}, max deviation {worst:.4}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("1 normalization invariants", normalization_invariants),
        ("2 identity baseline", identity_baseline),
        ("3 optimizer matches enumerator", optimizer_oracle),
        ("4 k-medoids recovery", kmedoids_recovery),
        ("5 z-test", ztest),
        ("6 NYC panel reproduction", nyc_reproduction),
        ("7 fixture determinism", determinism),
        ("8 apportionment", apportionment),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        match check() {
            Verdict::Pass(d) => println!("PASS {name}: {d}"),
            Verdict::Fail(d) => {
                failures += 1;
                println!("FAIL {name}: {d}");
            }
            Verdict::Skip(d) => println!("SKIP {name}: {d}"),
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
