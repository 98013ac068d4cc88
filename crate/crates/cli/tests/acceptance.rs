//! Acceptance suite: one PASS/FAIL line per criterion, with its measured
//! values and wall time. Exits nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use sizegrid_core::app::pipeline::load_corpus;
use sizegrid_core::app::{run_pipeline, CorpusSource, PipelineConfig, RunArtifacts};
use sizegrid_core::classifiers::logistic::{gradient, loss, LogisticModel};
use sizegrid_core::classifiers::ModelKind;
use sizegrid_core::domain::normalize_size_token;
use sizegrid_core::evaluation::{metrics, pairwise_auc, roc_auc, ConfusionMatrix};
use sizegrid_core::features::kpi::{rolling_aggregate, KpiRecord};
use sizegrid_core::features::neighbors::{neighbor_cells, Circle};
use sizegrid_core::features::{assemble_feature_table, header, FeatureTable, N_CATEGORICAL, N_CONTINUOUS, N_FLAGS, ROW_ARITY};
use sizegrid_core::preprocess::{smote_oversample, Dataset, EncodingConfig, EncodingMode, Preprocessor, SmoteConfig};
use sizegrid_core::rng::stream;
use sizegrid_core::synth::{generate_corpus, CorpusConfig};
use sizegrid_core::{parse_season, previous_seasons, SeasonCode, SizeGrid};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<String, String> {
    let line = format!("{name} {got:.6} (target {want} +/- {tol})");
    ensure((got - want).abs() <= tol, || line.clone())?;
    Ok(line)
}

fn season(code: i64) -> SeasonCode {
    parse_season(code).unwrap()
}

fn metric_identities() -> Check {
    let c = ConfusionMatrix::new(173_126, 12, 697, 48_156);
    let m = metrics(&c);
    let parts = [
        within("recall", m.recall.unwrap(), 0.9857, 0.0001)?,
        within("specificity", m.specificity.unwrap(), 0.9999, 0.0001)?,
        within("fpr", m.fpr.unwrap(), 0.0001, 0.00005)?,
        within("misclassification", m.misclassification.unwrap(), 0.0032, 0.0001)?,
    ];
    Ok(parts.join(", "))
}

fn auc_oracle() -> Check {
    let mut rng = stream(2024, &[0xa0c]);
    let mut worst = 0.0f64;
    for set in 0..200 {
        let n = rng.random_range(2..=500);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // Half the sets use coarse, heavily tied scores.
        let levels = if set % 2 == 0 { 10.0 } else { 1e9 };
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * levels).floor() / levels).collect();
        let a = roc_auc(&labels, &scores).map_err(|e| e.to_string())?.auc;
        let b = pairwise_auc(&labels, &scores).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
    }
    ensure(worst <= 1e-12, || format!("max |trapezoid - pairs| = {worst:e}"))?;
    Ok(format!("200 sets, max |trapezoid - pair count| = {worst:e}"))
}

fn desk_corpus() -> CorpusConfig {
    CorpusConfig {
        n_grid_names: 8,
        n_planning_groups: 4,
        ..CorpusConfig::default()
    }
}

fn rolling_oracle() -> Check {
    let expected: Vec<SeasonCode> = [191, 183, 181, 173].into_iter().map(season).collect();
    ensure(previous_seasons(season(193), 4) == expected, || "previous_seasons(193, 4) is wrong".into())?;

    let cfg = PipelineConfig {
        corpus: CorpusSource::Synthetic(desk_corpus()),
        ..PipelineConfig::default()
    };
    let corpus = load_corpus(&cfg).map_err(|e| e.to_string())?;
    let records = corpus.records();
    let at: Vec<SeasonCode> = corpus.seasons().into_iter().collect();
    ensure(at.contains(&season(193)), || "corpus lacks season 193".into())?;
    let rolled = rolling_aggregate(&records, 4, &at);

    let mut by_series: BTreeMap<(u16, u16, u16), Vec<&KpiRecord>> = BTreeMap::new();
    for r in &records {
        by_series.entry(r.key.series()).or_default().push(r);
    }
    let sum = |xs: &[Option<f64>]| -> Option<f64> {
        let present: Vec<f64> = xs.iter().flatten().copied().collect();
        (!present.is_empty()).then(|| present.iter().sum())
    };
    let mut brute = Vec::new();
    for (&(p, g, c), rs) in &by_series {
        for &s in &at {
            let window = previous_seasons(s, 4);
            let hits: Vec<&&KpiRecord> = rs.iter().filter(|r| window.contains(&r.key.season)).collect();
            // Same summation order as the window enumeration.
            let mut ordered: Vec<&KpiRecord> = Vec::new();
            for w in &window {
                ordered.extend(hits.iter().filter(|r| r.key.season == *w).map(|r| **r));
            }
            let ad = sum(&ordered.iter().map(|r| r.adjusted_demand).collect::<Vec<_>>());
            let so = sum(&ordered.iter().map(|r| r.sell_out).collect::<Vec<_>>());
            let st = sum(&ordered.iter().map(|r| r.stock).collect::<Vec<_>>());
            if ad.is_none() && so.is_none() && st.is_none() {
                continue;
            }
            brute.push((s, p, g, c, ad, so, st));
        }
    }
    brute.sort_by_key(|b| (b.0, b.1, b.2, b.3));
    ensure(brute.len() == rolled.len(), || format!("{} rolled keys vs {} brute-force keys", rolled.len(), brute.len()))?;
    for (r, b) in rolled.iter().zip(&brute) {
        let got = (r.key.season, r.key.planning_group, r.key.grid, r.key.cell, r.adjusted_demand, r.sell_out, r.stock);
        ensure(got == *b, || format!("mismatch at {:?}: {got:?} vs {b:?}", r.key))?;
    }
    let n193 = rolled.iter().filter(|r| r.key.season == season(193)).count();
    Ok(format!("{} keys over {} seasons match exactly ({n193} at season 193)", rolled.len(), at.len()))
}

fn ring_labels(grid: &SizeGrid, i: usize, j: usize, circle: Circle) -> Vec<String> {
    let cell = grid.cell_at(i, j).unwrap();
    neighbor_cells(cell, grid, circle)
        .into_iter()
        .filter_map(|(_, c)| c.map(|c| format!("{} {}", c.dim1, c.dim2.as_deref().unwrap_or(""))))
        .collect()
}

fn neighbor_correctness() -> Check {
    let waists = (26..=34).map(|w| w.to_string()).collect();
    let lengths = (28..=40).step_by(2).map(|l| l.to_string()).collect();
    let g = SizeGrid::new("MB-511-H", waists, lengths).map_err(|e| e.to_string())?;
    let c = g.find("29", Some("34")).unwrap();
    let c1 = ring_labels(&g, c.i, c.j, Circle::First);
    let c2 = ring_labels(&g, c.i, c.j, Circle::Second);
    let want1 = ["28 32", "29 32", "30 32", "28 34", "30 34", "28 36", "29 36", "30 36"];
    let want2 = [
        "27 30", "28 30", "29 30", "30 30", "31 30", "27 32", "31 32", "27 34", "31 34", "27 36", "31 36", "27 38",
        "28 38", "29 38", "30 38", "31 38",
    ];
    ensure(c1 == want1, || format!("circle 1 of (29, 34): {c1:?}"))?;
    ensure(c2 == want2, || format!("circle 2 of (29, 34): {c2:?}"))?;

    let mut rng = stream(7, &[0x9e1]);
    for n in 0..1000 {
        let w = rng.random_range(1..=12);
        let h = rng.random_range(0..=9);
        let d1: Vec<String> = (0..w).map(|k| format!("{}", 24 + k)).collect();
        let d2: Vec<String> = (0..h).map(|k| format!("{}", 28 + 2 * k)).collect();
        let g = SizeGrid::new("MB-Rand-M", d1, d2).map_err(|e| e.to_string())?;
        let cell = &g.cells()[rng.random_range(0..g.len())];
        for (circle, d) in [(Circle::First, 1), (Circle::Second, 2)] {
            let ring = neighbor_cells(cell, &g, circle);
            ensure(ring.len() == 8 * d, || format!("circle {d} has {} slots", ring.len()))?;
            let got: BTreeSet<(usize, usize)> = ring.iter().filter_map(|(_, c)| c.map(|c| (c.i, c.j))).collect();
            let scan: BTreeSet<(usize, usize)> =
                g.cells().iter().filter(|o| o.chebyshev(cell) == d).map(|o| (o.i, o.j)).collect();
            ensure(got == scan, || format!("random cell {n}: circle {d} {got:?} vs scan {scan:?}"))?;
        }
    }
    Ok("figure grid rings exact (8 + 16 cells); 1000 random cells match the grid scan".into())
}

fn feature_arity(table: &FeatureTable) -> Check {
    let n = table.len();
    ensure(header().len() == ROW_ARITY + 1, || format!("header has {} columns", header().len()))?;
    ensure(table.continuous.len() == n * N_CONTINUOUS, || "continuous block size".into())?;
    ensure(table.flags.len() == n * N_FLAGS, || "flag block size".into())?;
    ensure(table.categorical.len() == n * N_CATEGORICAL, || "categorical block size".into())?;
    for k in 0..n {
        let r = table.row(k);
        let shape = (r.continuous.len(), r.flags.len(), r.categorical.len(), r.arity());
        ensure(shape == (75, 50, 9, 135), || format!("row {k} has shape {shape:?}"))?;
    }
    Ok(format!("{n} rows, each 75 continuous + 50 flags + 9 categorical + 1 target"))
}

fn encoding_cardinality() -> Check {
    let counts = [464usize, 79, 26, 38, 10, 3, 2, 2, 2];
    let mut t = FeatureTable::new();
    let cont = vec![0.0; N_CONTINUOUS];
    let flags = vec![0u8; N_FLAGS];
    for k in 0..464 {
        let cats: Vec<String> = counts.iter().enumerate().map(|(c, &m)| format!("c{c}_{}", k % m)).collect();
        let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
        t.push_parts(season(191), &cont, &flags, &refs, (k % 3 == 0) as u8);
    }
    let fit = |mode| {
        Preprocessor::fit(
            &t,
            &EncodingConfig {
                mode,
                ..EncodingConfig::default()
            },
        )
        .map(|p| p.categorical_width())
        .map_err(|e| e.to_string())
    };
    let dummy = fit(EncodingMode::DummyOnly)?;
    let target = fit(EncodingMode::TargetPlusDummy)?;
    ensure((dummy, target) == (626, 14), || format!("dummy-only {dummy}, target-plus-dummy {target}"))?;
    Ok(format!("dummy-only {dummy} indicator columns, target-plus-dummy {target} categorical columns"))
}

fn logistic_gradient() -> Check {
    let mut rng = stream(11, &[0x10c]);
    let d = 6;
    let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<u8> = rows.iter().map(|r| (r[0] - 0.5 * r[1] + rng.random_range(-1.0..1.0) > 0.0) as u8).collect();
    let data = Dataset::from_rows(&rows, &y).map_err(|e| e.to_string())?;
    let l2 = 1e-3;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let m = LogisticModel {
            weights: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            bias: rng.random_range(-1.0..1.0),
        };
        let (gw, gb) = gradient(&m, &data, l2);
        let mut analytic = gw.clone();
        analytic.push(gb);
        let mut numeric = Vec::with_capacity(d + 1);
        for p in 0..=d {
            let shifted = |delta: f64| {
                let mut q = m.clone();
                if p < d {
                    q.weights[p] += delta;
                } else {
                    q.bias += delta;
                }
                loss(&q, &data, l2)
            };
            numeric.push((shifted(h) - shifted(-h)) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / scale.max(1e-12));
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("10 points, max relative error {worst:e} (limit 1e-4)"))
}

fn smote_geometry() -> Check {
    let mut rng = stream(5, &[0x5e0]);
    let d = 5;
    let (n_major, n_minor) = (1400, 400);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for k in 0..n_major + n_minor {
        let shift = if k < n_major { 0.0 } else { 1.5 };
        rows.push((0..d).map(|_| shift + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        y.push((k >= n_major) as u8);
    }
    let data = Dataset::from_rows(&rows, &y).map_err(|e| e.to_string())?;
    let out = smote_oversample(&data, &SmoteConfig::default()).map_err(|e| e.to_string())?;
    ensure(out.synthetic.len() == 1000, || format!("{} synthetic rows", out.synthetic.len()))?;
    let n_in = data.n_rows();
    for (s, syn) in out.synthetic.iter().enumerate() {
        let row = out.data.row(n_in + s);
        let (a, b) = (data.row(syn.base), data.row(syn.neighbor));
        ensure(data.y[syn.base] == 1 && data.y[syn.neighbor] == 1, || format!("row {s} has a majority parent"))?;
        for c in 0..d {
            let (lo, hi) = (a[c].min(b[c]), a[c].max(b[c]));
            ensure(row[c] >= lo && row[c] <= hi, || format!("synthetic row {s} column {c} outside its segment"))?;
        }
    }
    let pos = out.data.positives();
    let neg = out.data.n_rows() - pos;
    ensure(pos.abs_diff(neg) <= 1, || format!("post-SMOTE classes {pos}:{neg}"))?;
    Ok(format!("1000 synthetic rows on their segments; classes {pos}:{neg}"))
}

fn learnability(a: &RunArtifacts) -> Check {
    let s = a.stages.last().ok_or("no stage ran")?;
    let get = |k: ModelKind| {
        s.reports
            .iter()
            .find(|r| r.model == k.label())
            .ok_or_else(|| format!("no {} report", k.label()))
    };
    let mut parts = Vec::new();
    for k in [ModelKind::BoostedTrees, ModelKind::RandomForest] {
        let r = get(k)?;
        let acc = r.metrics.accuracy.unwrap_or(0.0);
        ensure(r.auc >= 0.97 && acc >= 0.95, || format!("{} auc {:.4} accuracy {acc:.4}", k.label(), r.auc))?;
        parts.push(format!("{} auc {:.4} acc {acc:.4}", k.label(), r.auc));
    }
    let nb = get(ModelKind::NaiveBayes)?.metrics.accuracy.unwrap_or(0.0);
    ensure(nb >= 0.70, || format!("NB accuracy {nb:.4}"))?;
    parts.push(format!("NB acc {nb:.4}"));
    let full = s.learning_curve.last().ok_or("no learning curve")?;
    ensure(full.size == s.train_rows, || "last curve point is not full size".into())?;
    let gap = full.train_accuracy - full.validation_accuracy;
    ensure(gap <= 0.05, || format!("learning-curve gap {gap:.4}"))?;
    parts.push(format!("curve gap {gap:.4} at {} rows", full.size));
    Ok(parts.join(", "))
}

fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let head = r.headers().map_err(|e| e.to_string())?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(head.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}

/// Recounts false-negative demand and revenue straight from the raw tables.
fn impact_oracle(a: &RunArtifacts, corpus: &CorpusConfig) -> Check {
    let impact = a.test.impact.ok_or("test report has no impact")?;
    let raw = generate_corpus(corpus).map_err(|e| e.to_string())?.tables;
    let pm = &raw.product_master;
    let used: BTreeSet<&str> = raw
        .tool_selections
        .rows
        .iter()
        .map(|r| r[2].as_str())
        .chain(raw.fact_sizes.rows.iter().map(|r| r[1].as_str()))
        .collect();
    let eligible = |r: &Vec<String>| {
        matches!(r[2].to_ascii_uppercase().as_str(), "TOPS" | "TOP" | "BOTTOMS" | "BOTTOM")
            && !matches!(r[6].to_ascii_uppercase().as_str(), "Y" | "YES" | "1" | "TRUE")
            && !matches!(r[7].to_ascii_uppercase().as_str(), "Y" | "YES" | "1" | "TRUE")
    };
    let mut grid_of: BTreeMap<&str, &str> = BTreeMap::new();
    let mut price_sum: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in pm.rows.iter().filter(|r| eligible(r) && used.contains(r[0].as_str())) {
        grid_of.insert(r[0].as_str(), r[1].as_str());
        if let Ok(p) = r[5].parse::<f64>() {
            let e = price_sum.entry(r[1].as_str()).or_default();
            e.0 += p;
            e.1 += 1;
        }
    }
    let mut demand: BTreeMap<(String, String, String, String), f64> = BTreeMap::new();
    for r in &raw.adjusted_demand.rows {
        let Some(&grid) = grid_of.get(r[2].as_str()) else { continue };
        let Ok(q) = r[4].parse::<f64>() else { continue };
        let Ok(token) = normalize_size_token(&r[3]) else { continue };
        *demand.entry((r[0].clone(), r[1].clone(), grid.to_string(), token)).or_default() += q;
    }
    let rows = read_csv(&a.output_dir.join("test").join("predictions.csv"))?;
    let (mut fns, mut units, mut revenue) = (0u64, 0.0f64, 0.0f64);
    for r in rows.iter().filter(|r| r["label"] == "1" && r["predicted"] == "0") {
        let token = normalize_size_token(&format!("{}{}", r["dim1"], r["dim2"])).map_err(|e| e.to_string())?;
        let key = (r["season"].clone(), r["planning_group"].clone(), r["grid_name"].clone(), token);
        let u = demand.get(&key).copied().unwrap_or(0.0);
        let (s, n) = price_sum.get(r["grid_name"].as_str()).ok_or_else(|| format!("no price for {}", r["grid_name"]))?;
        fns += 1;
        units += u;
        revenue += u * (s / *n as f64);
    }
    ensure(fns == impact.false_negatives, || format!("{fns} recounted FN rows vs {}", impact.false_negatives))?;
    ensure(units == impact.units && revenue == impact.revenue, || {
        format!("recount {units} units / {revenue} EUR vs report {} / {}", impact.units, impact.revenue)
    })?;
    Ok(format!("{fns} false negatives: {units} units, {revenue:.2} EUR, equal to the recount"))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(work: &Path) -> Check {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small.toml");
    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let out = work.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_sizegrid"))
            .args(["run-all", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("run-all exited with {status}"))?;
        dirs.push(out);
    }
    let (fa, fb) = (files_under(&dirs[0]), files_under(&dirs[1]));
    ensure(fa == fb, || "runs wrote different file sets".into())?;
    ensure(fa.iter().any(|p| p.ends_with("report.txt")), || "no report written".into())?;
    let mut bytes = 0;
    for f in &fa {
        let (x, y) = (std::fs::read(dirs[0].join(f)).unwrap(), std::fs::read(dirs[1].join(f)).unwrap());
        ensure(x == y, || format!("{} differs between runs", f.display()))?;
        bytes += x.len();
    }
    Ok(format!("{} files ({bytes} bytes) byte-identical across two run-all invocations", fa.len()))
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, name: &str, limit: Duration, f: impl FnOnce() -> Check) {
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let el = t.elapsed();
        let res = match res {
            Ok(d) if el > limit => Err(format!("{d}; took {el:.1?}, limit {limit:?}")),
            r => r,
        };
        match res {
            Ok(d) => println!("PASS  {name}: {d} [{:.2}s]", el.as_secs_f64()),
            Err(e) => {
                self.failed += 1;
                println!("FAIL  {name}: {e} [{:.2}s]", el.as_secs_f64());
            }
        }
    }
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let mut suite = Suite { failed: 0 };
    let secs = Duration::from_secs;

    suite.run("metric identities on the reference confusion matrix", secs(1), metric_identities);
    suite.run("AUC trapezoid equals pair counting", secs(10), auc_oracle);
    suite.run("rolling window equals filter-and-sum", secs(30), rolling_oracle);
    suite.run("neighbour circles", secs(10), neighbor_correctness);
    suite.run("feature-table arity", secs(60), || {
        let corpus = load_corpus(&PipelineConfig::default()).map_err(|e| e.to_string())?;
        let table = assemble_feature_table(&corpus, 4).map_err(|e| e.to_string())?;
        feature_arity(&table)
    });
    suite.run("encoding cardinality", secs(10), encoding_cardinality);
    suite.run("logistic gradient vs finite differences", secs(10), logistic_gradient);
    suite.run("SMOTE geometry and balance", secs(10), smote_geometry);

    let corpus = CorpusConfig::default();
    let mut cfg = PipelineConfig {
        corpus: CorpusSource::Synthetic(corpus.clone()),
        output_dir: work.path().join("stage4"),
        save_models: false,
        ..PipelineConfig::default()
    };
    cfg.stages.retain(|s| s.tune);
    let mut run = None;
    suite.run("end-to-end learnability (stage IV)", secs(300), || {
        let a = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        let d = learnability(&a);
        run = Some(a);
        d
    });
    suite.run("impact oracle", secs(60), || {
        let a = run.as_ref().ok_or("the stage IV run failed")?;
        impact_oracle(a, &corpus)
    });
    suite.run("run-all determinism", secs(300), || determinism(work.path()));

    println!("{} criteria failed", suite.failed);
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
