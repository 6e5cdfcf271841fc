//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::canny_ref::{canny_reference, random_image};
use common::ensemble_ref::{brute_vote, brute_weights, random_trial};
use common::model_fixtures::{check_model, jittered_model, micro_config, random_examples};
use common::{check_case, Case};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_mtl::autodiff::{LossBreakdown, Tape};
use spatial_mtl::ensemble::{
    ensemble_predict, fit_weights, read_jsonl, vote, write_jsonl, EnsembleWeights, PredictionRecord, RelationTaxonomy,
    ENSEMBLE_MODEL_ID,
};
use spatial_mtl::featex::{backproject, canny_edges, project, CameraIntrinsics, EdgeParams, Raster};
use spatial_mtl::harness::{compute_metrics, emit_comparison_table, format_pp, MetricsReport, NamedReport, RunReport};
use spatial_mtl::model::{
    assemble, compute_total_loss, predict, train, Checkpoint, Model, ModelConfig, Prepared, TrainConfig, TrainReport,
    Variant,
};
use spatial_mtl::scenegen::{build_dataset, read_smap, write_smap, Example, SceneConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    let mut kinks = 0;
    for seed in 0..100u64 {
        for &case in Case::ALL {
            let (e64, e32) = check_case(case, seed);
            ensure(e64 < 1e-6 && e32 < 1e-3, || format!("{case:?} seed {seed}: {e64:e} / {e32:e}"))?;
            worst64 = worst64.max(e64);
            worst32 = worst32.max(e32);
        }
        let variant = Variant::ALL[seed as usize % 3];
        let c = check_model(variant, seed);
        ensure(c.passes(), || {
            format!("model {variant} seed {seed}: {:e} / {:e}, kinks ok {}", c.e64, c.e32, c.kinks_ok)
        })?;
        worst64 = worst64.max(c.e64);
        worst32 = worst32.max(c.e32);
        kinks += c.kinks;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} ops + model loss, 100 seeds, worst 64-bit {worst64:.1e}, 32-bit {worst32:.1e}, {kinks} kink coordinates matched one-sided, {secs:.1} s",
        Case::ALL.len()
    ))
}

fn ensemble_oracle() -> Outcome {
    let tax = RelationTaxonomy::builtin();
    let mut votes = 0usize;
    let mut worst = 0.0f64;
    for seed in 0..10_000u64 {
        let trial = random_trial(seed, &tax);
        let w = fit_weights(&trial.val, &tax).map_err(|e| e.to_string())?;
        for cell in &w.cells {
            let total: f64 = cell.weights.iter().sum();
            ensure((total - 1.0).abs() < 1e-12, || format!("trial {seed}: weights sum to {total}"))?;
        }
        for k in 0..trial.test[0].len() {
            let preds: Vec<bool> = trial.test.iter().map(|m| m[k].predicted).collect();
            let rel = &trial.test[0][k].relation;
            let s = vote(rel, &preds, &w, &tax).map_err(|e| e.to_string())?;
            let (bs, bc) = brute_vote(&brute_weights(&trial.val, rel, &tax), &preds);
            let diff = (s.scores[0] - bs[0]).abs().max((s.scores[1] - bs[1]).abs());
            ensure(diff < 1e-12 && s.chosen == bc, || format!("trial {seed} instance {k}: diff {diff:e}"))?;
            worst = worst.max(diff);
            votes += 1;
        }
    }
    Ok(format!("10000 trials, {votes} votes, worst score diff {worst:.1e}"))
}

fn report_with(per_meta: &[(&str, f64)]) -> MetricsReport {
    let cells: serde_json::Map<String, serde_json::Value> = per_meta
        .iter()
        .map(|(c, a)| (c.to_string(), serde_json::json!({"count": 1, "correct": 1, "accuracy": a})))
        .collect();
    serde_json::from_value(serde_json::json!({
        "count": 1,
        "accuracy": 0.5,
        "f1": 0.5,
        "confusion": {"true_positive": 0, "false_positive": 0, "true_negative": 0, "false_negative": 0},
        "per_meta_category": cells,
        "per_relation": {},
    }))
    .expect("valid report")
}

fn table_arithmetic() -> Outcome {
    let accs = [
        ("a", 0.6711, 0.7236),
        ("b", 0.6447, 0.6800),
        ("c", 0.5000, 0.6500),
        (ENSEMBLE_MODEL_ID, 0.7273, 0.7236),
    ];
    let reports: Vec<(String, MetricsReport)> = accs
        .iter()
        .map(|(n, u, p)| (n.to_string(), report_with(&[("Unallocated", *u), ("Projective", *p)])))
        .collect();
    let t = emit_comparison_table(&reports, ENSEMBLE_MODEL_ID).map_err(|e| e.to_string())?;
    let pp = |cat: &str| {
        t.rows
            .iter()
            .find(|r| r.category == cat)
            .and_then(|r| r.improvement_pp)
            .map(format_pp)
            .unwrap_or_default()
    };
    let (u, p) = (pp("Unallocated"), pp("Projective"));
    ensure(u == "+5.62" && p == "0.00", || format!("Unallocated {u}, Projective {p}"))?;
    Ok(format!("Unallocated {u}, Projective {p}"))
}

fn back_projection() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.gen_range(4..24), rng.gen_range(4..24));
        let k = CameraIntrinsics::new(
            rng.gen_range(0.5..80.0),
            rng.gen_range(0.5..80.0),
            rng.gen_range(0.0..w as f64),
            rng.gen_range(0.0..h as f64),
            w,
            h,
        )
        .map_err(|e| e.to_string())?;
        let depth = Raster::new(h, w, 1, (0..h * w).map(|_| rng.gen_range(0.5f32..20.0)).collect())
            .map_err(|e| e.to_string())?;
        let map = backproject(&depth, &k);
        let proj = project(&map, &k).map_err(|e| e.to_string())?;
        for v in 0..h {
            for u in 0..w {
                let (pu, pv) = proj.pixels[v * w + u];
                worst = worst.max((pu - u as f64).abs()).max((pv - v as f64).abs());
                worst = worst.max((proj.depth.at(v, u, 0) - depth.at(v, u, 0)).abs() as f64);
            }
        }
    }
    ensure(worst < 1e-5, || format!("round-trip error {worst:e}"))?;

    // By hand: x = (u − cx)·z / fx, y = (v − cy)·z / fy.
    let k = CameraIntrinsics::new(4.0, 2.0, 3.0, 2.0, 8, 6).map_err(|e| e.to_string())?;
    let depth = Raster::filled(6, 8, 1, 5.0);
    let c = backproject(&depth, &k).coords;
    let at = |v: usize, u: usize| [c.at(v, u, 0), c.at(v, u, 1), c.at(v, u, 2)];
    let cases = [
        ((2, 3), [0.0, 0.0, 5.0]),
        ((2, 4), [1.25, 0.0, 5.0]),
        ((2, 2), [-1.25, 0.0, 5.0]),
        ((3, 3), [0.0, 2.5, 5.0]),
        ((1, 3), [0.0, -2.5, 5.0]),
    ];
    for ((v, u), want) in cases {
        ensure(at(v, u) == want, || format!("pixel ({u},{v}): {:?} != {want:?}", at(v, u)))?;
    }
    Ok(format!("100 random depth maps, worst {worst:.1e}; 5 hand-computed pixels exact"))
}

fn canny() -> Outcome {
    let p = EdgeParams::default();
    let mut pixels = 0usize;
    for seed in 0..100u64 {
        let img = random_image(seed);
        let (h, w) = (img.len(), img[0].len());
        let raster = Raster::new(h, w, 1, img.iter().flatten().copied().collect()).map_err(|e| e.to_string())?;
        let ours = canny_edges(&raster, &p).map_err(|e| e.to_string())?;
        let reference: Vec<f32> = canny_reference(&img, p.gaussian_sigma, p.low_threshold, p.high_threshold)
            .iter()
            .flatten()
            .map(|&b| b as f32)
            .collect();
        ensure(ours.data() == &reference[..], || format!("image {seed} differs"))?;
        pixels += h * w;
    }
    for (i, value) in [0.0f32, 0.3, 1.0].into_iter().enumerate() {
        let r = Raster::filled(7 + 9 * i, 11 + 5 * i, 1, value);
        let e = canny_edges(&r, &p).map_err(|e| e.to_string())?;
        ensure(e.data().iter().all(|&x| x == 0.0), || format!("constant {value} produced edges"))?;
    }
    Ok(format!("100 images ({pixels} pixels) pixel-exact; constant images edge-free"))
}

fn breakdown(model: &Model<f64>, items: &[Prepared]) -> LossBreakdown {
    let refs: Vec<&Prepared> = items.iter().collect();
    let batch = assemble::<f64>(&refs);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let o = model.forward(&mut tape, &vars, &batch.input, true).expect("forward");
    compute_total_loss(&mut tape, &model.config, &o, &batch.labels, batch.targets.as_ref())
        .expect("loss")
        .1
}

fn masked_isolation() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let masked = jittered_model(micro_config(Variant::MaskedSpatial, seed), seed);
        let items = masked.prepare(&random_examples(3, 8, seed)).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut moved = items.clone();
        for p in &mut moved {
            let t = p.targets.as_mut().expect("targets");
            let plane = t.mask.len();
            for i in (0..plane).filter(|&i| t.mask[i] == 0.0) {
                t.depth[i] += rng.gen_range(-2.0..2.0);
                t.edges[i] = 1.0 - t.edges[i];
                for c in 0..3 {
                    t.coords[c * plane + i] += rng.gen_range(-5.0..5.0);
                }
            }
        }
        let (a, b) = (breakdown(&masked, &items), breakdown(&masked, &moved));
        let d = (a.depth - b.depth).abs().max((a.coords - b.coords).abs()).max((a.edges - b.edges).abs());
        ensure(d < 1e-12, || format!("seed {seed}: outside-mask change moved losses by {d:e}"))?;
        worst = worst.max(d);

        let spatial = jittered_model(micro_config(Variant::Spatial, seed), seed);
        let mut full = items.clone();
        for p in &mut full {
            p.targets.as_mut().expect("targets").mask.iter_mut().for_each(|m| *m = 1.0);
        }
        let (a, b) = (breakdown(&masked, &full), breakdown(&spatial, &full));
        let same = [(a.depth, b.depth), (a.coords, b.coords), (a.edges, b.edges), (a.total, b.total)]
            .iter()
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("seed {seed}: all-ones mask differs from the unmasked variant"))?;
    }
    Ok(format!("10 seeds, worst outside-mask change {worst:.1e}; all-ones mask bitwise equal"))
}

struct Run {
    name: String,
    checkpoint: Checkpoint,
    report: TrainReport,
    val: Vec<PredictionRecord>,
    test: Vec<PredictionRecord>,
}

struct Splits {
    train: Vec<Example>,
    val: Vec<Example>,
    test: Vec<Example>,
}

const SEED: u64 = 7;

fn splits() -> Result<Splits, String> {
    let data = build_dataset(2000, SEED, &SceneConfig::default(), [0.7, 0.1, 0.2]).map_err(|e| e.to_string())?;
    let conv = |v: Vec<_>| v.into_iter().map(Example::from).collect::<Vec<Example>>();
    Ok(Splits {
        train: conv(data.train),
        val: conv(data.val),
        test: conv(data.test),
    })
}

fn run_one(s: &Splits, variant: Variant, seed: u64) -> Result<Run, String> {
    let name = if seed == SEED {
        variant.to_string()
    } else {
        format!("{variant}_seed{seed}")
    };
    let model = Model::new(ModelConfig::desk().with_variant(variant).with_seed(seed)).map_err(|e| e.to_string())?;
    let (checkpoint, report) =
        train(model, &s.train, &s.val, &TrainConfig::default()).map_err(|e| format!("{name}: {e}"))?;
    let val = predict(&checkpoint.model, &s.val, &name).map_err(|e| e.to_string())?;
    let test = predict(&checkpoint.model, &s.test, &name).map_err(|e| e.to_string())?;
    Ok(Run {
        name,
        checkpoint,
        report,
        val,
        test,
    })
}

/// The text and JSON forms of the test-split report over `runs`.
fn test_report(runs: &[&Run], tax: &RelationTaxonomy) -> Result<(String, String), String> {
    let models = runs
        .iter()
        .map(|r| {
            Ok(NamedReport {
                model: r.name.clone(),
                metrics: compute_metrics(&r.test, tax).map_err(|e| e.to_string())?,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    let report = RunReport {
        models,
        comparison: None,
    };
    Ok((report.render(), report.to_json()))
}

fn decreasing_prefix(report: &TrainReport) -> bool {
    let totals: Vec<f64> = report.history.iter().take(5).map(|e| e.train.total).collect();
    totals.windows(2).all(|w| w[1] < w[0])
}

fn end_to_end(s: &Splits, runs: &mut Vec<Run>, tax: &RelationTaxonomy) -> Outcome {
    let start = Instant::now();
    let sizes = (s.train.len(), s.val.len(), s.test.len());
    ensure(sizes == (1400, 200, 400), || format!("split sizes {sizes:?}"))?;
    for &v in &Variant::ALL {
        let run = run_one(s, v, SEED)?;
        eprintln!(
            "  {}: {} epochs, best epoch {:?}, val {:.4}, test {:.4}, {:.0} s",
            run.name,
            run.report.history.len(),
            run.report.best_epoch,
            run.report.best_val_accuracy.unwrap_or(0.0),
            spatial_mtl::model::accuracy(&run.test),
            start.elapsed().as_secs_f64()
        );
        runs.push(run);
    }
    let secs = start.elapsed().as_secs_f64();
    let mut failures = Vec::new();

    let finite = runs.iter().all(|r| {
        r.report.history.iter().all(|e| e.train.total.is_finite())
            && r.checkpoint.model.params.iter().all(|p| p.data().iter().all(|x| x.is_finite()))
    });
    if !finite {
        failures.push("non-finite loss or parameters".to_string());
    }
    let baseline = spatial_mtl::model::accuracy(&runs[0].test);
    if baseline < 0.70 {
        failures.push(format!("baseline test accuracy {baseline:.4} < 0.70"));
    }
    for r in &runs[1..] {
        if !decreasing_prefix(&r.report) {
            failures.push(format!("{} training loss not strictly decreasing over the first epochs", r.name));
        }
    }

    let refs: Vec<&Run> = runs.iter().collect();
    let first = test_report(&refs, tax)?;
    let rerun_start = Instant::now();
    let mut again = Vec::new();
    for &v in &Variant::ALL {
        again.push(run_one(s, v, SEED)?);
    }
    let second = test_report(&again.iter().collect::<Vec<_>>(), tax)?;
    let ckpts_equal = runs.iter().zip(&again).all(|(a, b)| a.checkpoint.to_bytes() == b.checkpoint.to_bytes());
    if first != second || !ckpts_equal {
        failures.push("rerun differs".to_string());
    }
    if secs >= 900.0 {
        failures.push(format!("one full run took {secs:.0} s"));
    }

    let monotone: Vec<String> = runs.iter().map(|r| format!("{} {}", r.name, decreasing_prefix(&r.report))).collect();
    let detail = format!(
        "baseline {:.2}%, spatial {:.2}%, masked {:.2}% test accuracy; early loss strictly decreasing: {}; rerun byte-identical: {}; run {secs:.0} s, rerun {:.0} s",
        baseline * 100.0,
        spatial_mtl::model::accuracy(&runs[1].test) * 100.0,
        spatial_mtl::model::accuracy(&runs[2].test) * 100.0,
        monotone.join(", "),
        first == second && ckpts_equal,
        rerun_start.elapsed().as_secs_f64()
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

fn ensemble_end_to_end(s: &Splits, runs: &mut Vec<Run>, tax: &RelationTaxonomy) -> Outcome {
    ensure(runs.len() == 3, || "variant runs unavailable".into())?;
    runs.push(run_one(s, Variant::Baseline, SEED + 1)?);
    let val: Vec<Vec<PredictionRecord>> = runs.iter().map(|r| r.val.clone()).collect();
    let test: Vec<Vec<PredictionRecord>> = runs.iter().map(|r| r.test.clone()).collect();
    let w = fit_weights(&val, tax).map_err(|e| e.to_string())?;
    let ens = ensemble_predict(&test, &w, tax).map_err(|e| e.to_string())?;
    ensure(ens.len() == s.test.len(), || format!("{} ensemble records", ens.len()))?;

    let mut unanimous = 0usize;
    for (k, e) in ens.iter().enumerate() {
        let first = test[0][k].predicted;
        if test.iter().all(|m| m[k].predicted == first) {
            unanimous += 1;
            ensure(e.predicted == first, || format!("unanimous instance {} overturned", e.id))?;
        }
    }

    let metrics = compute_metrics(&ens, tax).map_err(|e| e.to_string())?;
    let mut recount: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in &ens {
        let cell = recount.entry(r.meta_category.to_string()).or_default();
        cell.0 += 1;
        cell.1 += r.correct as usize;
    }
    ensure(recount.len() == metrics.per_meta_category.len(), || "category sets differ".into())?;
    for (cat, (n, c)) in &recount {
        let got = metrics.per_meta_category[cat];
        let acc = *c as f64 / *n as f64;
        ensure(got.count == *n && got.correct == *c && got.accuracy == acc, || format!("{cat}: {got:?} vs {c}/{n}"))?;
    }
    let mut reports: Vec<(String, MetricsReport)> = runs
        .iter()
        .map(|r| Ok((r.name.clone(), compute_metrics(&r.test, tax).map_err(|e| e.to_string())?)))
        .collect::<Result<_, String>>()?;
    reports.push((ENSEMBLE_MODEL_ID.to_string(), metrics.clone()));
    let table = emit_comparison_table(&reports, ENSEMBLE_MODEL_ID).map_err(|e| e.to_string())?;
    eprint!("{}", table.render());

    let best_single = reports[..4].iter().map(|(_, m)| m.accuracy).fold(0.0, f64::max);
    Ok(format!(
        "{} meta-category cells recounted, {unanimous} unanimous instances kept; ensemble {:.2}% vs best single {:.2}%",
        recount.len(),
        metrics.accuracy * 100.0,
        best_single * 100.0
    ))
}

fn round_trips(runs: &[Run], tax: &RelationTaxonomy) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..50 {
        let (h, w, c) = (rng.gen_range(1..40), rng.gen_range(1..40), rng.gen_range(1..4));
        let data: Vec<f32> = (0..h * w * c).map(|_| f32::from_bits(rng.gen::<u32>() & 0x7f7f_ffff)).collect();
        let r = Raster::new(h, w, c, data).map_err(|e| e.to_string())?;
        let bytes = write_smap(&r).map_err(|e| e.to_string())?;
        let back = read_smap(&bytes)?;
        ensure(write_smap(&back).map_err(|e| e.to_string())? == bytes, || format!("SMAP map {i}"))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for run in runs {
        let path = dir.path().join(format!("{}.ckpt", run.name));
        run.checkpoint.save(&path).map_err(|e| e.to_string())?;
        let back = Checkpoint::load(&path).map_err(|e| e.to_string())?;
        let written = std::fs::read(&path).map_err(|e| e.to_string())?;
        ensure(back.to_bytes() == written, || format!("checkpoint {}", run.name))?;
        let text = write_jsonl(&run.test);
        let records = read_jsonl(&text).map_err(|e| e.to_string())?;
        ensure(write_jsonl(&records) == text, || format!("predictions {}", run.name))?;
        checked += 1;
    }
    ensure(checked > 0, || "no trained runs to round-trip".into())?;

    let val: Vec<Vec<PredictionRecord>> = runs.iter().map(|r| r.val.clone()).collect();
    let mut tables = vec![fit_weights(&val, tax).map_err(|e| e.to_string())?];
    for seed in 0..20 {
        tables.push(fit_weights(&random_trial(seed, tax).val, tax).map_err(|e| e.to_string())?);
    }
    for w in &tables {
        let text = w.to_json();
        let back = EnsembleWeights::from_json(&text).map_err(|e| e.to_string())?;
        ensure(back.to_json() == text, || "weight table".into())?;
    }
    Ok(format!(
        "50 SMAP maps, {checked} checkpoints, {checked} prediction files, {} weight tables",
        tables.len()
    ))
}

fn main() {
    // Keep `cargo test -- <filter>` and `--list` usable.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let tax = RelationTaxonomy::builtin();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, outcome: Outcome| {
        let line = match &outcome {
            Ok(d) => format!("PASS [{n}] {name}: {d}"),
            Err(d) => format!("FAIL [{n}] {name}: {d}"),
        };
        println!("{line}");
        results.push((n, name, outcome));
    };

    record(1, "gradients vs finite differences", gradients());
    record(2, "ensemble vs brute-force voting", ensemble_oracle());
    record(3, "comparison-table arithmetic", table_arithmetic());
    record(4, "back-projection", back_projection());
    record(5, "edge detector vs reference", canny());
    record(6, "masked-variant isolation", masked_isolation());

    let mut runs = Vec::new();
    match splits() {
        Ok(s) => {
            record(7, "seeded end-to-end training", end_to_end(&s, &mut runs, &tax));
            let ens = if runs.len() == 3 {
                ensemble_end_to_end(&s, &mut runs, &tax)
            } else {
                Err("variant runs unavailable".into())
            };
            record(8, "ensemble end-to-end", ens);
        }
        Err(e) => {
            record(7, "seeded end-to-end training", Err(e.clone()));
            record(8, "ensemble end-to-end", Err(e));
        }
    }
    record(9, "format round-trips", round_trips(&runs, &tax));

    let failed = results.iter().filter(|(_, _, o)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
