//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sleepstate::classify::{
    feature_importance, make_labels, predict_proba_forest, save_model, train_forest, LabelVector,
    LogisticObjective, TrainConfig,
};
use sleepstate::edap::{brute_force_ap, edap, ToleranceSet};
use sleepstate::extract::{extract, ExtractConfig};
use sleepstate::features::{
    build_features, columns_with_window, default_specs, rolling_max, rolling_mean, rolling_std,
    total_variation, FeatureMatrix,
};
use sleepstate::io::{read_predictions, read_series_csv, write_predictions};
use sleepstate::model::{
    parse_timestamp, window_duration, EventClass, LabeledEvent, ScoredEvent, Series,
};
use sleepstate::rules::{detect_all, nonwear_mask, DetectorConfig};
use sleepstate::synth::{generate_corpus, NonwearSegment, SynthConfig, SynthSeries};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        // NaN comparisons are false, so they fail the check
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("edap differential vs brute force", c1_edap_differential),
        ("hand-derived AP case", c2_hand_ap),
        ("rolling statistics oracle and linear time", c3_rolling),
        ("feature counts 25 and 6", c4_feature_counts),
        ("rule detector end to end", c5_rules_end_to_end),
        ("trained forest on held-out series", c6_forest_held_out),
        ("logistic gradient check", c7_gradient_check),
        ("forest XOR and seed determinism", c8_forest_xor),
        ("I/O round trips", c9_io_round_trips),
        ("CLI determinism under --threads", c10_thread_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .map_or_else(|| "panicked".into(), |m| format!("panicked: {m}")))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!(
                "PASS criterion {:>2} ({name}): {detail} [{secs:.1}s]",
                i + 1
            ),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} ({name}): {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ts0() -> sleepstate::model::Timestamp {
    parse_timestamp("2023-01-01T00:00:00+0000").unwrap()
}

fn scored(series: &str, class: EventClass, step: u64, confidence: f64) -> ScoredEvent {
    ScoredEvent {
        series_id: series.into(),
        class,
        step,
        confidence,
    }
}

fn labeled(series: &str, class: EventClass, step: u64) -> LabeledEvent {
    LabeledEvent {
        series_id: series.into(),
        night: 1,
        class,
        step,
        timestamp: ts0(),
    }
}

// ---------------------------------------------------------------------------

const C1_INSTANCES: usize = 1000;
const C1_TOL_ABS: f64 = 1e-9;
const C1_BUDGET: Duration = Duration::from_secs(30);

fn c1_edap_differential() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0edab);
    let mut worst = 0.0f64;
    let mut groups = 0;
    for _ in 0..C1_INSTANCES {
        let n_series = rng.random_range(1..=3);
        let ids: Vec<String> = (0..n_series).map(|i| format!("s{i}")).collect();
        let tol = rng.random_range(1..=60u64);
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for class in EventClass::ALL {
            let n_gt = rng.random_range(1..=20);
            let n_pred = rng.random_range(0..=50);
            for _ in 0..n_gt {
                let sid = &ids[rng.random_range(0..n_series)];
                gts.push(labeled(sid, class, rng.random_range(0..400)));
            }
            for _ in 0..n_pred {
                let sid = &ids[rng.random_range(0..n_series)];
                preds.push(scored(
                    sid,
                    class,
                    rng.random_range(0..400),
                    rng.random::<f64>(),
                ));
            }
        }
        let report = edap(&preds, &gts, &ToleranceSet::new(vec![tol]).unwrap(), None)
            .map_err(|e| e.to_string())?;
        for class in EventClass::ALL {
            let p: Vec<ScoredEvent> = preds.iter().filter(|e| e.class == class).cloned().collect();
            let g: Vec<LabeledEvent> = gts.iter().filter(|e| e.class == class).cloned().collect();
            let want = brute_force_ap(&p, &g, tol);
            let got = report
                .ap(class, tol)
                .ok_or("missing AP for a class with ground truth")?;
            worst = worst.max((got - want).abs());
            groups += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(
        worst <= C1_TOL_ABS,
        "max |pipeline - brute| = {worst:e} > {C1_TOL_ABS:e}"
    );
    ensure!(
        elapsed < C1_BUDGET,
        "took {elapsed:?}, budget {C1_BUDGET:?}"
    );
    Ok(format!(
        "{C1_INSTANCES} instances, {groups} groups, max |diff| = {worst:e} <= {C1_TOL_ABS:e}, {:.2}s < 30s",
        elapsed.as_secs_f64()
    ))
}

fn c2_hand_ap() -> Outcome {
    let gts = vec![
        labeled("s", EventClass::Onset, 100),
        labeled("s", EventClass::Onset, 500),
    ];
    let preds = vec![
        scored("s", EventClass::Onset, 110, 0.9),
        scored("s", EventClass::Onset, 130, 0.8),
        scored("s", EventClass::Onset, 700, 0.7),
    ];
    let report = edap(&preds, &gts, &ToleranceSet::new(vec![5, 30]).unwrap(), None)
        .map_err(|e| e.to_string())?;
    let at30 = report.ap(EventClass::Onset, 30);
    let at5 = report.ap(EventClass::Onset, 5);
    ensure!(at30 == Some(0.5), "tol 30: AP {at30:?}, want exactly 0.5");
    ensure!(at5 == Some(0.0), "tol 5: AP {at5:?}, want exactly 0.0");
    Ok("tol 30 -> 0.5, tol 5 -> 0.0 (exact)".into())
}

const C3_N: usize = 100_000;
const C3_WINDOWS: [usize; 4] = [60, 360, 1440, 5760];
const C3_REL: f64 = 1e-9;
const C3_MAX_RATIO: f64 = 3.0;
const C3_TIMING_REPS: usize = 7;

fn naive(x: &[f64], w: usize, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
    use rayon::prelude::*;
    (0..x.len())
        .into_par_iter()
        .map(|i| f(&x[(i + 1).saturating_sub(w)..=i]))
        .collect()
}

fn four_stats(x: &[f64], w: usize) -> [Vec<f64>; 4] {
    [
        rolling_mean(x, w).unwrap(),
        rolling_max(x, w).unwrap(),
        rolling_std(x, w).unwrap(),
        total_variation(x, w).unwrap(),
    ]
}

fn c3_rolling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5011);
    let x: Vec<f64> = (0..C3_N).map(|_| rng.random_range(-90.0..90.0)).collect();
    let mut worst = 0.0f64;
    for &w in &C3_WINDOWS {
        let fast = four_stats(&x, w);
        let slow = [
            naive(&x, w, |s| s.iter().sum::<f64>() / s.len() as f64),
            naive(&x, w, |s| {
                s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }),
            naive(&x, w, |s| {
                let n = s.len() as f64;
                let m = s.iter().sum::<f64>() / n;
                (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
            }),
            naive(&x, w, |s| s.windows(2).map(|p| (p[1] - p[0]).abs()).sum()),
        ];
        for (name, (f, s)) in ["mean", "max", "std", "tv"]
            .iter()
            .zip(fast.iter().zip(&slow))
        {
            for (i, (a, b)) in f.iter().zip(s).enumerate() {
                let rel = (a - b).abs() / b.abs().max(1.0);
                ensure!(
                    rel <= C3_REL,
                    "{name} w={w} i={i}: {a} vs naive {b} (rel {rel:e})"
                );
                worst = worst.max(rel);
            }
        }
    }
    let time = |w: usize| {
        (0..C3_TIMING_REPS)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(four_stats(std::hint::black_box(&x), w));
                t.elapsed()
            })
            .min()
            .unwrap()
    };
    time(60);
    let (t_small, t_large) = (time(60), time(5760));
    let ratio = t_large.as_secs_f64() / t_small.as_secs_f64();
    ensure!(
        ratio <= C3_MAX_RATIO,
        "w=5760 took {ratio:.2}x w=60 (limit {C3_MAX_RATIO})"
    );
    Ok(format!(
        "4 stats x {C3_WINDOWS:?} on n={C3_N}, max rel err {worst:.1e} <= {C3_REL:e} (denominator max(|naive|,1)); time ratio w5760/w60 = {ratio:.2} <= {C3_MAX_RATIO}"
    ))
}

fn c4_feature_counts() -> Outcome {
    let syn = generate_corpus(&SynthConfig::default(), 1).map_err(|e| e.to_string())?;
    let s = &syn[0].series;
    let x =
        build_features(s, &default_specs(s.cadence_seconds), true).map_err(|e| e.to_string())?;
    ensure!(
        x.n_cols() == 25,
        "default + hour gives {} columns",
        x.n_cols()
    );
    let two_hour = columns_with_window(&x.column_names, 120);
    ensure!(
        two_hour.len() == 6,
        "2-hour filter keeps {}: {two_hour:?}",
        two_hour.len()
    );
    Ok(format!(
        "25 columns; 2-hour filter keeps {}",
        two_hour.join(",")
    ))
}

const C5_SEED: u64 = 2023;
const C5_MIN_AP: f64 = 0.90;
const C5_MIN_WINDOW_SECS: u64 = 30 * 60;

fn c5_corpus(sigma_sleep: f64, nonwear: Vec<NonwearSegment>) -> Vec<SynthSeries> {
    let base = SynthConfig {
        n_days: 7,
        rng_seed: C5_SEED,
        sigma_sleep_deg: sigma_sleep,
        nonwear_segments: nonwear,
        ..SynthConfig::default()
    };
    generate_corpus(&base, 10).unwrap()
}

/// Scores the detector and checks every emitted window's invariants.
fn detect_and_check(corpus: &[SynthSeries]) -> Result<(f64, usize, usize), String> {
    let cfg = DetectorConfig::default();
    let series: Vec<Series> = corpus.iter().map(|c| c.series.clone()).collect();
    let detected = detect_all(&series, &cfg).map_err(|e| e.to_string())?;
    let mut n_windows = 0;
    let mut nonwear_steps = 0;
    for (s, (windows, _)) in series.iter().zip(&detected) {
        let nw = nonwear_mask(s, &cfg);
        nonwear_steps += nw.iter().filter(|&&b| b).count();
        let mut nights = BTreeSet::new();
        for w in windows {
            n_windows += 1;
            let secs = window_duration(w, s.cadence_seconds).map_err(|e| e.to_string())?;
            ensure!(
                secs >= C5_MIN_WINDOW_SECS,
                "{}: window {w:?} lasts {secs}s",
                s.series_id
            );
            let night = w
                .night
                .ok_or_else(|| format!("{}: window without night", s.series_id))?;
            ensure!(
                nights.insert(night),
                "{}: two windows on night {night}",
                s.series_id
            );
            let a = s
                .index_of_step(w.onset_step)
                .ok_or("onset outside series")?;
            let b = s
                .index_of_step(w.wakeup_step)
                .ok_or("wakeup outside series")?;
            ensure!(
                !nw[a..=b.min(nw.len() - 1)].iter().any(|&m| m),
                "{}: window {w:?} overlaps non-wear",
                s.series_id
            );
        }
    }
    let events: Vec<ScoredEvent> = detected.into_iter().flat_map(|(_, e)| e).collect();
    let gts: Vec<LabeledEvent> = corpus.iter().flat_map(|c| c.events.clone()).collect();
    let r = edap(&events, &gts, &ToleranceSet::default(), None).map_err(|e| e.to_string())?;
    Ok((r.mean_ap, n_windows, nonwear_steps))
}

fn c5_rules_end_to_end() -> Outcome {
    let (ap, n, _) = detect_and_check(&c5_corpus(1.0, Vec::new()))?;
    ensure!(
        ap >= C5_MIN_AP,
        "default noise: mean_ap {ap:.4} < {C5_MIN_AP}"
    );
    let (noisy_ap, noisy_n, _) = detect_and_check(&c5_corpus(8.0, Vec::new()))?;
    ensure!(
        noisy_ap < ap,
        "sigma_sleep 8: mean_ap {noisy_ap:.4} did not degrade from {ap:.4}"
    );
    // same noisy corpus with off-wrist blocks, so the non-wear clause is exercised
    let blocks = vec![
        NonwearSegment {
            start_hour_offset: 2.0,
            duration_min: 240.0,
        },
        NonwearSegment {
            start_hour_offset: 51.0,
            duration_min: 300.0,
        },
    ];
    let (nw_ap, nw_n, nw_steps) = detect_and_check(&c5_corpus(8.0, blocks))?;
    ensure!(nw_steps > 0, "non-wear blocks were not detected");
    Ok(format!(
        "mean_ap {ap:.4} >= {C5_MIN_AP} ({n} windows); sigma_sleep 8: {noisy_ap:.4} ({noisy_n} windows), with non-wear: {nw_ap:.4} ({nw_n} windows), all >= 30 min, <= 1/night, off non-wear"
    ))
}

const C6_SEED: u64 = 7;
const C6_MIN_AP: f64 = 0.80;
const C6_SUBSAMPLE: usize = 10;
const C6_IMPORTANCE_TOL: f64 = 1e-9;

fn every_nth(x: &FeatureMatrix, y: &[u8], k: usize) -> (FeatureMatrix, LabelVector) {
    let keep = |v: &[f64]| v.iter().step_by(k).copied().collect::<Vec<_>>();
    (
        FeatureMatrix {
            series_id: x.series_id.clone(),
            column_names: x.column_names.clone(),
            steps: x.steps.iter().step_by(k).copied().collect(),
            columns: x.columns.iter().map(|c| keep(c)).collect(),
        },
        LabelVector {
            values: y.iter().step_by(k).copied().collect(),
            dropped_nights: 0,
        },
    )
}

fn c6_forest_held_out() -> Outcome {
    let base = SynthConfig {
        n_days: 7,
        rng_seed: C6_SEED,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&base, 10).map_err(|e| e.to_string())?;
    let (train, test) = corpus.split_at(7);
    let feats = |s: &Series| build_features(s, &default_specs(s.cadence_seconds), true).unwrap();

    let mut parts = Vec::new();
    let mut labels = Vec::new();
    for c in train {
        parts.push(feats(&c.series));
        labels.extend(make_labels(&c.series, &c.events).values);
    }
    let x = FeatureMatrix::concat(&parts).map_err(|e| e.to_string())?;
    let (x, y) = every_nth(&x, &labels, C6_SUBSAMPLE);
    let cfg = TrainConfig {
        n_estimators: 50,
        ..TrainConfig::default()
    };
    let model = train_forest(&x, &y, &cfg).map_err(|e| e.to_string())?;
    ensure!(model.trees.len() == 50, "{} trees", model.trees.len());

    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for c in test {
        let p = predict_proba_forest(&model, &feats(&c.series)).map_err(|e| e.to_string())?;
        let (_, ev) =
            extract(&p, &c.series, &ExtractConfig::default()).map_err(|e| e.to_string())?;
        preds.extend(ev);
        gts.extend(c.events.iter().cloned());
    }
    let report = edap(&preds, &gts, &ToleranceSet::default(), None).map_err(|e| e.to_string())?;

    let imp = feature_importance(&model);
    let sum: f64 = imp.iter().map(|(_, v)| v).sum();
    let (planted_first, planted_sum) = planted_signal_ranks_first()?;

    ensure!(
        (sum - 1.0).abs() <= C6_IMPORTANCE_TOL,
        "held-out model importances sum to {sum}"
    );
    ensure!(
        (planted_sum - 1.0).abs() <= C6_IMPORTANCE_TOL,
        "planted model importances sum to {planted_sum}"
    );
    ensure!(planted_first, "planted feature did not rank first");
    ensure!(
        report.mean_ap >= C6_MIN_AP,
        "held-out mean_ap {:.4} < {C6_MIN_AP}; per group: {}",
        report.mean_ap,
        report
            .groups
            .iter()
            .map(|g| format!(
                "{}@{}={:.3}",
                g.class,
                g.tolerance,
                g.ap.unwrap_or(f64::NAN)
            ))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(format!(
        "7 train / 3 test series, 50 trees, every {C6_SUBSAMPLE}th row: held-out mean_ap {:.4} >= {C6_MIN_AP}; importances sum 1 within {C6_IMPORTANCE_TOL:e}; planted feature first",
        report.mean_ap
    ))
}

/// Five columns, one of which determines the label; returns whether it
/// ranks first and the importance total.
fn planted_signal_ranks_first() -> Result<(bool, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x91a7);
    let n = 2000;
    let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
    let mut columns: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    columns[3] = y
        .iter()
        .map(|&l| f64::from(l) + 0.3 * rng.random::<f64>())
        .collect();
    let names: Vec<String> = (0..5).map(|i| format!("f{i}")).collect();
    let x = FeatureMatrix {
        series_id: "planted".into(),
        column_names: names,
        steps: (0..n as u64).collect(),
        columns,
    };
    let cfg = TrainConfig {
        n_estimators: 20,
        min_samples_leaf: 5,
        ..TrainConfig::default()
    };
    let model = train_forest(
        &x,
        &LabelVector {
            values: y,
            dropped_nights: 0,
        },
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let mut imp = feature_importance(&model);
    let sum = imp.iter().map(|(_, v)| v).sum();
    imp.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok((imp[0].0 == "f3", sum))
}

const C7_INSTANCES: usize = 25;
const C7_STEP: f64 = 1e-5;
const C7_MAX_REL: f64 = 1e-4;
/// Relative error is |a - n| / max(|a|, |n|, C7_FLOOR).
const C7_FLOOR: f64 = 1e-6;

fn c7_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x96ad);
    let mut worst = 0.0f64;
    for _ in 0..C7_INSTANCES {
        let n = rng.random_range(5..=60);
        let d = rng.random_range(1..=8);
        let columns: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        let weights = (rng.random_range(0.2..3.0), rng.random_range(0.2..3.0));
        let obj = LogisticObjective::new(columns, &labels, weights);
        let params: Vec<f64> = (0..obj.n_params())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let analytic = obj.gradient(&params);
        for (k, &a) in analytic.iter().enumerate() {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi[k] += C7_STEP;
            lo[k] -= C7_STEP;
            let numeric = (obj.loss(&hi) - obj.loss(&lo)) / (2.0 * C7_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(C7_FLOOR);
            worst = worst.max(rel);
        }
    }
    ensure!(
        worst <= C7_MAX_REL,
        "max relative error {worst:e} > {C7_MAX_REL:e}"
    );
    Ok(format!(
        "{C7_INSTANCES} instances, h={C7_STEP:e}, max rel err {worst:.2e} <= {C7_MAX_REL:e} (floor {C7_FLOOR:e})"
    ))
}

fn c8_forest_xor() -> Outcome {
    let pts = [(0.0, 0.0, 0u8), (0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 0)];
    let reps = 50;
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut y = Vec::new();
    for _ in 0..reps {
        for &(p, q, l) in &pts {
            a.push(p);
            b.push(q);
            y.push(l);
        }
    }
    let n = y.len();
    let x = FeatureMatrix {
        series_id: "xor".into(),
        column_names: vec!["a".into(), "b".into()],
        steps: (0..n as u64).collect(),
        columns: vec![a, b],
    };
    let y = LabelVector {
        values: y,
        dropped_nights: 0,
    };
    let mut summary = Vec::new();
    for depth in [2, 4] {
        let cfg = TrainConfig {
            n_estimators: 25,
            min_samples_leaf: 1,
            max_depth: depth,
            rng_seed: 1234,
            ..TrainConfig::default()
        };
        let m1 = train_forest(&x, &y, &cfg).map_err(|e| e.to_string())?;
        let m2 = train_forest(&x, &y, &cfg).map_err(|e| e.to_string())?;
        let p = predict_proba_forest(&m1, &x).map_err(|e| e.to_string())?;
        let correct = p
            .iter()
            .zip(&y.values)
            .filter(|(p, &l)| u8::from(**p >= 0.5) == l)
            .count();
        ensure!(
            correct == n,
            "max_depth {depth}: training accuracy {correct}/{n}"
        );
        let (mut j1, mut j2) = (Vec::new(), Vec::new());
        let wrap = |m| sleepstate::classify::Model::Forest(m);
        save_model(&wrap(m1), &mut j1).map_err(|e| e.to_string())?;
        save_model(&wrap(m2), &mut j2).map_err(|e| e.to_string())?;
        ensure!(
            j1 == j2,
            "max_depth {depth}: same seed gave different model files"
        );
        summary.push(format!("depth {depth}: acc 1.0, identical model bytes"));
    }
    Ok(summary.join("; "))
}

const C9_EVENTS: usize = 10_000;

fn c9_io_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x10);
    let mut seen = BTreeSet::new();
    let mut events = Vec::with_capacity(C9_EVENTS);
    while events.len() < C9_EVENTS {
        let sid = format!("series_{:02}", rng.random_range(0..20));
        let step = rng.random_range(0..5_000_000u64);
        let class = if rng.random::<bool>() {
            EventClass::Onset
        } else {
            EventClass::Wakeup
        };
        if !seen.insert((sid.clone(), step, class)) {
            continue;
        }
        let confidence = match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            2 => rng.random::<f64>() * 1e-12,
            _ => rng.random::<f64>(),
        };
        events.push(ScoredEvent {
            series_id: sid,
            class,
            step,
            confidence,
        });
    }
    let mut buf = Vec::new();
    write_predictions(&events, &mut buf).map_err(|e| e.to_string())?;
    let back = read_predictions(buf.as_slice()).map_err(|e| e.to_string())?;
    ensure!(
        back.len() == events.len(),
        "read {} of {} events",
        back.len(),
        events.len()
    );
    for (a, b) in events.iter().zip(&back) {
        ensure!(
            a == b && a.confidence.to_bits() == b.confidence.to_bits(),
            "round trip changed {a:?} into {b:?}"
        );
    }

    let csv = "series_id,step,timestamp,anglez,enmo\n\
               a,0,2023-01-01T00:00:00+0000,1.5,-0.25\n\
               a,1,2023-01-01T00:00:05+0000,2.5,0.0\n\
               a,2,2023-01-01T00:00:10+0000,3.5,-0.001\n\
               a,3,2023-01-01T00:00:15+0000,4.5,0.125\n";
    let (series, report) = read_series_csv(csv.as_bytes()).map_err(|e| e.to_string())?;
    let enmo = series[0].enmo();
    ensure!(
        enmo == vec![0.0, 0.0, 0.0, 0.125],
        "enmo after clamping: {enmo:?}"
    );
    ensure!(
        report.clamped_enmo == 2,
        "reported {} clamped rows, want 2",
        report.clamped_enmo
    );
    Ok(format!(
        "{C9_EVENTS} predictions identical after write/read (bitwise scores); 2 negative enmo clamped and counted"
    ))
}

// ---------------------------------------------------------------------------

fn cli(threads: usize, dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sleepstate"))
        .current_dir(dir)
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "threads {threads}: sleepstate {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr).trim()
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Runs every subcommand; returns each output file and stdout by name.
fn pipeline(threads: usize, dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let steps: [(&str, &[&str]); 12] = [
        (
            "synth",
            &[
                "synth",
                "--out-dir",
                "data",
                "--n-series",
                "3",
                "--n-days",
                "2",
                "--seed",
                "99",
                "--nonwear",
                "20:90",
            ],
        ),
        (
            "features",
            &[
                "features",
                "--series",
                "data/series.csv",
                "--out",
                "features.csv",
            ],
        ),
        (
            "detect",
            &[
                "detect",
                "--series",
                "data/series.csv",
                "--out",
                "rules.csv",
            ],
        ),
        (
            "train_forest",
            &[
                "train",
                "--features",
                "features.csv",
                "--events",
                "data/events.csv",
                "--out",
                "forest.json",
                "--model",
                "forest",
                "--n-estimators",
                "8",
                "--subsample",
                "4",
            ],
        ),
        (
            "train_logistic",
            &[
                "train",
                "--features",
                "features.csv",
                "--events",
                "data/events.csv",
                "--out",
                "logistic.json",
                "--model",
                "logistic",
                "--epochs",
                "30",
            ],
        ),
        (
            "predict",
            &[
                "predict",
                "--model",
                "forest.json",
                "--features",
                "features.csv",
                "--out",
                "proba.csv",
            ],
        ),
        (
            "predict_logistic",
            &[
                "predict",
                "--model",
                "logistic.json",
                "--features",
                "features.csv",
                "--out",
                "proba_logistic.csv",
            ],
        ),
        (
            "extract",
            &[
                "extract",
                "--proba",
                "proba.csv",
                "--series",
                "data/series.csv",
                "--out",
                "extracted.csv",
            ],
        ),
        (
            "score_text",
            &[
                "score",
                "--predictions",
                "extracted.csv",
                "--events",
                "data/events.csv",
                "--intervals",
                "data/intervals.csv",
            ],
        ),
        (
            "score_csv",
            &[
                "score",
                "--predictions",
                "rules.csv",
                "--events",
                "data/events.csv",
                "--format",
                "csv",
                "--out",
                "report.csv",
            ],
        ),
        (
            "plot",
            &[
                "plot",
                "--series",
                "data/series.csv",
                "--out",
                "plot.svg",
                "--events",
                "data/events.csv",
                "--predictions",
                "extracted.csv",
            ],
        ),
        (
            "plot_one",
            &[
                "plot",
                "--series",
                "data/series.csv",
                "--out",
                "plot_one.svg",
                "--series-id",
                "synth001",
            ],
        ),
    ];
    let mut out = BTreeMap::new();
    for (name, args) in steps {
        let stdout = cli(threads, dir, args)?;
        out.insert(format!("stdout:{name}"), stdout.into_bytes());
    }
    collect_files(dir, dir, &mut out)?;
    Ok(out)
}

fn collect_files(
    root: &Path,
    dir: &Path,
    out: &mut BTreeMap<String, Vec<u8>>,
) -> Result<(), String> {
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let key = path.strip_prefix(root).unwrap().display().to_string();
            out.insert(key, fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(())
}

fn c10_thread_determinism() -> Outcome {
    let one = tempfile::tempdir().map_err(|e| e.to_string())?;
    let eight = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = pipeline(1, one.path())?;
    let b = pipeline(8, eight.path())?;
    let keys_a: Vec<&String> = a.keys().collect();
    let keys_b: Vec<&String> = b.keys().collect();
    ensure!(
        keys_a == keys_b,
        "different outputs: {keys_a:?} vs {keys_b:?}"
    );
    let files = a.keys().filter(|k| !k.starts_with("stdout:")).count();
    for (k, v) in &a {
        ensure!(
            v == &b[k],
            "{k} differs between --threads 1 and --threads 8"
        );
    }
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!(
        "8 subcommands (12 invocations), {files} files + stdout byte-identical ({bytes} bytes)"
    ))
}
