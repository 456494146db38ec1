//! Event detection average precision.
//!
//! Predictions are matched to ground truth per (series, class) at each
//! tolerance, match results are pooled across series per (class,
//! tolerance), and the mean AP over groups with ground truth is reported.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{EventClass, LabeledEvent, ScoredEvent, ScoringInterval};

/// Strictly increasing, positive step tolerances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToleranceSet(Vec<u64>);

impl ToleranceSet {
    pub const DEFAULT: [u64; 10] = [12, 36, 60, 90, 120, 150, 180, 240, 300, 360];

    pub fn new(tolerances: Vec<u64>) -> Result<Self> {
        if tolerances.is_empty() {
            return Err(Error::Config("tolerance list is empty".into()));
        }
        if tolerances[0] == 0 {
            return Err(Error::Config("tolerances must be > 0".into()));
        }
        if tolerances.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "tolerances must be strictly increasing, got {tolerances:?}"
            )));
        }
        Ok(Self(tolerances))
    }

    /// Parses a comma-separated list such as `12,36,60`.
    pub fn parse(text: &str) -> Result<Self> {
        let values = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("bad tolerance {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self(Self::DEFAULT.to_vec())
    }
}

/// Per-prediction outcomes in ranking order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub flags: Vec<bool>,
    /// Input position of the prediction behind each flag.
    pub order: Vec<usize>,
    pub n_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Keeps predictions that fall inside an interval of their own series;
/// `None` keeps everything.
pub fn select_in_intervals(
    preds: &[ScoredEvent],
    intervals: Option<&[ScoringInterval]>,
) -> Vec<ScoredEvent> {
    let Some(intervals) = intervals else {
        return preds.to_vec();
    };
    let mut by_series: BTreeMap<&str, Vec<&ScoringInterval>> = BTreeMap::new();
    for iv in intervals {
        by_series.entry(iv.series_id.as_str()).or_default().push(iv);
    }
    preds
        .iter()
        .filter(|p| {
            by_series
                .get(p.series_id.as_str())
                .is_some_and(|ivs| ivs.iter().any(|iv| iv.contains(p.step)))
        })
        .cloned()
        .collect()
}

/// Descending confidence, then smaller step, then input position.
fn ranking<'a, E: std::borrow::Borrow<ScoredEvent> + 'a>(preds: &[E]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (preds[a].borrow(), preds[b].borrow());
        pb.confidence
            .total_cmp(&pa.confidence)
            .then(pa.step.cmp(&pb.step))
            .then(a.cmp(&b))
    });
    order
}

fn check_tolerance(tol: i64) -> Result<u64> {
    u64::try_from(tol).map_err(|_| Error::Config(format!("tolerance must be >= 0, got {tol}")))
}

/// Greedy matching of one (series, class) group.
///
/// Each prediction, in ranking order, takes the nearest unmatched ground
/// truth strictly closer than `tol`; distance ties go to the earlier one.
pub fn match_events(preds: &[ScoredEvent], gt_steps: &[u64], tol: i64) -> Result<MatchResult> {
    Ok(match_local(preds, gt_steps, check_tolerance(tol)?))
}

fn match_local<E: std::borrow::Borrow<ScoredEvent>>(
    preds: &[E],
    gt_steps: &[u64],
    tol: u64,
) -> MatchResult {
    let mut free: BTreeSet<(u64, usize)> = gt_steps.iter().copied().zip(0..).collect();
    let order = ranking(preds);
    let mut flags = Vec::with_capacity(order.len());
    for &i in &order {
        let p = preds[i].borrow().step;
        let left = free
            .range(..=(p, usize::MAX))
            .next_back()
            .and_then(|&(s, _)| free.range((s, 0)..).next().copied());
        let right = p
            .checked_add(1)
            .and_then(|q| free.range((q, 0)..).next().copied());
        let pick = match (left, right) {
            (Some(l), Some(r)) => Some(if p - l.0 <= r.0 - p { l } else { r }),
            (l, r) => l.or(r),
        };
        let hit = pick.filter(|&(s, _)| s.abs_diff(p) < tol);
        if let Some(key) = hit {
            free.remove(&key);
        }
        flags.push(hit.is_some());
    }
    MatchResult {
        flags,
        order,
        n_gt: gt_steps.len(),
    }
}

/// Non-interpolated area under the precision/recall curve, taking the
/// predictions one at a time in the given order. `None` when there is no
/// ground truth.
pub fn average_precision(m: &MatchResult) -> Option<f64> {
    if m.n_gt == 0 {
        return None;
    }
    // precisions are each <= 1 and at most n_gt of them are summed, so with
    // one final division a perfect ranking is exactly 1 and AP never exceeds it
    let mut precision_sum = 0.0;
    let mut tp = 0usize;
    for (k, &hit) in m.flags.iter().enumerate() {
        if hit {
            tp += 1;
            precision_sum += tp as f64 / (k + 1) as f64;
        }
    }
    Some(precision_sum / m.n_gt as f64)
}

/// Matches every series of one class and lays the outcomes out in the
/// cross-series ranking.
fn match_pooled(
    preds: &[&ScoredEvent],
    gts: &BTreeMap<&str, Vec<u64>>,
    tol: u64,
) -> Result<MatchResult> {
    let mut by_series: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        by_series.entry(p.series_id.as_str()).or_default().push(i);
    }
    let mut hit = vec![false; preds.len()];
    for (sid, idx) in &by_series {
        let local: Vec<&ScoredEvent> = idx.iter().map(|&i| preds[i]).collect();
        let steps = gts.get(sid).map_or(&[][..], Vec::as_slice);
        let m = match_local(&local, steps, tol);
        for (k, &li) in m.order.iter().enumerate() {
            hit[idx[li]] = m.flags[k];
        }
    }
    let order = ranking(preds);
    Ok(MatchResult {
        flags: order.iter().map(|&i| hit[i]).collect(),
        order,
        n_gt: gts.values().map(Vec::len).sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupScore {
    pub class: EventClass,
    pub tolerance: u64,
    pub n_gt: usize,
    pub n_pred: usize,
    /// `None` when the group has no ground truth.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdapReport {
    /// Ordered by class, then tolerance.
    pub groups: Vec<GroupScore>,
    pub mean_ap: f64,
}

impl EdapReport {
    pub fn ap(&self, class: EventClass, tolerance: u64) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.class == class && g.tolerance == tolerance)
            .and_then(|g| g.ap)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "class,tolerance,n_gt,n_pred,ap")?;
        for g in &self.groups {
            let ap = g.ap.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{ap}",
                g.class, g.tolerance, g.n_gt, g.n_pred
            )?;
        }
        writeln!(out, "mean_ap,,,,{}", self.mean_ap)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>9} {:>6} {:>7} {:>8}",
            "class", "tolerance", "n_gt", "n_pred", "ap"
        );
        for g in &self.groups {
            let ap = g.ap.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{:<8} {:>9} {:>6} {:>7} {:>8}",
                g.class.as_str(),
                g.tolerance,
                g.n_gt,
                g.n_pred,
                ap
            );
        }
        let _ = writeln!(s, "mean_ap  {:.6}", self.mean_ap);
        s
    }
}

/// One class's predictions and its ground-truth steps by series.
type ClassInputs<'a> = (Vec<&'a ScoredEvent>, BTreeMap<&'a str, Vec<u64>>);

/// Scores predictions against ground truth at every tolerance.
pub fn edap(
    preds: &[ScoredEvent],
    gts: &[LabeledEvent],
    tolerances: &ToleranceSet,
    intervals: Option<&[ScoringInterval]>,
) -> Result<EdapReport> {
    if gts.is_empty() {
        return Err(Error::NothingToScore);
    }
    let selected = select_in_intervals(preds, intervals);
    let jobs: Vec<(EventClass, u64)> = EventClass::ALL
        .iter()
        .flat_map(|&c| tolerances.as_slice().iter().map(move |&t| (c, t)))
        .collect();
    let per_class: BTreeMap<EventClass, ClassInputs> = EventClass::ALL
        .iter()
        .map(|&c| {
            let p = selected.iter().filter(|e| e.class == c).collect();
            let mut g: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
            for e in gts.iter().filter(|e| e.class == c) {
                g.entry(e.series_id.as_str()).or_default().push(e.step);
            }
            (c, (p, g))
        })
        .collect();
    let groups = jobs
        .par_iter()
        .map(|&(class, tol)| {
            let (p, g) = &per_class[&class];
            let m = match_pooled(p, g, tol)?;
            Ok(GroupScore {
                class,
                tolerance: tol,
                n_gt: m.n_gt,
                n_pred: m.flags.len(),
                ap: average_precision(&m),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let scored: Vec<f64> = groups.iter().filter_map(|g| g.ap).collect();
    let mean_ap = scored.iter().sum::<f64>() / scored.len() as f64;
    Ok(EdapReport { groups, mean_ap })
}

/// Reference AP for one class: sweeps every distinct confidence as a
/// threshold and rematches the surviving predictions from scratch.
/// Returns 0 when there is no ground truth.
///
/// Tied confidences cross the threshold together, so this equals the
/// ranked computation only when confidences are distinct.
pub fn brute_force_ap(preds: &[ScoredEvent], gts: &[LabeledEvent], tol: u64) -> f64 {
    let n_gt = gts.len();
    if n_gt == 0 {
        return 0.0;
    }
    let mut thresholds: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let kept: Vec<(usize, &ScoredEvent)> = preds
            .iter()
            .enumerate()
            .filter(|(_, p)| p.confidence >= t)
            .collect();
        let mut tp = 0;
        let series: BTreeSet<&str> = kept.iter().map(|(_, p)| p.series_id.as_str()).collect();
        for sid in series {
            let mut ps: Vec<(usize, &ScoredEvent)> = kept
                .iter()
                .filter(|(_, p)| p.series_id == sid)
                .copied()
                .collect();
            ps.sort_by(|a, b| {
                b.1.confidence
                    .partial_cmp(&a.1.confidence)
                    .unwrap()
                    .then(a.1.step.cmp(&b.1.step))
                    .then(a.0.cmp(&b.0))
            });
            let mut gs: Vec<(u64, bool)> = gts
                .iter()
                .filter(|g| g.series_id == sid)
                .map(|g| (g.step, false))
                .collect();
            gs.sort_unstable();
            for (_, p) in ps {
                let mut best: Option<(u64, usize)> = None;
                for (j, &(s, used)) in gs.iter().enumerate() {
                    let d = s.abs_diff(p.step);
                    if !used && d < tol && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, j));
                    }
                }
                if let Some((_, j)) = best {
                    gs[j].1 = true;
                    tp += 1;
                }
            }
        }
        let recall = tp as f64 / n_gt as f64;
        ap += (recall - prev_recall) * (tp as f64 / kept.len() as f64);
        prev_recall = recall;
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_timestamp;
    use proptest::prelude::*;

    fn pred(series: &str, class: EventClass, step: u64, confidence: f64) -> ScoredEvent {
        ScoredEvent {
            series_id: series.into(),
            class,
            step,
            confidence,
        }
    }

    fn gt(series: &str, class: EventClass, step: u64) -> LabeledEvent {
        LabeledEvent {
            series_id: series.into(),
            night: 1,
            class,
            step,
            timestamp: parse_timestamp("2023-01-01T00:00:00+0000").unwrap(),
        }
    }

    fn toy() -> (Vec<ScoredEvent>, Vec<LabeledEvent>) {
        let on = EventClass::Onset;
        (
            vec![
                pred("a", on, 110, 0.9),
                pred("a", on, 130, 0.8),
                pred("a", on, 700, 0.7),
            ],
            vec![gt("a", on, 100), gt("a", on, 500)],
        )
    }

    #[test]
    fn perfect_ranking_is_exactly_one() {
        for n in 1..=60u64 {
            let g: Vec<u64> = (0..n).map(|i| i * 100).collect();
            let p: Vec<ScoredEvent> = g
                .iter()
                .map(|&s| pred("s", EventClass::Onset, s, 0.5))
                .collect();
            let m = match_events(&p, &g, 1).unwrap();
            assert_eq!(average_precision(&m), Some(1.0), "n_gt = {n}");
        }
    }

    #[test]
    fn toy_matching_and_ap() {
        let (p, g) = toy();
        let steps: Vec<u64> = g.iter().map(|e| e.step).collect();
        let m = match_events(&p, &steps, 30).unwrap();
        assert_eq!(m.flags, vec![true, false, false]);
        assert_eq!(m.n_gt, 2);
        assert_eq!(average_precision(&m), Some(0.5));
        let m5 = match_events(&p, &steps, 5).unwrap();
        assert_eq!(average_precision(&m5), Some(0.0));
        assert_eq!(brute_force_ap(&p, &g, 30), 0.5);
        assert_eq!(brute_force_ap(&p, &g, 5), 0.0);

        let r = edap(&p, &g, &ToleranceSet::new(vec![5, 30]).unwrap(), None).unwrap();
        assert_eq!(r.ap(EventClass::Onset, 30), Some(0.5));
        assert_eq!(r.ap(EventClass::Onset, 5), Some(0.0));
        assert_eq!(r.ap(EventClass::Wakeup, 30), None);
        assert_eq!(r.mean_ap, 0.25);
    }

    #[test]
    fn boundary_and_degenerate_cases() {
        let on = EventClass::Onset;
        let m = match_events(&[pred("a", on, 130, 1.0)], &[100], 30).unwrap();
        assert_eq!(m.flags, vec![false]);
        let m = match_events(&[], &[1, 2, 3], 30).unwrap();
        assert!(m.flags.is_empty());
        assert_eq!(m.n_gt, 3);
        assert_eq!(average_precision(&m), Some(0.0));
        assert_eq!(average_precision(&MatchResult::default()), None);
        assert!(match_events(&[], &[1], -1).is_err());
        assert_eq!(brute_force_ap(&[], &[gt("a", on, 5)], 10), 0.0);
    }

    #[test]
    fn confidence_ties_rank_smaller_step_first() {
        let on = EventClass::Onset;
        let p = [
            pred("a", on, 300, 0.5),
            pred("b", on, 200, 0.5),
            pred("a", on, 100, 0.5),
        ];
        let m = match_events(&p, &[300], 10).unwrap();
        assert_eq!(m.order, vec![2, 1, 0]);
        assert_eq!(m.flags, vec![false, false, true]);
        let g = [gt("a", on, 300)];
        let r = edap(&p, &g, &ToleranceSet::new(vec![10]).unwrap(), None).unwrap();
        assert_eq!(r.ap(on, 10), Some(1.0 / 3.0));
    }

    #[test]
    fn distance_ties_go_to_earlier_ground_truth() {
        let on = EventClass::Onset;
        let p = [pred("a", on, 50, 0.9), pred("a", on, 40, 0.5)];
        let m = match_events(&p, &[40, 60], 11).unwrap();
        // 50 takes 40, so 40 only has 60 at distance 20
        assert_eq!(m.flags, vec![true, false]);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        for (i, s) in ["a", "b", "c"].iter().enumerate() {
            for c in EventClass::ALL {
                let step = 1000 * i as u64 + if c == EventClass::Onset { 10 } else { 500 };
                preds.push(pred(s, c, step, 1.0));
                gts.push(gt(s, c, step));
            }
        }
        let r = edap(&preds, &gts, &ToleranceSet::default(), None).unwrap();
        assert!(r.groups.iter().all(|g| g.ap == Some(1.0)));
        assert_eq!(r.mean_ap, 1.0);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        let p = [pred("a", EventClass::Onset, 1, 1.0)];
        assert!(matches!(
            edap(&p, &[], &ToleranceSet::default(), None),
            Err(Error::NothingToScore)
        ));
    }

    #[test]
    fn equal_class_aps_average_to_that_ap() {
        let (mut p, mut g) = toy();
        p.extend(p.clone().into_iter().map(|e| ScoredEvent {
            class: EventClass::Wakeup,
            ..e
        }));
        g.extend(g.clone().into_iter().map(|e| LabeledEvent {
            class: EventClass::Wakeup,
            ..e
        }));
        let r = edap(&p, &g, &ToleranceSet::new(vec![30]).unwrap(), None).unwrap();
        assert_eq!(r.mean_ap, 0.5);
    }

    #[test]
    fn interval_selection_is_half_open() {
        let on = EventClass::Onset;
        let p = vec![
            pred("a", on, 50, 1.0),
            pred("a", on, 100, 1.0),
            pred("b", on, 50, 1.0),
        ];
        let iv = [ScoringInterval {
            series_id: "a".into(),
            start_step: 0,
            end_step: 100,
        }];
        assert_eq!(select_in_intervals(&p, None), p);
        assert_eq!(select_in_intervals(&p, Some(&iv)), vec![p[0].clone()]);
    }

    #[test]
    fn tolerance_sets() {
        assert_eq!(ToleranceSet::default().as_slice()[0], 12);
        assert!(ToleranceSet::new(vec![]).is_err());
        assert!(ToleranceSet::new(vec![0, 5]).is_err());
        assert!(ToleranceSet::new(vec![5, 5]).is_err());
        assert_eq!(ToleranceSet::parse("12, 36").unwrap().as_slice(), &[12, 36]);
        assert!(ToleranceSet::parse("12,x").is_err());
    }

    #[test]
    fn report_csv_layout() {
        let (p, g) = toy();
        let r = edap(&p, &g, &ToleranceSet::new(vec![30]).unwrap(), None).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "class,tolerance,n_gt,n_pred,ap\nonset,30,2,3,0.5\nwakeup,30,0,0,\nmean_ap,,,,0.5\n"
        );
    }

    fn instance() -> impl Strategy<Value = (Vec<ScoredEvent>, Vec<LabeledEvent>)> {
        let preds = proptest::collection::vec((0usize..3, 0u64..400, 0.0f64..1.0), 0..50);
        let gts = proptest::collection::vec((0usize..3, 0u64..400), 1..20);
        (preds, gts).prop_map(|(ps, gs)| {
            let ids = ["x", "y", "z"];
            (
                ps.into_iter()
                    .map(|(s, st, c)| pred(ids[s], EventClass::Onset, st, c))
                    .collect(),
                gs.into_iter()
                    .map(|(s, st)| gt(ids[s], EventClass::Onset, st))
                    .collect(),
            )
        })
    }

    fn pipeline_ap(p: &[ScoredEvent], g: &[LabeledEvent], tol: u64) -> f64 {
        edap(p, g, &ToleranceSet::new(vec![tol]).unwrap(), None)
            .unwrap()
            .ap(EventClass::Onset, tol)
            .unwrap()
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force((p, g) in instance(), tol in 1u64..80) {
            let a = pipeline_ap(&p, &g, tol);
            let b = brute_force_ap(&p, &g, tol);
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn increasing_transform_keeps_ap((p, g) in instance(), tol in 1u64..80) {
            let q: Vec<ScoredEvent> = p
                .iter()
                .map(|e| ScoredEvent { confidence: (3.0 * e.confidence).exp() - 7.0, ..e.clone() })
                .collect();
            prop_assert_eq!(pipeline_ap(&p, &g, tol), pipeline_ap(&q, &g, tol));
        }

        #[test]
        fn input_order_does_not_matter((p, g) in instance(), tol in 1u64..80, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut q = p.clone();
            q.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(pipeline_ap(&p, &g, tol), pipeline_ap(&q, &g, tol));
        }

        #[test]
        fn ap_never_drops_as_tolerance_grows((p, g) in instance(), tol in 1u64..80, extra in 1u64..80) {
            prop_assert!(pipeline_ap(&p, &g, tol + extra) >= pipeline_ap(&p, &g, tol));
        }

        #[test]
        fn low_confidence_addition_only_extends_the_curve(
            (p, g) in instance(),
            tol in 1u64..80,
            step in 0u64..400,
        ) {
            let steps: Vec<u64> = g.iter().filter(|e| e.series_id == "x").map(|e| e.step).collect();
            let xs: Vec<ScoredEvent> = p.iter().filter(|e| e.series_id == "x").cloned().collect();
            let before = match_events(&xs, &steps, tol as i64).unwrap();
            let mut more = xs.clone();
            more.push(pred("x", EventClass::Onset, step, -1.0));
            let after = match_events(&more, &steps, tol as i64).unwrap();
            prop_assert_eq!(&after.flags[..before.flags.len()], &before.flags[..]);
        }
    }
}
