//! Rule-based sleep window detection.
//!
//! The detector marks sustained arm-angle inactivity, removes spans where the
//! device was not worn, merges inactivity runs across short activity bouts,
//! drops windows under the minimum length and keeps the longest window per
//! night.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::rolling_std;
use crate::model::{
    night_of, EventClass, ScoredEvent, Series, SleepWindow, DEFAULT_NIGHT_BOUNDARY_HOUR,
};

/// Length of the context on each side of a window used for confidence.
pub const FLANK_MINUTES: u32 = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub angle_change_threshold_deg: f64,
    pub smoothing_window_min: u32,
    pub min_window_min: u32,
    pub max_interruption_min: u32,
    pub nonwear_std_threshold_deg: f64,
    pub nonwear_min_duration_min: u32,
    pub night_boundary_hour: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            angle_change_threshold_deg: 5.0,
            smoothing_window_min: 5,
            min_window_min: 30,
            max_interruption_min: 30,
            nonwear_std_threshold_deg: 0.05,
            nonwear_min_duration_min: 60,
            night_boundary_hour: DEFAULT_NIGHT_BOUNDARY_HOUR,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (
                "angle_change_threshold_deg",
                self.angle_change_threshold_deg,
            ),
            ("nonwear_std_threshold_deg", self.nonwear_std_threshold_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let durations = [
            ("smoothing_window_min", self.smoothing_window_min),
            ("min_window_min", self.min_window_min),
            ("max_interruption_min", self.max_interruption_min),
            ("nonwear_min_duration_min", self.nonwear_min_duration_min),
        ];
        for (name, v) in durations {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if self.night_boundary_hour > 23 {
            return Err(Error::Config(format!(
                "night_boundary_hour must be in 0..=23, got {}",
                self.night_boundary_hour
            )));
        }
        Ok(())
    }
}

/// Total order on f64 expressed as an unsigned key.
fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Sliding median over a multiset of values, O(log w) per update.
#[derive(Default)]
struct SlidingMedian {
    low: BTreeSet<(u64, usize)>,
    high: BTreeSet<(u64, usize)>,
}

impl SlidingMedian {
    fn insert(&mut self, i: usize, v: f64) {
        let key = (order_key(v), i);
        match self.low.last() {
            Some(top) if key > *top => self.high.insert(key),
            _ => self.low.insert(key),
        };
        self.rebalance();
    }

    fn remove(&mut self, i: usize, v: f64) {
        let key = (order_key(v), i);
        if !self.low.remove(&key) {
            self.high.remove(&key);
        }
        self.rebalance();
    }

    fn rebalance(&mut self) {
        while self.low.len() > self.high.len() + 1 {
            let k = self.low.pop_last().expect("non-empty");
            self.high.insert(k);
        }
        while self.high.len() > self.low.len() {
            let k = self.high.pop_first().expect("non-empty");
            self.low.insert(k);
        }
    }

    fn median(&self, values: &[f64]) -> f64 {
        let lo = self.low.last().map(|&(_, i)| values[i]).unwrap_or(0.0);
        if self.low.len() > self.high.len() {
            lo
        } else {
            let hi = self.high.first().map(|&(_, i)| values[i]).unwrap_or(lo);
            0.5 * (lo + hi)
        }
    }
}

/// Median over the centred window `[i - w/2, i + (w-1)/2]`, clipped at the
/// series ends.
fn centered_rolling_median(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let before = w / 2;
    let after = w.saturating_sub(1) - before;
    let mut med = SlidingMedian::default();
    for (j, &v) in x
        .iter()
        .enumerate()
        .take(after.min(n.saturating_sub(1)) + 1)
    {
        med.insert(j, v);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(med.median(x));
        let incoming = i + after + 1;
        if incoming < n {
            med.insert(incoming, x[incoming]);
        }
        if i >= before {
            med.remove(i - before, x[i - before]);
        }
    }
    out
}

/// Keeps only true runs of at least `min_len`.
fn keep_long_runs(mask: &mut [bool], min_len: usize) {
    for (s, e) in runs(mask) {
        if e - s < min_len {
            mask[s..e].iter_mut().for_each(|m| *m = false);
        }
    }
}

/// Maximal runs of `true` as half-open index ranges.
pub(crate) fn runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, mask.len()));
    }
    out
}

/// Marks steps where the arm angle is still.
///
/// The per-step absolute change of anglez is median-smoothed over a centred
/// `smoothing_window_min` window; a step is inactive when that smoothed
/// change stays under `angle_change_threshold_deg` for a run at least one
/// smoothing window long.
pub fn inactivity_mask(series: &Series, cfg: &DetectorConfig) -> Vec<bool> {
    let a = series.anglez();
    if a.is_empty() {
        return Vec::new();
    }
    let w = series.steps_for_minutes(f64::from(cfg.smoothing_window_min));
    let change: Vec<f64> = std::iter::once(0.0)
        .chain(a.windows(2).map(|p| (p[1] - p[0]).abs()))
        .collect();
    let smoothed = centered_rolling_median(&change, w);
    let mut mask: Vec<bool> = smoothed
        .iter()
        .map(|&m| m < cfg.angle_change_threshold_deg)
        .collect();
    keep_long_runs(&mut mask, w);
    mask
}

/// Marks steps where the device appears to be off the wrist: the rolling
/// std of anglez stays below `nonwear_std_threshold_deg` for at least
/// `nonwear_min_duration_min`.
pub fn nonwear_mask(series: &Series, cfg: &DetectorConfig) -> Vec<bool> {
    let a = series.anglez();
    let n = a.len();
    let w = series.steps_for_minutes(f64::from(cfg.smoothing_window_min));
    let sd = rolling_std(&a, w).expect("window is at least one step");
    let mut mask = vec![false; n];
    // Each still trailing window marks all of its own samples.
    let mut covered_from = n;
    for i in (0..n).rev() {
        if sd[i] < cfg.nonwear_std_threshold_deg {
            covered_from = covered_from.min((i + 1).saturating_sub(w));
        }
        if covered_from <= i {
            mask[i] = true;
        }
        if covered_from == i {
            covered_from = n;
        }
    }
    let min_len = series.steps_for_minutes(f64::from(cfg.nonwear_min_duration_min));
    keep_long_runs(&mut mask, min_len);
    mask
}

/// Turns an inactivity mask into candidate sleep windows: non-wear steps
/// are treated as active, runs separated by at most `max_interruption_min`
/// of activity are merged, windows shorter than `min_window_min` or
/// touching non-wear are dropped.
pub fn assemble_windows(
    series: &Series,
    inactive: &[bool],
    nonwear: &[bool],
    cfg: &DetectorConfig,
) -> Result<Vec<SleepWindow>> {
    let n = series.len();
    if inactive.len() != n || nonwear.len() != n {
        return Err(Error::Invalid(format!(
            "mask lengths {} and {} do not match series length {n}",
            inactive.len(),
            nonwear.len()
        )));
    }
    let Some(first_step) = series.first_step() else {
        return Ok(Vec::new());
    };
    let max_gap = series.steps_for_minutes(f64::from(cfg.max_interruption_min));
    let min_len = series.steps_for_minutes(f64::from(cfg.min_window_min));

    let eff: Vec<bool> = inactive
        .iter()
        .zip(nonwear)
        .map(|(&i, &nw)| i && !nw)
        .collect();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in runs(&eff) {
        match merged.last_mut() {
            Some(last) if s - last.1 <= max_gap => last.1 = e,
            _ => merged.push((s, e)),
        }
    }

    let mut nonwear_prefix = Vec::with_capacity(n + 1);
    nonwear_prefix.push(0usize);
    for &nw in nonwear {
        nonwear_prefix.push(nonwear_prefix.last().unwrap() + usize::from(nw));
    }

    let mut out = Vec::new();
    for (s, mut e) in merged {
        // the wakeup step must be a real sample
        e = e.min(n - 1);
        if e <= s || e - s < min_len {
            continue;
        }
        if nonwear_prefix[e] - nonwear_prefix[s] > 0 {
            continue;
        }
        out.push(SleepWindow::new(
            series.series_id.clone(),
            first_step + s as u64,
            first_step + e as u64,
        )?);
    }
    Ok(out)
}

/// Assigns each window to the night of its onset and keeps the longest per
/// night, preferring the earlier onset on ties.
pub fn select_per_night(
    windows: Vec<SleepWindow>,
    series: &Series,
    night_boundary_hour: u32,
) -> Vec<SleepWindow> {
    let mut best: BTreeMap<NaiveDate, SleepWindow> = BTreeMap::new();
    for mut w in windows {
        let Some(idx) = series.index_of_step(w.onset_step) else {
            continue;
        };
        let night = night_of(&series.samples[idx].timestamp, night_boundary_hour);
        w.night = Some(night);
        match best.get(&night) {
            Some(cur)
                if cur.len_steps() > w.len_steps()
                    || (cur.len_steps() == w.len_steps() && cur.onset_step <= w.onset_step) => {}
            _ => {
                best.insert(night, w);
            }
        }
    }
    let mut out: Vec<SleepWindow> = best.into_values().collect();
    out.sort_by_key(|w| w.onset_step);
    out
}

/// Inside-minus-flank contrast of `score` around a window, clamped to [0, 1].
///
/// `score` is indexed by sample position; `lo..hi` is the window.
pub(crate) fn contrast_confidence(score: &[f64], lo: usize, hi: usize, flank: usize) -> f64 {
    let mean = |r: std::ops::Range<usize>| -> Option<f64> {
        (!r.is_empty()).then(|| score[r.clone()].iter().sum::<f64>() / r.len() as f64)
    };
    let inside = mean(lo..hi).unwrap_or(0.0);
    let left = lo.saturating_sub(flank)..lo;
    let right = hi..(hi + flank).min(score.len());
    let flank_len = left.len() + right.len();
    let outside = if flank_len == 0 {
        0.0
    } else {
        (score[left].iter().sum::<f64>() + score[right].iter().sum::<f64>()) / flank_len as f64
    };
    (inside - outside).clamp(0.0, 1.0)
}

pub(crate) fn window_events(
    windows: &[SleepWindow],
    series: &Series,
    score: &[f64],
) -> Vec<(SleepWindow, f64)> {
    let first = series.first_step().unwrap_or(0);
    let flank = series.steps_for_minutes(f64::from(FLANK_MINUTES));
    windows
        .iter()
        .map(|w| {
            let lo = (w.onset_step - first) as usize;
            let hi = (w.wakeup_step - first) as usize;
            (w.clone(), contrast_confidence(score, lo, hi, flank))
        })
        .collect()
}

pub(crate) fn events_for(window: &SleepWindow, confidence: f64) -> [ScoredEvent; 2] {
    [
        ScoredEvent {
            series_id: window.series_id.clone(),
            class: EventClass::Onset,
            step: window.onset_step,
            confidence,
        },
        ScoredEvent {
            series_id: window.series_id.clone(),
            class: EventClass::Wakeup,
            step: window.wakeup_step,
            confidence,
        },
    ]
}

/// Full detector: masks, window assembly, per-night selection and scored
/// onset/wakeup events. Confidence is the fraction of inactive steps inside
/// the window minus the fraction in the 30-minute flanks.
pub fn detect(
    series: &Series,
    cfg: &DetectorConfig,
) -> Result<(Vec<SleepWindow>, Vec<ScoredEvent>)> {
    cfg.validate()?;
    let inactive = inactivity_mask(series, cfg);
    let nonwear = nonwear_mask(series, cfg);
    let candidates = assemble_windows(series, &inactive, &nonwear, cfg)?;
    let windows = select_per_night(candidates, series, cfg.night_boundary_hour);

    let score: Vec<f64> = inactive
        .iter()
        .zip(&nonwear)
        .map(|(&i, &nw)| if i && !nw { 1.0 } else { 0.0 })
        .collect();
    let events = window_events(&windows, series, &score)
        .into_iter()
        .flat_map(|(w, c)| events_for(&w, c))
        .collect();
    Ok((windows, events))
}

/// Runs [`detect`] over many series in parallel, preserving input order.
pub fn detect_all(
    series: &[Series],
    cfg: &DetectorConfig,
) -> Result<Vec<(Vec<SleepWindow>, Vec<ScoredEvent>)>> {
    series.par_iter().map(|s| detect(s, cfg)).collect()
}
