//! Rolling-window feature extraction.
//!
//! Every statistic uses a trailing window `x[i-w+1 ..= i]` that shrinks at
//! the start of the series, so outputs have the input length and contain no
//! padding. All four statistics run in O(n) regardless of window length.

use std::collections::VecDeque;
use std::fmt;

use chrono::Timelike;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{steps_for_minutes, Series};

/// Window lengths of the default feature set, in minutes.
pub const DEFAULT_WINDOWS_MIN: [u32; 4] = [5, 30, 120, 480];

pub const HOUR_COLUMN: &str = "hour";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Anglez,
    Enmo,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Anglez => "anglez",
            Channel::Enmo => "enmo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stat {
    Mean,
    Max,
    Std,
    TotalVariation,
}

impl Stat {
    pub fn as_str(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Max => "max",
            Stat::Std => "std",
            Stat::TotalVariation => "tv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSpec {
    pub channel: Channel,
    pub stat: Stat,
    pub window_steps: usize,
}

impl FeatureSpec {
    pub fn from_minutes(channel: Channel, stat: Stat, minutes: u32, cadence_seconds: u32) -> Self {
        Self {
            channel,
            stat,
            window_steps: steps_for_minutes(f64::from(minutes), cadence_seconds),
        }
    }

    /// Window length in whole minutes, when it is one.
    pub fn window_minutes(&self, cadence_seconds: u32) -> Option<u64> {
        let secs = self.window_steps as u64 * u64::from(cadence_seconds);
        secs.is_multiple_of(60).then_some(secs / 60)
    }

    /// Column name, `<channel>_<minutes>m_<stat>`.
    pub fn column_name(&self, cadence_seconds: u32) -> String {
        let span = match self.window_minutes(cadence_seconds) {
            Some(m) => format!("{m}m"),
            None => format!("{}s", self.window_steps as u64 * u64::from(cadence_seconds)),
        };
        format!("{}_{}_{}", self.channel.as_str(), span, self.stat.as_str())
    }

    /// Inverse of [`FeatureSpec::column_name`].
    pub fn parse_column(name: &str, cadence_seconds: u32) -> Result<Self> {
        let bad = || Error::Parse(format!("{name:?} is not a feature column name"));
        let mut parts = name.split('_');
        let (Some(ch), Some(span), Some(st), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let channel = match ch {
            "anglez" => Channel::Anglez,
            "enmo" => Channel::Enmo,
            _ => return Err(bad()),
        };
        let stat = match st {
            "mean" => Stat::Mean,
            "max" => Stat::Max,
            "std" => Stat::Std,
            "tv" => Stat::TotalVariation,
            _ => return Err(bad()),
        };
        let seconds = if let Some(m) = span.strip_suffix('m') {
            m.parse::<u64>().map_err(|_| bad())? * 60
        } else if let Some(s) = span.strip_suffix('s') {
            s.parse::<u64>().map_err(|_| bad())?
        } else {
            return Err(bad());
        };
        let cadence = u64::from(cadence_seconds.max(1));
        if seconds == 0 || seconds % cadence != 0 {
            return Err(bad());
        }
        Ok(Self {
            channel,
            stat,
            window_steps: (seconds / cadence) as usize,
        })
    }

    pub fn compute(&self, series: &Series) -> Result<Vec<f64>> {
        let x = match self.channel {
            Channel::Anglez => series.anglez(),
            Channel::Enmo => series.enmo(),
        };
        match self.stat {
            Stat::Mean => rolling_mean(&x, self.window_steps),
            Stat::Max => rolling_max(&x, self.window_steps),
            Stat::Std => rolling_std(&x, self.window_steps),
            Stat::TotalVariation => total_variation(&x, self.window_steps),
        }
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}_{}steps_{}",
            self.channel.as_str(),
            self.window_steps,
            self.stat.as_str()
        )
    }
}

/// {anglez, enmo} x {5, 30, 120, 480 min} x {mean, max, std}: 24 specs.
pub fn default_specs(cadence_seconds: u32) -> Vec<FeatureSpec> {
    let mut out = Vec::with_capacity(24);
    for channel in [Channel::Anglez, Channel::Enmo] {
        for minutes in DEFAULT_WINDOWS_MIN {
            for stat in [Stat::Mean, Stat::Max, Stat::Std] {
                out.push(FeatureSpec::from_minutes(
                    channel,
                    stat,
                    minutes,
                    cadence_seconds,
                ));
            }
        }
    }
    out
}

/// Default specs plus a total-variation column per channel and window.
pub fn extended_specs(cadence_seconds: u32) -> Vec<FeatureSpec> {
    let mut out = default_specs(cadence_seconds);
    for channel in [Channel::Anglez, Channel::Enmo] {
        for minutes in DEFAULT_WINDOWS_MIN {
            out.push(FeatureSpec::from_minutes(
                channel,
                Stat::TotalVariation,
                minutes,
                cadence_seconds,
            ));
        }
    }
    out
}

/// Per-step feature vectors for one series, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub series_id: String,
    pub column_names: Vec<String>,
    pub steps: Vec<u64>,
    pub columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.steps.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let idx = self.column_names.iter().position(|n| n == name)?;
        Some(&self.columns[idx])
    }

    /// Reorders columns to `names`, failing if any are missing or extra.
    pub fn aligned_to(&self, names: &[String]) -> Result<Vec<&[f64]>> {
        check_columns(names, &self.column_names)?;
        Ok(names
            .iter()
            .map(|n| self.column(n).expect("checked above"))
            .collect())
    }

    /// Stacks rows of several matrices into one, checking column agreement.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("no feature matrices to concatenate".into()))?;
        let mut out = FeatureMatrix {
            series_id: first.series_id.clone(),
            column_names: first.column_names.clone(),
            steps: Vec::new(),
            columns: vec![Vec::new(); first.n_cols()],
        };
        for m in parts {
            let cols = m.aligned_to(&out.column_names)?;
            out.steps.extend_from_slice(&m.steps);
            for (dst, src) in out.columns.iter_mut().zip(cols) {
                dst.extend_from_slice(src);
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_columns(expected: &[String], found: &[String]) -> Result<()> {
    let missing: Vec<String> = expected
        .iter()
        .filter(|n| !found.contains(n))
        .cloned()
        .collect();
    let extra: Vec<String> = found
        .iter()
        .filter(|n| !expected.contains(n))
        .cloned()
        .collect();
    if missing.is_empty() && extra.is_empty() {
        Ok(())
    } else {
        Err(Error::ColumnMismatch { missing, extra })
    }
}

/// Computes one column per [`FeatureSpec`] (in parallel) plus an optional hour column.
pub fn build_features(
    series: &Series,
    specs: &[FeatureSpec],
    include_hour: bool,
) -> Result<FeatureMatrix> {
    let cadence = series.cadence_seconds;
    let mut columns: Vec<Vec<f64>> = specs
        .par_iter()
        .map(|s| s.compute(series))
        .collect::<Result<_>>()?;
    let mut column_names: Vec<String> = specs.iter().map(|s| s.column_name(cadence)).collect();
    if include_hour {
        columns.push(hour_of_day(series));
        column_names.push(HOUR_COLUMN.to_string());
    }
    if let Some(name) = column_names
        .iter()
        .zip(&columns)
        .find(|(_, c)| c.iter().any(|v| !v.is_finite()))
        .map(|(n, _)| n)
    {
        return Err(Error::Invalid(format!(
            "non-finite values in feature {name}"
        )));
    }
    Ok(FeatureMatrix {
        series_id: series.series_id.clone(),
        column_names,
        steps: series.steps(),
        columns,
    })
}

/// Builds exactly the named columns, in the given order.
pub fn build_named_features(series: &Series, names: &[String]) -> Result<FeatureMatrix> {
    let cadence = series.cadence_seconds;
    let columns = names
        .par_iter()
        .map(|n| {
            if n == HOUR_COLUMN {
                Ok(hour_of_day(series))
            } else {
                FeatureSpec::parse_column(n, cadence)?.compute(series)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        series_id: series.series_id.clone(),
        column_names: names.to_vec(),
        steps: series.steps(),
        columns,
    })
}

/// Feature columns whose window spans exactly `minutes`, in input order.
/// Names that do not parse as feature columns (such as `hour`) are dropped.
pub fn columns_with_window(names: &[String], minutes: u32) -> Vec<String> {
    // span length does not depend on cadence, so parse at 1 s resolution
    names
        .iter()
        .filter(|n| {
            FeatureSpec::parse_column(n, 1)
                .is_ok_and(|s| s.window_minutes(1) == Some(u64::from(minutes)))
        })
        .cloned()
        .collect()
}

/// Local hour of day of every sample.
pub fn hour_of_day(series: &Series) -> Vec<f64> {
    series
        .samples
        .iter()
        .map(|s| f64::from(s.timestamp.hour()))
        .collect()
}

fn check_window(w: usize, min: usize) -> Result<()> {
    if w < min {
        return Err(Error::Config(format!(
            "window of {w} steps, need at least {min}"
        )));
    }
    Ok(())
}

/// Neumaier-compensated running sum that supports removal.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sliding-window extremum over indices of `x`.
struct MonotonicQueue {
    idx: VecDeque<usize>,
    keep_max: bool,
}

impl MonotonicQueue {
    fn new(capacity: usize, keep_max: bool) -> Self {
        Self {
            idx: VecDeque::with_capacity(capacity),
            keep_max,
        }
    }

    #[inline]
    fn push(&mut self, i: usize, x: &[f64]) {
        while let Some(&back) = self.idx.back() {
            let dominated = if self.keep_max {
                x[back] <= x[i]
            } else {
                x[back] >= x[i]
            };
            if !dominated {
                break;
            }
            self.idx.pop_back();
        }
        self.idx.push_back(i);
    }

    #[inline]
    fn expire_before(&mut self, oldest: usize) {
        while self.idx.front().is_some_and(|&f| f < oldest) {
            self.idx.pop_front();
        }
    }

    #[inline]
    fn front(&self) -> usize {
        self.idx[0]
    }
}

pub fn rolling_mean(x: &[f64], w: usize) -> Result<Vec<f64>> {
    check_window(w, 1)?;
    let mut out = Vec::with_capacity(x.len());
    let mut sum = CompensatedSum::default();
    for i in 0..x.len() {
        sum.add(x[i]);
        if i >= w {
            sum.add(-x[i - w]);
        }
        let n = (i + 1).min(w);
        out.push(sum.value() / n as f64);
    }
    Ok(out)
}

fn rolling_extremum(x: &[f64], w: usize, keep_max: bool) -> Result<Vec<f64>> {
    check_window(w, 1)?;
    let mut q = MonotonicQueue::new(w.min(x.len()) + 1, keep_max);
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        q.push(i, x);
        q.expire_before((i + 1).saturating_sub(w));
        out.push(x[q.front()]);
    }
    Ok(out)
}

pub fn rolling_max(x: &[f64], w: usize) -> Result<Vec<f64>> {
    rolling_extremum(x, w, true)
}

pub fn rolling_min(x: &[f64], w: usize) -> Result<Vec<f64>> {
    rolling_extremum(x, w, false)
}

/// Population standard deviation over each trailing window.
///
/// Values are accumulated as deviations from a running centre. When a
/// window's spread becomes small next to its distance from that centre the
/// sums are rebuilt around the window's own mean, which bounds the relative
/// error of the variance by roughly `RECENTER_RATIO * f64::EPSILON`. Windows
/// whose values are all identical return exactly zero.
pub fn rolling_std(x: &[f64], w: usize) -> Result<Vec<f64>> {
    /// Rebuild when `E[d^2]` exceeds the variance by this factor.
    const RECENTER_RATIO: f64 = 1e3;

    check_window(w, 1)?;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let mut total = CompensatedSum::default();
    x.iter().for_each(|&v| total.add(v));
    let mut center = total.value() / x.len() as f64;

    let mut s1 = CompensatedSum::default();
    let mut s2 = CompensatedSum::default();
    let mut hi = MonotonicQueue::new(w.min(x.len()) + 1, true);
    let mut lo = MonotonicQueue::new(w.min(x.len()) + 1, false);
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let d = x[i] - center;
        s1.add(d);
        s2.add(d * d);
        if i >= w {
            let old = x[i - w] - center;
            s1.add(-old);
            s2.add(-(old * old));
        }
        let oldest = (i + 1).saturating_sub(w);
        hi.push(i, x);
        lo.push(i, x);
        hi.expire_before(oldest);
        lo.expire_before(oldest);
        if x[hi.front()] == x[lo.front()] {
            out.push(0.0);
            continue;
        }
        let n = ((i + 1).min(w)) as f64;
        let mut mean = s1.value() / n;
        let mut sq = s2.value() / n;
        let mut var = sq - mean * mean;
        // false for NaN as well, which also forces a rebuild
        let well_conditioned = var * RECENTER_RATIO > sq;
        if !well_conditioned {
            let window = &x[oldest..=i];
            let mut c = CompensatedSum::default();
            window.iter().for_each(|&v| c.add(v));
            center = c.value() / n;
            s1 = CompensatedSum::default();
            s2 = CompensatedSum::default();
            for &v in window {
                s1.add(v - center);
                s2.add((v - center) * (v - center));
            }
            mean = s1.value() / n;
            sq = s2.value() / n;
            var = sq - mean * mean;
        }
        out.push(var.max(0.0).sqrt());
    }
    Ok(out)
}

/// Sum of absolute first differences inside each trailing window of `w`
/// samples (`w - 1` differences). The first output is always zero.
pub fn total_variation(x: &[f64], w: usize) -> Result<Vec<f64>> {
    check_window(w, 2)?;
    let mut out = Vec::with_capacity(x.len());
    let mut sum = CompensatedSum::default();
    let diff = |j: usize| (x[j] - x[j - 1]).abs();
    for i in 0..x.len() {
        if i >= 1 {
            sum.add(diff(i));
        }
        // the difference ending at i-w+1 leaves the window
        if i + 1 >= w && i + 1 - w >= 1 {
            sum.add(-diff(i + 1 - w));
        }
        out.push(if i == 0 { 0.0 } else { sum.value().max(0.0) });
    }
    Ok(out)
}
