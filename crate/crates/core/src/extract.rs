//! Per-step sleep probabilities to scored onset/wakeup events.

use crate::error::{Error, Result};
use crate::model::{ScoredEvent, Series, SleepWindow, DEFAULT_NIGHT_BOUNDARY_HOUR};
use crate::rules::{
    assemble_windows, events_for, nonwear_mask, select_per_night, window_events, DetectorConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractConfig {
    pub smooth_window_min: u32,
    pub theta_on: f64,
    pub theta_off: f64,
    /// Events need confidence strictly above this.
    pub tau: f64,
    pub min_window_min: u32,
    pub max_interruption_min: u32,
    pub night_boundary_hour: u32,
    pub nonwear_std_threshold_deg: f64,
    pub nonwear_min_duration_min: u32,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            smooth_window_min: 10,
            theta_on: 0.6,
            theta_off: 0.4,
            tau: 0.0,
            min_window_min: d.min_window_min,
            max_interruption_min: d.max_interruption_min,
            night_boundary_hour: DEFAULT_NIGHT_BOUNDARY_HOUR,
            nonwear_std_threshold_deg: d.nonwear_std_threshold_deg,
            nonwear_min_duration_min: d.nonwear_min_duration_min,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_window_min == 0 {
            return Err(Error::Config("smooth_window_min must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.theta_off)
            || !(0.0..=1.0).contains(&self.theta_on)
            || self.theta_off > self.theta_on
        {
            return Err(Error::Config(format!(
                "need 0 <= theta_off <= theta_on <= 1, got theta_off={} theta_on={}",
                self.theta_off, self.theta_on
            )));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return Err(Error::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        self.detector().validate()
    }

    /// The post-rule subset shared with the rule detector.
    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            smoothing_window_min: self.smooth_window_min,
            min_window_min: self.min_window_min,
            max_interruption_min: self.max_interruption_min,
            night_boundary_hour: self.night_boundary_hour,
            nonwear_std_threshold_deg: self.nonwear_std_threshold_deg,
            nonwear_min_duration_min: self.nonwear_min_duration_min,
            ..DetectorConfig::default()
        }
    }
}

/// Mean over `[i - w/2, i + (w-1)/2]`, shrunk at the ends.
pub fn centered_rolling_mean(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(w / 2);
            let hi = (i + (w - 1) / 2 + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Two-threshold state machine: enter when `s > theta_on`, leave when
/// `s < theta_off`.
pub fn hysteresis(smoothed: &[f64], theta_on: f64, theta_off: f64) -> Vec<bool> {
    let mut asleep = false;
    smoothed
        .iter()
        .map(|&s| {
            if asleep && s < theta_off {
                asleep = false;
            } else if !asleep && s > theta_on {
                asleep = true;
            }
            asleep
        })
        .collect()
}

fn check_proba(p: &[f64], series: &Series) -> Result<()> {
    if p.len() != series.len() {
        return Err(Error::Invalid(format!(
            "{} probabilities for series {} of length {}",
            p.len(),
            series.series_id,
            series.len()
        )));
    }
    if let Some((i, v)) = p
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Invalid(format!(
            "probability {v} at index {i} is outside [0, 1]"
        )));
    }
    Ok(())
}

/// Smooths, thresholds and post-processes `p` into at most one window per night.
pub fn extract_windows(
    p: &[f64],
    series: &Series,
    cfg: &ExtractConfig,
) -> Result<Vec<SleepWindow>> {
    cfg.validate()?;
    check_proba(p, series)?;
    let w = series.steps_for_minutes(f64::from(cfg.smooth_window_min));
    let asleep = hysteresis(&centered_rolling_mean(p, w), cfg.theta_on, cfg.theta_off);
    let det = cfg.detector();
    let nonwear = nonwear_mask(series, &det);
    let candidates = assemble_windows(series, &asleep, &nonwear, &det)?;
    Ok(select_per_night(
        candidates,
        series,
        cfg.night_boundary_hour,
    ))
}

/// `floor((onset + wakeup) / 2)`.
pub fn window_midpoint(window: &SleepWindow) -> u64 {
    window.onset_step + (window.wakeup_step - window.onset_step) / 2
}

/// Onset and wakeup for every window whose probability contrast exceeds `tau`.
pub fn windows_to_events(
    windows: &[SleepWindow],
    series: &Series,
    p: &[f64],
    cfg: &ExtractConfig,
) -> Result<Vec<ScoredEvent>> {
    check_proba(p, series)?;
    Ok(window_events(windows, series, p)
        .into_iter()
        .filter(|(_, c)| *c > cfg.tau)
        .flat_map(|(w, c)| events_for(&w, c))
        .collect())
}

pub fn extract(
    p: &[f64],
    series: &Series,
    cfg: &ExtractConfig,
) -> Result<(Vec<SleepWindow>, Vec<ScoredEvent>)> {
    let windows = extract_windows(p, series, cfg)?;
    let events = windows_to_events(&windows, series, p, cfg)?;
    Ok((windows, events))
}
