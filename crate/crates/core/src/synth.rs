//! Deterministic synthetic actigraphy.
//!
//! Each day holds one night of sleep. While asleep the arm angle follows a
//! mean-reverting walk around a posture level that jumps at Poisson times;
//! while awake it is drawn independently with a wide spread. Non-wear blocks
//! hold the signal perfectly constant and are cut out of the scoring
//! intervals.

use chrono::{Duration, NaiveTime, TimeZone};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    night_of, parse_timestamp, EventClass, LabeledEvent, Sample, ScoringInterval, Series,
    Timestamp, DEFAULT_CADENCE_SECONDS, DEFAULT_NIGHT_BOUNDARY_HOUR,
};

/// Spread of posture levels during sleep, degrees.
const POSTURE_STD_DEG: f64 = 15.0;
/// Per-step pull of the sleeping arm angle back toward its posture level.
const POSTURE_REVERSION: f64 = 0.02;
/// Schedule draws are truncated to mean +/- this many standard deviations.
const TRUNCATE_SD: f64 = 2.0;
/// Minimum awake gap between consecutive generated nights, minutes.
const MIN_WAKE_GAP_MIN: i64 = 31;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonwearSegment {
    /// Offset from the series start, hours.
    pub start_hour_offset: f64,
    pub duration_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub series_id: String,
    /// First sample time. Nights are scheduled on the calendar days
    /// following this date.
    pub start: Timestamp,
    pub n_days: u32,
    pub cadence_seconds: u32,
    pub sleep_onset_hour_mean: f64,
    pub sleep_onset_hour_std: f64,
    pub sleep_duration_mean_h: f64,
    pub sleep_duration_std_h: f64,
    pub sigma_sleep_deg: f64,
    pub sigma_wake_deg: f64,
    pub posture_change_rate_per_hour: f64,
    pub enmo_wake_mean: f64,
    pub enmo_sleep_mean: f64,
    pub nonwear_segments: Vec<NonwearSegment>,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            series_id: "synth".into(),
            start: parse_timestamp("2023-01-01T12:00:00-0400").expect("valid literal"),
            n_days: 1,
            cadence_seconds: DEFAULT_CADENCE_SECONDS,
            sleep_onset_hour_mean: 22.5,
            sleep_onset_hour_std: 1.0,
            sleep_duration_mean_h: 9.0,
            sleep_duration_std_h: 1.0,
            sigma_sleep_deg: 1.0,
            sigma_wake_deg: 25.0,
            posture_change_rate_per_hour: 2.0,
            enmo_wake_mean: 0.05,
            enmo_sleep_mean: 0.005,
            nonwear_segments: Vec::new(),
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_days == 0 {
            return Err(Error::Config("n_days must be at least 1".into()));
        }
        if self.cadence_seconds == 0 {
            return Err(Error::Config("cadence_seconds must be positive".into()));
        }
        let stds = [
            ("sleep_onset_hour_std", self.sleep_onset_hour_std),
            ("sleep_duration_std_h", self.sleep_duration_std_h),
            ("sigma_sleep_deg", self.sigma_sleep_deg),
            ("sigma_wake_deg", self.sigma_wake_deg),
            (
                "posture_change_rate_per_hour",
                self.posture_change_rate_per_hour,
            ),
            ("enmo_wake_mean", self.enmo_wake_mean),
            ("enmo_sleep_mean", self.enmo_sleep_mean),
        ];
        for (name, v) in stds {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.sleep_duration_mean_h.is_finite() && self.sleep_duration_mean_h > 0.0) {
            return Err(Error::Config("sleep_duration_mean_h must be > 0".into()));
        }
        if !self.sleep_onset_hour_mean.is_finite() {
            return Err(Error::Config("sleep_onset_hour_mean must be finite".into()));
        }
        for seg in &self.nonwear_segments {
            if !(seg.duration_min.is_finite() && seg.duration_min > 0.0)
                || !(seg.start_hour_offset.is_finite() && seg.start_hour_offset >= 0.0)
            {
                return Err(Error::Config(format!("invalid non-wear segment {seg:?}")));
            }
        }
        Ok(())
    }

    fn n_steps(&self) -> u64 {
        u64::from(self.n_days) * 86_400 / u64::from(self.cadence_seconds)
    }

    fn step_at(&self, t: Timestamp) -> i64 {
        (t - self.start).num_seconds() / i64::from(self.cadence_seconds)
    }
}

/// Output of one generator run.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSeries {
    pub series: Series,
    pub events: Vec<LabeledEvent>,
    pub intervals: Vec<ScoringInterval>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, sd).expect("sd checked finite and > 0");
    for _ in 0..64 {
        let v = normal.sample(rng);
        if (v - mean).abs() <= TRUNCATE_SD * sd {
            return v;
        }
    }
    mean
}

fn exp_draw(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        0.0
    } else {
        Exp::new(1.0 / mean).expect("positive rate").sample(rng)
    }
}

/// Sleep windows as half-open step ranges, one per scheduled night.
fn schedule(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(u64, u64)>> {
    let n_steps = cfg.n_steps() as i64;
    let first_midnight = cfg
        .start
        .timezone()
        .from_local_datetime(&cfg.start.date_naive().and_time(NaiveTime::MIN))
        .single()
        .ok_or_else(|| Error::Config("ambiguous start date".into()))?;

    let mut out: Vec<(u64, u64)> = Vec::with_capacity(cfg.n_days as usize);
    for day in 0..i64::from(cfg.n_days) {
        let onset_h = truncated_normal(rng, cfg.sleep_onset_hour_mean, cfg.sleep_onset_hour_std);
        let dur_h = truncated_normal(rng, cfg.sleep_duration_mean_h, cfg.sleep_duration_std_h);
        let onset_t =
            first_midnight + Duration::days(day) + Duration::seconds((onset_h * 3600.0) as i64);
        let onset = cfg.step_at(onset_t);
        let wakeup = onset + (dur_h * 3600.0 / f64::from(cfg.cadence_seconds)).round() as i64;
        let min_len = 30 * 60 / i64::from(cfg.cadence_seconds);
        if wakeup - onset < min_len {
            return Err(Error::Collision(format!(
                "night {} would last under 30 minutes",
                day + 1
            )));
        }
        if onset < 0 || wakeup >= n_steps {
            return Err(Error::Collision(format!(
                "night {} [{onset}, {wakeup}) falls outside the series [0, {n_steps})",
                day + 1
            )));
        }
        if let Some(&(_, prev_wake)) = out.last() {
            let gap = onset - prev_wake as i64;
            if gap * i64::from(cfg.cadence_seconds) < MIN_WAKE_GAP_MIN * 60 {
                return Err(Error::Collision(format!(
                    "night {} starts within {MIN_WAKE_GAP_MIN} minutes of the previous wakeup",
                    day + 1
                )));
            }
        }
        out.push((onset as u64, wakeup as u64));
    }
    Ok(out)
}

fn nonwear_ranges(cfg: &SynthConfig, nights: &[(u64, u64)]) -> Result<Vec<(u64, u64)>> {
    let n_steps = cfg.n_steps();
    let per_hour = 3600.0 / f64::from(cfg.cadence_seconds);
    let mut out: Vec<(u64, u64)> = cfg
        .nonwear_segments
        .iter()
        .map(|seg| {
            let s = (seg.start_hour_offset * per_hour).round() as u64;
            let e = s + (seg.duration_min / 60.0 * per_hour).round().max(1.0) as u64;
            (s, e)
        })
        .collect();
    out.sort_unstable();
    for (i, &(s, e)) in out.iter().enumerate() {
        if e > n_steps {
            return Err(Error::Collision(format!(
                "non-wear block [{s}, {e}) extends past the series end {n_steps}"
            )));
        }
        if let Some(&(ps, pe)) = i.checked_sub(1).map(|j| &out[j]) {
            if s < pe {
                return Err(Error::Collision(format!(
                    "non-wear blocks [{ps}, {pe}) and [{s}, {e}) overlap"
                )));
            }
        }
        if let Some((k, &(on, off))) = nights
            .iter()
            .enumerate()
            .find(|(_, &(on, off))| s < off && on < e)
        {
            return Err(Error::Collision(format!(
                "non-wear block [{s}, {e}) overlaps night {} sleep [{on}, {off})",
                k + 1
            )));
        }
    }
    Ok(out)
}

/// Generates one series with its ground-truth events and scoring intervals.
pub fn generate(cfg: &SynthConfig) -> Result<SynthSeries> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let nights = schedule(cfg, &mut rng)?;
    let nonwear = nonwear_ranges(cfg, &nights)?;

    let n = cfg.n_steps() as usize;
    let cadence = cfg.cadence_seconds;
    let step_sd = cfg.sigma_sleep_deg * (f64::from(cadence) / 5.0).sqrt();
    let jump_p = (cfg.posture_change_rate_per_hour * f64::from(cadence) / 3600.0).min(1.0);
    let posture = Normal::new(0.0, POSTURE_STD_DEG).expect("constant sd");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut asleep = vec![false; n];
    for &(on, off) in &nights {
        asleep[on as usize..off as usize]
            .iter_mut()
            .for_each(|a| *a = true);
    }
    let mut off_wrist = vec![false; n];
    for &(s, e) in &nonwear {
        off_wrist[s as usize..e as usize]
            .iter_mut()
            .for_each(|a| *a = true);
    }

    let mut samples = Vec::with_capacity(n);
    let mut level = 0.0f64;
    let mut angle = 0.0f64;
    for i in 0..n {
        let (anglez, enmo) = if off_wrist[i] {
            // frozen at whatever the device last reported
            (angle, 0.0)
        } else if asleep[i] {
            let entering = i == 0 || !asleep[i - 1];
            if entering || rng.random::<f64>() < jump_p {
                level = posture.sample(&mut rng).clamp(-80.0, 80.0);
                angle = level;
            } else {
                angle += POSTURE_REVERSION * (level - angle) + step_sd * unit.sample(&mut rng);
            }
            angle = angle.clamp(-90.0, 90.0);
            (angle, exp_draw(&mut rng, cfg.enmo_sleep_mean))
        } else {
            angle = (cfg.sigma_wake_deg * unit.sample(&mut rng)).clamp(-90.0, 90.0);
            (angle, exp_draw(&mut rng, cfg.enmo_wake_mean))
        };
        samples.push(Sample {
            step: i as u64,
            timestamp: cfg.start + Duration::seconds(i as i64 * i64::from(cadence)),
            anglez,
            enmo,
        });
    }

    let series = Series {
        series_id: cfg.series_id.clone(),
        samples,
        cadence_seconds: cadence,
    };

    let mut events = Vec::with_capacity(2 * nights.len());
    for (k, &(on, off)) in nights.iter().enumerate() {
        for (class, step) in [(EventClass::Onset, on), (EventClass::Wakeup, off)] {
            events.push(LabeledEvent {
                series_id: cfg.series_id.clone(),
                night: k as i64 + 1,
                class,
                step,
                timestamp: series.samples[step as usize].timestamp,
            });
        }
    }
    debug_assert!({
        let keys: Vec<_> = nights
            .iter()
            .map(|&(on, _)| {
                night_of(
                    &series.samples[on as usize].timestamp,
                    DEFAULT_NIGHT_BOUNDARY_HOUR,
                )
            })
            .collect();
        keys.windows(2).all(|p| p[0] < p[1])
    });

    let mut intervals = Vec::new();
    let mut cursor = 0u64;
    for &(s, e) in nonwear.iter().chain(std::iter::once(&(n as u64, n as u64))) {
        if s > cursor {
            intervals.push(ScoringInterval {
                series_id: cfg.series_id.clone(),
                start_step: cursor,
                end_step: s,
            });
        }
        cursor = e;
    }

    Ok(SynthSeries {
        series,
        events,
        intervals,
    })
}

/// SplitMix64 step, used to derive independent per-series seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `n_series` series named `<prefix>NNN`, each with a seed derived
/// from `base.rng_seed` and its index.
pub fn generate_corpus(base: &SynthConfig, n_series: usize) -> Result<Vec<SynthSeries>> {
    (0..n_series)
        .into_par_iter()
        .map(|i| {
            let cfg = SynthConfig {
                series_id: format!("{}{:03}", base.series_id, i),
                rng_seed: derive_seed(base.rng_seed, i as u64),
                ..base.clone()
            };
            generate(&cfg)
        })
        .collect()
}
