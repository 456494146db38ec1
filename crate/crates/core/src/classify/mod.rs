//! Per-step sleep/wake classifiers and their training data.

mod forest;
mod logistic;
mod persist;

use std::collections::BTreeMap;

pub use forest::{feature_importance, predict_proba_forest, train_forest, ForestModel, Node, Tree};
pub use logistic::{
    fit_logistic, predict_proba_logistic, sigmoid, train_logistic, LogisticModel, LogisticObjective,
};
pub use persist::{load_model, save_model, MODEL_FORMAT, MODEL_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{EventClass, LabeledEvent, Series};

/// Per-step binary targets, 1 = asleep.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelVector {
    pub values: Vec<u8>,
    /// Nights skipped because their events were unpaired or out of order.
    pub dropped_nights: usize,
}

impl LabelVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self, class: u8) -> usize {
        self.values.iter().filter(|&&v| v == class).count()
    }
}

/// Labels every step in `[onset, wakeup)` of each paired night as asleep.
pub fn make_labels(series: &Series, events: &[LabeledEvent]) -> LabelVector {
    make_labels_for_steps(&series.series_id, &series.steps(), events)
}

/// Same as [`make_labels`] for an arbitrary sorted step list.
pub fn make_labels_for_steps(
    series_id: &str,
    steps: &[u64],
    events: &[LabeledEvent],
) -> LabelVector {
    let mut nights: BTreeMap<i64, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for e in events.iter().filter(|e| e.series_id == series_id) {
        let slot = nights.entry(e.night).or_default();
        match e.class {
            EventClass::Onset => slot.0.push(e.step),
            EventClass::Wakeup => slot.1.push(e.step),
        }
    }
    let mut values = vec![0u8; steps.len()];
    let mut dropped_nights = 0;
    for (onsets, wakeups) in nights.values() {
        let (&[on], &[off]) = (onsets.as_slice(), wakeups.as_slice()) else {
            dropped_nights += 1;
            continue;
        };
        if off <= on {
            dropped_nights += 1;
            continue;
        }
        let lo = steps.partition_point(|&s| s < on);
        let hi = steps.partition_point(|&s| s < off);
        values[lo..hi].iter_mut().for_each(|v| *v = 1);
    }
    LabelVector {
        values,
        dropped_nights,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClassWeight {
    /// `w_c = n / (2 * n_c)`.
    Balanced,
    Uniform,
    Explicit(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub class_weight: ClassWeight,
    pub n_estimators: usize,
    pub min_samples_leaf: usize,
    pub max_depth: usize,
    /// Candidate features per split; `None` means floor(sqrt(n_features)).
    pub features_per_split: Option<usize>,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 200,
            class_weight: ClassWeight::Balanced,
            n_estimators: 50,
            min_samples_leaf: 100,
            max_depth: 12,
            features_per_split: None,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.n_estimators == 0 {
            return Err(Error::Config("n_estimators must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::Config(
                "features_per_split must be at least 1".into(),
            ));
        }
        if let ClassWeight::Explicit(a, b) = self.class_weight {
            if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
                return Err(Error::Config(format!(
                    "class weights must be > 0, got ({a}, {b})"
                )));
            }
        }
        Ok(())
    }
}

/// A trained classifier of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Logistic(LogisticModel),
    Forest(ForestModel),
}

impl Model {
    pub fn column_names(&self) -> &[String] {
        match self {
            Model::Logistic(m) => &m.column_names,
            Model::Forest(m) => &m.column_names,
        }
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            Model::Logistic(m) => predict_proba_logistic(m, x),
            Model::Forest(m) => predict_proba_forest(m, x),
        }
    }
}

fn check_training_shape(x: &FeatureMatrix, y: &LabelVector) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::Invalid(format!(
            "{} feature rows but {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if x.n_rows() == 0 {
        return Err(Error::Invalid("no training rows".into()));
    }
    if let Some(bad) = y.values.iter().find(|&&v| v > 1) {
        return Err(Error::Invalid(format!("label {bad} is not 0 or 1")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_timestamp;

    fn ev(night: i64, class: EventClass, step: u64) -> LabeledEvent {
        LabeledEvent {
            series_id: "s".into(),
            night,
            class,
            step,
            timestamp: parse_timestamp("2023-01-01T00:00:00+0000").unwrap(),
        }
    }

    #[test]
    fn interval_labels() {
        let steps: Vec<u64> = (0..300).collect();
        let y = make_labels_for_steps(
            "s",
            &steps,
            &[
                ev(1, EventClass::Onset, 100),
                ev(1, EventClass::Wakeup, 200),
            ],
        );
        assert_eq!(y.count(1), 100);
        assert_eq!(y.values[99], 0);
        assert_eq!(y.values[100], 1);
        assert_eq!(y.values[199], 1);
        assert_eq!(y.values[200], 0);
    }

    #[test]
    fn no_events_means_all_awake() {
        let steps: Vec<u64> = (0..50).collect();
        let y = make_labels_for_steps("s", &steps, &[]);
        assert_eq!(y.count(0), 50);
    }

    #[test]
    fn two_nights_are_two_runs() {
        let steps: Vec<u64> = (0..100).collect();
        let y = make_labels_for_steps(
            "s",
            &steps,
            &[
                ev(1, EventClass::Onset, 10),
                ev(1, EventClass::Wakeup, 20),
                ev(2, EventClass::Onset, 60),
                ev(2, EventClass::Wakeup, 75),
            ],
        );
        let runs = crate::rules::runs(&y.values.iter().map(|&v| v == 1).collect::<Vec<_>>());
        assert_eq!(runs, vec![(10, 20), (60, 75)]);
    }

    #[test]
    fn bad_nights_are_dropped_and_counted() {
        let steps: Vec<u64> = (0..100).collect();
        let y = make_labels_for_steps(
            "s",
            &steps,
            &[
                ev(1, EventClass::Onset, 50),
                ev(1, EventClass::Wakeup, 40),
                ev(2, EventClass::Onset, 60),
            ],
        );
        assert_eq!(y.dropped_nights, 2);
        assert_eq!(y.count(1), 0);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                n_estimators: 0,
                ..Default::default()
            },
            TrainConfig {
                class_weight: ClassWeight::Explicit(1.0, -1.0),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
