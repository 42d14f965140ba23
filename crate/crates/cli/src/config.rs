//! Experiment configuration: a JSON document mirroring the library's config
//! structs, every field optional, unknown keys rejected. Normalising fills
//! documented defaults; normalising an already-normalised document is the
//! identity, so configs echoed into output headers can be fed back in.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use kdlab_core::data::{DatasetKind, DatasetSpec};
use kdlab_core::geometry::LambdaBounds;
use kdlab_core::nn::Activation;
use kdlab_core::pipeline::{SchedulerStrategy, TrainConfig};
use kdlab_core::simulate::{AngleRegime, TrialSpec};

/// Raw config as read from disk: everything optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_strategy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_sizes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub student_sizes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mag_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mag_hi: Option<f64>,
    /// "acute", "obtuse", "full" or "both" (acute then obtuse).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<usize>,
}

/// Regime selector for the simulate command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeSelector {
    One(AngleRegime),
    Both,
}

impl RegimeSelector {
    pub fn regimes(&self) -> Vec<AngleRegime> {
        match self {
            RegimeSelector::One(r) => vec![*r],
            RegimeSelector::Both => vec![AngleRegime::Acute, AngleRegime::Obtuse],
        }
    }
}

impl FromStr for RegimeSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "both" {
            Ok(RegimeSelector::Both)
        } else {
            s.parse().map(RegimeSelector::One)
        }
    }
}

/// Fully-specified configuration. Serialised into the comment header of
/// every output file; feeding that JSON back through normalisation is the
/// identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedConfig {
    pub seed: u64,
    pub dataset: DatasetNorm,
    pub train: TrainNorm,
    pub simulation: SimulationNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetNorm {
    pub kind: String,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainNorm {
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub lambda_strategy: String,
    pub fixed_lambda: f64,
    pub target_delta: f64,
    pub smoothing: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub teacher_sizes: Vec<usize>,
    pub student_sizes: Vec<usize>,
    pub activation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationNorm {
    pub mag_lo: f64,
    pub mag_hi: f64,
    pub regime: String,
    pub trials: u64,
    pub lambda_grid: usize,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Fills every missing field with its documented default.
    pub fn normalize(&self) -> NormalizedConfig {
        let d = self.dataset.clone().unwrap_or_default();
        let t = self.train.clone().unwrap_or_default();
        let s = self.simulation.clone().unwrap_or_default();
        NormalizedConfig {
            seed: self.seed.unwrap_or(0),
            dataset: DatasetNorm {
                kind: d.kind.unwrap_or_else(|| "gaussian_blobs".into()),
                n_classes: d.n_classes.unwrap_or(3),
                n_train: d.n_train.unwrap_or(256),
                n_test: d.n_test.unwrap_or(128),
                noise: d.noise.unwrap_or(0.1),
            },
            train: TrainNorm {
                eta: t.eta.unwrap_or(0.1),
                steps: t.steps.unwrap_or(300),
                batch_size: t.batch_size.unwrap_or(32),
                temperature: t.temperature.unwrap_or(1.0),
                lambda_strategy: t.lambda_strategy.unwrap_or_else(|| "fixed".into()),
                fixed_lambda: t.fixed_lambda.unwrap_or(0.5),
                target_delta: t.target_delta.unwrap_or(-1e-3),
                smoothing: t.smoothing.unwrap_or(0.0),
                lambda_lo: t.lambda_lo.unwrap_or(0.05),
                lambda_hi: t.lambda_hi.unwrap_or(0.95),
                teacher_sizes: t.teacher_sizes.unwrap_or_else(|| vec![2, 32, 3]),
                student_sizes: t.student_sizes.unwrap_or_else(|| vec![2, 8, 3]),
                activation: t.activation.unwrap_or_else(|| "tanh".into()),
            },
            simulation: SimulationNorm {
                mag_lo: s.mag_lo.unwrap_or(1e-5),
                mag_hi: s.mag_hi.unwrap_or(1e-1),
                regime: s.regime.unwrap_or_else(|| "both".into()),
                trials: s.trials.unwrap_or(1000),
                lambda_grid: s.lambda_grid.unwrap_or(101),
            },
        }
    }
}

impl NormalizedConfig {
    /// Single-line JSON used in output-file comment headers.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec, String> {
        Ok(DatasetSpec {
            kind: self.dataset.kind.parse::<DatasetKind>()?,
            n_classes: self.dataset.n_classes,
            n_train: self.dataset.n_train,
            n_test: self.dataset.n_test,
            noise: self.dataset.noise,
            seed: self.seed,
        })
    }

    pub fn trial_spec(&self, regime: AngleRegime) -> TrialSpec {
        TrialSpec {
            mag_lo: self.simulation.mag_lo,
            mag_hi: self.simulation.mag_hi,
            regime,
            n_trials: self.simulation.trials,
            lambda_grid_size: self.simulation.lambda_grid,
            seed: self.seed,
        }
    }

    pub fn scheduler_strategy(&self) -> Result<SchedulerStrategy, String> {
        let t = &self.train;
        match t.lambda_strategy.as_str() {
            "fixed" => Ok(SchedulerStrategy::Fixed {
                lambda: t.fixed_lambda,
            }),
            "max_descent" => Ok(SchedulerStrategy::MaxDescent {
                smoothing: t.smoothing,
            }),
            "min_descent" => Ok(SchedulerStrategy::MinDescent {
                smoothing: t.smoothing,
            }),
            "target_rate" => Ok(SchedulerStrategy::TargetRate {
                target_delta: t.target_delta,
                smoothing: t.smoothing,
            }),
            other => Err(format!(
                "train.lambda_strategy: unknown strategy '{other}' (expected fixed, \
                 max_descent, min_descent or target_rate)"
            )),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig, String> {
        let t = &self.train;
        Ok(TrainConfig {
            eta: t.eta,
            steps: t.steps,
            batch_size: t.batch_size,
            lambda_strategy: self.scheduler_strategy()?,
            lambda_bounds: LambdaBounds::new(t.lambda_lo, t.lambda_hi)
                .map_err(|e| format!("train.lambda_lo/lambda_hi: {e}"))?,
            temperature: t.temperature,
            seed: self.seed,
            teacher_sizes: t.teacher_sizes.clone(),
            student_sizes: t.student_sizes.clone(),
            activation: t
                .activation
                .parse::<Activation>()
                .map_err(|e| format!("train.activation: {e}"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_idempotent() {
        let raw = r#"{"seed": 7, "train": {"eta": 0.02}}"#;
        let once = ExperimentConfig::parse(raw).unwrap().normalize();
        let echoed = serde_json::to_string(&once).unwrap();
        let twice = ExperimentConfig::parse(&echoed).unwrap().normalize();
        assert_eq!(once, twice);
        assert_eq!(echoed, serde_json::to_string(&twice).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = ExperimentConfig::parse(r#"{"sede": 7}"#).unwrap_err();
        assert!(err.contains("sede"), "error should name the key: {err}");
        let err = ExperimentConfig::parse(r#"{"train": {"learning_rate": 0.1}}"#).unwrap_err();
        assert!(
            err.contains("learning_rate"),
            "error should name the key: {err}"
        );
    }

    #[test]
    fn defaults_match_documentation() {
        let n = ExperimentConfig::default().normalize();
        assert_eq!(n.seed, 0);
        assert_eq!(n.dataset.kind, "gaussian_blobs");
        assert_eq!(n.simulation.mag_lo, 1e-5);
        assert_eq!(n.simulation.mag_hi, 1e-1);
        assert_eq!(n.simulation.trials, 1000);
        assert_eq!(n.simulation.lambda_grid, 101);
        assert_eq!(n.train.lambda_lo, 0.05);
        assert_eq!(n.train.lambda_hi, 0.95);
        let tc = n.train_config().unwrap();
        tc.validate().unwrap();
    }

    #[test]
    fn strategy_strings_round_trip() {
        for s in ["fixed", "max_descent", "min_descent", "target_rate"] {
            let mut cfg = ExperimentConfig::default().normalize();
            cfg.train.lambda_strategy = s.to_string();
            assert_eq!(cfg.scheduler_strategy().unwrap().kind(), s);
        }
        let mut cfg = ExperimentConfig::default().normalize();
        cfg.train.lambda_strategy = "bogus".into();
        assert!(cfg.scheduler_strategy().is_err());
    }
}
