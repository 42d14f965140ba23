//! Deterministic synthetic 2-d classification datasets.
//!
//! Gaussian blobs put class centres equally spaced on the unit circle with
//! isotropic noise; concentric rings put class `k` at radius `1 + k` with
//! radial noise. Train and test are drawn back to back from a single seeded
//! stream, so they are disjoint by construction and a (spec, seed) pair
//! always produces the same bytes. Labels are assigned round-robin, keeping
//! class counts balanced within one sample.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Matrix;
use crate::nn::Batch;
use crate::rng::{STREAM_DATASET, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    GaussianBlobs,
    ConcentricRings,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::GaussianBlobs => "gaussian_blobs",
            DatasetKind::ConcentricRings => "concentric_rings",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian_blobs" => Ok(DatasetKind::GaussianBlobs),
            "concentric_rings" => Ok(DatasetKind::ConcentricRings),
            other => Err(format!("unknown dataset kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::GaussianBlobs,
            n_classes: 3,
            n_train: 256,
            n_test: 128,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_classes < 2 {
            return Err(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.n_train < self.n_classes || self.n_test < self.n_classes {
            return Err(format!(
                "sample counts must be >= n_classes ({}), got train {} / test {}",
                self.n_classes, self.n_train, self.n_test
            ));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return Err(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        Ok(())
    }
}

fn draw_split(spec: &DatasetSpec, n: usize, rng: &mut impl Rng) -> Batch {
    let tau = std::f64::consts::TAU;
    let mut data = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % spec.n_classes;
        let (x, y) = match spec.kind {
            DatasetKind::GaussianBlobs => {
                let angle = tau * k as f64 / spec.n_classes as f64;
                let nx: f64 = StandardNormal.sample(rng);
                let ny: f64 = StandardNormal.sample(rng);
                (angle.cos() + spec.noise * nx, angle.sin() + spec.noise * ny)
            }
            DatasetKind::ConcentricRings => {
                let theta = rng.random_range(0.0..tau);
                let dr: f64 = StandardNormal.sample(rng);
                let r = 1.0 + k as f64 + spec.noise * dr;
                (r * theta.cos(), r * theta.sin())
            }
        };
        data.push(x);
        data.push(y);
        labels.push(k);
    }
    Batch {
        inputs: Matrix::from_rows(n, 2, data),
        labels,
    }
}

/// Generates the train and test splits for a spec.
pub fn generate(spec: &DatasetSpec) -> Result<(Batch, Batch), String> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, STREAM_DATASET);
    let train = draw_split(spec, spec.n_train, &mut rng);
    let test = draw_split(spec, spec.n_test, &mut rng);
    Ok((train, test))
}

/// Renders a batch as CSV: `x0,x1,label`.
pub fn batch_to_csv(batch: &Batch) -> String {
    let mut out = String::from("x0,x1,label\n");
    for (i, &label) in batch.labels.iter().enumerate() {
        let row = batch.inputs.row(i);
        out.push_str(&format!("{},{},{}\n", row[0], row[1], label));
    }
    out
}
