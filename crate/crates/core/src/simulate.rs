//! Monte Carlo sweeps of the bracket `Q(λ)`.
//!
//! Each trial samples gradient magnitudes `a, b` uniformly from a magnitude
//! range (default `[1e-5, 1e-1]`) and an angle φ uniformly from the acute
//! `(0, π/2)`, obtuse `(π/2, π)` or full `(0, π)` range, then evaluates
//! `Q(λ)` on a uniform λ grid. Acute angles keep the per-trial minimum of
//! `Q` strictly positive; obtuse angles let the two gradients cancel, so the
//! curves dip much closer to zero.
//!
//! Trials are reproducible and schedule-independent: trial `t` draws from
//! ChaCha8 stream `STREAM_TRIALS + t` of the spec seed, and rows are ordered
//! trial-major, λ-minor.

use rand::Rng;

use crate::geometry::{GradientStats, bracket_value};
use crate::rng::{STREAM_TRIALS, stream_rng};

/// Angle range a trial samples from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleRegime {
    /// φ ∈ (0, π/2): cos φ ∈ (0, 1).
    Acute,
    /// φ ∈ (π/2, π): cos φ ∈ (−1, 0).
    Obtuse,
    /// φ ∈ (0, π).
    Full,
}

impl AngleRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            AngleRegime::Acute => "acute",
            AngleRegime::Obtuse => "obtuse",
            AngleRegime::Full => "full",
        }
    }
}

impl std::fmt::Display for AngleRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AngleRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "acute" => Ok(AngleRegime::Acute),
            "obtuse" => Ok(AngleRegime::Obtuse),
            "full" => Ok(AngleRegime::Full),
            other => Err(format!("unknown angle regime '{other}'")),
        }
    }
}

/// Parameters of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    /// Lower magnitude bound for `a` and `b` (exclusive of zero).
    pub mag_lo: f64,
    /// Upper magnitude bound.
    pub mag_hi: f64,
    pub regime: AngleRegime,
    pub n_trials: u64,
    /// Number of λ grid points, endpoints included.
    pub lambda_grid_size: usize,
    pub seed: u64,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            mag_lo: 1e-5,
            mag_hi: 1e-1,
            regime: AngleRegime::Full,
            n_trials: 1000,
            lambda_grid_size: 101,
            seed: 0,
        }
    }
}

impl TrialSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.mag_lo.is_nan()
            || self.mag_lo <= 0.0
            || self.mag_lo >= self.mag_hi
            || !self.mag_hi.is_finite()
        {
            return Err(format!(
                "magnitude range must satisfy 0 < mag_lo < mag_hi, got [{}, {}]",
                self.mag_lo, self.mag_hi
            ));
        }
        if self.n_trials == 0 {
            return Err("n_trials must be positive".into());
        }
        if self.lambda_grid_size < 2 {
            return Err(format!(
                "lambda_grid_size must be >= 2, got {}",
                self.lambda_grid_size
            ));
        }
        Ok(())
    }
}

/// One point of a per-trial `Q(λ)` curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    pub q_value: f64,
}

/// One emitted row: curve point plus the sampled stats that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRow {
    pub trial_id: u64,
    pub regime: AngleRegime,
    pub a: f64,
    pub b: f64,
    pub cos_phi: f64,
    pub lambda: f64,
    pub q_value: f64,
}

/// All rows of a run, trial-major, λ-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTable {
    pub rows: Vec<SimulationRow>,
}

/// Per-regime summary printed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSummary {
    pub regime: AngleRegime,
    pub min_q: f64,
    pub mean_q: f64,
}

/// Draws one trial's gradient stats from the given generator.
///
/// Magnitudes are uniform on `[mag_lo, mag_hi)`; the angle is uniform on the
/// regime's open interval. The draw is rejected and repeated in the
/// measure-zero event that φ lands exactly on an interval endpoint, so acute
/// trials always satisfy `0 < cos φ < 1` and obtuse ones `−1 < cos φ < 0`.
pub fn sample_trial(spec: &TrialSpec, rng: &mut impl Rng) -> GradientStats {
    let a = rng.random_range(spec.mag_lo..spec.mag_hi);
    let b = rng.random_range(spec.mag_lo..spec.mag_hi);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let cos_phi = loop {
        let (phi, ok): (f64, fn(f64) -> bool) = match spec.regime {
            AngleRegime::Acute => (rng.random_range(0.0..half_pi), |c| c > 0.0 && c < 1.0),
            AngleRegime::Obtuse => (rng.random_range(half_pi..std::f64::consts::PI), |c| {
                c < 0.0 && c > -1.0
            }),
            AngleRegime::Full => (rng.random_range(0.0..std::f64::consts::PI), |c| {
                c > -1.0 && c < 1.0
            }),
        };
        let c = phi.cos();
        if ok(c) {
            break c;
        }
    };
    GradientStats::new(a, b, cos_phi).expect("sampled stats are valid by construction")
}

/// Evaluates `Q` at `λ_k = k/(grid_size − 1)` for `k = 0..grid_size`.
pub fn sweep_curve(stats: &GradientStats, grid_size: usize) -> Vec<CurvePoint> {
    assert!(grid_size >= 2, "lambda grid needs at least two points");
    let last = (grid_size - 1) as f64;
    (0..grid_size)
        .map(|k| {
            let lambda = k as f64 / last;
            let q_value = bracket_value(stats, lambda).expect("grid lambda lies in [0, 1]");
            CurvePoint { lambda, q_value }
        })
        .collect()
}

/// Runs `n_trials` independent trials and collects every curve point.
/// Deterministic for a given spec; identical specs produce identical tables.
pub fn run_simulation(spec: &TrialSpec) -> Result<SimulationTable, String> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.n_trials as usize * spec.lambda_grid_size);
    for trial_id in 0..spec.n_trials {
        let mut rng = stream_rng(spec.seed, STREAM_TRIALS + trial_id);
        let stats = sample_trial(spec, &mut rng);
        for point in sweep_curve(&stats, spec.lambda_grid_size) {
            rows.push(SimulationRow {
                trial_id,
                regime: spec.regime,
                a: stats.dist_norm,
                b: stats.cls_norm,
                cos_phi: stats.cos_phi,
                lambda: point.lambda,
                q_value: point.q_value,
            });
        }
    }
    Ok(SimulationTable { rows })
}

impl SimulationTable {
    pub const CSV_HEADER: &'static str = "trial_id,regime,a,b,cos_phi,lambda,q_value";

    /// Renders the table as CSV (no leading comment; callers prepend one).
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 64);
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.trial_id, r.regime, r.a, r.b, r.cos_phi, r.lambda, r.q_value
            ));
        }
        out
    }

    /// Minimum and mean `q_value` over all rows of one regime.
    pub fn summary(&self, regime: AngleRegime) -> Option<RegimeSummary> {
        let mut min_q = f64::INFINITY;
        let mut sum = 0.0;
        let mut n = 0usize;
        for r in self.rows.iter().filter(|r| r.regime == regime) {
            min_q = min_q.min(r.q_value);
            sum += r.q_value;
            n += 1;
        }
        (n > 0).then(|| RegimeSummary {
            regime,
            min_q,
            mean_q: sum / n as f64,
        })
    }

    /// Per-trial `Q_min / Q(0.5)`, the curve minimum normalised by its
    /// midpoint value. Requires an odd grid so λ = 0.5 is on the grid.
    pub fn normalized_minima(&self) -> Vec<f64> {
        let mut result = Vec::new();
        let mut current: Option<(u64, f64, f64)> = None; // (trial, min, mid)
        for r in &self.rows {
            if current.map(|(t, _, _)| t) != Some(r.trial_id) {
                if let Some((_, min, mid)) = current {
                    result.push(min / mid);
                }
                current = Some((r.trial_id, f64::INFINITY, f64::NAN));
            }
            if let Some((_, min, mid)) = &mut current {
                *min = min.min(r.q_value);
                if r.lambda == 0.5 {
                    *mid = r.q_value;
                }
            }
        }
        if let Some((_, min, mid)) = current {
            result.push(min / mid);
        }
        result
    }
}
