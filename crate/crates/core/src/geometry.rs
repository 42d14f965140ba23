//! Closed forms for the first-order loss-change bracket
//!
//! ```text
//! Q(λ) = λ²a² + (1−λ)²b² + 2λ(1−λ)ab·cos φ
//! ```
//!
//! where `a`/`b` are the unweighted norms of the distillation and
//! classification gradients and φ the angle between them. `Q` equals the
//! squared norm of the combined update direction
//! `λ·∇L_dist + (1−λ)·∇L_cls`, so it is non-negative, and one SGD step with
//! learning rate η changes the total loss by `−η·Q(λ)` to first order.
//!
//! Regrouped by powers of λ, `Q(λ) = Aλ² + Bλ + C` with
//!
//! ```text
//! A = a² + b² − 2ab·cos φ      (≥ 0, the squared gradient difference norm)
//! B = 2(ab·cos φ − b²)
//! C = b²
//! ```
//!
//! Because `Q` is a convex quadratic, steering the predicted descent is a
//! closed-form exercise: the gentlest step sits at the (clamped) vertex, the
//! steepest at a bounds endpoint, and any attainable descent rate at a root
//! of `Q(λ) = |target|/η`. The three controllers below implement exactly
//! that; they are consumed by the training pipeline's λ schedulers.

use thiserror::Error;

/// Errors from gradient-geometry operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("gradient length mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("gradient vectors must be non-empty")]
    EmptyGradient,
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("learning rate must be positive and finite, got {0}")]
    NonPositiveEta(f64),
    #[error("target loss change must be <= 0, got {0}")]
    PositiveTarget(f64),
    #[error("degenerate stats: a zero-norm gradient leaves cos(phi) undefined")]
    DegenerateStats,
    #[error("invalid lambda bounds [{lo}, {hi}]: need 0 < lo <= hi < 1")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("lambda {value} outside bounds [{lo}, {hi}]")]
    OutOfBounds { value: f64, lo: f64, hi: f64 },
    #[error("invalid gradient stats: {0}")]
    InvalidStats(String),
}

/// Norms of the two loss gradients and the cosine of the angle between them,
/// taken over the flattened parameter vector at one training step.
///
/// The norms are *unweighted*: `dist_norm = ‖∇L_dist‖`, not `‖λ·∇L_dist‖`,
/// so the bracket stays a pure function of geometry and λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientStats {
    /// `a = ‖∇L_dist‖`.
    pub dist_norm: f64,
    /// `b = ‖∇L_cls‖`.
    pub cls_norm: f64,
    /// `cos φ`, clamped to `[-1, 1]`; stored as 0 when degenerate.
    pub cos_phi: f64,
    /// Set when either norm is zero, leaving the angle undefined.
    pub degenerate: bool,
}

impl GradientStats {
    /// Builds stats from explicit values, validating the invariants.
    pub fn new(dist_norm: f64, cls_norm: f64, cos_phi: f64) -> Result<Self, GeometryError> {
        if dist_norm < 0.0 || !dist_norm.is_finite() {
            return Err(GeometryError::InvalidStats(format!(
                "dist_norm must be finite and >= 0, got {dist_norm}"
            )));
        }
        if cls_norm < 0.0 || !cls_norm.is_finite() {
            return Err(GeometryError::InvalidStats(format!(
                "cls_norm must be finite and >= 0, got {cls_norm}"
            )));
        }
        if !(-1.0..=1.0).contains(&cos_phi) {
            return Err(GeometryError::InvalidStats(format!(
                "cos_phi must lie in [-1, 1], got {cos_phi}"
            )));
        }
        let degenerate = dist_norm == 0.0 || cls_norm == 0.0;
        Ok(Self {
            dist_norm,
            cls_norm,
            cos_phi: if degenerate { 0.0 } else { cos_phi },
            degenerate,
        })
    }
}

/// Closed sub-interval `[lo, hi] ⊂ (0, 1)` that the λ controllers search.
///
/// The balancing parameter lives in the open interval (0, 1); optimising
/// over an open interval is ill-posed, so controllers work on a closed
/// sub-interval, `[0.05, 0.95]` by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaBounds {
    lo: f64,
    hi: f64,
}

impl LambdaBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GeometryError> {
        if lo.is_nan() || hi.is_nan() || lo <= 0.0 || lo > hi || hi >= 1.0 {
            return Err(GeometryError::InvalidBounds { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn clamp(&self, lambda: f64) -> f64 {
        lambda.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, lambda: f64) -> bool {
        (self.lo..=self.hi).contains(&lambda)
    }
}

impl Default for LambdaBounds {
    fn default() -> Self {
        Self { lo: 0.05, hi: 0.95 }
    }
}

/// A balancing-parameter value together with the bounds it was chosen from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceParam {
    value: f64,
    bounds: LambdaBounds,
}

impl BalanceParam {
    pub fn new(value: f64, bounds: LambdaBounds) -> Result<Self, GeometryError> {
        if !bounds.contains(value) {
            return Err(GeometryError::OutOfBounds {
                value,
                lo: bounds.lo,
                hi: bounds.hi,
            });
        }
        Ok(Self { value, bounds })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn bounds(&self) -> LambdaBounds {
        self.bounds
    }
}

/// Coefficients of the regrouped bracket `Q(λ) = a2·λ² + a1·λ + a0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketCoeffs {
    /// `A = a² + b² − 2ab·cos φ`.
    pub a2: f64,
    /// `B = 2(ab·cos φ − b²)`.
    pub a1: f64,
    /// `C = b²`.
    pub a0: f64,
}

impl BracketCoeffs {
    /// Evaluates the quadratic at λ (Horner form).
    pub fn eval(&self, lambda: f64) -> f64 {
        (self.a2 * lambda + self.a1) * lambda + self.a0
    }

    /// Unclamped vertex `λ_v = (b² − ab·cos φ)/A = −B/(2A)`, when `A > 0`.
    pub fn vertex(&self) -> Option<f64> {
        if self.a2 > 0.0 {
            Some(-self.a1 / (2.0 * self.a2))
        } else {
            None
        }
    }

    /// `Q` at the unclamped vertex, evaluated through [`Self::eval`].
    pub fn vertex_value(&self) -> Option<f64> {
        self.vertex().map(|v| self.eval(v))
    }
}

/// How a λ recommendation was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyTag {
    Fixed,
    MaxDescent,
    MinDescent,
    TargetRate,
}

impl std::fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StrategyTag::Fixed => "fixed",
            StrategyTag::MaxDescent => "max_descent",
            StrategyTag::MinDescent => "min_descent",
            StrategyTag::TargetRate => "target_rate",
        };
        f.write_str(s)
    }
}

/// A controller's chosen λ with the bracket value it attains.
///
/// The min/max-descent controllers do not know the learning rate, so the
/// recommendation stores `Q(λ)` and derives the predicted loss change
/// `−η·Q(λ)` on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaRecommendation {
    pub lambda: BalanceParam,
    pub strategy: StrategyTag,
    /// Only meaningful for the target-rate controller: false when the
    /// requested loss change is unattainable within bounds.
    pub feasible: bool,
    /// `Q` at the recommended λ.
    pub q_value: f64,
    /// Set when `A = B = 0`, i.e. `Q` does not depend on λ at all.
    pub constant_bracket: bool,
}

impl LambdaRecommendation {
    /// Predicted first-order loss change `−η·Q(λ)` at the recommendation.
    pub fn predicted_delta(&self, eta: f64) -> f64 {
        -eta * self.q_value
    }
}

/// Norms and angle cosine of two gradient vectors of equal length.
///
/// `cos φ` is clamped to `[-1, 1]` against floating-point rounding. A
/// zero-norm input marks the stats degenerate and stores `cos φ = 0`.
pub fn cosine_between(g1: &[f64], g2: &[f64]) -> Result<GradientStats, GeometryError> {
    if g1.len() != g2.len() {
        return Err(GeometryError::DimensionMismatch {
            left: g1.len(),
            right: g2.len(),
        });
    }
    if g1.is_empty() {
        return Err(GeometryError::EmptyGradient);
    }
    let n1 = g1.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n2 = g2.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(GradientStats {
            dist_norm: n1,
            cls_norm: n2,
            cos_phi: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = g1.iter().zip(g2).map(|(x, y)| x * y).sum();
    let cos = (dot / (n1 * n2)).clamp(-1.0, 1.0);
    Ok(GradientStats {
        dist_norm: n1,
        cls_norm: n2,
        cos_phi: cos,
        degenerate: false,
    })
}

/// Regroups the bracket by powers of λ.
pub fn bracket_coeffs(stats: &GradientStats) -> BracketCoeffs {
    let a = stats.dist_norm;
    let b = stats.cls_norm;
    let aa = a * a;
    let bb = b * b;
    let abc = a * b * stats.cos_phi;
    BracketCoeffs {
        a2: aa + bb - 2.0 * abc,
        a1: 2.0 * (abc - bb),
        a0: bb,
    }
}

/// Evaluates `Q(λ) = λ²a² + (1−λ)²b² + 2λ(1−λ)ab·cos φ` directly.
///
/// Endpoints are allowed for analysis even though training keeps λ in (0,1):
/// `Q(0) = b²` and `Q(1) = a²` hold exactly.
pub fn bracket_value(stats: &GradientStats, lambda: f64) -> Result<f64, GeometryError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(GeometryError::LambdaOutOfRange(lambda));
    }
    let a = stats.dist_norm;
    let b = stats.cls_norm;
    let c = stats.cos_phi;
    let m = 1.0 - lambda;
    Ok(lambda * lambda * (a * a) + m * m * (b * b) + 2.0 * lambda * m * (a * b * c))
}

/// Global minimum of `Q` — its value at the unclamped vertex — when the
/// quadratic coefficient is positive.
///
/// Evaluated in a cancellation-free form: with the distillation gradient
/// along the x-axis, the combined direction at λ has components
/// `(λa + (1−λ)b·cos φ, (1−λ)b·sin φ)` and `Q` is the sum of their squares,
/// with `sin²φ` computed as `(1−cos φ)(1+cos φ)`. The polynomial route
/// `C − B²/(4A)` loses all significance for near-collinear gradients, where
/// the minimum is a tiny difference of large terms; this form keeps full
/// relative accuracy there and satisfies `Q_min·A = a²b²(1−cos²φ)`.
pub fn bracket_minimum(stats: &GradientStats) -> Option<f64> {
    let vertex = bracket_coeffs(stats).vertex()?;
    let a = stats.dist_norm;
    let b = stats.cls_norm;
    let c = stats.cos_phi;
    let m = 1.0 - vertex;
    let along = vertex * a + m * (b * c);
    let sin_sq = (1.0 - c) * (1.0 + c);
    Some(along * along + m * m * (b * b) * sin_sq)
}

/// Predicted first-order loss change `−η·Q(λ)`; never positive.
pub fn predicted_delta(stats: &GradientStats, lambda: f64, eta: f64) -> Result<f64, GeometryError> {
    if eta <= 0.0 || !eta.is_finite() {
        return Err(GeometryError::NonPositiveEta(eta));
    }
    Ok(-eta * bracket_value(stats, lambda)?)
}

fn recommend(
    stats: &GradientStats,
    lambda: f64,
    bounds: LambdaBounds,
    strategy: StrategyTag,
    feasible: bool,
    constant_bracket: bool,
) -> Result<LambdaRecommendation, GeometryError> {
    let lambda = bounds.clamp(lambda);
    Ok(LambdaRecommendation {
        lambda: BalanceParam::new(lambda, bounds)?,
        strategy,
        feasible,
        q_value: bracket_value(stats, lambda)?,
        constant_bracket,
    })
}

/// λ minimising `Q` over the bounds: the gentlest predicted descent.
///
/// With `A > 0` this is the vertex clamped into bounds; with `A = 0` and
/// `B ≠ 0` the endpoint minimising the linear form; with `A = B = 0` the
/// bracket is constant and the midpoint is returned with
/// `constant_bracket` set.
pub fn lambda_min_descent(
    stats: &GradientStats,
    bounds: LambdaBounds,
) -> Result<LambdaRecommendation, GeometryError> {
    if stats.degenerate {
        return Err(GeometryError::DegenerateStats);
    }
    let coeffs = bracket_coeffs(stats);
    let (lambda, constant) = match coeffs.vertex() {
        Some(v) => (v, false),
        None if coeffs.a1 > 0.0 => (bounds.lo(), false),
        None if coeffs.a1 < 0.0 => (bounds.hi(), false),
        None => (bounds.midpoint(), true),
    };
    recommend(
        stats,
        lambda,
        bounds,
        StrategyTag::MinDescent,
        true,
        constant,
    )
}

/// λ maximising `Q` over the bounds: the steepest predicted descent.
///
/// `Q` is convex, so the maximum sits at an endpoint. Ties go to the high
/// endpoint, favouring the distillation loss.
pub fn lambda_max_descent(
    stats: &GradientStats,
    bounds: LambdaBounds,
) -> Result<LambdaRecommendation, GeometryError> {
    if stats.degenerate {
        return Err(GeometryError::DegenerateStats);
    }
    let coeffs = bracket_coeffs(stats);
    let q_lo = bracket_value(stats, bounds.lo())?;
    let q_hi = bracket_value(stats, bounds.hi())?;
    let lambda = if q_lo > q_hi {
        bounds.lo()
    } else {
        bounds.hi()
    };
    let constant = coeffs.a2 == 0.0 && coeffs.a1 == 0.0;
    recommend(
        stats,
        lambda,
        bounds,
        StrategyTag::MaxDescent,
        true,
        constant,
    )
}

/// λ achieving a requested first-order loss change `−η·Q(λ) = target_delta`.
///
/// When roots of `Q(λ) = |target|/η` exist within bounds, returns the root
/// closest to `prev_lambda` (tie: the smaller root). When the target is
/// unattainable — steeper than the max or gentler than the min of `η·Q` on
/// the bounds — returns the bound-constrained λ with the closest predicted
/// change and clears `feasible`.
pub fn lambda_for_target(
    stats: &GradientStats,
    eta: f64,
    target_delta: f64,
    prev_lambda: f64,
    bounds: LambdaBounds,
) -> Result<LambdaRecommendation, GeometryError> {
    if eta <= 0.0 || !eta.is_finite() {
        return Err(GeometryError::NonPositiveEta(eta));
    }
    if target_delta > 0.0 {
        return Err(GeometryError::PositiveTarget(target_delta));
    }
    if stats.degenerate {
        return Err(GeometryError::DegenerateStats);
    }

    let q_star = -target_delta / eta;
    let min_rec = lambda_min_descent(stats, bounds)?;
    let max_rec = lambda_max_descent(stats, bounds)?;

    if q_star < min_rec.q_value {
        // Even the gentlest step descends faster than requested.
        return Ok(LambdaRecommendation {
            strategy: StrategyTag::TargetRate,
            feasible: false,
            ..min_rec
        });
    }
    if q_star > max_rec.q_value {
        return Ok(LambdaRecommendation {
            strategy: StrategyTag::TargetRate,
            feasible: false,
            ..max_rec
        });
    }

    let coeffs = bracket_coeffs(stats);
    let lambda = if coeffs.a2 > 0.0 {
        let roots = solve_quadratic(coeffs.a2, coeffs.a1, coeffs.a0 - q_star);
        pick_root(roots, prev_lambda, bounds)
    } else if coeffs.a1 != 0.0 {
        bounds.clamp((q_star - coeffs.a0) / coeffs.a1)
    } else {
        // Q is constant and equal to the target: every λ qualifies.
        bounds.clamp(prev_lambda)
    };
    recommend(
        stats,
        lambda,
        bounds,
        StrategyTag::TargetRate,
        true,
        coeffs.a2 == 0.0 && coeffs.a1 == 0.0,
    )
}

/// Roots of `a·x² + b·x + c` for `a > 0`, sorted ascending. The discriminant
/// is floored at zero: callers guarantee a real solution exists up to
/// rounding. Uses the sign-matched form to avoid cancellation.
fn solve_quadratic(a: f64, b: f64, c: f64) -> (f64, f64) {
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let (r1, r2) = if q == 0.0 {
        let v = -b / (2.0 * a);
        (v, v)
    } else {
        (q / a, c / q)
    };
    if r1 <= r2 { (r1, r2) } else { (r2, r1) }
}

/// Chooses the in-bounds root closest to `prev`; ties take the smaller root.
/// Roots that rounding pushed marginally outside the bounds are clamped back.
fn pick_root(roots: (f64, f64), prev: f64, bounds: LambdaBounds) -> f64 {
    const EDGE: f64 = 1e-9;
    let near = |r: f64| r >= bounds.lo() - EDGE && r <= bounds.hi() + EDGE;
    let (r1, r2) = roots;
    match (near(r1), near(r2)) {
        (true, false) => bounds.clamp(r1),
        (false, true) => bounds.clamp(r2),
        _ => {
            let (c1, c2) = (bounds.clamp(r1), bounds.clamp(r2));
            let (d1, d2) = ((c1 - prev).abs(), (c2 - prev).abs());
            if d1 < d2 {
                c1
            } else if d2 < d1 {
                c2
            } else {
                c1.min(c2)
            }
        }
    }
}
