//! Teacher pretraining, student distillation with pluggable λ schedulers,
//! and empirical verification of the first-order loss-change prediction.
//!
//! Every step logs the gradient geometry (norms, angle cosine), the chosen
//! λ, the predicted change `−η·Q(λ)` and the measured change of the total
//! loss on the *same* mini-batch before and after the update, so the
//! first-order prediction and its η² remainder are directly observable.
//!
//! λ for step `i` comes from step `i−1`'s gradient stats (one-step lag; the
//! first step uses the fixed λ or the bounds midpoint), which avoids a
//! second gradient computation per step. The teacher is frozen throughout.

use rand::Rng;
use thiserror::Error;

use crate::geometry::{
    self, GeometryError, GradientStats, LambdaBounds, cosine_between, lambda_for_target,
    lambda_max_descent, lambda_min_descent,
};
use crate::nn::{
    Activation, Batch, FlatGrad, GradOrigin, LossBreakdown, Network, NnError, accuracy, loss_cls,
    loss_dist,
};
use crate::rng::{STREAM_BATCHES, STREAM_STUDENT_INIT, STREAM_TEACHER_INIT, stream_rng};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Rule producing λ at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerStrategy {
    /// Constant λ.
    Fixed { lambda: f64 },
    /// Steepest predicted descent: endpoint maximising `Q`.
    MaxDescent { smoothing: f64 },
    /// Gentlest predicted descent: the (clamped) vertex of `Q`.
    MinDescent { smoothing: f64 },
    /// Track a requested per-step loss change `target_delta ≤ 0`.
    TargetRate { target_delta: f64, smoothing: f64 },
}

impl SchedulerStrategy {
    pub fn kind(&self) -> &'static str {
        match self {
            SchedulerStrategy::Fixed { .. } => "fixed",
            SchedulerStrategy::MaxDescent { .. } => "max_descent",
            SchedulerStrategy::MinDescent { .. } => "min_descent",
            SchedulerStrategy::TargetRate { .. } => "target_rate",
        }
    }

    fn validate(&self) -> Result<(), String> {
        let smoothing = match self {
            SchedulerStrategy::Fixed { lambda } => {
                if lambda.is_nan() || *lambda <= 0.0 || *lambda >= 1.0 {
                    return Err(format!("fixed lambda must lie in (0, 1), got {lambda}"));
                }
                return Ok(());
            }
            SchedulerStrategy::MaxDescent { smoothing }
            | SchedulerStrategy::MinDescent { smoothing } => *smoothing,
            SchedulerStrategy::TargetRate {
                target_delta,
                smoothing,
            } => {
                if *target_delta > 0.0 {
                    return Err(format!("target_delta must be <= 0, got {target_delta}"));
                }
                *smoothing
            }
        };
        if !(0.0..1.0).contains(&smoothing) {
            return Err(format!("smoothing must lie in [0, 1), got {smoothing}"));
        }
        Ok(())
    }
}

/// Configuration of one training run (teacher pretraining or distillation).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lambda_strategy: SchedulerStrategy,
    pub lambda_bounds: LambdaBounds,
    pub temperature: f64,
    pub seed: u64,
    pub teacher_sizes: Vec<usize>,
    pub student_sizes: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            steps: 200,
            batch_size: 32,
            lambda_strategy: SchedulerStrategy::Fixed { lambda: 0.5 },
            lambda_bounds: LambdaBounds::default(),
            temperature: 1.0,
            seed: 0,
            teacher_sizes: vec![2, 32, 3],
            student_sizes: vec![2, 8, 3],
            activation: Activation::Tanh,
        }
    }
}

fn param_count_of(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if self.eta <= 0.0 || !self.eta.is_finite() {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if self.steps == 0 {
            return fail("steps must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.temperature <= 0.0 || self.temperature.is_nan() {
            return fail(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        self.lambda_strategy
            .validate()
            .map_err(PipelineError::InvalidConfig)?;
        if self.teacher_sizes.len() < 2 || self.student_sizes.len() < 2 {
            return fail("teacher and student need at least two layer sizes".into());
        }
        if self.teacher_sizes.first() != self.student_sizes.first()
            || self.teacher_sizes.last() != self.student_sizes.last()
        {
            return fail(format!(
                "teacher {:?} and student {:?} must agree on input and output widths",
                self.teacher_sizes, self.student_sizes
            ));
        }
        if param_count_of(&self.student_sizes) >= param_count_of(&self.teacher_sizes) {
            return fail(format!(
                "student ({} params) must be smaller than teacher ({} params)",
                param_count_of(&self.student_sizes),
                param_count_of(&self.teacher_sizes)
            ));
        }
        Ok(())
    }

    /// λ used at the first step, before any gradient stats exist: the fixed
    /// λ (clamped into bounds, like every later step) or the bounds
    /// midpoint for dynamic strategies.
    pub fn initial_lambda(&self) -> f64 {
        match self.lambda_strategy {
            SchedulerStrategy::Fixed { lambda } => self.lambda_bounds.clamp(lambda),
            _ => self.lambda_bounds.midpoint(),
        }
    }
}

/// One training step's losses, geometry, chosen λ and loss-change bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lambda: f64,
    pub loss_total_before: f64,
    pub loss_total_after: f64,
    pub loss_dist: f64,
    pub loss_cls: f64,
    /// `‖∇L_dist‖` (unweighted).
    pub a: f64,
    /// `‖∇L_cls‖` (unweighted).
    pub b: f64,
    pub cos_phi: f64,
    /// `−η·Q(λ)` at this step's stats.
    pub predicted_delta: f64,
    /// `loss_total_after − loss_total_before`, same batch.
    pub actual_delta: f64,
    /// `actual_delta − predicted_delta`: the η² remainder.
    pub residual: f64,
    /// Set when a zero-norm gradient left the angle undefined this step.
    pub degenerate: bool,
}

pub const STEP_CSV_HEADER: &str = "step,lambda,loss_total_before,loss_total_after,loss_dist,loss_cls,a,b,cos_phi,predicted_delta,actual_delta,residual";

/// Renders step records as CSV (no leading comment; callers prepend one).
pub fn records_to_csv(records: &[StepRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 128);
    out.push_str(STEP_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.lambda,
            r.loss_total_before,
            r.loss_total_after,
            r.loss_dist,
            r.loss_cls,
            r.a,
            r.b,
            r.cos_phi,
            r.predicted_delta,
            r.actual_delta,
            r.residual
        ));
    }
    out
}

/// Both loss gradients at the current student parameters, plus their
/// geometry. The two backward passes share one forward cache.
#[derive(Debug, Clone)]
pub struct KdGrads {
    pub loss_dist: f64,
    pub loss_cls: f64,
    pub grad_dist: FlatGrad,
    pub grad_cls: FlatGrad,
    pub stats: GradientStats,
}

/// Computes the separate distillation and classification gradients of the
/// student on one batch, with the teacher frozen.
pub fn kd_gradients(
    student: &Network,
    teacher: &Network,
    batch: &Batch,
    temperature: f64,
) -> Result<KdGrads, PipelineError> {
    let (teacher_logits, _) = teacher.forward(batch)?;
    let (logits, cache) = student.forward(batch)?;
    let (ld, ld_grad) = loss_dist(&logits, &teacher_logits, temperature)?;
    let (lc, lc_grad) = loss_cls(&logits, &batch.labels)?;
    let grad_dist = student.backward(&cache, &ld_grad, GradOrigin::Dist)?;
    let grad_cls = student.backward(&cache, &lc_grad, GradOrigin::Cls)?;
    let stats = cosine_between(&grad_dist.values, &grad_cls.values)?;
    Ok(KdGrads {
        loss_dist: ld,
        loss_cls: lc,
        grad_dist,
        grad_cls,
        stats,
    })
}

/// One distillation step: θ ← θ − η(λ·∇L_dist + (1−λ)·∇L_cls), with the
/// total loss measured on the same batch before and after the update.
///
/// A zero-norm gradient flags the record as degenerate (the angle is
/// undefined) but the combined update is still applied — it degrades
/// gracefully to the surviving term, and `Q` remains correct because the
/// cross term vanishes with the zero norm.
pub fn kd_step(
    student: &mut Network,
    teacher: &Network,
    batch: &Batch,
    lambda: f64,
    eta: f64,
    temperature: f64,
) -> Result<StepRecord, PipelineError> {
    if lambda.is_nan() || lambda <= 0.0 || lambda >= 1.0 {
        return Err(PipelineError::InvalidConfig(format!(
            "training lambda must lie in (0, 1), got {lambda}"
        )));
    }
    let grads = kd_gradients(student, teacher, batch, temperature)?;
    let before = LossBreakdown::combine(grads.loss_dist, grads.loss_cls, lambda, temperature);
    let predicted_delta = geometry::predicted_delta(&grads.stats, lambda, eta)?;

    let combined = FlatGrad::combine(&grads.grad_dist, &grads.grad_cls, lambda)?;
    student.sgd_step(&combined, eta)?;

    let (teacher_logits, _) = teacher.forward(batch)?;
    let (logits_after, _) = student.forward(batch)?;
    let (ld_after, _) = loss_dist(&logits_after, &teacher_logits, temperature)?;
    let (lc_after, _) = loss_cls(&logits_after, &batch.labels)?;
    let after = LossBreakdown::combine(ld_after, lc_after, lambda, temperature);

    let actual_delta = after.loss_total - before.loss_total;
    Ok(StepRecord {
        step: 0,
        lambda,
        loss_total_before: before.loss_total,
        loss_total_after: after.loss_total,
        loss_dist: grads.loss_dist,
        loss_cls: grads.loss_cls,
        a: grads.stats.dist_norm,
        b: grads.stats.cls_norm,
        cos_phi: grads.stats.cos_phi,
        predicted_delta,
        actual_delta,
        residual: actual_delta - predicted_delta,
        degenerate: grads.stats.degenerate,
    })
}

/// λ for the next step from the previous step's stats.
///
/// Dynamic strategies take the controller recommendation and smooth it
/// exponentially toward `prev_lambda`; missing or degenerate stats fall back
/// to `prev_lambda`. The result is always clamped into bounds.
pub fn next_lambda(
    strategy: &SchedulerStrategy,
    stats: Option<&GradientStats>,
    prev_lambda: f64,
    eta: f64,
    bounds: LambdaBounds,
) -> f64 {
    if let SchedulerStrategy::Fixed { lambda } = strategy {
        return bounds.clamp(*lambda);
    }
    let stats = match stats {
        Some(s) if !s.degenerate => s,
        _ => return bounds.clamp(prev_lambda),
    };
    let (recommended, smoothing) = match strategy {
        SchedulerStrategy::Fixed { .. } => unreachable!("handled above"),
        SchedulerStrategy::MaxDescent { smoothing } => (
            lambda_max_descent(stats, bounds).map(|r| r.lambda.value()),
            *smoothing,
        ),
        SchedulerStrategy::MinDescent { smoothing } => (
            lambda_min_descent(stats, bounds).map(|r| r.lambda.value()),
            *smoothing,
        ),
        SchedulerStrategy::TargetRate {
            target_delta,
            smoothing,
        } => (
            lambda_for_target(stats, eta, *target_delta, prev_lambda, bounds)
                .map(|r| r.lambda.value()),
            *smoothing,
        ),
    };
    match recommended {
        Ok(rec) => bounds.clamp(smoothing * prev_lambda + (1.0 - smoothing) * rec),
        Err(_) => bounds.clamp(prev_lambda),
    }
}

/// A pretrained teacher with its final training accuracy and loss trace.
#[derive(Debug, Clone)]
pub struct TeacherResult {
    pub network: Network,
    pub train_accuracy: f64,
    /// Mini-batch cross-entropy per step.
    pub step_losses: Vec<f64>,
}

fn sample_batch(train: &Batch, batch_size: usize, rng: &mut impl Rng) -> Batch {
    let n = train.len();
    let indices: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..n)).collect();
    train.select(&indices)
}

/// Pretrains the teacher with plain cross-entropy (λ plays no role here).
pub fn train_teacher(config: &TrainConfig, train: &Batch) -> Result<TeacherResult, PipelineError> {
    config.validate()?;
    let mut net = Network::init(
        &config.teacher_sizes,
        config.activation,
        &mut stream_rng(config.seed, STREAM_TEACHER_INIT),
    )?;
    let mut batch_rng = stream_rng(config.seed, STREAM_BATCHES);
    let mut step_losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch = sample_batch(train, config.batch_size, &mut batch_rng);
        let (logits, cache) = net.forward(&batch)?;
        let (loss, logit_grad) = loss_cls(&logits, &batch.labels)?;
        let grad = net.backward(&cache, &logit_grad, GradOrigin::Cls)?;
        net.sgd_step(&grad, config.eta)?;
        step_losses.push(loss);
    }
    let train_accuracy = accuracy(&net, train)?;
    Ok(TeacherResult {
        network: net,
        train_accuracy,
        step_losses,
    })
}

/// Runs `config.steps` sequential distillation steps over seeded
/// mini-batches. λ for step `i` comes from step `i−1`'s stats.
pub fn run_training(
    config: &TrainConfig,
    train: &Batch,
    teacher: &Network,
) -> Result<Vec<StepRecord>, PipelineError> {
    config.validate()?;
    let mut student = Network::init(
        &config.student_sizes,
        config.activation,
        &mut stream_rng(config.seed, STREAM_STUDENT_INIT),
    )?;
    run_training_from(config, train, teacher, &mut student)
}

/// As [`run_training`], but distilling into a caller-supplied student.
pub fn run_training_from(
    config: &TrainConfig,
    train: &Batch,
    teacher: &Network,
    student: &mut Network,
) -> Result<Vec<StepRecord>, PipelineError> {
    config.validate()?;
    let mut batch_rng = stream_rng(config.seed, STREAM_BATCHES);
    let mut records = Vec::with_capacity(config.steps);
    let mut prev_lambda = config.initial_lambda();
    let mut prev_stats: Option<GradientStats> = None;
    for step in 0..config.steps {
        let lambda = if step == 0 {
            config.initial_lambda()
        } else {
            next_lambda(
                &config.lambda_strategy,
                prev_stats.as_ref(),
                prev_lambda,
                config.eta,
                config.lambda_bounds,
            )
        };
        let batch = sample_batch(train, config.batch_size, &mut batch_rng);
        let mut record = kd_step(
            student,
            teacher,
            &batch,
            lambda,
            config.eta,
            config.temperature,
        )?;
        record.step = step;
        prev_stats = (!record.degenerate).then(|| {
            GradientStats::new(record.a, record.b, record.cos_phi)
                .expect("recorded stats are valid")
        });
        prev_lambda = lambda;
        records.push(record);
    }
    Ok(records)
}

/// Mean |residual| per learning rate and the ratios between adjacent rates.
///
/// Each η re-runs the identical seeded step sequence (same initial student,
/// same batch stream), so the only varying quantity is the step size. A
/// first-order-exact prediction leaves an η² remainder, so halving η should
/// shrink the mean |residual| by roughly 4×.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorReport {
    pub eta_values: Vec<f64>,
    pub mean_abs_residual: Vec<f64>,
    /// `mean_abs_residual[i+1] / mean_abs_residual[i]`.
    pub residual_ratio: Vec<f64>,
}

impl TaylorReport {
    pub const CSV_HEADER: &'static str = "eta,mean_abs_residual,ratio_to_prev";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (i, (eta, mar)) in self
            .eta_values
            .iter()
            .zip(&self.mean_abs_residual)
            .enumerate()
        {
            let ratio = if i == 0 {
                String::new()
            } else {
                format!("{}", self.residual_ratio[i - 1])
            };
            out.push_str(&format!("{eta},{mar},{ratio}\n"));
        }
        out
    }
}

/// Re-runs the same seeded distillation at every η in `etas` and reports how
/// the first-order residual scales.
pub fn verify_taylor(
    config: &TrainConfig,
    train: &Batch,
    teacher: &Network,
    etas: &[f64],
) -> Result<TaylorReport, PipelineError> {
    if etas.len() < 2 {
        return Err(PipelineError::InvalidConfig(
            "verify_taylor needs at least two eta values".into(),
        ));
    }
    if etas.iter().any(|e| *e <= 0.0 || e.is_nan()) {
        return Err(PipelineError::InvalidConfig(
            "eta values must be positive".into(),
        ));
    }
    if etas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(PipelineError::InvalidConfig(
            "eta values must be strictly descending".into(),
        ));
    }
    let mut mean_abs_residual = Vec::with_capacity(etas.len());
    for &eta in etas {
        let sub = TrainConfig {
            eta,
            ..config.clone()
        };
        let records = run_training(&sub, train, teacher)?;
        let mar = records.iter().map(|r| r.residual.abs()).sum::<f64>() / records.len() as f64;
        mean_abs_residual.push(mar);
    }
    let residual_ratio = mean_abs_residual.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(TaylorReport {
        eta_values: etas.to_vec(),
        mean_abs_residual,
        residual_ratio,
    })
}

/// Outcome of one fixed-λ arm of a sweep.
#[derive(Debug, Clone)]
pub struct SweepArm {
    pub lambda: f64,
    pub records: Vec<StepRecord>,
    /// Losses of the final student over the full training set.
    pub final_loss_total: f64,
    pub final_loss_dist: f64,
    pub final_loss_cls: f64,
    pub test_accuracy: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "lambda,final_loss_total,final_loss_dist,final_loss_cls,test_accuracy";

pub fn sweep_summary_to_csv(arms: &[SweepArm]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for arm in arms {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            arm.lambda,
            arm.final_loss_total,
            arm.final_loss_dist,
            arm.final_loss_cls,
            arm.test_accuracy
        ));
    }
    out
}

/// Full-batch losses of a student against a teacher at a given λ.
pub fn evaluate_losses(
    student: &Network,
    teacher: &Network,
    batch: &Batch,
    lambda: f64,
    temperature: f64,
) -> Result<LossBreakdown, PipelineError> {
    let (teacher_logits, _) = teacher.forward(batch)?;
    let (logits, _) = student.forward(batch)?;
    let (ld, _) = loss_dist(&logits, &teacher_logits, temperature)?;
    let (lc, _) = loss_cls(&logits, &batch.labels)?;
    Ok(LossBreakdown::combine(ld, lc, lambda, temperature))
}

/// Trains one student per fixed λ from identical initialisation and batch
/// stream, so differences across arms are attributable to λ alone.
pub fn sweep_lambda(
    config: &TrainConfig,
    train: &Batch,
    test: &Batch,
    teacher: &Network,
    lambda_grid: &[f64],
) -> Result<Vec<SweepArm>, PipelineError> {
    if lambda_grid.is_empty() {
        return Err(PipelineError::InvalidConfig("empty lambda grid".into()));
    }
    if lambda_grid
        .iter()
        .any(|l| l.is_nan() || *l <= 0.0 || *l >= 1.0)
    {
        return Err(PipelineError::InvalidConfig(
            "sweep lambdas must lie in (0, 1)".into(),
        ));
    }
    let mut arms = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let sub = TrainConfig {
            lambda_strategy: SchedulerStrategy::Fixed { lambda },
            ..config.clone()
        };
        let mut student = Network::init(
            &sub.student_sizes,
            sub.activation,
            &mut stream_rng(sub.seed, STREAM_STUDENT_INIT),
        )?;
        let records = run_training_from(&sub, train, teacher, &mut student)?;
        let final_losses = evaluate_losses(&student, teacher, train, lambda, sub.temperature)?;
        arms.push(SweepArm {
            lambda,
            records,
            final_loss_total: final_losses.loss_total,
            final_loss_dist: final_losses.loss_dist,
            final_loss_cls: final_losses.loss_cls,
            test_accuracy: accuracy(&student, test)?,
        });
    }
    Ok(arms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSpec, generate};
    use crate::geometry::bracket_value;

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            eta: 0.05,
            steps: 30,
            batch_size: 16,
            seed,
            teacher_sizes: vec![2, 16, 3],
            student_sizes: vec![2, 6, 3],
            ..Default::default()
        }
    }

    fn blobs(seed: u64, noise: f64) -> (Batch, Batch) {
        generate(&DatasetSpec {
            noise,
            seed,
            n_train: 96,
            n_test: 48,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn teacher_reaches_full_accuracy_on_separable_blobs() {
        let (train, _) = blobs(1, 0.0);
        let config = TrainConfig {
            eta: 0.5,
            steps: 200,
            ..small_config(1)
        };
        let teacher = train_teacher(&config, &train).unwrap();
        assert_eq!(teacher.train_accuracy, 1.0);
    }

    #[test]
    fn teacher_training_is_deterministic() {
        let (train, _) = blobs(2, 0.1);
        let config = small_config(2);
        let t1 = train_teacher(&config, &train).unwrap();
        let t2 = train_teacher(&config, &train).unwrap();
        assert_eq!(t1.network.flatten(), t2.network.flatten());
        assert_eq!(t1.step_losses, t2.step_losses);
        // Down to the serialised checkpoint bytes.
        assert_eq!(
            crate::nn::checkpoint_string(&t1.network, config.temperature, None),
            crate::nn::checkpoint_string(&t2.network, config.temperature, None),
        );
    }

    #[test]
    fn trained_teacher_beats_untrained_student() {
        let (train, test) = blobs(3, 0.1);
        let config = TrainConfig {
            eta: 0.5,
            steps: 300,
            ..small_config(3)
        };
        let teacher = train_teacher(&config, &train).unwrap();
        let student = Network::init(
            &config.student_sizes,
            config.activation,
            &mut stream_rng(config.seed, STREAM_STUDENT_INIT),
        )
        .unwrap();
        let teacher_acc = accuracy(&teacher.network, &test).unwrap();
        let student_acc = accuracy(&student, &test).unwrap();
        assert!(teacher_acc >= student_acc);
    }

    #[test]
    fn prediction_matches_bracket_value_exactly() {
        let (train, _) = blobs(4, 0.1);
        let config = small_config(4);
        let teacher = train_teacher(&config, &train).unwrap();
        let records = run_training(&config, &train, &teacher.network).unwrap();
        for r in &records {
            let stats = GradientStats::new(r.a, r.b, r.cos_phi).unwrap();
            let q = bracket_value(&stats, r.lambda).unwrap();
            assert_eq!(r.predicted_delta, -config.eta * q);
            assert!(r.predicted_delta <= 0.0);
            assert_eq!(r.residual, r.actual_delta - r.predicted_delta);
        }
    }

    #[test]
    fn student_equal_to_teacher_reduces_to_scaled_cross_entropy() {
        // With student == teacher, KL(p‖p) = 0 and its gradient vanishes, so
        // the combined step is the (1−λ)-scaled cross-entropy step.
        let (train, _) = blobs(5, 0.1);
        let config = TrainConfig {
            teacher_sizes: vec![2, 16, 3],
            student_sizes: vec![2, 16, 3],
            ..small_config(5)
        };
        let teacher = Network::init(
            &config.teacher_sizes,
            config.activation,
            &mut stream_rng(9, STREAM_TEACHER_INIT),
        )
        .unwrap();
        let mut student = teacher.clone();
        let batch = train.select(&(0..16).collect::<Vec<_>>());
        let lambda = 0.3;
        let record = kd_step(&mut student, &teacher, &batch, lambda, 0.1, 1.0).unwrap();
        assert!(record.degenerate);
        assert!(record.loss_dist.abs() < 1e-15);
        assert_eq!(record.a, 0.0);

        // Reference: plain cross-entropy step scaled by (1−λ).
        let mut reference = teacher.clone();
        let (logits, cache) = reference.forward(&batch).unwrap();
        let (_, lg) = loss_cls(&logits, &batch.labels).unwrap();
        let grad = reference.backward(&cache, &lg, GradOrigin::Cls).unwrap();
        let scaled = FlatGrad {
            values: grad.values.iter().map(|g| (1.0 - lambda) * g).collect(),
            origin: GradOrigin::Combined,
        };
        reference.sgd_step(&scaled, 0.1).unwrap();
        for (s, r) in student.flatten().iter().zip(reference.flatten().iter()) {
            assert!((s - r).abs() < 1e-15);
        }
    }

    #[test]
    fn applied_update_is_the_combined_gradient_exactly() {
        let (train, _) = blobs(6, 0.1);
        let config = small_config(6);
        let teacher = train_teacher(&config, &train).unwrap();
        let mut student = Network::init(
            &config.student_sizes,
            config.activation,
            &mut stream_rng(config.seed, STREAM_STUDENT_INIT),
        )
        .unwrap();
        let batch = train.select(&(0..16).collect::<Vec<_>>());
        let grads = kd_gradients(&student, &teacher.network, &batch, 1.0).unwrap();
        let before = student.flatten();
        let (lambda, eta) = (0.4, 0.05);
        kd_step(&mut student, &teacher.network, &batch, lambda, eta, 1.0).unwrap();
        let combined = FlatGrad::combine(&grads.grad_dist, &grads.grad_cls, lambda).unwrap();
        for ((after, before), g) in student.flatten().iter().zip(&before).zip(&combined.values) {
            assert_eq!(*after, before - eta * g);
        }
    }

    #[test]
    fn next_lambda_fixed_is_constant() {
        let strategy = SchedulerStrategy::Fixed { lambda: 0.7 };
        let bounds = LambdaBounds::default();
        let stats = GradientStats::new(1.0, 2.0, 0.1).unwrap();
        for prev in [0.1, 0.5, 0.9] {
            assert_eq!(
                next_lambda(&strategy, Some(&stats), prev, 0.01, bounds),
                0.7
            );
        }
    }

    #[test]
    fn next_lambda_max_descent_hits_high_bound_when_dist_dominates() {
        let strategy = SchedulerStrategy::MaxDescent { smoothing: 0.0 };
        let bounds = LambdaBounds::default();
        // a > b: with symmetric bounds, Q(hi) − Q(lo) = (hi²−lo²)(a²−b²) > 0.
        let stats = GradientStats::new(2.0, 1.0, -0.3).unwrap();
        assert_eq!(
            next_lambda(&strategy, Some(&stats), 0.5, 0.01, bounds),
            0.95
        );
    }

    #[test]
    fn next_lambda_smoothing_interpolates() {
        let strategy = SchedulerStrategy::MaxDescent { smoothing: 0.9 };
        let bounds = LambdaBounds::default();
        let stats = GradientStats::new(2.0, 1.0, 0.0).unwrap();
        // Recommendation is 0.95; smoothed: 0.9·0.5 + 0.1·0.95 = 0.545.
        let next = next_lambda(&strategy, Some(&stats), 0.5, 0.01, bounds);
        assert!((next - 0.545).abs() < 1e-15);
    }

    #[test]
    fn next_lambda_falls_back_on_missing_or_degenerate_stats() {
        let strategy = SchedulerStrategy::MinDescent { smoothing: 0.0 };
        let bounds = LambdaBounds::default();
        assert_eq!(next_lambda(&strategy, None, 0.33, 0.01, bounds), 0.33);
        let degenerate = GradientStats::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(
            next_lambda(&strategy, Some(&degenerate), 0.33, 0.01, bounds),
            0.33
        );
    }

    #[test]
    fn run_training_is_deterministic() {
        let (train, _) = blobs(7, 0.1);
        let config = small_config(7);
        let teacher = train_teacher(&config, &train).unwrap();
        let r1 = run_training(&config, &train, &teacher.network).unwrap();
        let r2 = run_training(&config, &train, &teacher.network).unwrap();
        assert_eq!(records_to_csv(&r1), records_to_csv(&r2));
        assert_eq!(r1.len(), config.steps);
    }

    #[test]
    fn fixed_strategy_logs_constant_lambda() {
        let (train, _) = blobs(8, 0.1);
        let config = TrainConfig {
            lambda_strategy: SchedulerStrategy::Fixed { lambda: 0.5 },
            ..small_config(8)
        };
        let teacher = train_teacher(&config, &train).unwrap();
        let records = run_training(&config, &train, &teacher.network).unwrap();
        assert!(records.iter().all(|r| r.lambda == 0.5));
    }

    #[test]
    fn fixed_lambda_outside_bounds_is_clamped_from_step_zero() {
        let (train, _) = blobs(8, 0.1);
        let config = TrainConfig {
            steps: 3,
            lambda_strategy: SchedulerStrategy::Fixed { lambda: 0.99 },
            ..small_config(8)
        };
        let teacher = train_teacher(&config, &train).unwrap();
        let records = run_training(&config, &train, &teacher.network).unwrap();
        assert!(records.iter().all(|r| r.lambda == 0.95));
    }

    #[test]
    fn target_rate_run_tracks_the_requested_descent() {
        let (train, _) = blobs(16, 0.1);
        let teacher_cfg = TrainConfig {
            eta: 0.5,
            steps: 200,
            ..small_config(16)
        };
        let teacher = train_teacher(&teacher_cfg, &train).unwrap();
        let target = -5e-4;
        let config = TrainConfig {
            eta: 0.05,
            steps: 60,
            lambda_strategy: SchedulerStrategy::TargetRate {
                target_delta: target,
                smoothing: 0.0,
            },
            ..small_config(16)
        };
        let records = run_training(&config, &train, &teacher.network).unwrap();
        let bounds = config.lambda_bounds;
        for r in &records {
            assert!(
                bounds.contains(r.lambda),
                "lambda {} escaped bounds",
                r.lambda
            );
            assert!(r.predicted_delta <= 0.0);
        }
        // Whenever the target was attainable at the previous step's stats,
        // the chosen lambda pins the prediction to it.
        for w in records.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            if prev.degenerate {
                continue;
            }
            let stats = GradientStats::new(prev.a, prev.b, prev.cos_phi).unwrap();
            let rec = lambda_for_target(&stats, config.eta, target, prev.lambda, bounds).unwrap();
            assert_eq!(cur.lambda, rec.lambda.value());
            if rec.feasible {
                let predicted_at_prev_stats =
                    -config.eta * crate::geometry::bracket_value(&stats, cur.lambda).unwrap();
                assert!(
                    (predicted_at_prev_stats - target).abs() < 1e-9,
                    "prediction {predicted_at_prev_stats} missed target {target}"
                );
            }
        }
        // Determinism of the dynamic schedule.
        let again = run_training(&config, &train, &teacher.network).unwrap();
        assert_eq!(records_to_csv(&records), records_to_csv(&again));
    }

    #[test]
    fn smoothed_max_descent_moves_gradually() {
        let (train, _) = blobs(17, 0.1);
        let teacher_cfg = TrainConfig {
            eta: 0.5,
            steps: 200,
            ..small_config(17)
        };
        let teacher = train_teacher(&teacher_cfg, &train).unwrap();
        let config = TrainConfig {
            eta: 0.05,
            steps: 40,
            lambda_strategy: SchedulerStrategy::MaxDescent { smoothing: 0.9 },
            ..small_config(17)
        };
        let records = run_training(&config, &train, &teacher.network).unwrap();
        let bounds = config.lambda_bounds;
        // Each move is at most 10% of the way to an endpoint, so the raw
        // bang-bang behaviour is damped.
        for w in records.windows(2) {
            let step_size = (w[1].lambda - w[0].lambda).abs();
            let max_move = 0.1 * (bounds.hi() - bounds.lo());
            assert!(
                step_size <= max_move + 1e-12,
                "lambda jumped by {step_size}"
            );
            assert!(bounds.contains(w[1].lambda));
        }
    }

    #[test]
    fn small_eta_mostly_descends() {
        let (train, _) = blobs(9, 0.1);
        let config = TrainConfig {
            eta: 1e-3,
            steps: 50,
            ..small_config(9)
        };
        let teacher = train_teacher(
            &TrainConfig {
                eta: 0.5,
                steps: 200,
                ..config.clone()
            },
            &train,
        )
        .unwrap();
        let records = run_training(&config, &train, &teacher.network).unwrap();
        let descending = records.iter().filter(|r| r.actual_delta < 0.0).count();
        assert!(
            descending as f64 >= 0.8 * records.len() as f64,
            "only {descending}/{} steps descended",
            records.len()
        );
    }

    #[test]
    fn taylor_report_shapes_and_determinism() {
        let (train, _) = blobs(10, 0.1);
        let config = TrainConfig {
            steps: 20,
            ..small_config(10)
        };
        let teacher = train_teacher(
            &TrainConfig {
                eta: 0.5,
                steps: 200,
                ..config.clone()
            },
            &train,
        )
        .unwrap();
        let etas = [1e-2, 5e-3, 2.5e-3];
        let report = verify_taylor(&config, &train, &teacher.network, &etas).unwrap();
        assert_eq!(report.eta_values.len(), 3);
        assert_eq!(report.mean_abs_residual.len(), 3);
        assert_eq!(report.residual_ratio.len(), 2);
        let again = verify_taylor(&config, &train, &teacher.network, &etas).unwrap();
        assert_eq!(report, again);
        // Residuals shrink monotonically as η halves.
        assert!(report.mean_abs_residual[1] < report.mean_abs_residual[0]);
        assert!(report.mean_abs_residual[2] < report.mean_abs_residual[1]);
    }

    #[test]
    fn taylor_residual_vanishes_for_linear_student() {
        // No hidden layer: the only curvature left is the softmax's, and the
        // residual still shrinks toward zero with η.
        let (train, _) = blobs(11, 0.1);
        let config = TrainConfig {
            steps: 10,
            student_sizes: vec![2, 3],
            teacher_sizes: vec![2, 8, 3],
            ..small_config(11)
        };
        let teacher = train_teacher(
            &TrainConfig {
                eta: 0.5,
                steps: 100,
                ..config.clone()
            },
            &train,
        )
        .unwrap();
        let etas = [1e-2, 1e-3, 1e-4];
        let report = verify_taylor(&config, &train, &teacher.network, &etas).unwrap();
        assert!(report.mean_abs_residual[2] < report.mean_abs_residual[0]);
        assert!(report.mean_abs_residual[2] < 1e-6);
    }

    #[test]
    fn verify_taylor_validates_eta_list() {
        let (train, _) = blobs(12, 0.1);
        let config = small_config(12);
        let teacher = train_teacher(&config, &train).unwrap();
        assert!(verify_taylor(&config, &train, &teacher.network, &[1e-2]).is_err());
        assert!(verify_taylor(&config, &train, &teacher.network, &[1e-3, 1e-2]).is_err());
        assert!(verify_taylor(&config, &train, &teacher.network, &[1e-2, -1e-3]).is_err());
    }

    #[test]
    fn sweep_single_lambda_equals_fixed_run() {
        let (train, test) = blobs(13, 0.1);
        let config = TrainConfig {
            lambda_strategy: SchedulerStrategy::Fixed { lambda: 0.5 },
            ..small_config(13)
        };
        let teacher = train_teacher(&config, &train).unwrap();
        let arms = sweep_lambda(&config, &train, &test, &teacher.network, &[0.5]).unwrap();
        let direct = run_training(&config, &train, &teacher.network).unwrap();
        assert_eq!(arms.len(), 1);
        assert_eq!(records_to_csv(&arms[0].records), records_to_csv(&direct));
    }

    #[test]
    fn sweep_predictions_fit_the_quadratic_exactly() {
        // At any step's stats, predicted ΔL as a function of λ is the
        // quadratic −η·Q(λ); reconstructing it from the coefficients must
        // agree to rounding.
        let (train, test) = blobs(14, 0.1);
        let config = small_config(14);
        let teacher = train_teacher(&config, &train).unwrap();
        let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
        let arms = sweep_lambda(&config, &train, &test, &teacher.network, &grid).unwrap();
        assert_eq!(arms.len(), 5);
        for arm in &arms {
            for r in &arm.records {
                let stats = GradientStats::new(r.a, r.b, r.cos_phi).unwrap();
                let coeffs = crate::geometry::bracket_coeffs(&stats);
                let q = bracket_value(&stats, r.lambda).unwrap();
                let rel = (coeffs.eval(r.lambda) - q).abs() / q.abs().max(1e-300);
                assert!(rel <= 1e-12, "relative gap {rel}");
                assert_eq!(r.predicted_delta, -config.eta * q);

                // The grid λ maximising the predicted descent magnitude sits
                // on the same side as the max-descent endpoint.
                if !r.degenerate {
                    let grid_argmax = grid
                        .iter()
                        .copied()
                        .max_by(|x, y| {
                            bracket_value(&stats, *x)
                                .unwrap()
                                .total_cmp(&bracket_value(&stats, *y).unwrap())
                        })
                        .unwrap();
                    let endpoint =
                        crate::geometry::lambda_max_descent(&stats, config.lambda_bounds)
                            .unwrap()
                            .lambda
                            .value();
                    let restricted = if endpoint > config.lambda_bounds.midpoint() {
                        grid[grid.len() - 1]
                    } else {
                        grid[0]
                    };
                    assert_eq!(grid_argmax, restricted);
                }
            }
        }
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let (train, test) = blobs(15, 0.1);
        let config = small_config(15);
        let teacher = train_teacher(&config, &train).unwrap();
        assert!(sweep_lambda(&config, &train, &test, &teacher.network, &[]).is_err());
        assert!(sweep_lambda(&config, &train, &test, &teacher.network, &[0.0]).is_err());
        assert!(sweep_lambda(&config, &train, &test, &teacher.network, &[1.0]).is_err());
    }

    #[test]
    fn config_validation_rejects_oversized_student() {
        let config = TrainConfig {
            teacher_sizes: vec![2, 4, 3],
            student_sizes: vec![2, 16, 3],
            ..Default::default()
        };
        assert!(matches!(
            config.validate(),
            Err(PipelineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_strategy() {
        let config = TrainConfig {
            lambda_strategy: SchedulerStrategy::Fixed { lambda: 1.2 },
            ..Default::default()
        };
        assert!(config.validate().is_err());
        let config = TrainConfig {
            lambda_strategy: SchedulerStrategy::TargetRate {
                target_delta: 0.5,
                smoothing: 0.0,
            },
            ..Default::default()
        };
        assert!(config.validate().is_err());
        let config = TrainConfig {
            lambda_strategy: SchedulerStrategy::MaxDescent { smoothing: 1.0 },
            ..Default::default()
        };
        assert!(config.validate().is_err());
    }
}
