//! Loss assembly: group-relative policy gradients, reverse-KL distillation,
//! forward-KL fine-tuning, reward shaping, reward-guided masking, and the
//! joint objective.
//!
//! Conventions used throughout:
//!
//! - Everything is reported as a minimization loss (negated objectives).
//! - Token-level normalization divides by the total token count of the batch,
//!   including masked tokens, so masking changes which tokens contribute but
//!   never the scale.
//! - The snapshot (sampling-time) distribution is a constant: no gradient
//!   flows through the importance-ratio denominator, and under one update per
//!   rollout batch the ratio is exactly 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    self, grad_coefficient, k2_value, k3_value, topk_kl_grad_coefs, topk_kl_value,
    topk_teacher_renorm, EstimatorKind,
};
use crate::policy::{entropy, PolicyParams, TeacherPolicy, Trajectory};

/// Advantages below this spread are treated as degenerate (all equal rewards,
/// no learning signal).
pub const DEGENERATE_STD: f64 = 1e-8;

/// G trajectories for one question plus their standardized advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub question_id: String,
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
    /// All rewards equal; advantages are identically zero.
    pub degenerate: bool,
    /// Rewards actually fed to the advantage computation in reward-shaping
    /// mode (`r + beta * sum_t R_t`); `None` when shaping is off.
    pub shaped_rewards: Option<Vec<f64>>,
}

impl RolloutGroup {
    /// Build a group from scored trajectories, deriving advantages from the
    /// shaped rewards when provided and the raw outcome rewards otherwise.
    pub fn new(
        question_id: String,
        trajectories: Vec<Trajectory>,
        shaped_rewards: Option<Vec<f64>>,
    ) -> Result<Self> {
        let rewards: Vec<f64> = match &shaped_rewards {
            Some(shaped) => shaped.clone(),
            None => trajectories.iter().map(|t| t.reward).collect(),
        };
        let (advantages, degenerate) = group_advantages(&rewards)?;
        Ok(RolloutGroup {
            question_id,
            trajectories,
            advantages,
            degenerate,
            shaped_rewards,
        })
    }

    fn token_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// Standardize rewards within a group: `(r - mean) / std` with the population
/// standard deviation. All-equal rewards yield zero advantages and set the
/// degenerate flag.
pub fn group_advantages(rewards: &[f64]) -> Result<(Vec<f64>, bool)> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < DEGENERATE_STD {
        return Ok((vec![0.0; g], true));
    }
    Ok((rewards.iter().map(|r| (r - mean) / std).collect(), false))
}

/// Shaped rewards `r_i + beta * sum_t R_{i,t}`, the reward-shaping route for
/// injecting teacher signal. The log-ratio sums are taken at sampling time
/// and treated as data.
pub fn shape_rewards(rewards: &[f64], log_ratio_sums: &[f64], beta: f64) -> Result<Vec<f64>> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "shaping beta must be finite and >= 0, got {beta}"
        )));
    }
    Ok(rewards
        .iter()
        .zip(log_ratio_sums)
        .map(|(r, s)| r + beta * s)
        .collect())
}

/// Per-trajectory KD mask, response level: distillation stays active exactly
/// on zero-reward responses.
pub fn response_mask(group: &RolloutGroup) -> Vec<bool> {
    group
        .trajectories
        .iter()
        .map(|t| t.reward == 0.0)
        .collect()
}

/// Per-trajectory KD mask, group level: distillation stays active for the
/// whole group only when every response failed.
pub fn group_mask(group: &RolloutGroup) -> Vec<bool> {
    let all_failed = group.trajectories.iter().all(|t| t.reward == 0.0);
    vec![all_failed; group.trajectories.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingMode {
    None,
    Response,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    GrpoOnly,
    RklOnly,
    Sft,
    RewardShaping,
    JointKdrl,
}

impl ObjectiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            ObjectiveKind::GrpoOnly => "grpo-only",
            ObjectiveKind::RklOnly => "rkl-only",
            ObjectiveKind::Sft => "sft",
            ObjectiveKind::RewardShaping => "reward-shaping",
            ObjectiveKind::JointKdrl => "joint-kdrl",
        }
    }
}

/// Objective selection: which losses are assembled, which estimator carries
/// the KD term, which mask gates it, and the entropy bonus weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMode {
    pub kind: ObjectiveKind,
    pub estimator: Option<EstimatorKind>,
    pub masking: MaskingMode,
    pub entropy_coef: f64,
}

impl ObjectiveMode {
    pub fn validate(&self) -> Result<()> {
        if !self.entropy_coef.is_finite() || self.entropy_coef < 0.0 {
            return Err(Error::InvalidObjective(format!(
                "entropy coefficient must be finite and >= 0, got {}",
                self.entropy_coef
            )));
        }
        let kd_active = matches!(self.kind, ObjectiveKind::RklOnly | ObjectiveKind::JointKdrl);
        if self.masking != MaskingMode::None && !kd_active {
            return Err(Error::InvalidObjective(format!(
                "masking requires a KD objective, not `{}`",
                self.kind.name()
            )));
        }
        if kd_active {
            match self.estimator {
                None => {
                    return Err(Error::InvalidObjective(format!(
                        "`{}` requires an estimator kind",
                        self.kind.name()
                    )))
                }
                Some(est) => {
                    est.validate()?;
                    if est == EstimatorKind::K1 {
                        return Err(Error::EstimatorNotAllowed {
                            estimator: "k1".into(),
                            objective: self.kind.name().into(),
                            reason: "the direct estimator is exposed for value estimation and \
                                     reward shaping only"
                                .into(),
                        });
                    }
                }
            }
        } else if self.estimator.is_some() {
            return Err(Error::InvalidObjective(format!(
                "`{}` does not take an estimator kind",
                self.kind.name()
            )));
        }
        Ok(())
    }

    /// Whether rollouts must be scored by a teacher before loss evaluation.
    pub fn needs_teacher(&self) -> bool {
        matches!(
            self.kind,
            ObjectiveKind::RklOnly
                | ObjectiveKind::JointKdrl
                | ObjectiveKind::RewardShaping
                | ObjectiveKind::Sft
        )
    }

    /// Whether the entropy bonus participates in the loss. Pure distillation
    /// and SFT run without it.
    pub fn entropy_active(&self) -> bool {
        matches!(
            self.kind,
            ObjectiveKind::GrpoOnly | ObjectiveKind::RewardShaping | ObjectiveKind::JointKdrl
        )
    }
}

/// Loss components and the assembled parameter gradient, all in minimization
/// convention. `total = grpo + beta * kd + entropy_loss`, composed per mode.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    /// Negated group-relative objective (0 when the mode has no RL term).
    pub grpo: f64,
    /// Token-normalized KD penalty value before `beta` weighting (0 when the
    /// mode has no KD term).
    pub kd: f64,
    /// `-entropy_coef * mean token entropy` when the bonus is active, else 0.
    pub entropy_loss: f64,
    /// Mean per-token policy entropy over the batch (always reported).
    pub mean_token_entropy: f64,
    /// `beta` used for composition.
    pub beta: f64,
    /// Per-token KD estimator values on unmasked tokens, for diagnostics.
    pub kd_unmasked: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl LossReport {
    fn zeroed(params: &PolicyParams) -> Self {
        LossReport {
            total: 0.0,
            grpo: 0.0,
            kd: 0.0,
            entropy_loss: 0.0,
            mean_token_entropy: 0.0,
            beta: 0.0,
            kd_unmasked: Vec::new(),
            gradient: vec![0.0; params.param_len()],
        }
    }

    /// Mean KD value over unmasked tokens (0 when everything is masked).
    pub fn kd_unmasked_mean(&self) -> f64 {
        if self.kd_unmasked.is_empty() {
            0.0
        } else {
            self.kd_unmasked.iter().sum::<f64>() / self.kd_unmasked.len() as f64
        }
    }
}

fn batch_token_count(groups: &[RolloutGroup]) -> Result<usize> {
    let n: usize = groups.iter().map(RolloutGroup::token_count).sum();
    if n == 0 {
        return Err(Error::EmptyBatch("no tokens in rollout batch".into()));
    }
    Ok(n)
}

fn check_snapshot_logps(groups: &[RolloutGroup]) -> Result<()> {
    for group in groups {
        for traj in &group.trajectories {
            if traj.student_logps.len() != traj.response.len() {
                return Err(Error::InvalidArgument(format!(
                    "trajectory for `{}` is missing snapshot log-probs",
                    group.question_id
                )));
            }
        }
    }
    Ok(())
}

/// Group-relative policy-gradient loss.
///
/// Objective value: `sum_{i,t} rho_{i,t} * A_i / sum_i |o_i|` with the
/// importance ratio taken between `params` and the snapshot log-probs stored
/// on the trajectories. The per-token gradient is `A_i * dlogpi(o_t)`, with
/// the ratio pinned at its snapshot value of 1. Returned negated.
pub fn grpo_loss(params: &PolicyParams, groups: &[RolloutGroup]) -> Result<LossReport> {
    check_snapshot_logps(groups)?;
    let normalizer = batch_token_count(groups)? as f64;
    let mut objective = 0.0;
    let mut report = LossReport::zeroed(params);
    for group in groups {
        for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
            for (t, &token) in traj.response.iter().enumerate() {
                let ctx = traj.context_at(params, t);
                let current_logp = params.log_prob(&ctx, token, 1.0)?;
                let ratio = (current_logp - traj.student_logps[t]).exp();
                objective += ratio * adv;
                if adv != 0.0 {
                    params.accumulate_log_prob_grad(
                        &ctx,
                        token,
                        -adv / normalizer,
                        &mut report.gradient,
                    )?;
                }
            }
        }
    }
    report.grpo = -objective / normalizer;
    report.total = report.grpo;
    Ok(report)
}

/// Reverse-KL distillation loss (the KD component alone, before `beta`).
///
/// Per unmasked token the value is the estimator applied to
/// `R = ln pi_T(o_t) - ln pi(o_t)` at the current parameters, and the
/// gradient is the estimator's coefficient times `dlogpi(o_t)` (the top-K
/// form spans the vocabulary instead). Masked tokens contribute exactly zero
/// value and gradient but still count in the normalizer.
pub fn rkl_loss(
    params: &PolicyParams,
    teacher: &TeacherPolicy,
    groups: &[RolloutGroup],
    estimator: EstimatorKind,
    masking: MaskingMode,
) -> Result<LossReport> {
    estimator.validate()?;
    if estimator == EstimatorKind::K1 {
        return Err(Error::EstimatorNotAllowed {
            estimator: "k1".into(),
            objective: "rkl loss".into(),
            reason: "the direct estimator is exposed for value estimation and reward shaping only"
                .into(),
        });
    }
    check_snapshot_logps(groups)?;
    let normalizer = batch_token_count(groups)? as f64;
    let mut report = LossReport::zeroed(params);
    let mut kd_sum = 0.0;
    for group in groups {
        let mask = match masking {
            MaskingMode::None => vec![true; group.trajectories.len()],
            MaskingMode::Response => response_mask(group),
            MaskingMode::Group => group_mask(group),
        };
        for (traj, &kd_active) in group.trajectories.iter().zip(&mask) {
            if !kd_active {
                continue;
            }
            let teacher_logps = traj
                .teacher_logps
                .as_ref()
                .ok_or(Error::MissingTeacherScores)?;
            for (t, &token) in traj.response.iter().enumerate() {
                let ctx = traj.context_at(params, t);
                match estimator {
                    EstimatorKind::K2 | EstimatorKind::K3 => {
                        let log_ratio = teacher_logps[t] - params.log_prob(&ctx, token, 1.0)?;
                        let value = match estimator {
                            EstimatorKind::K2 => k2_value(log_ratio),
                            _ => k3_value(log_ratio),
                        };
                        kd_sum += value;
                        report.kd_unmasked.push(value);
                        let coef = grad_coefficient(estimator, log_ratio)?;
                        params.accumulate_log_prob_grad(
                            &ctx,
                            token,
                            coef / normalizer,
                            &mut report.gradient,
                        )?;
                    }
                    EstimatorKind::TopK { k } => {
                        let student_dist = params.distribution(&ctx, 1.0)?;
                        let teacher_ctx = traj.context_at(teacher.params(), t);
                        let teacher_dist = teacher.params().distribution(&teacher_ctx, 1.0)?;
                        let k = k.min(teacher_dist.len());
                        let renormed = topk_teacher_renorm(&teacher_dist, k)?;
                        let value = topk_kl_value(&student_dist, &renormed)?;
                        kd_sum += value;
                        report.kd_unmasked.push(value);
                        let mut coefs = topk_kl_grad_coefs(&student_dist, &renormed);
                        for c in &mut coefs {
                            *c /= normalizer;
                        }
                        params.accumulate_distribution_grad(&ctx, &coefs, &mut report.gradient)?;
                    }
                    EstimatorKind::K1 => unreachable!("rejected above"),
                }
            }
        }
    }
    report.kd = kd_sum / normalizer;
    report.total = report.kd;
    Ok(report)
}

/// Forward-KL fine-tuning on teacher-sampled sequences: negative mean
/// per-token student log-likelihood, length-normalized per sequence and then
/// averaged over the batch.
pub fn sft_loss(params: &PolicyParams, sequences: &[Trajectory]) -> Result<LossReport> {
    if sequences.is_empty() {
        return Err(Error::EmptyBatch("sft batch is empty".into()));
    }
    let batch = sequences.len() as f64;
    let mut report = LossReport::zeroed(params);
    let mut loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut tokens = 0usize;
    for seq in sequences {
        if seq.is_empty() {
            return Err(Error::EmptyBatch("sft sequence has no tokens".into()));
        }
        let len = seq.len() as f64;
        for (t, &token) in seq.response.iter().enumerate() {
            let ctx = seq.context_at(params, t);
            loss += -params.log_prob(&ctx, token, 1.0)? / (batch * len);
            params.accumulate_log_prob_grad(
                &ctx,
                token,
                -1.0 / (batch * len),
                &mut report.gradient,
            )?;
            entropy_sum += entropy(&params.distribution(&ctx, 1.0)?);
            tokens += 1;
        }
    }
    report.grpo = 0.0;
    report.total = loss;
    // Reuse the KD slot for the likelihood term so logs stay uniform.
    report.kd = loss;
    report.mean_token_entropy = entropy_sum / tokens as f64;
    Ok(report)
}

/// Entropy bonus: adds `-coef * mean token entropy` to the loss. Returns
/// `(loss term, mean entropy)` and accumulates the gradient in place.
fn entropy_bonus(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    coef: f64,
    gradient: &mut [f64],
) -> Result<(f64, f64)> {
    let normalizer = batch_token_count(groups)? as f64;
    let mut entropy_sum = 0.0;
    for group in groups {
        for traj in &group.trajectories {
            for t in 0..traj.len() {
                let ctx = traj.context_at(params, t);
                let dist = params.distribution(&ctx, 1.0)?;
                entropy_sum += entropy(&dist);
                if coef != 0.0 {
                    // d(entropy)/dtheta = sum_v (-p_v ln p_v) dlogpi(v); the
                    // loss carries -coef/N of it.
                    let coefs: Vec<f64> = dist
                        .iter()
                        .map(|&p| {
                            if p > 0.0 {
                                coef / normalizer * p * p.ln()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    params.accumulate_distribution_grad(&ctx, &coefs, gradient)?;
                }
            }
        }
    }
    let mean = entropy_sum / normalizer;
    Ok((-coef * mean, mean))
}

/// Joint loss: GRPO plus `beta` times the KD penalty plus the entropy bonus,
/// all on the same batch. The gradient is the exact sum of the component
/// gradients.
pub fn kdrl_loss(
    params: &PolicyParams,
    teacher: &TeacherPolicy,
    groups: &[RolloutGroup],
    mode: &ObjectiveMode,
    beta: f64,
) -> Result<LossReport> {
    if mode.kind != ObjectiveKind::JointKdrl {
        return Err(Error::InvalidObjective(format!(
            "kdrl_loss requires mode `joint-kdrl`, got `{}`",
            mode.kind.name()
        )));
    }
    mode.validate()?;
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and >= 0, got {beta}"
        )));
    }
    let estimator = mode.estimator.expect("validated above");

    let mut report = grpo_loss(params, groups)?;
    let kd = rkl_loss(params, teacher, groups, estimator, mode.masking)?;
    report.kd = kd.kd;
    report.kd_unmasked = kd.kd_unmasked;
    report.beta = beta;
    if beta != 0.0 {
        for (g, k) in report.gradient.iter_mut().zip(&kd.gradient) {
            *g += beta * k;
        }
    }
    let (entropy_loss, mean_entropy) =
        entropy_bonus(params, groups, mode.entropy_coef, &mut report.gradient)?;
    report.entropy_loss = entropy_loss;
    report.mean_token_entropy = mean_entropy;
    report.total = report.grpo + beta * report.kd + report.entropy_loss;
    Ok(report)
}

/// Evaluate the configured objective on a rollout batch. SFT is excluded
/// (it consumes teacher-sampled sequences, not rollout groups).
pub fn evaluate_objective(
    params: &PolicyParams,
    teacher: Option<&TeacherPolicy>,
    groups: &[RolloutGroup],
    mode: &ObjectiveMode,
    beta: f64,
) -> Result<LossReport> {
    mode.validate()?;
    match mode.kind {
        ObjectiveKind::GrpoOnly | ObjectiveKind::RewardShaping => {
            let mut report = grpo_loss(params, groups)?;
            let (entropy_loss, mean_entropy) =
                entropy_bonus(params, groups, mode.entropy_coef, &mut report.gradient)?;
            report.entropy_loss = entropy_loss;
            report.mean_token_entropy = mean_entropy;
            report.beta = beta;
            if mode.kind == ObjectiveKind::RewardShaping {
                // Diagnostic only: mean k2 value on the shaped batch.
                report.kd_unmasked = k2_values(params, groups)?;
            }
            report.total = report.grpo + report.entropy_loss;
            Ok(report)
        }
        ObjectiveKind::RklOnly => {
            let teacher = teacher.ok_or(Error::MissingTeacherScores)?;
            let estimator = mode.estimator.expect("validated");
            let mut report = rkl_loss(params, teacher, groups, estimator, mode.masking)?;
            report.beta = beta;
            if beta != 1.0 {
                for g in &mut report.gradient {
                    *g *= beta;
                }
            }
            let (_, mean_entropy) = entropy_bonus(params, groups, 0.0, &mut report.gradient)?;
            report.mean_token_entropy = mean_entropy;
            report.total = beta * report.kd;
            Ok(report)
        }
        ObjectiveKind::JointKdrl => {
            let teacher = teacher.ok_or(Error::MissingTeacherScores)?;
            kdrl_loss(params, teacher, groups, mode, beta)
        }
        ObjectiveKind::Sft => Err(Error::InvalidObjective(
            "sft consumes teacher-sampled sequences; call sft_loss".into(),
        )),
    }
}

fn k2_values(params: &PolicyParams, groups: &[RolloutGroup]) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for group in groups {
        for traj in &group.trajectories {
            let Some(teacher_logps) = traj.teacher_logps.as_ref() else {
                return Ok(Vec::new());
            };
            for (t, &token) in traj.response.iter().enumerate() {
                let ctx = traj.context_at(params, t);
                let log_ratio = teacher_logps[t] - params.log_prob(&ctx, token, 1.0)?;
                values.push(k2_value(log_ratio));
            }
        }
    }
    Ok(values)
}

/// Mean estimator value over unmasked tokens without touching gradients;
/// used by the masked-KL training metric.
pub fn masked_kd_value(report: &LossReport) -> f64 {
    report.kd_unmasked_mean()
}

// Re-exported so callers configuring top-K defaults see one constant.
pub use estimators::TEACHER_PROB_FLOOR;
