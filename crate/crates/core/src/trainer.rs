//! The training loop: rollout generation, teacher scoring, reward assignment,
//! objective evaluation, parameter updates, metrics, and teacher construction.
//!
//! Determinism contract: every sampled token is drawn from an RNG stream
//! derived from `(seed, step, question index, rollout index)`, loss evaluation
//! and the update are single-threaded per step, and metrics aggregation uses
//! a fixed reduction order. Two runs with the same config and seed produce
//! byte-identical metrics streams.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{
    evaluate_objective, sft_loss, shape_rewards, LossReport, ObjectiveKind, ObjectiveMode,
    RolloutGroup,
};
use crate::policy::{
    sample_sequence, save_checkpoint, score_with_teacher, PolicyParams, PolicySnapshot,
    SamplerSettings, TeacherPolicy, TeacherProvenance, Trajectory,
};
use crate::rng;
use crate::schedule::BetaSchedule;
use crate::tasks::{estimate_pass_rate, verify, TaskInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Everything the training loop needs besides the task and teacher.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mode: ObjectiveMode,
    pub group_size: usize,
    pub questions_per_step: usize,
    pub max_response_len: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub total_steps: usize,
    pub beta: BetaSchedule,
    pub seed: u64,
    pub ema_alpha: f64,
    pub checkpoint_every: usize,
    pub grad_clip_norm: Option<f64>,
    /// In SFT mode, keep only teacher samples the verifier accepts.
    pub sft_reject_filter: bool,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        self.beta.validate()?;
        if self.group_size < 2 {
            return Err(Error::InvalidConfig("group_size must be >= 2".into()));
        }
        if self.questions_per_step < 1 {
            return Err(Error::InvalidConfig("questions_per_step must be >= 1".into()));
        }
        if self.max_response_len < 1 {
            return Err(Error::InvalidConfig("max_response_len must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::InvalidConfig("temperature must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::InvalidConfig("ema_alpha must be in [0, 1)".into()));
        }
        if self.total_steps < 1 {
            return Err(Error::InvalidConfig("total_steps must be >= 1".into()));
        }
        if let Some(clip) = self.grad_clip_norm {
            if clip.is_nan() || clip <= 0.0 {
                return Err(Error::InvalidConfig("grad_clip_norm must be > 0".into()));
            }
        }
        Ok(())
    }

    fn sampler(&self, eos: usize) -> SamplerSettings {
        SamplerSettings {
            max_len: self.max_response_len,
            temperature: self.temperature,
            eos,
        }
    }
}

/// Plain SGD or adaptive-moment updates over the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    grad_clip_norm: Option<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, grad_clip_norm: Option<f64>, dim: usize) -> Self {
        Optimizer {
            kind,
            learning_rate,
            grad_clip_norm,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            steps: 0,
        }
    }

    pub fn apply(&mut self, params: &mut PolicyParams, gradient: &[f64]) {
        let mut scale = 1.0;
        if let Some(max_norm) = self.grad_clip_norm {
            let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.params_mut().iter_mut().zip(gradient) {
                    *p -= self.learning_rate * scale * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let bias1 = 1.0 - ADAM_BETA1.powi(t);
                let bias2 = 1.0 - ADAM_BETA2.powi(t);
                for ((p, &g), (m, v)) in params
                    .params_mut()
                    .iter_mut()
                    .zip(gradient)
                    .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
                {
                    let g = g * scale;
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Per-step training metrics. Field names are the stable wire schema of the
/// metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub reward_mean: f64,
    pub reward_ema: f64,
    pub resp_len_mean: f64,
    pub resp_len_ema: f64,
    /// Fraction of responses truncated at the maximum length.
    pub clip_ratio: f64,
    /// Fraction of truncated responses dominated by a single 4-gram.
    pub repetition_rate: f64,
    /// Mean KD estimator value over unmasked tokens.
    pub kd_loss_unmasked: f64,
    pub entropy: f64,
    pub beta: f64,
    pub loss_total: f64,
    pub loss_grpo: f64,
    pub loss_kd: f64,
    pub loss_entropy: f64,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics are serializable")
    }
}

/// Fraction of response positions covered by occurrences of the most frequent
/// 4-gram, provided that 4-gram actually repeats. A gram seen once covers a
/// third of a short response without indicating a loop, so single occurrences
/// score 0; ties on the count break deterministically by gram content.
fn dominant_four_gram_coverage(response: &[usize]) -> f64 {
    if response.len() < 4 {
        return 0.0;
    }
    let mut counts: std::collections::BTreeMap<&[usize], Vec<usize>> =
        std::collections::BTreeMap::new();
    for start in 0..=response.len() - 4 {
        counts
            .entry(&response[start..start + 4])
            .or_default()
            .push(start);
    }
    let starts = counts
        .into_values()
        .max_by_key(|starts| starts.len())
        .expect("at least one 4-gram");
    if starts.len() < 2 {
        return 0.0;
    }
    let mut covered = vec![false; response.len()];
    for start in starts {
        for slot in covered.iter_mut().skip(start).take(4) {
            *slot = true;
        }
    }
    covered.iter().filter(|&&c| c).count() as f64 / response.len() as f64
}

const REPETITION_COVERAGE: f64 = 0.25;

/// Aggregate a rollout batch and a loss report into one metrics record.
/// `ema_prev` carries `(reward_ema, len_ema)` from the previous step.
pub fn compute_metrics(
    groups: &[RolloutGroup],
    report: &LossReport,
    step: usize,
    beta: f64,
    ema_alpha: f64,
    ema_prev: Option<(f64, f64)>,
) -> MetricsRecord {
    let mut n = 0usize;
    let mut reward_sum = 0.0;
    let mut len_sum = 0.0;
    let mut truncated = 0usize;
    let mut repetitive = 0usize;
    for group in groups {
        for traj in &group.trajectories {
            n += 1;
            reward_sum += traj.reward;
            len_sum += traj.len() as f64;
            if traj.truncated {
                truncated += 1;
                if dominant_four_gram_coverage(&traj.response) > REPETITION_COVERAGE {
                    repetitive += 1;
                }
            }
        }
    }
    let denom = n.max(1) as f64;
    let reward_mean = reward_sum / denom;
    let resp_len_mean = len_sum / denom;
    let clip_ratio = truncated as f64 / denom;
    let repetition_rate = if truncated == 0 {
        0.0
    } else {
        repetitive as f64 / truncated as f64
    };
    let (reward_ema, resp_len_ema) = match ema_prev {
        Some((r, l)) => (
            ema_alpha * r + (1.0 - ema_alpha) * reward_mean,
            ema_alpha * l + (1.0 - ema_alpha) * resp_len_mean,
        ),
        None => (reward_mean, resp_len_mean),
    };
    MetricsRecord {
        step,
        reward_mean,
        reward_ema,
        resp_len_mean,
        resp_len_ema,
        clip_ratio,
        repetition_rate,
        kd_loss_unmasked: report.kd_unmasked_mean(),
        entropy: report.mean_token_entropy,
        beta,
        loss_total: report.total,
        loss_grpo: report.grpo,
        loss_kd: report.kd,
        loss_entropy: report.entropy_loss,
    }
}

/// Deterministically pick `count` distinct question indices for a step.
fn select_questions(total: usize, count: usize, seed: u64, step: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..total).collect();
    let count = count.min(total);
    let mut stream = rng::stream(seed, &[rng::label("question-select"), step as u64]);
    for j in 0..count {
        let pick = j + rand::Rng::random_range(&mut stream, 0..total - j);
        indices.swap(j, pick);
    }
    indices.truncate(count);
    indices
}

/// Generate one step's rollout batch: for each selected question, `G`
/// responses sampled from a snapshot of the current parameters, verified,
/// teacher-scored when the mode calls for it, and grouped with advantages
/// (computed from shaped rewards in reward-shaping mode).
///
/// In SFT mode the generator is the teacher, optionally reject-filtered by
/// the verifier; advantages are not used.
pub fn rollout_step(
    params: &PolicyParams,
    teacher: Option<&TeacherPolicy>,
    task: &TaskInstance,
    config: &TrainingConfig,
    step: usize,
    beta: f64,
) -> Result<Vec<RolloutGroup>> {
    if config.mode.needs_teacher() && teacher.is_none() {
        return Err(Error::MissingTeacherScores);
    }
    let snapshot = PolicySnapshot::of(params);
    let sampler = config.sampler(task.vocab.eos);
    let selected = select_questions(
        task.questions.len(),
        config.questions_per_step,
        config.seed,
        step,
    );

    let mut groups = Vec::with_capacity(selected.len());
    for q_idx in selected {
        let question = &task.questions[q_idx];
        let mut trajectories = Vec::with_capacity(config.group_size);
        for rollout in 0..config.group_size {
            let mut stream = rng::stream(
                config.seed,
                &[
                    rng::label("rollout"),
                    step as u64,
                    q_idx as u64,
                    rollout as u64,
                ],
            );
            let generator = match config.mode.kind {
                ObjectiveKind::Sft => teacher.expect("checked above").params(),
                _ => snapshot.params(),
            };
            let mut traj = sample_sequence(generator, question, &sampler, &mut stream)?;
            traj.reward = verify(&traj.response, question, &task.vocab).reward();
            if config.mode.needs_teacher() && config.mode.kind != ObjectiveKind::Sft {
                score_with_teacher(&mut traj, teacher.expect("checked above"))?;
            }
            trajectories.push(traj);
        }

        if config.mode.kind == ObjectiveKind::Sft {
            if config.sft_reject_filter {
                trajectories.retain(|t| t.reward == 1.0);
            }
            if trajectories.is_empty() {
                continue;
            }
            let n = trajectories.len();
            groups.push(RolloutGroup {
                question_id: question.id.clone(),
                trajectories,
                advantages: vec![0.0; n],
                degenerate: true,
                shaped_rewards: None,
            });
            continue;
        }

        let shaped = if config.mode.kind == ObjectiveKind::RewardShaping {
            let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward).collect();
            let sums: Vec<f64> = trajectories
                .iter()
                .map(Trajectory::log_ratio_sum)
                .collect::<Result<_>>()?;
            Some(shape_rewards(&rewards, &sums, beta)?)
        } else {
            None
        };
        groups.push(RolloutGroup::new(
            question.id.clone(),
            trajectories,
            shaped,
        )?);
    }
    Ok(groups)
}

fn attribute_non_finite(
    params: &PolicyParams,
    teacher: Option<&TeacherPolicy>,
    groups: &[RolloutGroup],
    mode: &ObjectiveMode,
    beta: f64,
) -> String {
    for group in groups {
        let probe = std::slice::from_ref(group);
        let bad = match mode.kind {
            ObjectiveKind::Sft => sft_loss(params, &group.trajectories),
            _ => evaluate_objective(params, teacher, probe, mode, beta),
        };
        match bad {
            Ok(report)
                if report.total.is_finite()
                    && report.gradient.iter().all(|g| g.is_finite()) => {}
            _ => {
                eprintln!("offending rollout group dump: {group:#?}");
                return group.question_id.clone();
            }
        }
    }
    "<unattributed>".into()
}

/// Evaluate the configured loss on a batch, apply one optimizer update, and
/// emit metrics. Non-finite losses or gradients abort with a diagnostic dump
/// of the offending group.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut PolicyParams,
    optimizer: &mut Optimizer,
    teacher: Option<&TeacherPolicy>,
    groups: &[RolloutGroup],
    config: &TrainingConfig,
    step: usize,
    beta: f64,
    ema_prev: Option<(f64, f64)>,
) -> Result<(LossReport, MetricsRecord)> {
    if groups.is_empty() {
        // Everything was filtered away (possible under SFT rejection); emit
        // an empty record and skip the update.
        let report = LossReport {
            total: 0.0,
            grpo: 0.0,
            kd: 0.0,
            entropy_loss: 0.0,
            mean_token_entropy: 0.0,
            beta,
            kd_unmasked: Vec::new(),
            gradient: vec![0.0; params.param_len()],
        };
        let metrics = compute_metrics(&[], &report, step, beta, config.ema_alpha, ema_prev);
        return Ok((report, metrics));
    }

    let report = match config.mode.kind {
        ObjectiveKind::Sft => {
            let sequences: Vec<Trajectory> = groups
                .iter()
                .flat_map(|g| g.trajectories.iter().cloned())
                .collect();
            sft_loss(params, &sequences)?
        }
        _ => evaluate_objective(params, teacher, groups, &config.mode, beta)?,
    };

    if !report.total.is_finite() || report.gradient.iter().any(|g| !g.is_finite()) {
        let question_id = attribute_non_finite(params, teacher, groups, &config.mode, beta);
        return Err(Error::NonFiniteLoss {
            step,
            question_id,
            detail: format!("total = {}", report.total),
        });
    }

    optimizer.apply(params, &report.gradient);
    let metrics = compute_metrics(groups, &report, step, beta, config.ema_alpha, ema_prev);
    Ok((report, metrics))
}

/// A full training run over a task.
pub struct TrainRun<'a> {
    pub task: &'a TaskInstance,
    pub teacher: Option<&'a TeacherPolicy>,
    pub init: PolicyParams,
    pub config: &'a TrainingConfig,
    /// When set, the run writes `manifest.json`, `metrics.jsonl`, and
    /// checkpoints under this directory as it goes.
    pub out_dir: Option<&'a Path>,
    /// Manifest document to persist before the first step.
    pub manifest: Option<serde_json::Value>,
}

pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<MetricsRecord>,
}

struct RunWriter {
    metrics: Option<std::fs::File>,
    out_dir: Option<PathBuf>,
}

impl RunWriter {
    fn create(out_dir: Option<&Path>, manifest: Option<&serde_json::Value>) -> Result<Self> {
        let Some(dir) = out_dir else {
            return Ok(RunWriter {
                metrics: None,
                out_dir: None,
            });
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        if let Some(doc) = manifest {
            let path = dir.join("manifest.json");
            let body = serde_json::to_string_pretty(doc)?;
            std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        let metrics_path = dir.join("metrics.jsonl");
        let metrics = std::fs::File::create(&metrics_path)
            .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
        Ok(RunWriter {
            metrics: Some(metrics),
            out_dir: Some(dir.to_path_buf()),
        })
    }

    fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some(file) = &mut self.metrics {
            let mut line = record.to_json_line();
            line.push('\n');
            file.write_all(line.as_bytes())
                .map_err(|e| Error::io("metrics.jsonl", e))?;
        }
        Ok(())
    }

    fn checkpoint(&self, params: &PolicyParams, step: usize, final_step: bool) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            let name = if final_step {
                "policy-final.json".to_string()
            } else {
                format!("policy-step-{step:05}.json")
            };
            save_checkpoint(params, step, None, &dir.join(name))?;
        }
        Ok(())
    }
}

/// Execute a full training run: `total_steps` iterations of rollout, loss,
/// update, metrics, with periodic checkpoints. Fully reproducible from
/// `(config, seed)`; on abort the metrics written so far remain on disk.
pub fn run_training(run: TrainRun<'_>) -> Result<TrainOutcome> {
    run.config.validate()?;
    run.init.validate_finite()?;
    if run.config.mode.needs_teacher() && run.teacher.is_none() {
        return Err(Error::MissingTeacherScores);
    }
    if run.task.questions.is_empty() {
        return Err(Error::EmptyBatch("task has no questions".into()));
    }

    let mut writer = RunWriter::create(run.out_dir, run.manifest.as_ref())?;
    let mut params = run.init;
    let mut optimizer = Optimizer::new(
        run.config.optimizer,
        run.config.learning_rate,
        run.config.grad_clip_norm,
        params.param_len(),
    );
    let mut metrics = Vec::with_capacity(run.config.total_steps);
    let mut ema_prev = None;

    for step in 0..run.config.total_steps {
        let beta = run.config.beta.beta_at(step);
        let groups = rollout_step(&params, run.teacher, run.task, run.config, step, beta)?;
        let (_, record) = train_step(
            &mut params,
            &mut optimizer,
            run.teacher,
            &groups,
            run.config,
            step,
            beta,
            ema_prev,
        )?;
        ema_prev = Some((record.reward_ema, record.resp_len_ema));
        writer.append(&record)?;
        metrics.push(record);
        if run.config.checkpoint_every > 0
            && (step + 1) % run.config.checkpoint_every == 0
            && step + 1 != run.config.total_steps
        {
            writer.checkpoint(&params, step + 1, false)?;
        }
    }
    writer.checkpoint(&params, run.config.total_steps, true)?;
    Ok(TrainOutcome { params, metrics })
}

/// Recipe for a hand-built teacher: along each question's ideal path the
/// teacher restates the answer token as its "reasoning", keeps thinking with
/// probability `think_continue`, then emits the delimiter, the answer (with
/// probability `p_gold`), and EOS.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HandBuiltTeacherSpec {
    /// Probability of the gold token at the answer position.
    pub p_gold: f64,
    /// Probability mass on the structured choice at every other ideal-path
    /// position (must be < 1 so all logits stay finite).
    pub structure_prob: f64,
    /// Probability of emitting one more reasoning token instead of the
    /// delimiter; controls mean response length.
    pub think_continue: f64,
    pub window: usize,
}

impl Default for HandBuiltTeacherSpec {
    fn default() -> Self {
        HandBuiltTeacherSpec {
            p_gold: 0.9,
            structure_prob: 0.99,
            think_continue: 0.0,
            window: 3,
        }
    }
}

fn peaked(vocab_size: usize, targets: &[(usize, f64)]) -> Vec<f64> {
    let mut probs = vec![0.0; vocab_size];
    let mut assigned = 0.0;
    for &(token, p) in targets {
        probs[token] += p;
        assigned += p;
    }
    let pool: Vec<usize> = (0..vocab_size).filter(|v| probs[*v] == 0.0).collect();
    let leftover = (1.0 - assigned).max(0.0) / pool.len().max(1) as f64;
    for v in pool {
        probs[v] = leftover;
    }
    probs
}

/// Construct a tabular teacher directly from the task's questions.
///
/// Contexts off every ideal path stay uniform. Conflicting assignments (two
/// questions whose window contents collide with different targets, possible
/// for parity prompts longer than the window) resolve first-question-wins in
/// id order.
pub fn hand_built_teacher(task: &TaskInstance, spec: &HandBuiltTeacherSpec) -> Result<TeacherPolicy> {
    if !(spec.p_gold > 0.0 && spec.p_gold < 1.0) {
        return Err(Error::InvalidConfig("p_gold must be in (0, 1)".into()));
    }
    if !(spec.structure_prob > 0.0 && spec.structure_prob < 1.0) {
        return Err(Error::InvalidConfig("structure_prob must be in (0, 1)".into()));
    }
    if !(0.0..1.0).contains(&spec.think_continue) {
        return Err(Error::InvalidConfig("think_continue must be in [0, 1)".into()));
    }
    if spec.window < 2 {
        return Err(Error::InvalidConfig(
            "hand-built teacher needs window >= 2 to read the answer back".into(),
        ));
    }
    let vocab = &task.vocab;
    let v = vocab.size;
    let mut params = PolicyParams::zeros(crate::policy::ParamKind::Tabular, v, spec.window)?;
    let mut assigned: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
    let mut assign = |ctx: Vec<usize>, probs: Vec<f64>| {
        assigned.entry(ctx).or_insert(probs);
    };

    let mut questions = task.questions.clone();
    questions.sort_by(|a, b| a.id.cmp(&b.id));
    let s = spec.structure_prob;
    let q_think = spec.think_continue;
    for question in &questions {
        let gold = question.gold;
        // First reasoning step: compute the answer from the prompt.
        let mut history = question.prompt.clone();
        assign(params.context_of(&history), peaked(v, &[(gold, s)]));
        // Carry loop: repeat the answer or move to the delimiter. Window + 1
        // pushes reach the (gold, ..., gold) fixed point.
        for _ in 0..=spec.window {
            history.push(gold);
            let carry = peaked(
                v,
                &[(gold, s * q_think), (vocab.delimiter, s * (1.0 - q_think))],
            );
            assign(params.context_of(&history), carry);
            // Delimiter branch: answer position, then EOS.
            let mut tail = history.clone();
            tail.push(vocab.delimiter);
            assign(params.context_of(&tail), peaked(v, &[(gold, spec.p_gold)]));
            tail.push(gold);
            assign(params.context_of(&tail), peaked(v, &[(vocab.eos, s)]));
        }
    }

    let vocab_size = v;
    for (ctx, probs) in assigned {
        let row = context_row(&params, &ctx) * vocab_size;
        for (token, &p) in probs.iter().enumerate() {
            params.params_mut()[row + token] = p.ln();
        }
    }
    Ok(TeacherPolicy::new(params, TeacherProvenance::HandBuilt))
}

fn context_row(params: &PolicyParams, ctx: &[usize]) -> usize {
    let base = params.vocab_size() + 1;
    ctx.iter().fold(0, |acc, &sym| acc * base + sym)
}

/// Where a teacher comes from.
#[derive(Debug, Clone)]
pub enum TeacherSpec {
    HandBuilt(HandBuiltTeacherSpec),
    /// Train a fresh policy with the pure RL objective and freeze it.
    Grpo {
        window: usize,
        config: TrainingConfig,
    },
}

/// Settings for the weak-teacher guard: mean pass rate over the task, which
/// must reach `min_pass_rate`.
#[derive(Debug, Clone, Copy)]
pub struct TeacherAcceptance {
    pub min_pass_rate: f64,
    pub n_samples: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for TeacherAcceptance {
    fn default() -> Self {
        TeacherAcceptance {
            min_pass_rate: 0.5,
            n_samples: 16,
            max_len: 16,
            seed: 0,
        }
    }
}

/// Mean pass rate of a policy over a task's questions.
pub fn mean_pass_rate(
    policy: &PolicyParams,
    task: &TaskInstance,
    n_samples: usize,
    max_len: usize,
    seed: u64,
) -> Result<f64> {
    let sampler = SamplerSettings {
        max_len,
        temperature: 1.0,
        eos: task.vocab.eos,
    };
    let mut total = 0.0;
    for question in &task.questions {
        total += estimate_pass_rate(policy, question, &task.vocab, n_samples, &sampler, seed)?;
    }
    Ok(total / task.questions.len() as f64)
}

/// Construct a teacher for a task, either hand-built or by running pure-RL
/// training, and enforce the weak-teacher guard.
pub fn build_teacher(
    task: &TaskInstance,
    spec: &TeacherSpec,
    acceptance: &TeacherAcceptance,
) -> Result<TeacherPolicy> {
    let teacher = match spec {
        TeacherSpec::HandBuilt(hand) => hand_built_teacher(task, hand)?,
        TeacherSpec::Grpo { window, config } => {
            if config.mode.kind != ObjectiveKind::GrpoOnly {
                return Err(Error::InvalidConfig(
                    "teacher construction trains with the pure RL objective".into(),
                ));
            }
            let init = PolicyParams::zeros(crate::policy::ParamKind::Tabular, task.vocab.size, *window)?;
            let outcome = run_training(TrainRun {
                task,
                teacher: None,
                init,
                config,
                out_dir: None,
                manifest: None,
            })?;
            TeacherPolicy::new(outcome.params, TeacherProvenance::GrpoTrained)
        }
    };
    let measured = mean_pass_rate(
        teacher.params(),
        task,
        acceptance.n_samples,
        acceptance.max_len,
        acceptance.seed,
    )?;
    if measured < acceptance.min_pass_rate {
        return Err(Error::WeakTeacher {
            measured,
            required: acceptance.min_pass_rate,
        });
    }
    Ok(teacher)
}
