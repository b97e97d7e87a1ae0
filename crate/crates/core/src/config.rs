//! Run configuration files, overrides, manifests, and the command
//! implementations behind the CLI.
//!
//! Configs are TOML documents with a schema version line. Parsing is strict:
//! unknown keys are rejected before any compute happens, and the resolved
//! config (after command-line overrides) is echoed verbatim into the run
//! manifest, which is enough to reproduce the run bit for bit.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::objectives::{MaskingMode, ObjectiveKind, ObjectiveMode};
use crate::oracle;
use crate::policy::{
    load_checkpoint, save_checkpoint, ParamKind, PolicyParams, SamplerSettings, TeacherPolicy,
    TeacherProvenance,
};
use crate::schedule::BetaSchedule;
use crate::tasks::{
    estimate_pass_rate, fingerprint, generate_dataset, read_dataset, TaskInstance, TaskKind,
};
use crate::trainer::{
    build_teacher, run_training, HandBuiltTeacherSpec, OptimizerKind, TeacherAcceptance,
    TeacherSpec, TrainRun, TrainingConfig,
};

pub const RUN_SCHEMA: &str = "kdrl.run/1";
pub const MANIFEST_SCHEMA: &str = "kdrl.manifest/1";
/// Environment variable naming the root under which relative output
/// directories are created.
pub const OUT_ROOT_ENV: &str = "KDRL_OUT_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub task: TaskSection,
    pub policy: PolicySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<TeacherSection>,
    pub train: TrainSection,
    pub output: OutputSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// Generate a dataset in place...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// ...or load one from disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: ParamKind,
    #[serde(default = "defaults::window")]
    pub window: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    pub source: TeacherSource,
    #[serde(default = "defaults::p_gold")]
    pub p_gold: f64,
    #[serde(default = "defaults::structure_prob")]
    pub structure_prob: f64,
    #[serde(default)]
    pub think_continue: f64,
    #[serde(default = "defaults::teacher_window")]
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "defaults::min_pass_rate")]
    pub min_pass_rate: f64,
    /// Training settings for a `grpo` teacher.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grpo: Option<TeacherGrpoSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherSource {
    HandBuilt,
    Grpo,
    Checkpoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherGrpoSection {
    pub steps: usize,
    #[serde(default = "defaults::group_size")]
    pub group_size: usize,
    #[serde(default = "defaults::questions_per_step")]
    pub questions_per_step: usize,
    #[serde(default = "defaults::max_response_len")]
    pub max_response_len: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::entropy_coef")]
    pub entropy_coef: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: ObjectiveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<usize>,
    #[serde(default = "defaults::masking")]
    pub masking: MaskingMode,
    pub group_size: usize,
    pub questions_per_step: usize,
    pub max_response_len: usize,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::optimizer")]
    pub optimizer: OptimizerKind,
    pub steps: usize,
    #[serde(default = "defaults::entropy_coef")]
    pub entropy_coef: f64,
    pub seed: u64,
    #[serde(default = "defaults::ema_alpha")]
    pub ema_alpha: f64,
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip_norm: Option<f64>,
    #[serde(default)]
    pub sft_reject_filter: bool,
    pub beta: BetaSection,
}

/// Strict config form of the KL-coefficient schedule. (A tagged enum would
/// silently swallow unknown keys, defeating the strict-validation contract.)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSection {
    pub kind: BetaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaKind {
    Constant,
    LinearAnneal,
}

impl BetaSection {
    pub fn constant(value: f64) -> Self {
        BetaSection {
            kind: BetaKind::Constant,
            value: Some(value),
            init: None,
            decay: None,
            floor: None,
        }
    }

    pub fn linear(init: f64, decay: f64, floor: f64) -> Self {
        BetaSection {
            kind: BetaKind::LinearAnneal,
            value: None,
            init: Some(init),
            decay: Some(decay),
            floor: Some(floor),
        }
    }

    pub fn to_schedule(&self) -> Result<BetaSchedule> {
        let missing = |field: &str| {
            Error::InvalidConfig(format!("train.beta.{field} is required for this kind"))
        };
        let stray = |field: &str| {
            Error::InvalidConfig(format!("train.beta.{field} does not apply to this kind"))
        };
        let schedule = match self.kind {
            BetaKind::Constant => {
                if self.init.is_some() || self.decay.is_some() || self.floor.is_some() {
                    return Err(stray("init/decay/floor"));
                }
                BetaSchedule::Constant {
                    value: self.value.ok_or_else(|| missing("value"))?,
                }
            }
            BetaKind::LinearAnneal => {
                if self.value.is_some() {
                    return Err(stray("value"));
                }
                BetaSchedule::LinearAnneal {
                    init: self.init.ok_or_else(|| missing("init"))?,
                    decay: self.decay.ok_or_else(|| missing("decay"))?,
                    floor: self.floor.ok_or_else(|| missing("floor"))?,
                }
            }
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    K1,
    K2,
    K3,
    Topk,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default = "defaults::budget")]
    pub budget: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            budget: defaults::budget(),
        }
    }
}

mod defaults {
    pub fn window() -> usize {
        3
    }
    pub fn p_gold() -> f64 {
        0.9
    }
    pub fn structure_prob() -> f64 {
        0.99
    }
    pub fn teacher_window() -> usize {
        3
    }
    pub fn min_pass_rate() -> f64 {
        0.5
    }
    pub fn group_size() -> usize {
        8
    }
    pub fn questions_per_step() -> usize {
        8
    }
    pub fn max_response_len() -> usize {
        12
    }
    pub fn learning_rate() -> f64 {
        0.1
    }
    pub fn temperature() -> f64 {
        1.0
    }
    pub fn entropy_coef() -> f64 {
        1e-3
    }
    pub fn masking() -> super::MaskingMode {
        super::MaskingMode::None
    }
    pub fn optimizer() -> super::OptimizerKind {
        super::OptimizerKind::Sgd
    }
    pub fn ema_alpha() -> f64 {
        0.9
    }
    pub fn checkpoint_every() -> usize {
        50
    }
    pub fn budget() -> f64 {
        1e6
    }
}

/// Command-line overrides that supersede file values and are echoed into the
/// manifest as part of the resolved config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub mode: Option<String>,
    /// `constant:VALUE` or `linear:INIT:DECAY:FLOOR`.
    pub beta_schedule: Option<String>,
    pub out_dir: Option<PathBuf>,
}

pub fn parse_beta_spec(spec: &str) -> Result<BetaSection> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidConfig(format!(
        "beta schedule `{spec}` (expected constant:VALUE or linear:INIT:DECAY:FLOOR)"
    ));
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let section = match parts.as_slice() {
        ["constant", value] => BetaSection::constant(num(value)?),
        ["linear", init, decay, floor] => BetaSection::linear(num(init)?, num(decay)?, num(floor)?),
        _ => return Err(bad()),
    };
    section.to_schedule()?;
    Ok(section)
}

fn parse_mode(name: &str) -> Result<ObjectiveKind> {
    Ok(match name {
        "grpo-only" => ObjectiveKind::GrpoOnly,
        "rkl-only" => ObjectiveKind::RklOnly,
        "sft" => ObjectiveKind::Sft,
        "reward-shaping" => ObjectiveKind::RewardShaping,
        "joint-kdrl" => ObjectiveKind::JointKdrl,
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown objective mode `{other}`"
            )))
        }
    })
}

pub fn apply_overrides(config: &mut RunConfig, overrides: &Overrides) -> Result<()> {
    if let Some(seed) = overrides.seed {
        config.train.seed = seed;
    }
    if let Some(steps) = overrides.steps {
        config.train.steps = steps;
    }
    if let Some(mode) = &overrides.mode {
        config.train.mode = parse_mode(mode)?;
    }
    if let Some(spec) = &overrides.beta_schedule {
        config.train.beta = parse_beta_spec(spec)?;
    }
    if let Some(dir) = &overrides.out_dir {
        config.output.dir = dir.clone();
    }
    Ok(())
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let config: RunConfig =
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    if config.schema != RUN_SCHEMA {
        return Err(Error::InvalidConfig(format!(
            "unsupported config schema `{}` (expected `{RUN_SCHEMA}`)",
            config.schema
        )));
    }
    Ok(config)
}

/// Pull the embedded resolved config back out of a run manifest.
pub fn load_config_from_manifest(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    if doc.get("schema").and_then(|s| s.as_str()) != Some(MANIFEST_SCHEMA) {
        return Err(Error::InvalidConfig(format!(
            "{} is not a `{MANIFEST_SCHEMA}` manifest",
            path.display()
        )));
    }
    let config = doc
        .get("config")
        .ok_or_else(|| Error::InvalidConfig("manifest has no embedded config".into()))?;
    Ok(serde_json::from_value(config.clone())?)
}

/// Everything a run needs, constructed and validated from a config.
pub struct ResolvedRun {
    pub config: RunConfig,
    pub task: TaskInstance,
    pub teacher: Option<TeacherPolicy>,
    pub init: PolicyParams,
    pub train: TrainingConfig,
    pub out_dir: PathBuf,
}

fn resolve_estimator(section: &TrainSection, vocab_size: usize) -> Result<Option<EstimatorKind>> {
    Ok(match section.estimator {
        None => None,
        Some(EstimatorName::K1) => Some(EstimatorKind::K1),
        Some(EstimatorName::K2) => Some(EstimatorKind::K2),
        Some(EstimatorName::K3) => Some(EstimatorKind::K3),
        Some(EstimatorName::Topk) => {
            let k = section.topk.unwrap_or_else(|| vocab_size.min(8));
            Some(EstimatorKind::TopK { k })
        }
    })
}

fn resolve_task(section: &TaskSection) -> Result<TaskInstance> {
    match (&section.dataset_path, section.kind) {
        (Some(path), None) => read_dataset(path),
        (None, Some(kind)) => {
            let vocab_size = section.vocab_size.ok_or_else(|| {
                Error::InvalidConfig("task.vocab_size is required when generating".into())
            })?;
            let count = section
                .count
                .ok_or_else(|| Error::InvalidConfig("task.count is required when generating".into()))?;
            let vocab = crate::tasks::Vocabulary::new(vocab_size)?;
            generate_dataset(kind, vocab, count, section.seed.unwrap_or(0))
        }
        (Some(_), Some(_)) => Err(Error::InvalidConfig(
            "task: give either dataset_path or kind, not both".into(),
        )),
        (None, None) => Err(Error::InvalidConfig(
            "task: give dataset_path or a kind to generate".into(),
        )),
    }
}

fn resolve_teacher(
    section: &TeacherSection,
    task: &TaskInstance,
    student_window: usize,
) -> Result<TeacherPolicy> {
    let acceptance = TeacherAcceptance {
        min_pass_rate: section.min_pass_rate,
        ..TeacherAcceptance::default()
    };
    match section.source {
        TeacherSource::HandBuilt => {
            if section.window < student_window {
                return Err(Error::InvalidConfig(format!(
                    "teacher window {} is smaller than the student window {student_window}",
                    section.window
                )));
            }
            build_teacher(
                task,
                &TeacherSpec::HandBuilt(HandBuiltTeacherSpec {
                    p_gold: section.p_gold,
                    structure_prob: section.structure_prob,
                    think_continue: section.think_continue,
                    window: section.window,
                }),
                &acceptance,
            )
        }
        TeacherSource::Grpo => {
            if section.window < student_window {
                return Err(Error::InvalidConfig(format!(
                    "teacher window {} is smaller than the student window {student_window}",
                    section.window
                )));
            }
            let grpo = section.grpo.as_ref().ok_or_else(|| {
                Error::InvalidConfig("teacher.grpo settings are required for a grpo teacher".into())
            })?;
            let config = TrainingConfig {
                mode: ObjectiveMode {
                    kind: ObjectiveKind::GrpoOnly,
                    estimator: None,
                    masking: MaskingMode::None,
                    entropy_coef: grpo.entropy_coef,
                },
                group_size: grpo.group_size,
                questions_per_step: grpo.questions_per_step,
                max_response_len: grpo.max_response_len,
                temperature: grpo.temperature,
                learning_rate: grpo.learning_rate,
                optimizer: OptimizerKind::Sgd,
                total_steps: grpo.steps,
                beta: BetaSchedule::Constant { value: 0.0 },
                seed: grpo.seed,
                ema_alpha: defaults::ema_alpha(),
                checkpoint_every: 0,
                grad_clip_norm: None,
                sft_reject_filter: false,
            };
            build_teacher(
                task,
                &TeacherSpec::Grpo {
                    window: section.window,
                    config,
                },
                &acceptance,
            )
        }
        TeacherSource::Checkpoint => {
            let path = section.path.as_ref().ok_or_else(|| {
                Error::InvalidConfig("teacher.path is required for a checkpoint teacher".into())
            })?;
            let (params, _, provenance) = load_checkpoint(path)?;
            if params.vocab_size() != task.vocab.size {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "teacher vocabulary {} does not match the task vocabulary {}",
                    params.vocab_size(),
                    task.vocab.size
                )));
            }
            if params.window() < student_window {
                return Err(Error::InvalidConfig(format!(
                    "teacher window {} is smaller than the student window {student_window}",
                    params.window()
                )));
            }
            let teacher =
                TeacherPolicy::new(params, provenance.unwrap_or(TeacherProvenance::HandBuilt));
            let measured = crate::trainer::mean_pass_rate(
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
    }
}

/// Resolve output paths against [`OUT_ROOT_ENV`] when relative.
pub fn resolve_out_dir(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(dir),
        None => dir.to_path_buf(),
    }
}

/// Validate a config end to end and construct the run pieces. No training
/// compute happens on invalid input.
pub fn resolve(config: RunConfig) -> Result<ResolvedRun> {
    if config.oracle.budget <= 0.0 {
        return Err(Error::InvalidConfig("oracle.budget must be > 0".into()));
    }
    let task = resolve_task(&config.task)?;
    let estimator = resolve_estimator(&config.train, task.vocab.size)?;
    let mode = ObjectiveMode {
        kind: config.train.mode,
        estimator,
        masking: config.train.masking,
        entropy_coef: config.train.entropy_coef,
    };
    let train = TrainingConfig {
        mode,
        group_size: config.train.group_size,
        questions_per_step: config.train.questions_per_step,
        max_response_len: config.train.max_response_len,
        temperature: config.train.temperature,
        learning_rate: config.train.learning_rate,
        optimizer: config.train.optimizer,
        total_steps: config.train.steps,
        beta: config.train.beta.to_schedule()?,
        seed: config.train.seed,
        ema_alpha: config.train.ema_alpha,
        checkpoint_every: config.train.checkpoint_every,
        grad_clip_norm: config.train.grad_clip_norm,
        sft_reject_filter: config.train.sft_reject_filter,
    };
    train.validate()?;

    let init = PolicyParams::zeros(config.policy.kind, task.vocab.size, config.policy.window)?;
    let teacher = match (&config.teacher, mode.needs_teacher()) {
        (Some(section), _) => Some(resolve_teacher(section, &task, config.policy.window)?),
        (None, false) => None,
        (None, true) => {
            return Err(Error::InvalidConfig(format!(
                "mode `{}` requires a [teacher] section",
                mode.kind.name()
            )))
        }
    };
    let out_dir = resolve_out_dir(&config.output.dir);
    Ok(ResolvedRun {
        config,
        task,
        teacher,
        init,
        train,
        out_dir,
    })
}

/// Manifest document: schema, code version, seed, task fingerprint, and the
/// resolved config echoed verbatim.
pub fn build_manifest(config: &RunConfig, task: &TaskInstance) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "schema": MANIFEST_SCHEMA,
        "code_version": env!("CARGO_PKG_VERSION"),
        "seed": config.train.seed,
        "task_fingerprint": fingerprint(task),
        "config": serde_json::to_value(config)?,
    }))
}

pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub steps: usize,
    pub final_reward_ema: f64,
    pub final_checkpoint: PathBuf,
}

/// The `train` command: resolve, run, persist the resolved dataset, manifest,
/// metrics, and checkpoints.
pub fn execute_train(config: RunConfig) -> Result<TrainSummary> {
    let resolved = resolve(config)?;
    let manifest = build_manifest(&resolved.config, &resolved.task)?;
    std::fs::create_dir_all(&resolved.out_dir)
        .map_err(|e| Error::io(resolved.out_dir.display().to_string(), e))?;
    crate::tasks::write_dataset(&resolved.task, &resolved.out_dir.join("dataset.jsonl"))?;
    let outcome = run_training(TrainRun {
        task: &resolved.task,
        teacher: resolved.teacher.as_ref(),
        init: resolved.init,
        config: &resolved.train,
        out_dir: Some(&resolved.out_dir),
        manifest: Some(manifest),
    })?;
    let final_reward_ema = outcome.metrics.last().map(|m| m.reward_ema).unwrap_or(0.0);
    Ok(TrainSummary {
        final_checkpoint: resolved.out_dir.join("policy-final.json"),
        out_dir: resolved.out_dir,
        steps: outcome.metrics.len(),
        final_reward_ema,
    })
}

/// Per-question pass rates plus the aggregate, in a stable order.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub seed: u64,
    pub per_question: Vec<QuestionEval>,
    pub aggregate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuestionEval {
    pub id: String,
    pub pass_rate: f64,
}

impl EvalReport {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for q in &self.per_question {
            out.push_str(&serde_json::to_string(q).expect("serializable"));
            out.push('\n');
        }
        out.push_str(
            &serde_json::to_string(&serde_json::json!({
                "aggregate": self.aggregate,
                "n_samples": self.n_samples,
                "seed": self.seed,
                "questions": self.per_question.len(),
            }))
            .expect("serializable"),
        );
        out.push('\n');
        out
    }
}

/// The `eval` command: per-question and mean pass rates of a checkpoint on a
/// dataset at a fixed decoding budget.
pub fn execute_eval(
    checkpoint: &Path,
    dataset: &Path,
    n_samples: usize,
    seed: u64,
    max_len: usize,
    temperature: f64,
) -> Result<EvalReport> {
    let (params, _, _) = load_checkpoint(checkpoint)?;
    let task = read_dataset(dataset)?;
    if params.vocab_size() != task.vocab.size {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint vocabulary {} does not match the dataset vocabulary {}",
            params.vocab_size(),
            task.vocab.size
        )));
    }
    let sampler = SamplerSettings {
        max_len,
        temperature,
        eos: task.vocab.eos,
    };
    let mut per_question = Vec::with_capacity(task.questions.len());
    let mut total = 0.0;
    for question in &task.questions {
        let rate = estimate_pass_rate(&params, question, &task.vocab, n_samples, &sampler, seed)?;
        total += rate;
        per_question.push(QuestionEval {
            id: question.id.clone(),
            pass_rate: rate,
        });
    }
    Ok(EvalReport {
        n_samples,
        seed,
        aggregate: total / task.questions.len() as f64,
        per_question,
    })
}

pub struct FilterSummary {
    pub kept: usize,
    pub dropped: usize,
    pub unsolved_kept: usize,
}

/// The `filter-data` command: difficulty-profile a dataset under a policy
/// checkpoint and write the filtered dataset.
#[allow(clippy::too_many_arguments)]
pub fn execute_filter(
    dataset: &Path,
    checkpoint: &Path,
    easy_threshold: f64,
    unsolved_cap: f64,
    n_samples: usize,
    seed: u64,
    max_len: usize,
    out: &Path,
) -> Result<FilterSummary> {
    let task = read_dataset(dataset)?;
    let (params, _, _) = load_checkpoint(checkpoint)?;
    if params.vocab_size() != task.vocab.size {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint vocabulary {} does not match the dataset vocabulary {}",
            params.vocab_size(),
            task.vocab.size
        )));
    }
    let sampler = SamplerSettings {
        max_len,
        temperature: 1.0,
        eos: task.vocab.eos,
    };
    let filtered = crate::tasks::filter_dataset(
        &task,
        &params,
        easy_threshold,
        unsolved_cap,
        n_samples,
        &sampler,
        seed,
    )?;
    crate::tasks::write_dataset(&filtered, out)?;
    let unsolved_kept = filtered
        .questions
        .iter()
        .filter(|q| q.difficulty == Some(0.0))
        .count();
    Ok(FilterSummary {
        kept: filtered.questions.len(),
        dropped: task.questions.len() - filtered.questions.len(),
        unsolved_kept,
    })
}

/// The `build-teacher` command: construct the teacher named by the config and
/// write it as a checkpoint.
pub fn execute_build_teacher(config: RunConfig, out: &Path) -> Result<f64> {
    let task = resolve_task(&config.task)?;
    let section = config
        .teacher
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no [teacher] section".into()))?;
    let teacher = resolve_teacher(section, &task, config.policy.window)?;
    save_checkpoint(teacher.params(), 0, Some(teacher.provenance()), out)?;
    crate::trainer::mean_pass_rate(teacher.params(), &task, 16, 16, 0)
}

/// The `oracle-check` command body.
pub fn execute_oracle_check(budget: f64, seed: u64) -> oracle::IdentityReport {
    oracle::run_identity_suite(budget, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = "kdrl.run/1"

[task]
kind = "modular-sum"
vocab_size = 8
count = 16
seed = 3

[policy]
kind = "tabular"
window = 3

[train]
mode = "grpo-only"
group_size = 4
questions_per_step = 4
max_response_len = 8
learning_rate = 0.1
steps = 3
seed = 9

[train.beta]
kind = "constant"
value = 0.0

[output]
dir = "out"
"#;

    fn write_config(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_config_parses_and_resolves() {
        let (_dir, path) = write_config(MINIMAL);
        let config = load_run_config(&path).unwrap();
        let resolved = resolve(config).unwrap();
        assert_eq!(resolved.task.questions.len(), 16);
        assert!(resolved.teacher.is_none());
    }

    #[test]
    fn unknown_keys_rejected() {
        // In a section...
        let text = MINIMAL.replace("[policy]", "[policy]\ntypo_key = 1");
        let (_dir, path) = write_config(&text);
        let err = load_run_config(&path).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
        // ...and inside the beta table, where a tagged enum would shrug.
        let text = MINIMAL.replace("value = 0.0", "value = 0.0\ndeacy = 1.0");
        let (_dir2, path) = write_config(&text);
        let err = load_run_config(&path).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
    }

    #[test]
    fn kd_mode_without_teacher_rejected() {
        let text = MINIMAL
            .replace("mode = \"grpo-only\"", "mode = \"joint-kdrl\"\nestimator = \"k2\"");
        let (_dir, path) = write_config(&text);
        let config = load_run_config(&path).unwrap();
        let err = match resolve(config) {
            Err(e) => e,
            Ok(_) => panic!("joint-kdrl without a teacher must not resolve"),
        };
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
    }

    #[test]
    fn beta_override_applies_and_echoes() {
        let (_dir, path) = write_config(MINIMAL);
        let mut config = load_run_config(&path).unwrap();
        apply_overrides(
            &mut config,
            &Overrides {
                beta_schedule: Some("constant:2e-3".into()),
                seed: Some(42),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!(config.train.beta, BetaSection::constant(2e-3));
        assert_eq!(config.train.seed, 42);
        let task = resolve_task(&config.task).unwrap();
        let manifest = build_manifest(&config, &task).unwrap();
        assert_eq!(manifest["seed"], 42);
        assert_eq!(manifest["config"]["train"]["beta"]["value"], 2e-3);
        // Manifest round-trips back into the identical config.
        let text = serde_json::to_string(&manifest).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let mpath = tmp.path().join("manifest.json");
        std::fs::write(&mpath, text).unwrap();
        let back = load_config_from_manifest(&mpath).unwrap();
        assert_eq!(back.train.seed, 42);
        assert_eq!(back.train.beta, BetaSection::constant(2e-3));
    }

    #[test]
    fn beta_spec_parsing() {
        assert_eq!(
            parse_beta_spec("constant:0.002").unwrap().to_schedule().unwrap(),
            BetaSchedule::Constant { value: 0.002 }
        );
        assert_eq!(
            parse_beta_spec("linear:5e-3:5e-5:1e-3").unwrap().to_schedule().unwrap(),
            BetaSchedule::LinearAnneal {
                init: 5e-3,
                decay: 5e-5,
                floor: 1e-3
            }
        );
        assert!(parse_beta_spec("cosine:1").is_err());
        assert!(parse_beta_spec("linear:1:2").is_err());
    }

    #[test]
    fn invalid_schedule_rejected_before_compute() {
        let text = MINIMAL.replace("value = 0.0", "value = -1.0");
        let (_dir, path) = write_config(&text);
        let config = load_run_config(&path).unwrap();
        assert!(resolve(config).is_err());
    }
}
