//! Toy verifiable sequence tasks and the rule-based binary reward.
//!
//! A task maps a short prompt of content tokens to a single gold answer token
//! that is recomputable from the prompt by a fixed rule. A response earns
//! reward 1 only when it is well-formed (exactly one answer delimiter) and the
//! token right after the delimiter is the gold answer; the reward factors as
//! `format * accuracy`, both binary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{sample_sequence, PolicyParams, SamplerSettings};
use crate::rng;

pub type TokenId = usize;

/// Token alphabet with two reserved ids: the answer delimiter and the
/// end-of-sequence marker. Content tokens are every id below the delimiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub size: usize,
    pub delimiter: TokenId,
    pub eos: TokenId,
}

impl Vocabulary {
    /// Standard layout: content tokens `0..size-2`, delimiter `size-2`,
    /// end-of-sequence `size-1`.
    pub fn new(size: usize) -> Result<Self> {
        let vocab = Vocabulary {
            size,
            delimiter: size.wrapping_sub(2),
            eos: size.wrapping_sub(1),
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 3 {
            return Err(Error::InvalidVocabulary(format!(
                "size {} < 3 (one content token plus two reserved ids)",
                self.size
            )));
        }
        if self.delimiter >= self.size || self.eos >= self.size {
            return Err(Error::InvalidVocabulary(
                "reserved ids must be valid token ids".into(),
            ));
        }
        if self.delimiter == self.eos {
            return Err(Error::InvalidVocabulary("reserved ids must be distinct".into()));
        }
        Ok(())
    }

    /// Number of non-reserved (content) token ids.
    pub fn content_count(&self) -> usize {
        self.size - 2
    }

    pub fn is_content(&self, token: TokenId) -> bool {
        token < self.size && token != self.delimiter && token != self.eos
    }
}

/// One prompt/answer pair. `difficulty` holds the most recent estimated pass
/// rate when the dataset has been profiled, `None` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub gold: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
}

/// Task rules. Prompts contain content tokens only; the gold answer is a
/// content token derived from the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Prompt `[a, b]`, gold `(a + b) mod C` over the `C` content tokens.
    ModularSum,
    /// Prompt of 1..=3 content tokens, gold is the last one.
    CopyLast,
    /// Prompt of bit tokens (ids 0/1), gold is the parity bit.
    Parity,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::ModularSum => "modular-sum",
            TaskKind::CopyLast => "copy-last",
            TaskKind::Parity => "parity",
        }
    }

    /// Minimum number of content tokens the rule needs.
    fn min_content(&self) -> usize {
        match self {
            TaskKind::ModularSum => 2,
            TaskKind::CopyLast => 1,
            TaskKind::Parity => 2,
        }
    }

    /// Gold answer for a prompt, by the task rule.
    pub fn gold_for(&self, prompt: &[TokenId], vocab: &Vocabulary) -> TokenId {
        match self {
            TaskKind::ModularSum => {
                let c = vocab.content_count();
                prompt.iter().sum::<usize>() % c
            }
            TaskKind::CopyLast => *prompt.last().expect("prompt length >= 1"),
            TaskKind::Parity => prompt.iter().sum::<usize>() % 2,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A task kind, its vocabulary, and a concrete question set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub vocab: Vocabulary,
    pub questions: Vec<Question>,
}

/// Outcome of the rule-based verifier. The reward is the product of the two
/// binary components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    /// Exactly one answer delimiter appears in the response.
    pub format_ok: bool,
    /// A token follows the first delimiter and it equals the gold answer.
    pub accuracy_ok: bool,
}

impl Verdict {
    pub fn reward(&self) -> f64 {
        if self.format_ok && self.accuracy_ok {
            1.0
        } else {
            0.0
        }
    }
}

/// Rule-based binary verifier.
///
/// Format requires exactly one delimiter token in the response; accuracy
/// requires the token immediately after the (first) delimiter to be the gold
/// answer. Malformed or truncated responses score 0, never error.
pub fn verify(response: &[TokenId], question: &Question, vocab: &Vocabulary) -> Verdict {
    let delim_count = response.iter().filter(|&&t| t == vocab.delimiter).count();
    let format_ok = delim_count == 1;
    let accuracy_ok = response
        .iter()
        .position(|&t| t == vocab.delimiter)
        .and_then(|pos| response.get(pos + 1))
        .map(|&answer| answer == question.gold)
        .unwrap_or(false);
    Verdict {
        format_ok,
        accuracy_ok,
    }
}

/// Deterministically generate `count` questions for a task rule.
///
/// Prompts are drawn uniformly over content tokens (bit tokens for parity);
/// duplicates are allowed and get distinct ids, like repeated questions in a
/// scraped corpus.
pub fn generate_dataset(
    kind: TaskKind,
    vocab: Vocabulary,
    count: usize,
    seed: u64,
) -> Result<TaskInstance> {
    vocab.validate()?;
    if count < 1 {
        return Err(Error::InvalidArgument("dataset count must be >= 1".into()));
    }
    let have = vocab.content_count();
    let needed = kind.min_content();
    if have < needed {
        return Err(Error::VocabularyTooSmall {
            task: kind.name().into(),
            needed,
            have,
        });
    }

    let mut rng = rng::stream(seed, &[rng::label("dataset"), rng::label(kind.name())]);
    let mut questions = Vec::with_capacity(count);
    for index in 0..count {
        let prompt: Vec<TokenId> = match kind {
            TaskKind::ModularSum => (0..2).map(|_| rng.random_range(0..have)).collect(),
            TaskKind::CopyLast => {
                let len = rng.random_range(1..=3usize);
                (0..len).map(|_| rng.random_range(0..have)).collect()
            }
            TaskKind::Parity => {
                let len = rng.random_range(2..=4usize);
                (0..len).map(|_| rng.random_range(0..2usize)).collect()
            }
        };
        let gold = kind.gold_for(&prompt, &vocab);
        questions.push(Question {
            id: format!("q{index:05}"),
            prompt,
            gold,
            difficulty: None,
        });
    }
    Ok(TaskInstance {
        kind,
        vocab,
        questions,
    })
}

/// Fraction of `n_samples` sampled responses that the verifier accepts.
///
/// Per-sample RNG streams are derived from `(seed, question id, sample index)`
/// so the estimate is independent of evaluation order.
pub fn estimate_pass_rate(
    policy: &PolicyParams,
    question: &Question,
    vocab: &Vocabulary,
    n_samples: usize,
    sampler: &SamplerSettings,
    seed: u64,
) -> Result<f64> {
    if n_samples < 1 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let qlabel = rng::label(&question.id);
    let mut passes = 0usize;
    for sample in 0..n_samples {
        let mut stream = rng::stream(seed, &[rng::label("pass-rate"), qlabel, sample as u64]);
        let traj = sample_sequence(policy, question, sampler, &mut stream)?;
        if verify(&traj.response, question, vocab).reward() == 1.0 {
            passes += 1;
        }
    }
    Ok(passes as f64 / n_samples as f64)
}

/// Difficulty-controlled filtering.
///
/// Removes questions whose measured pass rate is `>= easy_threshold`, then
/// caps the fraction of retained questions with pass rate 0 at `unsolved_cap`
/// (excess unsolved questions dropped deterministically: highest ids first).
/// Retained questions carry their measured pass rate in `difficulty`.
pub fn filter_dataset(
    instance: &TaskInstance,
    policy: &PolicyParams,
    easy_threshold: f64,
    unsolved_cap: f64,
    n_samples: usize,
    sampler: &SamplerSettings,
    seed: u64,
) -> Result<TaskInstance> {
    if !(0.0..=1.0).contains(&unsolved_cap) {
        return Err(Error::InvalidArgument(format!(
            "unsolved_cap must be in [0, 1], got {unsolved_cap}"
        )));
    }
    if !easy_threshold.is_finite() || easy_threshold < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "easy_threshold must be finite and >= 0, got {easy_threshold}"
        )));
    }

    let mut solved = Vec::new();
    let mut unsolved = Vec::new();
    for question in &instance.questions {
        let rate = estimate_pass_rate(policy, question, &instance.vocab, n_samples, sampler, seed)?;
        if rate >= easy_threshold {
            continue;
        }
        let mut kept = question.clone();
        kept.difficulty = Some(rate);
        if rate == 0.0 {
            unsolved.push(kept);
        } else {
            solved.push(kept);
        }
    }

    // Largest unsolved count u with u / (solved + u) <= cap.
    let keep_unsolved = if unsolved_cap >= 1.0 {
        unsolved.len()
    } else if solved.is_empty() {
        0
    } else {
        let bound = unsolved_cap * solved.len() as f64 / (1.0 - unsolved_cap);
        (bound + 1e-9).floor() as usize
    }
    .min(unsolved.len());

    unsolved.sort_by(|a, b| a.id.cmp(&b.id));
    unsolved.truncate(keep_unsolved);

    let mut questions = solved;
    questions.extend(unsolved);
    questions.sort_by(|a, b| a.id.cmp(&b.id));

    if questions.is_empty() {
        return Err(Error::EmptyDataset {
            easy_threshold,
            unsolved_cap,
        });
    }
    Ok(TaskInstance {
        kind: instance.kind,
        vocab: instance.vocab,
        questions,
    })
}

/// SHA-256 fingerprint of a task instance's canonical serialization, for run
/// manifests.
pub fn fingerprint(instance: &TaskInstance) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(instance.kind.name().as_bytes());
    hasher.update(instance.vocab.size.to_le_bytes());
    for q in &instance.questions {
        hasher.update(q.id.as_bytes());
        for &t in &q.prompt {
            hasher.update((t as u64).to_le_bytes());
        }
        hasher.update((q.gold as u64).to_le_bytes());
    }
    format!("sha256:{}", hex::encode(hasher.finalize()))
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    schema: String,
    task_kind: TaskKind,
    vocab: Vocabulary,
}

pub const DATASET_SCHEMA: &str = "kdrl.dataset/1";

/// Write a task instance as line-delimited JSON: a schema header line, then
/// one question per line.
pub fn write_dataset(instance: &TaskInstance, path: &Path) -> Result<()> {
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let header = DatasetHeader {
        schema: DATASET_SCHEMA.into(),
        task_kind: instance.kind,
        vocab: instance.vocab,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for question in &instance.questions {
        out.push_str(&serde_json::to_string(question)?);
        out.push('\n');
    }
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a task instance written by [`write_dataset`], validating the schema
/// header and every question against the task rule.
pub fn read_dataset(path: &Path) -> Result<TaskInstance> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header_line) = lines.next().ok_or_else(|| Error::MalformedFile {
        what: "dataset".into(),
        line: 1,
        detail: "missing schema header".into(),
    })?;
    let header_line = header_line.map_err(|e| Error::io(path.display().to_string(), e))?;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::MalformedFile {
            what: "dataset".into(),
            line: 1,
            detail: e.to_string(),
        })?;
    if header.schema != DATASET_SCHEMA {
        return Err(Error::MalformedFile {
            what: "dataset".into(),
            line: 1,
            detail: format!("unsupported schema `{}`", header.schema),
        });
    }
    header.vocab.validate()?;

    let mut questions = Vec::new();
    let mut seen = BTreeMap::new();
    for (index, line) in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let question: Question = serde_json::from_str(&line).map_err(|e| Error::MalformedFile {
            what: "dataset".into(),
            line: index + 1,
            detail: e.to_string(),
        })?;
        validate_question(&question, header.task_kind, &header.vocab, index + 1)?;
        if let Some(previous) = seen.insert(question.id.clone(), index + 1) {
            return Err(Error::MalformedFile {
                what: "dataset".into(),
                line: index + 1,
                detail: format!("duplicate question id `{}` (first at line {previous})", question.id),
            });
        }
        questions.push(question);
    }
    if questions.is_empty() {
        return Err(Error::MalformedFile {
            what: "dataset".into(),
            line: 1,
            detail: "dataset has no questions".into(),
        });
    }
    Ok(TaskInstance {
        kind: header.task_kind,
        vocab: header.vocab,
        questions,
    })
}

fn validate_question(
    question: &Question,
    kind: TaskKind,
    vocab: &Vocabulary,
    line: usize,
) -> Result<()> {
    let bad = |detail: String| Error::MalformedFile {
        what: "dataset".into(),
        line,
        detail,
    };
    if question.prompt.is_empty() {
        return Err(bad(format!("question `{}` has an empty prompt", question.id)));
    }
    if !vocab.is_content(question.gold) {
        return Err(bad(format!(
            "question `{}` gold answer {} is not a content token",
            question.id, question.gold
        )));
    }
    if question.prompt.iter().any(|&t| !vocab.is_content(t)) {
        return Err(bad(format!(
            "question `{}` prompt contains reserved or out-of-range tokens",
            question.id
        )));
    }
    let expected = kind.gold_for(&question.prompt, vocab);
    if expected != question.gold {
        return Err(bad(format!(
            "question `{}` gold answer {} violates the {} rule (expected {})",
            question.id, question.gold, kind, expected
        )));
    }
    Ok(())
}
