//! Acceptance suite: one test per exit criterion, each printing a PASS line
//! with the measured numbers (run with `--nocapture` to see them).
//!
//! Statistical gates use the 3-standard-error convention at 100k samples with
//! pinned seeds; seeded training comparisons assert orderings of medians over
//! five seeds, not absolute values.

use std::time::Instant;

use kdrl_core::estimators::{topk_kl_value, topk_teacher_renorm, EstimatorKind};
use kdrl_core::objectives::{
    evaluate_objective, group_advantages, group_mask, grpo_loss, kdrl_loss, response_mask,
    rkl_loss, sft_loss, MaskingMode, ObjectiveKind, ObjectiveMode, RolloutGroup,
};
use kdrl_core::oracle::{
    estimator_report, exact_rkl, finite_difference_gradient, two_point_instance, DEFAULT_BUDGET,
};
use kdrl_core::policy::{
    sample_sequence, score_with_teacher, ParamKind, PolicyParams, SamplerSettings, TeacherPolicy,
    TeacherProvenance, Trajectory,
};
use kdrl_core::rng;
use kdrl_core::schedule::BetaSchedule;
use kdrl_core::tasks::{generate_dataset, Question, TaskKind, Vocabulary};
use kdrl_core::trainer::{
    hand_built_teacher, run_training, HandBuiltTeacherSpec, OptimizerKind, TrainRun,
    TrainingConfig,
};

const TWO_POINT_RKL: f64 = 0.510825623765991; // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1)

fn pass(name: &str, detail: String) {
    println!("[PASS] {name}: {detail}");
}

fn jittered(vocab: usize, window: usize, seed: u64) -> PolicyParams {
    let mut p = PolicyParams::zeros(ParamKind::Tabular, vocab, window).unwrap();
    p.jitter(0.7, &mut rng::stream(seed, &[99]));
    p
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

#[test]
fn k2_gradient_unbiased_on_multistep_instance() {
    let start = Instant::now();
    let student = jittered(5, 2, 41);
    let teacher = TeacherPolicy::new(jittered(5, 2, 42), TeacherProvenance::HandBuilt);
    let report = estimator_report(
        &student,
        &teacher,
        &[2],
        4,
        3,
        EstimatorKind::K2,
        100_000,
        7,
        DEFAULT_BUDGET,
    )
    .unwrap();
    let elapsed = start.elapsed();
    assert!(
        report.max_grad_z < 3.0,
        "k2 gradient mean strayed {} standard errors from the exact gradient",
        report.max_grad_z
    );
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget is 60 s");
    pass(
        "k2 gradient unbiasedness (V=5, max_len=3, 100k samples)",
        format!("max componentwise z = {:.2}, runtime {elapsed:?}", report.max_grad_z),
    );
}

#[test]
fn k3_gradient_biased_on_two_point_instance() {
    let (student, teacher) = two_point_instance();
    let report = estimator_report(
        &student,
        &teacher,
        &[0],
        1,
        1,
        EstimatorKind::K3,
        100_000,
        7,
        DEFAULT_BUDGET,
    )
    .unwrap();
    assert!(
        report.max_grad_z > 3.0,
        "k3 gradient should be detectably biased, z = {}",
        report.max_grad_z
    );
    pass(
        "k3 gradient bias (two-point instance, 100k samples)",
        format!("max componentwise z = {:.1}", report.max_grad_z),
    );
}

#[test]
fn value_estimators_unbiasedness_pattern() {
    let (student, teacher) = two_point_instance();
    let run = |kind| {
        estimator_report(
            &student,
            &teacher,
            &[0],
            1,
            1,
            kind,
            100_000,
            7,
            DEFAULT_BUDGET,
        )
        .unwrap()
    };
    let k1 = run(EstimatorKind::K1);
    let k2 = run(EstimatorKind::K2);
    let k3 = run(EstimatorKind::K3);
    assert!((k1.exact_rkl - TWO_POINT_RKL).abs() < 1e-12);
    assert!((k1.exact_rkl - 0.510826).abs() < 1e-6);
    assert!(k1.value_z_vs_rkl < 3.0, "k1 value z = {}", k1.value_z_vs_rkl);
    assert!(k3.value_z_vs_rkl < 3.0, "k3 value z = {}", k3.value_z_vs_rkl);
    assert!(k2.value_z_vs_rkl > 3.0, "k2 value z = {}", k2.value_z_vs_rkl);
    pass(
        "value unbiasedness: k1, k3 match exact RKL 0.510826; k2 deviates",
        format!(
            "z(k1) = {:.2}, z(k3) = {:.2}, z(k2) = {:.1}",
            k1.value_z_vs_rkl, k3.value_z_vs_rkl, k2.value_z_vs_rkl
        ),
    );
}

fn random_batch(
    params: &PolicyParams,
    teacher: &TeacherPolicy,
    vocab: &Vocabulary,
    seed: u64,
) -> Vec<RolloutGroup> {
    let sampler = SamplerSettings {
        max_len: 4,
        temperature: 1.0,
        eos: vocab.eos,
    };
    let mut groups = Vec::new();
    for q in 0..2u64 {
        let question = Question {
            id: format!("q{q}"),
            prompt: vec![(q as usize) % vocab.content_count()],
            gold: 0,
            difficulty: None,
        };
        let mut trajectories = Vec::new();
        for i in 0..4u64 {
            let mut stream = rng::stream(seed, &[q, i]);
            let mut t = sample_sequence(params, &question, &sampler, &mut stream).unwrap();
            score_with_teacher(&mut t, teacher).unwrap();
            t.reward = f64::from(i % 2 == 0);
            trajectories.push(t);
        }
        groups.push(RolloutGroup::new(question.id.clone(), trajectories, None).unwrap());
    }
    groups
}

#[test]
fn kdrl_gradient_additivity() {
    let vocab = Vocabulary::new(5).unwrap();
    let params = jittered(5, 2, 50);
    let teacher = TeacherPolicy::new(jittered(5, 2, 51), TeacherProvenance::HandBuilt);
    let mode = ObjectiveMode {
        kind: ObjectiveKind::JointKdrl,
        estimator: Some(EstimatorKind::K2),
        masking: MaskingMode::None,
        entropy_coef: 0.0,
    };
    let beta = 2e-3;
    let mut worst: f64 = 0.0;
    for batch_seed in 0..20u64 {
        let groups = random_batch(&params, &teacher, &vocab, 1000 + batch_seed);
        let joint = kdrl_loss(&params, &teacher, &groups, &mode, beta).unwrap();
        let grpo = grpo_loss(&params, &groups).unwrap();
        let kd = rkl_loss(&params, &teacher, &groups, EstimatorKind::K2, MaskingMode::None)
            .unwrap();
        for (j, (g, k)) in joint.gradient.iter().zip(grpo.gradient.iter().zip(&kd.gradient)) {
            let expected = g + beta * k;
            let rel = (j - expected).abs() / expected.abs().max(1e-300);
            if expected.abs() > 0.0 || *j != 0.0 {
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst < 1e-10, "gradient additivity violated: rel err {worst:.3e}");
    pass(
        "joint-loss gradient additivity over 20 random batches",
        format!("max relative error = {worst:.3e}"),
    );
}

#[test]
fn advantage_invariants_hold() {
    let mut checked_degenerate = 0usize;
    let mut worst_mean: f64 = 0.0;
    let mut worst_std: f64 = 0.0;
    let mut stream = rng::stream(2026, &[0]);
    for _ in 0..1000 {
        let g = 2 + rand::Rng::random_range(&mut stream, 0..23usize);
        let rewards: Vec<f64> = (0..g)
            .map(|_| f64::from(rand::Rng::random_bool(&mut stream, 0.4)))
            .collect();
        let (adv, degenerate) = group_advantages(&rewards).unwrap();
        if degenerate {
            assert!(adv.iter().all(|&a| a == 0.0));
            checked_degenerate += 1;
            continue;
        }
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    // All-equal vectors must produce all-zero advantages.
    for g in [2usize, 5, 16] {
        let (adv, degenerate) = group_advantages(&vec![1.0; g]).unwrap();
        assert!(degenerate && adv.iter().all(|&a| a == 0.0));
        checked_degenerate += 1;
    }
    assert!(worst_mean < 1e-12, "advantage mean {worst_mean:.3e}");
    assert!(worst_std < 1e-9, "advantage std deviation {worst_std:.3e}");
    pass(
        "advantage invariants over 1000 random reward vectors",
        format!(
            "max |mean| = {worst_mean:.2e}, max |std - 1| = {worst_std:.2e}, degenerate cases = {checked_degenerate}"
        ),
    );
}

#[test]
fn annealing_schedule_exact_values() {
    let schedule = BetaSchedule::LinearAnneal {
        init: 5e-3,
        decay: 5e-5,
        floor: 1e-3,
    };
    assert_eq!(schedule.beta_at(0), 5e-3);
    assert_eq!(schedule.beta_at(80), 1e-3);
    assert_eq!(schedule.beta_at(200), 1e-3);
    pass(
        "annealing schedule (5e-3, 5e-5, 1e-3)",
        "beta(0) = 5e-3, beta(80) = beta(200) = 1e-3, exact".into(),
    );
}

#[test]
fn masking_semantics_over_random_groups() {
    let vocab = Vocabulary::new(4).unwrap();
    let params = jittered(4, 2, 60);
    let teacher = TeacherPolicy::new(jittered(4, 2, 61), TeacherProvenance::HandBuilt);
    let sampler = SamplerSettings {
        max_len: 3,
        temperature: 1.0,
        eos: vocab.eos,
    };
    let mut stream = rng::stream(777, &[0]);
    for trial in 0..1000u64 {
        let question = Question {
            id: format!("q{trial}"),
            prompt: vec![0],
            gold: 0,
            difficulty: None,
        };
        let g = 2 + rand::Rng::random_range(&mut stream, 0..3usize);
        let mut trajectories = Vec::new();
        for i in 0..g {
            let mut traj_stream = rng::stream(trial, &[i as u64]);
            let mut t = sample_sequence(&params, &question, &sampler, &mut traj_stream).unwrap();
            score_with_teacher(&mut t, &teacher).unwrap();
            t.reward = f64::from(rand::Rng::random_bool(&mut stream, 0.5));
            trajectories.push(t);
        }
        let group = RolloutGroup::new(question.id.clone(), trajectories, None).unwrap();

        // Group-level mask: all-on iff every reward is zero.
        let all_failed = group.trajectories.iter().all(|t| t.reward == 0.0);
        assert_eq!(group_mask(&group), vec![all_failed; g]);

        // Response-level mask keeps exactly the zero-reward responses, and
        // the masked KD equals the unmasked KD of that sub-batch up to the
        // shared all-token normalizer.
        let mask = response_mask(&group);
        for (bit, t) in mask.iter().zip(&group.trajectories) {
            assert_eq!(*bit, t.reward == 0.0);
        }
        let masked = rkl_loss(
            &params,
            &teacher,
            std::slice::from_ref(&group),
            EstimatorKind::K2,
            MaskingMode::Response,
        )
        .unwrap();
        let kept: Vec<Trajectory> = group
            .trajectories
            .iter()
            .filter(|t| t.reward == 0.0)
            .cloned()
            .collect();
        let n_all: usize = group.trajectories.iter().map(|t| t.len()).sum();
        if kept.is_empty() {
            assert_eq!(masked.kd, 0.0);
            assert!(masked.gradient.iter().all(|&x| x == 0.0));
            continue;
        }
        let n_kept: usize = kept.iter().map(|t| t.len()).sum();
        let advantages = vec![0.0; kept.len()];
        let sub = RolloutGroup {
            question_id: question.id,
            trajectories: kept,
            advantages,
            degenerate: true,
            shaped_rewards: None,
        };
        let reference =
            rkl_loss(&params, &teacher, &[sub], EstimatorKind::K2, MaskingMode::None).unwrap();
        let scale = n_kept as f64 / n_all as f64;
        assert!((masked.kd - reference.kd * scale).abs() < 1e-12);
        for (a, b) in masked.gradient.iter().zip(&reference.gradient) {
            assert!((a - b * scale).abs() < 1e-12);
        }
    }
    pass(
        "reward-guided masking semantics over 1000 random groups",
        "response mask == zero-reward indicator; group mask all-on iff all fail; \
         masked KD identical to the kept sub-batch"
            .into(),
    );
}

#[test]
fn topk_renormalization_and_full_k_equivalence() {
    // Renormalized teacher: unit mass, at most K nonzero entries.
    let mut worst_mass: f64 = 0.0;
    let mut stream = rng::stream(88, &[0]);
    for _ in 0..200 {
        let v = 3 + rand::Rng::random_range(&mut stream, 0..6usize);
        let raw: Vec<f64> = (0..v)
            .map(|_| rand::Rng::random_range(&mut stream, 0.01..1.0f64))
            .collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        for k in 1..=v {
            let renormed = topk_teacher_renorm(&probs, k).unwrap();
            worst_mass = worst_mass.max((renormed.iter().sum::<f64>() - 1.0).abs());
            assert!(renormed.iter().filter(|&&p| p != 0.0).count() <= k);
        }
    }
    assert!(worst_mass < 1e-12);

    // K = V: the full-vocabulary KL must equal the oracle's exact
    // per-context reverse KL on tabular pairs.
    let student = jittered(5, 2, 70);
    let teacher = TeacherPolicy::new(jittered(5, 2, 71), TeacherProvenance::HandBuilt);
    let exact = exact_rkl(&student, &teacher, &[1, 2], 4, 3, DEFAULT_BUDGET).unwrap();
    let mut worst_kl: f64 = 0.0;
    for ctx in &exact.per_context {
        let s_dist = student
            .distribution(&student.context_of(&ctx.history), 1.0)
            .unwrap();
        let t_dist = teacher
            .params()
            .distribution(&teacher.params().context_of(&ctx.history), 1.0)
            .unwrap();
        let renormed = topk_teacher_renorm(&t_dist, t_dist.len()).unwrap();
        let full = topk_kl_value(&s_dist, &renormed).unwrap();
        worst_kl = worst_kl.max((full - ctx.kl).abs());
    }
    assert!(worst_kl < 1e-12, "K=V KL mismatch {worst_kl:.3e}");
    pass(
        "top-K renormalization and K=V exact equivalence",
        format!("max |mass - 1| = {worst_mass:.2e}, max |KL - exact| = {worst_kl:.2e}"),
    );
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            if (a - n).abs() < 1e-9 {
                0.0
            } else {
                (a - n).abs() / n.abs().max(1e-8)
            }
        })
        .fold(0.0, f64::max)
}

#[test]
fn gradients_match_finite_differences() {
    let mut worst: f64 = 0.0;
    for probe in 0..100u64 {
        let kind = if probe % 2 == 0 {
            ParamKind::Tabular
        } else {
            ParamKind::LinearHead
        };
        let mut params = PolicyParams::zeros(kind, 4, 2).unwrap();
        params.jitter(1.0, &mut rng::stream(3000 + probe, &[0]));
        let mut stream = rng::stream(4000 + probe, &[0]);
        let history: Vec<usize> = (0..rand::Rng::random_range(&mut stream, 1..4usize))
            .map(|_| rand::Rng::random_range(&mut stream, 0..4usize))
            .collect();
        let ctx = params.context_of(&history);
        let token = rand::Rng::random_range(&mut stream, 0..4usize);

        let mut analytic = vec![0.0; params.param_len()];
        params
            .accumulate_log_prob_grad(&ctx, token, 1.0, &mut analytic)
            .unwrap();
        let numeric = finite_difference_gradient(
            &params,
            |p| p.log_prob(&ctx, token, 1.0).unwrap(),
            1e-5,
        );
        worst = worst.max(max_rel_err(&analytic, &numeric));
    }

    let mut worst_sft: f64 = 0.0;
    for probe in 0..100u64 {
        let kind = if probe % 2 == 0 {
            ParamKind::Tabular
        } else {
            ParamKind::LinearHead
        };
        let mut params = PolicyParams::zeros(kind, 4, 2).unwrap();
        params.jitter(0.8, &mut rng::stream(5000 + probe, &[0]));
        let question = Question {
            id: "q".into(),
            prompt: vec![1],
            gold: 0,
            difficulty: None,
        };
        let sampler = SamplerSettings {
            max_len: 3,
            temperature: 1.0,
            eos: 3,
        };
        let sequences: Vec<Trajectory> = (0..2)
            .map(|i| {
                sample_sequence(
                    &params,
                    &question,
                    &sampler,
                    &mut rng::stream(6000 + probe, &[i]),
                )
                .unwrap()
            })
            .collect();
        let report = sft_loss(&params, &sequences).unwrap();
        let numeric = finite_difference_gradient(
            &params,
            |p| sft_loss(p, &sequences).unwrap().total,
            1e-5,
        );
        worst_sft = worst_sft.max(max_rel_err(&report.gradient, &numeric));
    }
    assert!(worst < 1e-4, "log-prob gradient rel err {worst:.3e}");
    assert!(worst_sft < 1e-4, "sft gradient rel err {worst_sft:.3e}");
    pass(
        "finite-difference gradient checks (100 probes each)",
        format!("log-prob max rel err = {worst:.2e}, sft max rel err = {worst_sft:.2e}"),
    );
}

// Shared setup for the seeded end-to-end comparisons: the modular-sum task
// at V=8, responses capped at 12 tokens, groups of 8, 300 steps, and a
// hand-built teacher that reasons out loud (mean ideal path ~5 tokens).
fn e2e_task() -> kdrl_core::tasks::TaskInstance {
    generate_dataset(TaskKind::ModularSum, Vocabulary::new(8).unwrap(), 48, 11).unwrap()
}

fn e2e_teacher(task: &kdrl_core::tasks::TaskInstance) -> TeacherPolicy {
    hand_built_teacher(
        task,
        &HandBuiltTeacherSpec {
            p_gold: 0.9,
            structure_prob: 0.99,
            think_continue: 0.5,
            window: 3,
        },
    )
    .unwrap()
}

fn e2e_config(
    kind: ObjectiveKind,
    masking: MaskingMode,
    beta: BetaSchedule,
    seed: u64,
) -> TrainingConfig {
    let estimator = matches!(kind, ObjectiveKind::RklOnly | ObjectiveKind::JointKdrl)
        .then_some(EstimatorKind::K2);
    TrainingConfig {
        mode: ObjectiveMode {
            kind,
            estimator,
            masking,
            entropy_coef: 1e-3,
        },
        group_size: 8,
        questions_per_step: 8,
        max_response_len: 12,
        temperature: 1.0,
        learning_rate: 60.0,
        optimizer: OptimizerKind::Sgd,
        total_steps: 300,
        beta,
        seed,
        ema_alpha: 0.9,
        checkpoint_every: 0,
        grad_clip_norm: None,
        sft_reject_filter: false,
    }
}

fn e2e_run(
    task: &kdrl_core::tasks::TaskInstance,
    teacher: Option<&TeacherPolicy>,
    config: &TrainingConfig,
) -> Vec<kdrl_core::trainer::MetricsRecord> {
    let init = PolicyParams::zeros(ParamKind::Tabular, task.vocab.size, 3).unwrap();
    run_training(TrainRun {
        task,
        teacher,
        init,
        config,
        out_dir: None,
        manifest: None,
    })
    .map(|o| o.metrics)
    .unwrap()
}

#[test]
fn end_to_end_mode_ordering() {
    let start = Instant::now();
    let task = e2e_task();
    let teacher = e2e_teacher(&task);
    let seeds = [1u64, 2, 3, 4, 5];

    let mut finals: Vec<(&str, Vec<f64>)> = Vec::new();
    let specs: [(&str, ObjectiveKind, BetaSchedule); 4] = [
        ("grpo-only", ObjectiveKind::GrpoOnly, BetaSchedule::Constant { value: 0.0 }),
        ("rkl-only", ObjectiveKind::RklOnly, BetaSchedule::Constant { value: 1.0 }),
        (
            "joint-kdrl-constant",
            ObjectiveKind::JointKdrl,
            BetaSchedule::Constant { value: 0.3 },
        ),
        (
            "joint-kdrl-annealed",
            ObjectiveKind::JointKdrl,
            BetaSchedule::LinearAnneal {
                init: 1.0,
                decay: 3e-3,
                floor: 0.05,
            },
        ),
    ];
    for (name, kind, beta) in specs {
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let cfg = e2e_config(kind, MaskingMode::None, beta, seed);
            let use_teacher = cfg.mode.needs_teacher().then_some(&teacher);
            let metrics = e2e_run(&task, use_teacher, &cfg);
            // Per-seed curve, five waypoints plus the final smoothed value.
            let curve: Vec<String> = [0usize, 75, 150, 225, 299]
                .iter()
                .map(|&s| format!("{:.2}", metrics[s].reward_ema))
                .collect();
            println!(
                "  {name} seed {seed}: reward(ema) curve [{}] final {:.3} len {:.2}",
                curve.join(", "),
                metrics[299].reward_ema,
                metrics[299].resp_len_ema,
            );
            per_seed.push(metrics[299].reward_ema);
        }
        finals.push((name, per_seed));
    }
    let med = |name: &str| {
        let mut v = finals.iter().find(|(n, _)| *n == name).unwrap().1.clone();
        median(&mut v)
    };
    let grpo = med("grpo-only");
    let rkl = med("rkl-only");
    let constant = med("joint-kdrl-constant");
    let annealed = med("joint-kdrl-annealed");
    let elapsed = start.elapsed();
    assert!(
        annealed >= constant,
        "annealed median {annealed:.3} < constant median {constant:.3}"
    );
    assert!(
        constant >= grpo.max(rkl) - 0.02,
        "constant median {constant:.3} below max(grpo {grpo:.3}, rkl {rkl:.3}) - 0.02"
    );
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}, budget is 10 min");
    pass(
        "end-to-end ordering over 5 seeds (modular-sum, V=8, G=8, 300 steps)",
        format!(
            "medians: annealed {annealed:.3} >= constant {constant:.3} >= \
             max(grpo {grpo:.3}, rkl {rkl:.3}) - 0.02; runtime {elapsed:?}"
        ),
    );
}

#[test]
fn determinism_byte_identical_metrics() {
    let task = e2e_task();
    let teacher = e2e_teacher(&task);
    let cases: [(ObjectiveKind, BetaSchedule); 5] = [
        (ObjectiveKind::GrpoOnly, BetaSchedule::Constant { value: 0.0 }),
        (ObjectiveKind::RklOnly, BetaSchedule::Constant { value: 1.0 }),
        (ObjectiveKind::Sft, BetaSchedule::Constant { value: 0.0 }),
        (ObjectiveKind::RewardShaping, BetaSchedule::Constant { value: 2e-3 }),
        (ObjectiveKind::JointKdrl, BetaSchedule::Constant { value: 0.3 }),
    ];
    for (kind, beta) in cases {
        let mut cfg = e2e_config(kind, MaskingMode::None, beta, 123);
        cfg.total_steps = 25;
        let use_teacher = cfg.mode.needs_teacher().then_some(&teacher);
        let run_bytes = || {
            let dir = tempfile::tempdir().unwrap();
            let init = PolicyParams::zeros(ParamKind::Tabular, task.vocab.size, 3).unwrap();
            run_training(TrainRun {
                task: &task,
                teacher: use_teacher,
                init,
                config: &cfg,
                out_dir: Some(dir.path()),
                manifest: None,
            })
            .unwrap();
            std::fs::read(dir.path().join("metrics.jsonl")).unwrap()
        };
        let a = run_bytes();
        let b = run_bytes();
        assert_eq!(a, b, "metrics differ for mode {}", kind.name());
        assert!(!a.is_empty());
    }
    pass(
        "determinism: identical config+seed gives byte-identical metrics streams",
        "all five objective modes, 25 steps each, two runs apiece".into(),
    );
}

#[test]
fn response_masking_shortens_at_comparable_reward() {
    let task = e2e_task();
    let teacher = e2e_teacher(&task);
    let seeds = [1u64, 2, 3, 4, 5];
    let beta = BetaSchedule::Constant { value: 0.3 };
    let run_final = |masking: MaskingMode| {
        let mut rewards = Vec::new();
        let mut lengths = Vec::new();
        for &seed in &seeds {
            let cfg = e2e_config(ObjectiveKind::JointKdrl, masking, beta, seed);
            let metrics = e2e_run(&task, Some(&teacher), &cfg);
            rewards.push(metrics[299].reward_ema);
            lengths.push(metrics[299].resp_len_ema);
        }
        let mean_len = lengths.iter().sum::<f64>() / lengths.len() as f64;
        (median(&mut rewards), mean_len)
    };
    let (masked_reward, masked_len) = run_final(MaskingMode::Response);
    let (unmasked_reward, unmasked_len) = run_final(MaskingMode::None);
    assert!(
        masked_len <= unmasked_len,
        "masked length {masked_len:.2} > unmasked {unmasked_len:.2}"
    );
    assert!(
        (masked_reward - unmasked_reward).abs() <= 0.02,
        "reward medians diverged: masked {masked_reward:.3}, unmasked {unmasked_reward:.3}"
    );
    pass(
        "response-level masking: shorter responses at comparable reward",
        format!(
            "mean final length {masked_len:.2} (masked) <= {unmasked_len:.2} (unmasked); \
             median reward {masked_reward:.3} vs {unmasked_reward:.3}"
        ),
    );
}

// The importance-ratio value is checked where the objectives are assembled;
// here we only pin that a fresh snapshot reproduces ratio 1 end to end.
#[test]
fn on_policy_ratio_is_one_at_snapshot() {
    let vocab = Vocabulary::new(5).unwrap();
    let params = jittered(5, 2, 90);
    let teacher = TeacherPolicy::new(params.clone(), TeacherProvenance::HandBuilt);
    let groups = random_batch(&params, &teacher, &vocab, 7);
    let mode = ObjectiveMode {
        kind: ObjectiveKind::GrpoOnly,
        estimator: None,
        masking: MaskingMode::None,
        entropy_coef: 0.0,
    };
    let report = evaluate_objective(&params, None, &groups, &mode, 0.0).unwrap();
    // With ratios pinned at 1 the negated objective is exactly
    // -sum(adv_i * |o_i|) / sum(|o_i|).
    let mut num = 0.0;
    let mut den = 0.0;
    for group in &groups {
        for (traj, adv) in group.trajectories.iter().zip(&group.advantages) {
            num += adv * traj.len() as f64;
            den += traj.len() as f64;
        }
    }
    assert!((report.grpo - (-num / den)).abs() < 1e-12);
    pass(
        "on-policy importance ratio is exactly 1 at the snapshot",
        format!("grpo loss {:.6} matches the closed form", report.grpo),
    );
}
