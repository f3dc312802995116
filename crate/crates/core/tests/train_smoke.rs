//! Seeded end-to-end smoke: a short draft-SFT phase followed by 50 GRPO steps
//! on level-1 problems must not decrease greedy accuracy on a fixed probe.

use draftrl_core::codec::{PromptMode, Vocabulary};
use draftrl_core::eval::{evaluate, EvalConfig};
use draftrl_core::grpo::{grpo_step, GrpoConfig};
use draftrl_core::optim::{Optimizer, OptimizerKind};
use draftrl_core::policy::{Dims, PolicyParams};
use draftrl_core::sft::{build_sft_dataset, sft_train, SftBuildConfig, SftTrainConfig};
use draftrl_core::taskgen::{generate_problems, Problem, SplitName};

#[test]
fn grpo_reward_is_non_decreasing_over_fifty_steps() {
    let vocab = Vocabulary::standard();
    let dims = Dims { vocab: vocab.size(), embed: 32, context: 128 };
    let mut params = PolicyParams::init(dims, 77);

    // quick draft-only distillation so the policy has signal to refine
    let pool =
        generate_problems(SplitName::SftPool, 120, (1, 1), 301, 12).unwrap();
    let build = SftBuildConfig {
        error_rate: 0.0,
        step_fraction: 0.0,
        adaptive_fraction: 0.0,
        ..Default::default()
    };
    let dataset = build_sft_dataset(&pool, &build, 5).unwrap();
    let train = SftTrainConfig {
        epochs: 12,
        learning_rate: 0.003,
        batch_size: 16,
        optimizer: OptimizerKind::Adam,
    };
    sft_train(&mut params, vocab, &dataset, &train, 11).unwrap();

    let probe = generate_problems(SplitName::Eval, 24, (1, 1), 997, 12).unwrap();
    let eval_cfg = EvalConfig::greedy(32, 3);
    let (before, _) =
        evaluate(&params, vocab, &probe, PromptMode::Draft, &eval_cfg).unwrap();

    let rl_split =
        generate_problems(SplitName::RlStage1, 40, (1, 1), 302, 12).unwrap();
    let config = GrpoConfig {
        group_size: 4,
        clip_eps: 0.2,
        learning_rate: 1e-4,
        mini_batch_size: 4,
        max_new_tokens: 32,
        epochs: 1,
        optimizer: OptimizerKind::Adam,
    };
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, params.flat.len());
    let mut cursor = 0;
    for step in 0..50 {
        let batch: Vec<&Problem> = (0..4)
            .map(|_| {
                let p = &rl_split.problems[cursor];
                cursor = (cursor + 1) % rl_split.problems.len();
                p
            })
            .collect();
        let (metrics, groups) = grpo_step(
            &mut params,
            vocab,
            &batch,
            &config,
            PromptMode::Draft,
            4000 + step,
            &mut optimizer,
        )
        .unwrap();
        assert!(metrics.objective.is_finite());
        for group in &groups {
            for trace in &group.traces {
                assert!(trace.generated_len() <= config.max_new_tokens);
            }
        }
    }

    let (after, _) = evaluate(&params, vocab, &probe, PromptMode::Draft, &eval_cfg).unwrap();
    assert!(
        after.acc >= before.acc,
        "probe accuracy regressed: {} -> {}",
        before.acc,
        after.acc
    );
}
