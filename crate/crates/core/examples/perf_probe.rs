use draftrl_core::codec::{PromptMode, Vocabulary};
use draftrl_core::eval::{evaluate, EvalConfig};
use draftrl_core::policy::{sample, Dims, GenerationConfig, PolicyParams};
use draftrl_core::sft::{build_sft_dataset, sft_train, SftBuildConfig, SftTrainConfig};
use draftrl_core::taskgen::{generate_problems, SplitName};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.003);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let hi_level: u8 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let include_step: bool = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(false);
    let count: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(300);

    let vocab = Vocabulary::standard();
    let dims = Dims { vocab: vocab.size(), embed: 64, context: 256 };
    let mut params = PolicyParams::init(dims, 7);
    let split = generate_problems(SplitName::SftPool, count, (1, hi_level), 3, 12).unwrap();
    let cfg = SftBuildConfig { error_rate: 0.0, step_fraction: if include_step { 1.0 } else { 0.0 }, adaptive_fraction: 0.0, ..Default::default() };
    let ds = build_sft_dataset(&split, &cfg, 5).unwrap();
    println!("lr {lr}, epochs {epochs}, levels 1-{hi_level}, step {include_step}, {} examples", ds.examples.len());
    let t0 = Instant::now();
    let train = SftTrainConfig { epochs, learning_rate: lr, batch_size: 16, optimizer: Default::default() };
    let curve = sft_train(&mut params, vocab, &ds, &train, 9).unwrap();
    println!("train {:.0} s; loss tail {:?}", t0.elapsed().as_secs_f64(),
        &curve[curve.len().saturating_sub(3)..].iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>());

    let eval_split = generate_problems(SplitName::Eval, 40, (1, hi_level), 99, 12).unwrap();
    let ec = EvalConfig::greedy(120, 1);
    let (r, _) = evaluate(&params, vocab, &eval_split, PromptMode::Draft, &ec).unwrap();
    println!("draft acc {:.1} tokens {:.1}", r.acc, r.mean_tokens);

    for p in eval_split.problems.iter().take(6) {
        let t = sample(&params, vocab, PromptMode::Draft, &p.question_tokens, &GenerationConfig::greedy(120)).unwrap();
        let text = vocab.decode(&t.tokens).unwrap().replace("\n\n", " | ");
        println!("q {:<22} gold {:<4} -> {}", p.question, p.gold_answer, text);
    }
}
