//! Synthetic arithmetic-chain problems and the scripted oracle teacher.
//!
//! A problem is a left-to-right chain of binary operations over `{+, -, *}`
//! with single-digit operands in `[-9, 9]`. Difficulty level `d` means exactly
//! `2*d` operations. Operator/operand choices are constrained so intermediate
//! values stay within a configurable bound, which keeps traces short without
//! any clamping — every value is exact.
//!
//! The teacher emits reference traces in two styles:
//! * `draft` — one compact equation line per chain step, then the answer span;
//! * `step`  — a restatement, equation+check pairs per chain step, a full-chain
//!   recomputation, a summary line, then the answer span.
//!
//! An injectable error rate corrupts the final-answer statements (and only
//! those) so downstream answer-match filtering has something to catch.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{render_value, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::Phase;
use crate::rng::{rng_from, substream, substream_n};

pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 5;

/// Default bound on intermediate chain values.
pub const DEFAULT_MAX_INTERMEDIATE: i64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Add, Op::Sub, Op::Mul];

    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Op::Add => '+',
            Op::Sub => '-',
            Op::Mul => '*',
        }
    }
}

/// A verifiable question with its gold answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    #[serde(skip)]
    pub question_tokens: Vec<TokenId>,
    pub question: String,
    #[serde(rename = "answer")]
    pub gold_answer: i64,
    pub difficulty: u8,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    SftPool,
    RlStage1,
    RlStage2,
    Eval,
}

impl SplitName {
    pub const ALL: [SplitName; 4] =
        [SplitName::SftPool, SplitName::RlStage1, SplitName::RlStage2, SplitName::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::SftPool => "sft_pool",
            SplitName::RlStage1 => "rl_stage1",
            SplitName::RlStage2 => "rl_stage2",
            SplitName::Eval => "eval",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft_pool" => Ok(SplitName::SftPool),
            "rl_stage1" => Ok(SplitName::RlStage1),
            "rl_stage2" => Ok(SplitName::RlStage2),
            "eval" => Ok(SplitName::Eval),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for SplitName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub problems: Vec<Problem>,
    pub difficulty_range: (u8, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceStyle {
    Draft,
    Step,
}

impl TraceStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceStyle::Draft => "draft",
            TraceStyle::Step => "step",
        }
    }
}

/// A labelled reference trace from the oracle teacher.
#[derive(Debug, Clone)]
pub struct TeacherTrace {
    pub problem_id: String,
    pub style: TraceStyle,
    /// Reasoning plus answer span; ends with `</ANS>`, no EOS.
    pub tokens: Vec<TokenId>,
    pub emitted_answer: i64,
    /// One `(segment_index, phase)` entry per step segment.
    pub phase_labels: Vec<(usize, Phase)>,
}

fn validate_range(range: (u8, u8)) -> Result<()> {
    let (lo, hi) = range;
    if lo < MIN_LEVEL || hi > MAX_LEVEL || lo > hi {
        return Err(Error::config(format!(
            "difficulty range [{lo}, {hi}] must satisfy {MIN_LEVEL} <= lo <= hi <= {MAX_LEVEL}"
        )));
    }
    Ok(())
}

/// Generate `count` problems with difficulties spread uniformly over the range.
///
/// Reproducible: the same `(count, range, seed)` yields identical problems.
pub fn generate_problems(
    name: SplitName,
    count: usize,
    difficulty_range: (u8, u8),
    seed: u64,
    max_intermediate: i64,
) -> Result<DatasetSplit> {
    if count < 1 {
        return Err(Error::config("problem count must be >= 1"));
    }
    validate_range(difficulty_range)?;
    if max_intermediate < 9 {
        return Err(Error::config("max_intermediate must be >= 9 to cover all operands"));
    }
    let vocab = Vocabulary::standard();
    let (lo, hi) = difficulty_range;
    let span = (hi - lo + 1) as usize;
    let mut problems = Vec::with_capacity(count);
    for i in 0..count {
        let difficulty = lo + (i % span) as u8;
        let problem_seed = substream_n(seed, "problem", i as u64);
        let mut rng = rng_from(problem_seed);
        let first: i64 = rng.gen_range(-9..=9);
        let mut value = first;
        let mut steps = Vec::with_capacity(2 * difficulty as usize);
        for _ in 0..2 * difficulty as usize {
            let feasible: Vec<(Op, i64)> = Op::ALL
                .iter()
                .flat_map(|&op| (-9..=9).map(move |b| (op, b)))
                .filter(|&(op, b)| op.apply(value, b).abs() <= max_intermediate)
                .collect();
            let &(op, b) = &feasible[rng.gen_range(0..feasible.len())];
            value = op.apply(value, b);
            steps.push((op, b));
        }
        let question = render_question(first, &steps);
        let question_tokens = vocab.encode(&question)?;
        problems.push(Problem {
            id: format!("p{seed:016x}-{i:05}"),
            question_tokens,
            question,
            gold_answer: value,
            difficulty,
            seed: problem_seed,
        });
    }
    Ok(DatasetSplit { name, problems, difficulty_range })
}

fn render_question(first: i64, steps: &[(Op, i64)]) -> String {
    let mut s = render_value(first);
    for &(op, b) in steps {
        s.push(op.symbol());
        s.push_str(&render_value(b));
    }
    s
}

/// Parse a question token sequence back into `(first, steps)`.
///
/// Grammar: `value (op value)*`; every operand is a single value symbol
/// (negatives are parenthesised, so the binary minus never collides).
pub fn parse_chain(vocab: &Vocabulary, tokens: &[TokenId]) -> Result<(i64, Vec<(Op, i64)>)> {
    let sp = vocab.specials();
    let op_of = |t: TokenId| -> Option<Op> {
        if t == sp.plus {
            Some(Op::Add)
        } else if t == sp.minus {
            Some(Op::Sub)
        } else if t == sp.times {
            Some(Op::Mul)
        } else {
            None
        }
    };
    let read_value = |pos: &mut usize| -> Result<i64> {
        let t = tokens
            .get(*pos)
            .ok_or_else(|| Error::integrity(format!("expected value at token {}", *pos)))?;
        let v = vocab
            .parse_int(std::slice::from_ref(t))
            .ok_or_else(|| Error::integrity(format!("expected value at token {}", *pos)))?;
        *pos += 1;
        Ok(v)
    };

    let mut pos = 0;
    let first = read_value(&mut pos)?;
    let mut steps = Vec::new();
    while pos < tokens.len() {
        let op = op_of(tokens[pos])
            .ok_or_else(|| Error::integrity(format!("expected operator at token {pos}")))?;
        pos += 1;
        let b = read_value(&mut pos)?;
        steps.push((op, b));
    }
    Ok((first, steps))
}

/// Solve a problem in the requested style, with injectable answer corruption.
///
/// With probability `1 - error_rate` the emitted answer equals the gold
/// answer; otherwise it is off by 1..=9 in either direction. Corruption
/// touches only the final-answer statements (summary, full-chain check, and
/// the answer span) — per-step equations stay correct, so answer-match
/// filtering is the exact detection rule.
pub fn teacher_solve(
    problem: &Problem,
    style: TraceStyle,
    error_rate: f64,
    seed: u64,
) -> Result<TeacherTrace> {
    if !(0.0..1.0).contains(&error_rate) {
        return Err(Error::config(format!("error_rate {error_rate} must be in [0, 1)")));
    }
    let vocab = Vocabulary::standard();
    let sp = vocab.specials();
    let (first, steps) = parse_chain(vocab, &problem.question_tokens)?;

    let mut rng = rng_from(substream_n(substream(seed, style.as_str()), "teacher", problem.seed));
    let wrong = rng.gen::<f64>() < error_rate;
    let emitted_answer = if wrong {
        let magnitude = rng.gen_range(1..=9);
        let sign = if rng.gen::<bool>() { 1 } else { -1 };
        problem.gold_answer + sign * magnitude
    } else {
        problem.gold_answer
    };

    // Build step segments as token runs, then join with the delimiter.
    let mut segments: Vec<(Vec<TokenId>, Phase)> = Vec::new();
    let equation = |a: i64, op: Op, b: i64, c: i64| -> Vec<TokenId> {
        let mut t = vocab.encode_int(a);
        t.push(match op {
            Op::Add => sp.plus,
            Op::Sub => sp.minus,
            Op::Mul => sp.times,
        });
        t.extend(vocab.encode_int(b));
        t.push(sp.equals);
        t.extend(vocab.encode_int(c));
        t
    };

    if style == TraceStyle::Step {
        let mut restate = vec![sp.restate_marker];
        restate.extend_from_slice(&problem.question_tokens);
        segments.push((restate, Phase::Restate));
    }
    let mut value = first;
    for &(op, b) in &steps {
        let next = op.apply(value, b);
        segments.push((equation(value, op, b, next), Phase::Compute));
        if style == TraceStyle::Step {
            let mut verify = vec![sp.verify_marker];
            verify.extend(vocab.encode_int(next));
            segments.push((verify, Phase::Verify));
        }
        value = next;
    }
    if style == TraceStyle::Step {
        let mut alt = vec![sp.alt_marker];
        alt.extend_from_slice(&problem.question_tokens);
        alt.push(sp.equals);
        alt.extend(vocab.encode_int(emitted_answer));
        segments.push((alt, Phase::ExploreAlternative));

        let mut summary = vec![sp.summarize_marker];
        summary.extend(vocab.encode_int(emitted_answer));
        segments.push((summary, Phase::Summarize));
    }
    let mut answer = vec![sp.ans_open];
    answer.extend(vocab.encode_int(emitted_answer));
    answer.push(sp.ans_close);
    segments.push((answer, Phase::Summarize));

    let mut tokens = Vec::new();
    let mut phase_labels = Vec::with_capacity(segments.len());
    for (i, (seg, phase)) in segments.iter().enumerate() {
        if i > 0 {
            tokens.push(sp.step_delim);
        }
        tokens.extend_from_slice(seg);
        phase_labels.push((i, *phase));
    }

    Ok(TeacherTrace { problem_id: problem.id.clone(), style, tokens, emitted_answer, phase_labels })
}

// --- persistence -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ProblemRow<'a> {
    id: &'a str,
    question: &'a str,
    answer: i64,
    difficulty: u8,
    seed: u64,
}

/// Write a split as JSONL, one problem per line.
pub fn save_split(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in &split.problems {
        let row = ProblemRow {
            id: &p.id,
            question: &p.question,
            answer: p.gold_answer,
            difficulty: p.difficulty,
            seed: p.seed,
        };
        serde_json::to_writer(&mut file, &row)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn load_split(name: SplitName, path: &Path) -> Result<DatasetSplit> {
    #[derive(Deserialize)]
    struct OwnedRow {
        id: String,
        question: String,
        answer: i64,
        difficulty: u8,
        seed: u64,
    }
    let vocab = Vocabulary::standard();
    let file = std::fs::File::open(path).map_err(|_| Error::MissingArtifact {
        path: path.to_path_buf(),
        producer: "gen".to_string(),
    })?;
    let reader = std::io::BufReader::new(file);
    let mut problems = Vec::new();
    let (mut lo, mut hi) = (MAX_LEVEL, MIN_LEVEL);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: OwnedRow = serde_json::from_str(&line)?;
        lo = lo.min(row.difficulty);
        hi = hi.max(row.difficulty);
        problems.push(Problem {
            question_tokens: vocab.encode(&row.question)?,
            id: row.id,
            question: row.question,
            gold_answer: row.answer,
            difficulty: row.difficulty,
            seed: row.seed,
        });
    }
    if problems.is_empty() {
        return Err(Error::config(format!("split file {path:?} is empty")));
    }
    Ok(DatasetSplit { name, problems, difficulty_range: (lo, hi) })
}

/// Generate all four splits from a config section, seeded per split name.
pub fn generate_splits(
    section: &crate::config::TaskgenSection,
    seed: u64,
) -> Result<Vec<DatasetSplit>> {
    let specs = [
        (SplitName::SftPool, &section.sft_pool),
        (SplitName::RlStage1, &section.rl_stage1),
        (SplitName::RlStage2, &section.rl_stage2),
        (SplitName::Eval, &section.eval),
    ];
    let mut splits = Vec::with_capacity(4);
    for (name, spec) in specs {
        splits.push(generate_problems(
            name,
            spec.count,
            (spec.levels[0], spec.levels[1]),
            crate::rng::substream(seed, &format!("taskgen-{name}")),
            section.max_intermediate,
        )?);
    }
    check_disjoint(&splits.iter().collect::<Vec<_>>())?;
    Ok(splits)
}

/// Generate and persist all splits under `dir`, refusing to overwrite
/// existing files unless forced.
pub fn write_splits(
    section: &crate::config::TaskgenSection,
    seed: u64,
    dir: &Path,
    force: bool,
) -> Result<Vec<(SplitName, std::path::PathBuf)>> {
    std::fs::create_dir_all(dir)?;
    let splits = generate_splits(section, seed)?;
    let mut written = Vec::new();
    for split in &splits {
        let path = dir.join(format!("{}.jsonl", split.name));
        if path.exists() && !force {
            return Err(Error::WouldOverwrite(path));
        }
        save_split(split, &path)?;
        written.push((split.name, path));
    }
    Ok(written)
}

/// Splits must be disjoint by problem id.
pub fn check_disjoint(splits: &[&DatasetSplit]) -> Result<()> {
    let mut seen: HashSet<&str> = HashSet::new();
    for split in splits {
        for p in &split.problems {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::integrity(format!(
                    "problem id {:?} appears in multiple splits",
                    p.id
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::count_steps;

    #[test]
    fn level_one_has_two_operations() {
        let split =
            generate_problems(SplitName::Eval, 1, (1, 1), 7, DEFAULT_MAX_INTERMEDIATE).unwrap();
        let p = &split.problems[0];
        assert_eq!(p.difficulty, 1);
        let (_, steps) = parse_chain(Vocabulary::standard(), &p.question_tokens).unwrap();
        assert_eq!(steps.len(), 2);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_problems(SplitName::Eval, 100, (1, 5), 3, DEFAULT_MAX_INTERMEDIATE)
            .unwrap();
        let b = generate_problems(SplitName::Eval, 100, (1, 5), 3, DEFAULT_MAX_INTERMEDIATE)
            .unwrap();
        for (x, y) in a.problems.iter().zip(&b.problems) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.question, y.question);
            assert_eq!(x.gold_answer, y.gold_answer);
        }
    }

    #[test]
    fn difficulties_cover_range_uniformly() {
        let split =
            generate_problems(SplitName::Eval, 100, (1, 5), 11, DEFAULT_MAX_INTERMEDIATE).unwrap();
        let mut counts = [0usize; 6];
        for p in &split.problems {
            counts[p.difficulty as usize] += 1;
            assert_eq!(
                parse_chain(Vocabulary::standard(), &p.question_tokens).unwrap().1.len(),
                2 * p.difficulty as usize
            );
        }
        assert_eq!(&counts[1..], &[20, 20, 20, 20, 20]);
    }

    #[test]
    fn invalid_range_is_a_config_error() {
        assert!(generate_problems(SplitName::Eval, 1, (0, 3), 1, 12).is_err());
        assert!(generate_problems(SplitName::Eval, 1, (2, 6), 1, 12).is_err());
        assert!(generate_problems(SplitName::Eval, 1, (4, 2), 1, 12).is_err());
        assert!(generate_problems(SplitName::Eval, 0, (1, 5), 1, 12).is_err());
    }

    #[test]
    fn intermediates_stay_within_bound() {
        let split = generate_problems(SplitName::Eval, 40, (5, 5), 23, 12).unwrap();
        for p in &split.problems {
            let (first, steps) = parse_chain(Vocabulary::standard(), &p.question_tokens).unwrap();
            let mut v = first;
            for (op, b) in steps {
                v = op.apply(v, b);
                assert!(v.abs() <= 12, "intermediate {v} out of bound in {}", p.question);
            }
            assert_eq!(v, p.gold_answer);
        }
    }

    #[test]
    fn teacher_zero_error_matches_gold() {
        let split =
            generate_problems(SplitName::SftPool, 30, (1, 5), 5, DEFAULT_MAX_INTERMEDIATE).unwrap();
        for p in &split.problems {
            for style in [TraceStyle::Draft, TraceStyle::Step] {
                let t = teacher_solve(p, style, 0.0, 99).unwrap();
                assert_eq!(t.emitted_answer, p.gold_answer);
            }
        }
    }

    #[test]
    fn teacher_is_deterministic() {
        let split =
            generate_problems(SplitName::SftPool, 5, (2, 2), 5, DEFAULT_MAX_INTERMEDIATE).unwrap();
        let p = &split.problems[0];
        let a = teacher_solve(p, TraceStyle::Step, 0.5, 42).unwrap();
        let b = teacher_solve(p, TraceStyle::Step, 0.5, 42).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.emitted_answer, b.emitted_answer);
    }

    #[test]
    fn draft_has_fewer_steps_than_step_by_delimiter_rule() {
        let vocab = Vocabulary::standard();
        let split =
            generate_problems(SplitName::SftPool, 10, (2, 2), 17, DEFAULT_MAX_INTERMEDIATE)
                .unwrap();
        for p in &split.problems {
            let draft = teacher_solve(p, TraceStyle::Draft, 0.0, 1).unwrap();
            let step = teacher_solve(p, TraceStyle::Step, 0.0, 1).unwrap();
            let draft_steps = count_steps(vocab, &draft.tokens).unwrap();
            let step_steps = count_steps(vocab, &step.tokens).unwrap();
            assert!(draft_steps < step_steps, "{draft_steps} !< {step_steps}");
            // Segment counts also agree with the generator's labels.
            assert_eq!(draft_steps, draft.phase_labels.len());
            assert_eq!(step_steps, step.phase_labels.len());
        }
    }

    #[test]
    fn draft_tokens_strictly_shorter_for_all_difficulties() {
        for level in 1..=5u8 {
            let split = generate_problems(
                SplitName::SftPool,
                8,
                (level, level),
                31 + level as u64,
                DEFAULT_MAX_INTERMEDIATE,
            )
            .unwrap();
            for p in &split.problems {
                let draft = teacher_solve(p, TraceStyle::Draft, 0.0, 2).unwrap();
                let step = teacher_solve(p, TraceStyle::Step, 0.0, 2).unwrap();
                assert!(draft.tokens.len() < step.tokens.len());
            }
        }
    }

    #[test]
    fn error_rate_fraction_is_close_to_nominal() {
        let split =
            generate_problems(SplitName::SftPool, 1000, (1, 5), 13, DEFAULT_MAX_INTERMEDIATE)
                .unwrap();
        let mut wrong = 0usize;
        for p in &split.problems {
            let t = teacher_solve(p, TraceStyle::Draft, 0.3, 7).unwrap();
            if t.emitted_answer != p.gold_answer {
                wrong += 1;
            }
        }
        let fraction = wrong as f64 / 1000.0;
        assert!((fraction - 0.3).abs() <= 0.05, "wrong fraction {fraction}");
    }

    #[test]
    fn split_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.jsonl");
        let split =
            generate_problems(SplitName::Eval, 25, (1, 5), 77, DEFAULT_MAX_INTERMEDIATE).unwrap();
        save_split(&split, &path).unwrap();
        let loaded = load_split(SplitName::Eval, &path).unwrap();
        assert_eq!(loaded.problems.len(), 25);
        for (a, b) in split.problems.iter().zip(&loaded.problems) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.question_tokens, b.question_tokens);
            assert_eq!(a.gold_answer, b.gold_answer);
        }
    }

    #[test]
    fn disjointness_check_catches_duplicates() {
        let a = generate_problems(SplitName::SftPool, 5, (1, 1), 3, 12).unwrap();
        let b = generate_problems(SplitName::Eval, 5, (1, 1), 4, 12).unwrap();
        assert!(check_disjoint(&[&a, &b]).is_ok());
        assert!(check_disjoint(&[&a, &a]).is_err());
    }
}
