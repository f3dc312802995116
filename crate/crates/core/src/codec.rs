//! Closed token vocabulary and trace-text conventions.
//!
//! The vocabulary is a fixed, ordered list of string symbols: digits,
//! arithmetic operators, `=`, newlines, the answer-span markers
//! `<ANS>`/`</ANS>`, the three prompt-mode control tokens
//! `<STEP>`/`<DRAFT>`/`<ADAPT>`, phase markers, and BOS/EOS/PAD. Token ids are
//! dense `0..size`. Encoding is greedy longest-match over symbols, so the
//! two-character step delimiter `"\n\n"` and the multi-character markers
//! tokenize as single ids while decoded text stays plain.
//!
//! Conventions used throughout the crate:
//! * reasoning steps are separated by the `"\n\n"` delimiter;
//! * the final answer sits between the last well-formed `<ANS>`/`</ANS>` pair;
//! * a generation prompt is `<BOS> <mode> question "\n\n"`.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u16;

/// The three prompt-conditioned inference modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Step,
    Draft,
    Adaptive,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [PromptMode::Step, PromptMode::Draft, PromptMode::Adaptive];

    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Step => "step",
            PromptMode::Draft => "draft",
            PromptMode::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(PromptMode::Step),
            "draft" => Ok(PromptMode::Draft),
            "adaptive" => Ok(PromptMode::Adaptive),
            other => Err(Error::config(format!("unknown prompt mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Frequently used token ids, resolved once at construction.
#[derive(Debug, Clone)]
pub struct SpecialTokens {
    pub pad: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
    pub step_mode: TokenId,
    pub draft_mode: TokenId,
    pub adaptive_mode: TokenId,
    pub ans_open: TokenId,
    pub ans_close: TokenId,
    pub newline: TokenId,
    pub step_delim: TokenId,
    pub plus: TokenId,
    pub minus: TokenId,
    pub times: TokenId,
    pub equals: TokenId,
    pub restate_marker: TokenId,
    pub verify_marker: TokenId,
    pub summarize_marker: TokenId,
    pub alt_marker: TokenId,
    digits: [TokenId; 10],
}

impl SpecialTokens {
    pub fn digit(&self, d: u8) -> TokenId {
        self.digits[d as usize]
    }
}

/// Closed, ordered symbol list with greedy longest-match encoding.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    symbols: Vec<String>,
    by_symbol: HashMap<String, TokenId>,
    max_symbol_len: usize,
    specials: SpecialTokens,
}

/// Largest magnitude that has a dedicated single-token value symbol.
pub const VALUE_LIMIT: i64 = 12;

const STANDARD_SYMBOLS: &[&str] = &[
    "<PAD>", "<BOS>", "<EOS>", "<STEP>", "<DRAFT>", "<ADAPT>", "<ANS>", "</ANS>", "\n", "\n\n",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12",
    "(-1)", "(-2)", "(-3)", "(-4)", "(-5)", "(-6)", "(-7)", "(-8)", "(-9)", "(-10)", "(-11)",
    "(-12)", "+", "-", "*", "=", "Q:", "C:", "S:", "A:",
];

/// Text form of a bounded integer value: negatives are parenthesised so the
/// binary minus stays unambiguous.
pub fn render_value(v: i64) -> String {
    if v < 0 {
        format!("(-{})", -v)
    } else {
        v.to_string()
    }
}

static STANDARD: OnceLock<Vocabulary> = OnceLock::new();

impl Vocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        let mut by_symbol = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::config("vocabulary symbols must be non-empty"));
            }
            if by_symbol.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::config(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        let max_symbol_len = symbols.iter().map(|s| s.len()).max().unwrap_or(0);
        let id = |sym: &str| -> Result<TokenId> {
            by_symbol
                .get(sym)
                .copied()
                .ok_or_else(|| Error::config(format!("vocabulary missing required symbol {sym:?}")))
        };
        let specials = SpecialTokens {
            pad: id("<PAD>")?,
            bos: id("<BOS>")?,
            eos: id("<EOS>")?,
            step_mode: id("<STEP>")?,
            draft_mode: id("<DRAFT>")?,
            adaptive_mode: id("<ADAPT>")?,
            ans_open: id("<ANS>")?,
            ans_close: id("</ANS>")?,
            newline: id("\n")?,
            step_delim: id("\n\n")?,
            plus: id("+")?,
            minus: id("-")?,
            times: id("*")?,
            equals: id("=")?,
            restate_marker: id("Q:")?,
            verify_marker: id("C:")?,
            summarize_marker: id("S:")?,
            alt_marker: id("A:")?,
            digits: [
                id("0")?,
                id("1")?,
                id("2")?,
                id("3")?,
                id("4")?,
                id("5")?,
                id("6")?,
                id("7")?,
                id("8")?,
                id("9")?,
            ],
        };
        Ok(Vocabulary { symbols, by_symbol, max_symbol_len, specials })
    }

    /// The crate's standard vocabulary.
    pub fn standard() -> &'static Vocabulary {
        STANDARD.get_or_init(|| {
            Vocabulary::new(STANDARD_SYMBOLS.iter().map(|s| s.to_string()).collect())
                .expect("standard vocabulary is well-formed")
        })
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    pub fn mode_token(&self, mode: PromptMode) -> TokenId {
        match mode {
            PromptMode::Step => self.specials.step_mode,
            PromptMode::Draft => self.specials.draft_mode,
            PromptMode::Adaptive => self.specials.adaptive_mode,
        }
    }

    pub fn symbol(&self, id: TokenId) -> Result<&str> {
        self.symbols
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or(Error::BadTokenId(id as u32))
    }

    /// Greedy longest-match tokenization. Errors name the offending position.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(text.len());
        let mut pos = 0;
        while pos < bytes.len() {
            let end = (pos + self.max_symbol_len).min(bytes.len());
            let mut matched = None;
            for cand_end in (pos + 1..=end).rev() {
                if let Some(slice) = text.get(pos..cand_end) {
                    if let Some(&id) = self.by_symbol.get(slice) {
                        matched = Some((id, cand_end));
                        break;
                    }
                }
            }
            match matched {
                Some((id, next)) => {
                    out.push(id);
                    pos = next;
                }
                None => {
                    let snippet_end = (pos + 8).min(bytes.len());
                    let snippet = text
                        .get(pos..snippet_end)
                        .unwrap_or("<non-utf8 boundary>")
                        .to_string();
                    return Err(Error::Codec { position: pos, snippet });
                }
            }
        }
        Ok(out)
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &t in tokens {
            out.push_str(self.symbol(t)?);
        }
        Ok(out)
    }

    /// Tokens for an integer: one value symbol within the bounded range,
    /// digit symbols (with a leading minus) beyond it.
    pub fn encode_int(&self, value: i64) -> Vec<TokenId> {
        if let Ok(tokens) = self.encode(&render_value(value)) {
            return tokens;
        }
        let mut out = Vec::new();
        if value < 0 {
            out.push(self.specials.minus);
        }
        for b in value.unsigned_abs().to_string().bytes() {
            out.push(self.specials.digit(b - b'0'));
        }
        out
    }

    /// Parse tokens as an integer literal: a value symbol like `7` or
    /// `(-4)`, or digit symbols with an optional leading minus.
    pub fn parse_int(&self, tokens: &[TokenId]) -> Option<i64> {
        if tokens.is_empty() {
            return None;
        }
        let text = self.decode(tokens).ok()?;
        let inner = text
            .strip_prefix("(-")
            .and_then(|rest| rest.strip_suffix(')'))
            .map(|digits| (true, digits))
            .unwrap_or_else(|| match text.strip_prefix('-') {
                Some(rest) => (true, rest),
                None => (false, text.as_str()),
            });
        let (neg, digits) = inner;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let value: i64 = digits.parse().ok()?;
        Some(if neg { -value } else { value })
    }

    /// `<BOS> <mode> question "\n\n"` — the generation prompt layout.
    pub fn build_prompt(&self, mode: PromptMode, question: &[TokenId]) -> Vec<TokenId> {
        let mut prompt = Vec::with_capacity(question.len() + 3);
        prompt.push(self.specials.bos);
        prompt.push(self.mode_token(mode));
        prompt.extend_from_slice(question);
        prompt.push(self.specials.step_delim);
        prompt
    }

    /// Persist as a JSON list so checkpoints are self-describing.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.symbols).expect("string list serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let symbols: Vec<String> = serde_json::from_str(json)?;
        Vocabulary::new(symbols)
    }

    /// SHA-256 of the JSON symbol list, hex-encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Integer between the last well-formed `<ANS>`/`</ANS>` pair, if any.
///
/// A pair is well-formed when the open marker is followed by a close marker
/// with a non-empty integer literal (optional `-`, then digits) strictly
/// between them. Absence is a value, scored as incorrect downstream.
pub fn extract_answer(vocab: &Vocabulary, tokens: &[TokenId]) -> Option<i64> {
    let sp = vocab.specials();
    let mut last = None;
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == sp.ans_open {
            if let Some(rel_close) = tokens[i + 1..].iter().position(|&t| t == sp.ans_close) {
                let interior = &tokens[i + 1..i + 1 + rel_close];
                if let Some(v) = vocab.parse_int(interior) {
                    last = Some(v);
                }
            }
        }
        i += 1;
    }
    last
}

/// Number of non-empty segments when splitting decoded text on `"\n\n"`.
pub fn count_steps(vocab: &Vocabulary, tokens: &[TokenId]) -> Result<usize> {
    Ok(count_steps_text(&vocab.decode(tokens)?))
}

pub fn count_steps_text(text: &str) -> usize {
    text.split("\n\n").filter(|seg| !seg.is_empty()).count()
}

/// Split decoded text into its non-empty step segments.
pub fn split_steps(text: &str) -> Vec<&str> {
    text.split("\n\n").filter(|seg| !seg.is_empty()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v() -> &'static Vocabulary {
        Vocabulary::standard()
    }

    #[test]
    fn empty_round_trip() {
        let toks = v().encode("").unwrap();
        assert!(toks.is_empty());
        assert_eq!(v().decode(&toks).unwrap(), "");
    }

    #[test]
    fn simple_round_trip() {
        let toks = v().encode("3+4").unwrap();
        assert_eq!(toks.len(), 3);
        assert_eq!(v().decode(&toks).unwrap(), "3+4");
    }

    #[test]
    fn every_symbol_gets_a_unique_id() {
        let mut seen = std::collections::HashSet::new();
        for sym in STANDARD_SYMBOLS {
            let toks = v().encode(sym).unwrap();
            assert_eq!(toks.len(), 1, "symbol {sym:?} should encode to one token");
            assert!(seen.insert(toks[0]), "symbol {sym:?} maps to a duplicate id");
        }
        assert_eq!(seen.len(), v().size());
    }

    #[test]
    fn unknown_symbol_names_the_character() {
        let err = v().encode("3\nx").unwrap_err();
        match err {
            Error::Codec { position, snippet } => {
                assert_eq!(position, 2);
                assert!(snippet.starts_with('x'));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn double_newline_is_one_token_and_decodes_back() {
        let toks = v().encode("1\n\n2").unwrap();
        assert_eq!(toks.len(), 3);
        assert_eq!(v().decode(&toks).unwrap(), "1\n\n2");
    }

    #[test]
    fn extract_answer_single_span() {
        let toks = v().encode("3+4=7\n\n<ANS>7</ANS>").unwrap();
        assert_eq!(extract_answer(v(), &toks), Some(7));
    }

    #[test]
    fn extract_answer_absent() {
        let toks = v().encode("3+4=7").unwrap();
        assert_eq!(extract_answer(v(), &toks), None);
    }

    #[test]
    fn extract_answer_last_span_wins() {
        let toks = v().encode("<ANS>3</ANS>\n\n1+1=2\n\n<ANS>-5</ANS>").unwrap();
        // Scan-from-end oracle: collect all well-formed spans, compare tails.
        let text = v().decode(&toks).unwrap();
        let mut oracle = None;
        let mut rest = text.as_str();
        while let Some(open) = rest.find("<ANS>") {
            let after = &rest[open + 5..];
            if let Some(close) = after.find("</ANS>") {
                if let Ok(value) = after[..close].parse::<i64>() {
                    oracle = Some(value);
                }
                rest = &after[close..];
            } else {
                break;
            }
        }
        assert_eq!(oracle, Some(-5));
        assert_eq!(extract_answer(v(), &toks), Some(-5));
    }

    #[test]
    fn extract_answer_ignores_malformed_last_pair() {
        let toks = v().encode("<ANS>4</ANS>\n\n<ANS>+</ANS>").unwrap();
        assert_eq!(extract_answer(v(), &toks), Some(4));
    }

    #[test]
    fn count_steps_examples() {
        let abc = v().encode("1\n\n2\n\n3").unwrap();
        assert_eq!(count_steps(v(), &abc).unwrap(), 3);
        assert_eq!(count_steps(v(), &[]).unwrap(), 0);
        let trailing = v().encode("1\n\n2\n\n").unwrap();
        assert_eq!(count_steps(v(), &trailing).unwrap(), 2);
    }

    #[test]
    fn parse_int_handles_sign_and_rejects_garbage() {
        assert_eq!(v().parse_int(&v().encode("-12").unwrap()), Some(-12));
        assert_eq!(v().parse_int(&v().encode("007").unwrap()), Some(7));
        assert_eq!(v().parse_int(&v().encode("-").unwrap()), None);
        assert_eq!(v().parse_int(&v().encode("1+2").unwrap()), None);
        assert_eq!(v().parse_int(&[]), None);
    }

    #[test]
    fn vocab_json_round_trip_preserves_hash() {
        let json = v().to_json();
        let back = Vocabulary::from_json(&json).unwrap();
        assert_eq!(back.hash(), v().hash());
        assert_eq!(back.size(), v().size());
    }
}
