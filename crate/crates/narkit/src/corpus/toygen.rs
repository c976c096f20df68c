//! Seeded generator for the synthetic training corpus.
//!
//! Fixed programs are drawn from a small template family over the mini
//! language; buggy versions apply 1-3 single-token perturbations (keyword
//! typos, dropped semicolons, duplicated tokens, corrupted comparison
//! operators, junk identifiers). Every perturbation is recoverable from
//! local context, so the bug-to-fix mapping is a function of the buggy text
//! and the corpus is free of conflicting targets.

use super::CodePair;
use crate::astdep::GrammarProvider;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

const TYPES: [&str; 3] = ["int", "float", "bool"];
const PARAMS: [&str; 8] = ["a", "b", "c", "x", "y", "z", "n", "m"];
const LOCALS: [&str; 4] = ["v", "w", "s", "t"];
const FN_NAMES: [&str; 10] =
    ["add", "sub", "mul", "calc", "check", "count", "scale", "pick", "norm", "step"];
const ARITH_OPS: [&str; 5] = ["+", "-", "*", "/", "%"];
const CMP_OPS: [&str; 4] = ["==", "!=", "<", ">"];
const JUNK_IDENTS: [&str; 4] = ["qq", "zz", "kk", "jj"];

fn typo_pool(token: &str) -> &'static [&'static str] {
    match token {
        "return" => &["retrun", "reutrn"],
        "if" => &["fi", "iif"],
        "while" => &["whlie", "wihle"],
        "int" => &["itn", "nit"],
        "float" => &["flaot", "folat"],
        "bool" => &["bol", "boool"],
        _ => &[],
    }
}

/// Inverse of `typo_pool`; confirms typos stay unambiguous.
#[cfg(test)]
fn canonical_of_typo(token: &str) -> Option<&'static str> {
    for original in ["return", "if", "while", "int", "float", "bool"] {
        if typo_pool(original).contains(&token) {
            return Some(original);
        }
    }
    None
}

/// One site where a perturbation may apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bug {
    /// Replace the keyword/type at `pos` with a misspelling.
    KeywordTypo { pos: usize },
    /// Delete the `;` at `pos`.
    DropSemicolon { pos: usize },
    /// Insert a copy of the token at `pos` right after it.
    DupToken { pos: usize },
    /// Replace `==` with `=` or `!=` with `!` at `pos`.
    CorruptCmp { pos: usize },
    /// Replace the identifier at `pos` with a junk name.
    JunkIdent { pos: usize },
}

impl Bug {
    fn pos(self) -> usize {
        match self {
            Bug::KeywordTypo { pos }
            | Bug::DropSemicolon { pos }
            | Bug::DupToken { pos }
            | Bug::CorruptCmp { pos }
            | Bug::JunkIdent { pos } => pos,
        }
    }
}

struct Program {
    tokens: Vec<String>,
    /// Identifier positions whose original token is recoverable from context.
    recoverable_idents: Vec<usize>,
}

fn sample_program(rng: &mut ChaCha8Rng) -> Program {
    let ty = *TYPES.choose(rng).unwrap();
    let name = *FN_NAMES.choose(rng).unwrap();
    let mut picks = PARAMS.to_vec();
    picks.shuffle(rng);
    let (p1, p2) = (picks[0], picks[1]);
    let local = *LOCALS.choose(rng).unwrap();
    let op = *ARITH_OPS.choose(rng).unwrap();
    let cmp = *CMP_OPS.choose(rng).unwrap();
    let eqcmp = *["==", "!="].choose(rng).unwrap();
    let num = rng.gen_range(0..10).to_string();
    let num2 = rng.gen_range(1..10).to_string();

    let (text, recoverable): (Vec<&str>, Vec<usize>) = match rng.gen_range(0..5) {
        0 => (
            // return p1 op p2 -> both operands recoverable from the params
            vec![
                ty, name, "(", ty, p1, ",", ty, p2, ")", "{", "return", p1, op, p2, ";", "}",
            ],
            vec![11, 13],
        ),
        1 => (
            // the returned local is recoverable from the declaration
            vec![
                ty, name, "(", ty, p1, ")", "{", ty, local, "=", p1, op, &num, ";", "return",
                local, ";", "}",
            ],
            vec![15],
        ),
        2 => (
            vec![
                ty, name, "(", ty, p1, ",", ty, p2, ")", "{", "if", "(", p1, cmp, p2, ")", "{",
                "return", p1, ";", "}", "return", p2, ";", "}",
            ],
            vec![18, 22],
        ),
        3 => (
            // single parameter in scope: every usage is recoverable
            vec![
                ty, name, "(", ty, p1, ")", "{", "while", "(", p1, ">", &num2, ")", "{", p1,
                "=", p1, "-", &num2, ";", "}", "return", p1, ";", "}",
            ],
            vec![9, 14, 16, 22],
        ),
        _ => (
            vec![
                ty, name, "(", ty, p1, ")", "{", "if", "(", p1, eqcmp, "null", ")", "{",
                "return", &num, ";", "}", "return", p1, ";", "}",
            ],
            vec![9, 19],
        ),
    };
    Program {
        tokens: text.into_iter().map(|s| s.to_string()).collect(),
        recoverable_idents: recoverable,
    }
}

fn applicable_bugs(tokens: &[String], recoverable: &[usize]) -> Vec<Bug> {
    let mut bugs = Vec::new();
    for (pos, tok) in tokens.iter().enumerate() {
        if !typo_pool(tok).is_empty() {
            bugs.push(Bug::KeywordTypo { pos });
        }
        if tok == ";" {
            bugs.push(Bug::DropSemicolon { pos });
        }
        if matches!(tok.as_str(), "+" | "-" | "*" | "/" | "%" | ";" | "," | "==" | "!=") {
            bugs.push(Bug::DupToken { pos });
        }
        if matches!(tok.as_str(), "==" | "!=") {
            bugs.push(Bug::CorruptCmp { pos });
        }
    }
    for &pos in recoverable {
        bugs.push(Bug::JunkIdent { pos });
    }
    bugs
}

/// Applies `bugs` (already sorted by descending position) to a copy of the
/// fixed tokens.
fn apply_bugs(fixed: &[String], bugs: &[Bug], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut tokens: Vec<String> = fixed.to_vec();
    for &bug in bugs {
        match bug {
            Bug::KeywordTypo { pos } => {
                let pool = typo_pool(&tokens[pos]);
                tokens[pos] = pool.choose(rng).unwrap().to_string();
            }
            Bug::DropSemicolon { pos } => {
                tokens.remove(pos);
            }
            Bug::DupToken { pos } => {
                let copy = tokens[pos].clone();
                tokens.insert(pos + 1, copy);
            }
            Bug::CorruptCmp { pos } => {
                tokens[pos] = match tokens[pos].as_str() {
                    "==" => "=".to_string(),
                    _ => "!".to_string(),
                };
            }
            Bug::JunkIdent { pos } => {
                tokens[pos] = JUNK_IDENTS.choose(rng).unwrap().to_string();
            }
        }
    }
    tokens
}

/// Deterministically generates `count` buggy/fixed pairs. The same seed
/// yields a byte-identical corpus; distinct pairs have distinct buggy texts
/// so the bug-to-fix mapping is single-valued.
pub fn generate_toy_corpus(
    seed: u64,
    count: usize,
    grammar: &dyn GrammarProvider,
) -> Vec<CodePair> {
    assert!(count >= 1, "count must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen_buggy: HashSet<String> = HashSet::new();
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let program = sample_program(&mut rng);
        let fixed_text = program.tokens.join(" ");
        debug_assert!(
            grammar.parse(&fixed_text).is_ok(),
            "template emitted an unparseable program: {fixed_text}"
        );

        let candidates = applicable_bugs(&program.tokens, &program.recoverable_idents);
        let n_bugs = rng.gen_range(1..=3usize.min(candidates.len()));
        // Draw sites far enough apart that edits never interact.
        let mut chosen: Vec<Bug> = Vec::new();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut rng);
        for idx in order {
            let bug = candidates[idx];
            if chosen.iter().all(|c| c.pos().abs_diff(bug.pos()) >= 2) {
                chosen.push(bug);
                if chosen.len() == n_bugs {
                    break;
                }
            }
        }
        chosen.sort_by_key(|b| std::cmp::Reverse(b.pos()));
        let buggy_tokens = apply_bugs(&program.tokens, &chosen, &mut rng);
        let buggy_text = buggy_tokens.join(" ");
        debug_assert_ne!(buggy_text, fixed_text);
        if !seen_buggy.insert(buggy_text.clone()) {
            continue;
        }
        pairs.push(CodePair {
            id: format!("toy-{:06}", pairs.len()),
            buggy: buggy_text,
            fixed: fixed_text,
        });
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astdep::MiniGrammar;

    #[test]
    fn same_seed_gives_identical_corpora() {
        let g = MiniGrammar::new();
        let a = generate_toy_corpus(42, 50, &g);
        let b = generate_toy_corpus(42, 50, &g);
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let g = MiniGrammar::new();
        assert_ne!(generate_toy_corpus(1, 20, &g), generate_toy_corpus(2, 20, &g));
    }

    #[test]
    fn fixed_programs_parse_and_buggy_differs() {
        let g = MiniGrammar::new();
        for pair in generate_toy_corpus(7, 100, &g) {
            assert!(g.parse(&pair.fixed).is_ok(), "unparseable: {}", pair.fixed);
            assert_ne!(pair.buggy, pair.fixed);
        }
    }

    #[test]
    fn buggy_texts_are_unique() {
        let g = MiniGrammar::new();
        let corpus = generate_toy_corpus(3, 200, &g);
        let set: HashSet<&str> = corpus.iter().map(|p| p.buggy.as_str()).collect();
        assert_eq!(set.len(), corpus.len());
    }

    #[test]
    fn single_pair_generation_works() {
        let g = MiniGrammar::new();
        let corpus = generate_toy_corpus(1, 1, &g);
        assert_eq!(corpus.len(), 1);
    }

    #[test]
    fn every_typo_has_a_unique_canonical_form() {
        for original in ["return", "if", "while", "int", "float", "bool"] {
            for typo in typo_pool(original) {
                assert_eq!(canonical_of_typo(typo), Some(original));
            }
        }
        assert_eq!(canonical_of_typo("return"), None);
        assert_eq!(canonical_of_typo("qq"), None);
    }
}
