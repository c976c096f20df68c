//! Token vocabulary with reserved control symbols.

use std::collections::BTreeMap;

pub const PAD_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const BOS_ID: usize = 3;
pub const EOS_ID: usize = 4;
/// Number of reserved ids; real tokens start here.
pub const RESERVED: usize = 5;

const RESERVED_TOKENS: [&str; RESERVED] = ["<pad>", "<mask>", "<unk>", "<bos>", "<eos>"];

/// Bijective token/id mapping. Ids 0..RESERVED are control symbols that the
/// lexer can never produce (it splits `<unk>` into three tokens).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_sorted_tokens(tokens: Vec<String>) -> Self {
        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { token_to_id, id_to_token }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id_of(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token_of(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_of(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.id_to_token[i].clone()).collect()
    }

    /// One real token per line; line number = id - RESERVED.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for token in &self.id_to_token[RESERVED..] {
            out.push_str(token);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Self {
        let tokens: Vec<String> =
            text.lines().filter(|l| !l.is_empty()).map(|l| l.to_string()).collect();
        Self::from_sorted_tokens(tokens)
    }
}

/// Builds a vocabulary over every token with frequency >= `min_freq`.
/// Id assignment is frequency-descending with a lexicographic tie-break, so
/// the result is a pure function of the input multiset.
pub fn build_vocab<'a>(
    sequences: impl IntoIterator<Item = &'a [String]>,
    min_freq: usize,
) -> Vocabulary {
    assert!(min_freq >= 1, "min_freq must be at least 1");
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in sequences {
        for token in seq {
            *freq.entry(token).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> =
        freq.into_iter().filter(|&(_, f)| f >= min_freq).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_sorted_tokens(entries.into_iter().map(|(t, _)| t.to_string()).collect())
}
