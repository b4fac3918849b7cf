//! Text normalization, tokenization, stemming, negation-scope marking and
//! sentence segmentation.
//!
//! Every function here is pure. [`preprocess`] chains them in the order the
//! rest of the pipeline relies on: normalize, break into clauses at
//! punctuation, tokenize, mark negation within each clause, then stem.

mod porter;

use std::collections::BTreeSet;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use porter::porter_stem;

/// Prefix carried by tokens inside a negation scope.
pub const NEGATION_PREFIX: &str = "NEG_";

/// Tokens of one text, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSequence(tokens)
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}

impl Deref for TokenSequence {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().map(Into::into).collect())
    }
}

impl IntoIterator for TokenSequence {
    type Item = String;
    type IntoIter = std::vec::IntoIter<String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub stem: bool,
    pub mark_negation: bool,
    /// Whole-token cues. Any token ending in `n't` is a cue as well.
    pub negation_cues: BTreeSet<String>,
    /// Maximum number of tokens marked after a cue.
    pub negation_scope: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            stem: true,
            mark_negation: true,
            negation_cues: ["not", "no", "never", "cannot"]
                .into_iter()
                .map(String::from)
                .collect(),
            negation_scope: 3,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mark_negation && self.negation_scope == 0 {
            return Err(Error::Config(
                "prep.negation_scope must be at least 1 when negation marking is on".into(),
            ));
        }
        Ok(())
    }

    fn is_cue(&self, token: &str) -> bool {
        token.ends_with("n't") || self.negation_cues.contains(token)
    }
}

/// Lowercases, strips HTML tags, turns control characters into spaces and
/// collapses whitespace runs to a single space.
pub fn normalize(text: &str) -> String {
    let stripped = strip_tags(text);
    let mut out = String::with_capacity(stripped.len());
    let mut pending_space = false;
    for c in stripped.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() || c.is_control() {
            pending_space = true;
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

/// Replaces every `<tag ...>` with a space. A tag opens with `<` followed by a
/// letter, `/` or `!` and runs to the next `>`; an unclosed `<` is kept.
fn strip_tags(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('<') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let opens_tag = after
            .chars()
            .next()
            .is_some_and(|c| c.is_alphabetic() || c == '/' || c == '!');
        match after.find('>') {
            Some(close) if opens_tag => {
                out.push(' ');
                rest = &after[close + 1..];
            }
            _ => {
                out.push('<');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Splits on every character that is neither alphanumeric nor an apostrophe.
/// Apostrophes at the edges of a fragment are trimmed, so contractions stay
/// whole while quoted words lose their quotes.
pub fn tokenize(text: &str) -> TokenSequence {
    text.split(|c: char| !(c.is_alphanumeric() || is_apostrophe(c)))
        .map(|fragment| fragment.trim_matches(is_apostrophe))
        .filter(|fragment| !fragment.is_empty())
        .map(|fragment| fragment.replace('\u{2019}', "'"))
        .collect()
}

/// Porter-stems each token; a negation prefix is kept and only the word after
/// it is stemmed.
pub fn stem(tokens: &TokenSequence) -> TokenSequence {
    tokens
        .iter()
        .map(|token| match token.strip_prefix(NEGATION_PREFIX) {
            Some(word) => format!("{NEGATION_PREFIX}{}", porter_stem(word)),
            None => porter_stem(token),
        })
        .collect()
}

/// Prefixes up to `negation_scope` tokens after each cue with `NEG_`. A cue
/// inside a scope restarts it and is itself left unmarked. Tokens already
/// carrying the prefix are left alone.
///
/// The token sequence is treated as one clause; [`preprocess`] calls this per
/// punctuation-delimited clause so scopes stop at punctuation.
pub fn mark_negation(tokens: &TokenSequence, cfg: &PrepConfig) -> TokenSequence {
    if !cfg.mark_negation {
        return tokens.clone();
    }
    let mut remaining = 0;
    tokens
        .iter()
        .map(|token| {
            if cfg.is_cue(token) {
                remaining = cfg.negation_scope;
                token.clone()
            } else if remaining > 0 {
                remaining -= 1;
                if token.starts_with(NEGATION_PREFIX) {
                    token.clone()
                } else {
                    format!("{NEGATION_PREFIX}{token}")
                }
            } else {
                token.clone()
            }
        })
        .collect()
}

fn is_sentence_end(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits after `.`, `!` or `?` when followed by whitespace or the end of the
/// text. Sentences are trimmed; ones without any token are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !is_sentence_end(c) {
            continue;
        }
        let boundary = match chars.peek() {
            None => true,
            Some(&(_, next)) => next.is_whitespace(),
        };
        if boundary {
            let end = i + c.len_utf8();
            sentences.push(&text[start..end]);
            start = end;
        }
    }
    sentences.push(&text[start..]);
    sentences
        .into_iter()
        .map(str::trim)
        .filter(|s| !tokenize(s).is_empty())
        .map(String::from)
        .collect()
}

fn is_clause_break(c: char) -> bool {
    matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '(' | ')' | '"')
}

/// Full token pipeline for one text.
pub fn preprocess(text: &str, cfg: &PrepConfig) -> TokenSequence {
    let normalized = normalize(text);
    let mut out = Vec::new();
    for clause in normalized.split(is_clause_break) {
        let tokens = tokenize(clause);
        if tokens.is_empty() {
            continue;
        }
        let marked = mark_negation(&tokens, cfg);
        let finished = if cfg.stem { stem(&marked) } else { marked };
        out.extend(finished);
    }
    TokenSequence(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> TokenSequence {
        words.iter().copied().collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("Loved IT!!<br />So GOOD"), "loved it!! so good");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("A  B\tC"), "a b c");
        assert_eq!(normalize("  x\u{0007}y \n"), "x y");
        assert_eq!(normalize("a < b"), "a < b");
        assert_eq!(normalize("<i>Great</i> film"), "great film");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("great movie"), toks(&["great", "movie"]));
        assert_eq!(tokenize("don't stop!"), toks(&["don't", "stop"]));
        assert!(tokenize("!!!").is_empty());
        assert_eq!(tokenize("'quoted' it\u{2019}s"), toks(&["quoted", "it's"]));
        assert!(tokenize("' '' -").is_empty());
    }

    #[test]
    fn stem_examples() {
        assert_eq!(stem(&toks(&["loved"])), toks(&["love"]));
        assert_eq!(stem(&toks(&["caresses"])), toks(&["caress"]));
        assert!(stem(&toks(&[])).is_empty());
        assert_eq!(stem(&toks(&["NEG_loved"])), toks(&["NEG_love"]));
    }

    #[test]
    fn negation_examples() {
        let cfg = PrepConfig::default();
        assert_eq!(
            mark_negation(&toks(&["not", "good"]), &cfg),
            toks(&["not", "NEG_good"])
        );
        assert_eq!(
            mark_negation(&toks(&["never", "boring", "but", "fun"]), &cfg),
            toks(&["never", "NEG_boring", "NEG_but", "NEG_fun"])
        );
        assert_eq!(mark_negation(&toks(&["good"]), &cfg), toks(&["good"]));
        assert_eq!(
            mark_negation(&toks(&["didn't", "like", "it", "at", "all"]), &cfg),
            toks(&["didn't", "NEG_like", "NEG_it", "NEG_at", "all"])
        );
        assert_eq!(
            mark_negation(&toks(&["not", "never", "good"]), &cfg),
            toks(&["not", "never", "NEG_good"])
        );
    }

    #[test]
    fn negation_scope_stops_at_punctuation() {
        let cfg = PrepConfig {
            stem: false,
            ..PrepConfig::default()
        };
        assert_eq!(
            preprocess("Not good, great acting", &cfg),
            toks(&["not", "NEG_good", "great", "acting"])
        );
    }

    #[test]
    fn zero_scope_is_rejected() {
        let cfg = PrepConfig {
            negation_scope: 0,
            ..PrepConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(split_sentences("Good. Bad."), vec!["Good.", "Bad."]);
        assert_eq!(split_sentences("no delimiters here"), vec!["no delimiters here"]);
        assert_eq!(split_sentences("A! B? C."), vec!["A!", "B?", "C."]);
        assert_eq!(split_sentences("Wow!!! 3.5 stars ... ok"), vec!["Wow!!!", "3.5 stars ...", "ok"]);
        assert!(split_sentences("").is_empty());
    }

    #[test]
    fn preprocess_pipeline() {
        let cfg = PrepConfig::default();
        assert_eq!(
            preprocess("I didn't love it.<br /><br />Boring!", &cfg),
            toks(&["i", "didn't", "NEG_love", "NEG_it", "bore"])
        );
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(text in "[a-zA-Z <>/!.\t\n\u{0}-\u{1f}é]{0,40}") {
            let once = normalize(&text);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn tokens_are_nonempty_without_whitespace(text in "\\PC{0,60}") {
            for token in tokenize(&normalize(&text)).iter() {
                prop_assert!(!token.is_empty());
                prop_assert!(!token.chars().any(char::is_whitespace));
            }
        }

        #[test]
        fn negation_preserves_length_and_never_double_prefixes(
            words in proptest::collection::vec("(not|no|never|don't|NEG_x|good|bad|fun)", 0..20),
            scope in 1usize..5,
        ) {
            let cfg = PrepConfig { negation_scope: scope, ..PrepConfig::default() };
            let tokens: TokenSequence = words.iter().map(String::as_str).collect();
            let marked = mark_negation(&tokens, &cfg);
            prop_assert_eq!(marked.len(), tokens.len());
            prop_assert!(marked.iter().all(|t| !t.starts_with("NEG_NEG_")));
            let twice = mark_negation(&marked, &cfg);
            prop_assert!(twice.iter().all(|t| !t.starts_with("NEG_NEG_")));
        }

        #[test]
        fn preprocess_is_deterministic(text in "\\PC{0,80}") {
            let cfg = PrepConfig::default();
            prop_assert_eq!(preprocess(&text, &cfg), preprocess(&text, &cfg));
        }
    }
}
