//! Keyword normalization: case folding, edge punctuation, whitespace and a
//! light suffix lemmatizer.

use std::collections::{BTreeSet, HashSet};

/// Word list consulted by the `-ing`/`-ed` lemmatizer.
pub trait Vocabulary {
    fn contains_word(&self, word: &str) -> bool;
}

impl Vocabulary for HashSet<String> {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

impl Vocabulary for BTreeSet<String> {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

// Words ending in "s" that are not plurals.
const NOT_PLURAL: &[&str] = &[
    "always",
    "perhaps",
    "sometimes",
    "yes",
    "lens",
    "news",
    "series",
    "species",
    "thus",
    "whereas",
    "besides",
    "towards",
    "afterwards",
    "upwards",
    "downwards",
    "backwards",
    "forwards",
    "nowadays",
    "chaos",
    "canvas",
    "atlas",
    "alias",
    "bias",
    "gas",
    "its",
    "this",
    "has",
    "was",
    "does",
    "goes",
    "unless",
    "whereabouts",
    "mathematics",
    "physics",
    "electronics",
    "acoustics",
    "dynamics",
    "mechanics",
    "aesthetics",
    "haptics",
    "ethics",
    "tennis",
    "billiards",
    "measles",
    "headphones",
    "pants",
    "scissors",
    "glasses",
    "jeans",
    "lots",
    "plus",
];

/// Normalizes a surface keyword without a vocabulary: plural suffixes are
/// stripped by rule, `-ing`/`-ed` forms are kept.
pub fn normalize_keyword(surface: &str) -> String {
    normalize_keyword_with(surface, None)
}

/// Lowercases, trims punctuation from token edges, collapses whitespace and
/// lemmatizes each purely alphabetic token.
///
/// With a vocabulary, a token that is not itself a vocabulary word is
/// reduced from `-ing`/`-ed` to a base form when that base is known, and a
/// plural is only reduced when the singular is known. The function is
/// idempotent for any fixed vocabulary.
pub fn normalize_keyword_with(surface: &str, vocab: Option<&dyn Vocabulary>) -> String {
    let lowered = surface.to_lowercase();
    let tokens: Vec<String> = lowered
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t.chars().all(|c| c.is_ascii_lowercase()) {
                lemmatize(t, vocab)
            } else {
                t.to_string()
            }
        })
        .collect();
    tokens.join(" ")
}

fn lemmatize(token: &str, vocab: Option<&dyn Vocabulary>) -> String {
    let Some(vocab) = vocab else {
        return strip_plural(token).to_string();
    };
    let known = |w: &str| vocab.contains_word(w);
    let singular_if_known = |w: &str| -> String {
        let s = strip_plural(w);
        if s != w && known(&s) {
            s.to_string()
        } else {
            w.to_string()
        }
    };
    if known(token) {
        return singular_if_known(token);
    }
    let singular = strip_plural(token);
    if known(&singular) {
        return singular.to_string();
    }
    if let Some(base) = verb_base_candidates(&singular).into_iter().find(|b| known(b)) {
        return singular_if_known(&base);
    }
    singular.to_string()
}

/// Rule-based plural stripping. Idempotent: the result never ends in an
/// unprotected "s".
pub fn strip_plural(word: &str) -> std::borrow::Cow<'_, str> {
    use std::borrow::Cow;
    let n = word.len();
    if n <= 3
        || !word.ends_with('s')
        || word.ends_with("ss")
        || word.ends_with("us")
        || word.ends_with("is")
        || NOT_PLURAL.contains(&word)
    {
        return Cow::Borrowed(word);
    }
    if n > 4 && word.ends_with("ies") {
        return Cow::Owned(format!("{}y", &word[..n - 3]));
    }
    for suffix in ["sses", "xes", "zzes", "ches", "shes"] {
        if word.ends_with(suffix) {
            return Cow::Borrowed(&word[..n - 2]);
        }
    }
    Cow::Borrowed(&word[..n - 1])
}

fn verb_base_candidates(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut push_stem = |stem: &str| {
        if stem.len() < 2 {
            return;
        }
        out.push(stem.to_string());
        out.push(format!("{stem}e"));
        let b = stem.as_bytes();
        if b.len() >= 3 && b[b.len() - 1] == b[b.len() - 2] {
            out.push(stem[..stem.len() - 1].to_string());
        }
    };
    if let Some(stem) = word.strip_suffix("ing") {
        push_stem(stem);
    } else if let Some(stem) = word.strip_suffix("ied") {
        out.push(format!("{stem}y"));
    } else if let Some(stem) = word.strip_suffix("ed") {
        push_stem(stem);
        // "excited" -> "excit" + "e" is covered above; "pulsed" -> "puls" + "e"
    }
    out
}
