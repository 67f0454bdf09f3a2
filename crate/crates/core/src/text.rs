//! Tokenization and small string helpers shared by search, listing
//! resolution and knowledge retrieval.

use std::collections::BTreeSet;
use std::sync::OnceLock;

const STOPWORDS_SRC: &str = include_str!("../data/stopwords.txt");

/// Suffix appended to any text cut short by [`truncate_chars`].
pub const TRUNCATION_SUFFIX: &str = "…[truncated]";

/// Case-folded alphanumeric tokens, in order of appearance.
///
/// Everything that is not alphanumeric acts as a separator, so `"iPhone-13!"`
/// yields `["iphone", "13"]`.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Distinct tokens of `text`.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

pub fn stopwords() -> &'static BTreeSet<&'static str> {
    static WORDS: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        STOPWORDS_SRC
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Overlap score between a reference text and a titled document.
///
/// Each distinct token of `query` contributes 2 when it occurs in `title`,
/// otherwise 1 when it occurs in `body`, otherwise nothing.
pub fn overlap_score(query: &BTreeSet<String>, title: &str, body: &str) -> u32 {
    if query.is_empty() {
        return 0;
    }
    let title_tokens = token_set(title);
    let body_tokens = token_set(body);
    query
        .iter()
        .map(|t| {
            if title_tokens.contains(t) {
                2
            } else if body_tokens.contains(t) {
                1
            } else {
                0
            }
        })
        .sum()
}

/// Cuts `text` to at most `limit` characters, marking the cut with
/// [`TRUNCATION_SUFFIX`]. The result never exceeds `limit` characters.
pub fn truncate_chars(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let suffix_len = TRUNCATION_SUFFIX.chars().count();
    if limit <= suffix_len {
        return text.chars().take(limit).collect();
    }
    let mut out: String = text.chars().take(limit - suffix_len).collect();
    out.push_str(TRUNCATION_SUFFIX);
    out
}

/// First `limit` characters of `text`, without any marker.
pub fn excerpt(text: &str, limit: usize) -> String {
    text.chars().take(limit).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_fold_case_and_strip_punctuation() {
        assert_eq!(tokens("Used iPhone-13, $200!"), vec!["used", "iphone", "13", "200"]);
        assert!(tokens("  ...  ").is_empty());
    }

    #[test]
    fn fifty_stopwords_ship_with_the_crate() {
        assert_eq!(stopwords().len(), 50);
        assert!(is_stopword("the"));
        assert!(!is_stopword("renew"));
    }

    #[test]
    fn title_hits_count_double() {
        let q = token_set("meta quest headset");
        // meta, quest in title (2+2); headset only in body (1)
        assert_eq!(overlap_score(&q, "Meta Quest 2", "VR headset"), 5);
        assert_eq!(overlap_score(&q, "Sofa", "grey couch"), 0);
    }

    #[test]
    fn truncation_respects_limit() {
        let long = "x".repeat(2500);
        let cut = truncate_chars(&long, 2000);
        assert_eq!(cut.chars().count(), 2000);
        assert!(cut.ends_with(TRUNCATION_SUFFIX));
        assert_eq!(truncate_chars("short", 2000), "short");
    }
}
