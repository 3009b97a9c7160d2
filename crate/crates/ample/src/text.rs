//! Shared tokenization: lowercase words split on non-alphanumeric boundaries.
//!
//! Both the sentiment analyzer and the prompt vocabulary use this tokenizer
//! so that lexicon matching and prompt assembly agree on word boundaries.

/// Splits `text` into lowercase tokens on any non-alphanumeric character.
/// Empty fragments are dropped, so punctuation never yields a token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("This is GREAT, really!"),
            vec!["this", "is", "great", "really"]
        );
    }

    #[test]
    fn empty_and_punctuation_only_texts_yield_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("... --- !!!").is_empty());
    }

    #[test]
    fn keeps_digits() {
        assert_eq!(tokenize("24 hours"), vec!["24", "hours"]);
    }
}
