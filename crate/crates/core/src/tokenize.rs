//! Token counting for diagnostics and corpus statistics.
//!
//! Counts never drive control flow except for explicit budget checks.

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Splits on whitespace, then treats each run of alphanumeric characters as one
/// token and every other visible character as its own token.
///
/// `"Hello, world!"` counts as 4 tokens: `Hello`, `,`, `world`, `!`.
#[derive(Debug, Default, Clone, Copy)]
pub struct WordPunctTokenizer;

impl Tokenizer for WordPunctTokenizer {
    fn count(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    count += 1;
                }
            }
        }
        count
    }
}
