use serde::{Deserialize, Serialize};
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    Whitespace,
    /// Whitespace splitting, then every Unicode punctuation character
    /// becomes its own token.
    PunctSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizationScheme {
    pub mode: TokenMode,
    pub lowercase: bool,
}

impl Default for TokenizationScheme {
    fn default() -> Self {
        Self {
            mode: TokenMode::PunctSplit,
            lowercase: true,
        }
    }
}

impl TokenizationScheme {
    pub const WHITESPACE: Self = Self {
        mode: TokenMode::Whitespace,
        lowercase: false,
    };
}

fn is_punctuation(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

pub fn tokenize(text: &str, scheme: TokenizationScheme) -> Vec<String> {
    let text = if scheme.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        match scheme.mode {
            TokenMode::Whitespace => tokens.push(word.to_string()),
            TokenMode::PunctSplit => {
                let mut current = String::new();
                for c in word.chars() {
                    if is_punctuation(c) {
                        if !current.is_empty() {
                            tokens.push(std::mem::take(&mut current));
                        }
                        tokens.push(c.to_string());
                    } else {
                        current.push(c);
                    }
                }
                if !current.is_empty() {
                    tokens.push(current);
                }
            }
        }
    }
    tokens
}
