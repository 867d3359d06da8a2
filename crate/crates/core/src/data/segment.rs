//! Rule-based sentence segmentation.
//!
//! A sentence ends at a word whose last character (ignoring trailing closing
//! quotes and brackets) is one of `.`, `!`, `?`, unless the word is a known
//! abbreviation. Words are whitespace-delimited, so a terminator only ends a
//! sentence when followed by whitespace or end of input. Blank lines always
//! end a sentence. Whitespace inside a sentence collapses to single spaces.

use super::{normalize, SourceSentence};

/// Lowercased abbreviations that never end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "etc.", "e.g.", "i.e.",
    "cf.", "approx.", "no.", "fig.", "inc.", "ltd.", "co.",
];

const TERMINATORS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 9] = ['"', '\'', '”', '’', '»', ')', ']', '}', '›'];

fn ends_sentence(word: &str) -> bool {
    let core = word.trim_end_matches(CLOSERS);
    if !core.ends_with(TERMINATORS) {
        return false;
    }
    let lower = core.to_lowercase();
    !ABBREVIATIONS.contains(&lower.as_str())
}

/// Segments `raw_text` into sentences, labelling origins with `"corpus"`.
pub fn segment_corpus(raw_text: &str) -> Vec<SourceSentence> {
    segment_corpus_labeled(raw_text, "corpus")
}

/// Segments `raw_text`; each origin is `"{label}:{line}:{index}"` where
/// `line` is the 1-based line of the sentence's first word and `index` the
/// 0-based sentence position.
pub fn segment_corpus_labeled(raw_text: &str, label: &str) -> Vec<SourceSentence> {
    let text = normalize(raw_text);
    let mut out = Vec::new();
    let mut words: Vec<&str> = Vec::new();
    let mut start_line = 0;

    let flush = |words: &mut Vec<&str>, start_line: usize, out: &mut Vec<SourceSentence>| {
        if words.is_empty() {
            return;
        }
        let sentence = words.join(" ");
        words.clear();
        let origin = format!("{label}:{start_line}:{}", out.len());
        // join of non-empty whitespace-free words cannot be blank or contain newlines
        if let Ok(s) = SourceSentence::new(&sentence, origin) {
            out.push(s);
        }
    };

    for (line_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            flush(&mut words, start_line, &mut out);
            continue;
        }
        for word in line.split_whitespace() {
            if words.is_empty() {
                start_line = line_idx + 1;
            }
            words.push(word);
            if ends_sentence(word) {
                flush(&mut words, start_line, &mut out);
            }
        }
    }
    flush(&mut words, start_line, &mut out);
    out
}
