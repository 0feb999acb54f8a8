//! Word-level edit distance over whitespace tokens.

use crate::ingest::Sections;

pub fn word_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Levenshtein distance with unit insert/delete/substitute costs,
/// two-row dynamic programming.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, item_a) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, item_b) in b.iter().enumerate() {
            let cost = usize::from(item_a != item_b);
            cur[j + 1] = (cur[j] + 1).min(prev[j + 1] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Whitespace tokens of the four section bodies concatenated in
/// canonical order (summary, strengths, weaknesses, questions).
pub fn section_tokens(sections: &Sections) -> Vec<&str> {
    sections
        .ordered()
        .into_iter()
        .flat_map(|(_, text)| text.split_whitespace())
        .collect()
}

/// Word-level distance between two section sets.
pub fn section_word_distance(initial: &Sections, modified: &Sections) -> usize {
    levenshtein(&section_tokens(initial), &section_tokens(modified))
}
