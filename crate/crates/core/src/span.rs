//! Character-offset span sets and the alignment machinery that recovers
//! toxic spans by diffing an original text against a generated rewrite.
//!
//! Offsets are 0-based character (not byte) indices. Intervals are
//! half-open `[start, end)` and always maximal: two adjacent intervals
//! are merged into one.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpanError {
    #[error("span offset {offset} out of range for text of {len} characters")]
    OffsetOutOfRange { offset: usize, len: usize },
}

/// A set of character offsets plus the maximal contiguous intervals they form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpanSet {
    offsets: BTreeSet<usize>,
}

impl SpanSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_offsets<I: IntoIterator<Item = usize>>(offsets: I) -> Self {
        Self {
            offsets: offsets.into_iter().collect(),
        }
    }

    /// Builds a span set from half-open `[start, end)` intervals.
    pub fn from_intervals(intervals: &[(usize, usize)]) -> Self {
        let mut offsets = BTreeSet::new();
        for &(start, end) in intervals {
            offsets.extend(start..end);
        }
        Self { offsets }
    }

    pub fn insert(&mut self, offset: usize) {
        self.offsets.insert(offset);
    }

    pub fn contains(&self, offset: usize) -> bool {
        self.offsets.contains(&offset)
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.offsets.iter().copied()
    }

    pub fn intersection_count(&self, other: &SpanSet) -> usize {
        if self.len() <= other.len() {
            self.iter().filter(|o| other.contains(*o)).count()
        } else {
            other.iter().filter(|o| self.contains(*o)).count()
        }
    }

    /// Maximal half-open intervals covering the offsets, sorted ascending.
    pub fn intervals(&self) -> Vec<(usize, usize)> {
        let mut intervals = Vec::new();
        let mut run: Option<(usize, usize)> = None;
        for &off in &self.offsets {
            match run {
                Some((start, end)) if off == end => run = Some((start, end + 1)),
                Some(done) => {
                    intervals.push(done);
                    run = Some((off, off + 1));
                }
                None => run = Some((off, off + 1)),
            }
        }
        if let Some(done) = run {
            intervals.push(done);
        }
        intervals
    }

    /// Checks that every offset indexes a character of `text`.
    pub fn validate_for(&self, text: &str) -> Result<(), SpanError> {
        let len = text.chars().count();
        if let Some(&max) = self.offsets.iter().next_back() {
            if max >= len {
                return Err(SpanError::OffsetOutOfRange { offset: max, len });
            }
        }
        Ok(())
    }
}

impl FromIterator<usize> for SpanSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::from_offsets(iter)
    }
}

/// Maximal half-open intervals of a span set, sorted ascending.
pub fn span_offsets_to_intervals(spans: &SpanSet) -> Vec<(usize, usize)> {
    spans.intervals()
}

/// Deletes the characters at the span offsets.
///
/// Whitespace runs that a deletion created or touched collapse to a single
/// space and the result is trimmed; with no spans the text passes through
/// unchanged.
pub fn remove_spans(text: &str, spans: &SpanSet) -> Result<String, SpanError> {
    spans.validate_for(text)?;
    if spans.is_empty() {
        return Ok(text.to_string());
    }

    // Surviving chars, each tagged with whether a deletion happened
    // immediately before it.
    let mut survivors: Vec<(char, bool)> = Vec::new();
    let mut pending_deletion = false;
    for (idx, ch) in text.chars().enumerate() {
        if spans.contains(idx) {
            pending_deletion = true;
        } else {
            survivors.push((ch, pending_deletion));
            pending_deletion = false;
        }
    }
    let deletion_at_end = pending_deletion;

    let mut out = String::new();
    let mut i = 0;
    while i < survivors.len() {
        let (ch, _) = survivors[i];
        if !ch.is_whitespace() {
            out.push(ch);
            i += 1;
            continue;
        }
        // Maximal whitespace run [i, j).
        let mut j = i;
        let mut touched = false;
        while j < survivors.len() && survivors[j].0.is_whitespace() {
            touched |= survivors[j].1;
            j += 1;
        }
        // A deletion just past the run also counts as touching it.
        touched |= if j < survivors.len() {
            survivors[j].1
        } else {
            deletion_at_end
        };
        if touched {
            out.push(' ');
        } else {
            out.extend(survivors[i..j].iter().map(|(c, _)| c));
        }
        i = j;
    }
    Ok(out.trim().to_string())
}

/// Trims each maximal interval so it neither starts nor ends on whitespace.
/// Interior whitespace is kept.
pub fn trim_spans(text: &str, spans: &SpanSet) -> SpanSet {
    let chars: Vec<char> = text.chars().collect();
    let mut out = SpanSet::new();
    for (mut start, mut end) in spans.intervals() {
        while start < end && start < chars.len() && chars[start].is_whitespace() {
            start += 1;
        }
        while end > start && end <= chars.len() && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        for off in start..end {
            out.insert(off);
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct AlignScore {
    matches: u32,
    // Number of maximal runs of unmatched original characters; fewer runs
    // means more contiguous deletions.
    blocks: u32,
}

impl AlignScore {
    const ZERO: AlignScore = AlignScore {
        matches: 0,
        blocks: 0,
    };

    fn plus(self, matches: u32, blocks: u32) -> AlignScore {
        AlignScore {
            matches: self.matches + matches,
            blocks: self.blocks + blocks,
        }
    }

    fn better_than(self, other: AlignScore) -> bool {
        self.matches > other.matches
            || (self.matches == other.matches && self.blocks < other.blocks)
    }
}

/// Alignment table over suffixes of (original, generated).
///
/// State is (i, j, open) where `open` records whether original index `i-1`
/// was left unmatched, so a deletion at `i` extends that run instead of
/// opening a new one.
struct AlignTable<'a> {
    orig: &'a [char],
    gen: &'a [char],
    table: Vec<AlignScore>,
}

impl<'a> AlignTable<'a> {
    fn build(orig: &'a [char], gen: &'a [char]) -> Self {
        let (n, m) = (orig.len(), gen.len());
        let mut t = AlignTable {
            orig,
            gen,
            table: vec![AlignScore::ZERO; (n + 1) * (m + 1) * 2],
        };
        for i in (0..=n).rev() {
            for j in (0..=m).rev() {
                for open in 0..2 {
                    let score = t.compute(i, j, open == 1);
                    *t.slot(i, j, open == 1) = score;
                }
            }
        }
        t
    }

    fn idx(&self, i: usize, j: usize, open: bool) -> usize {
        (i * (self.gen.len() + 1) + j) * 2 + open as usize
    }

    fn slot(&mut self, i: usize, j: usize, open: bool) -> &mut AlignScore {
        let idx = self.idx(i, j, open);
        &mut self.table[idx]
    }

    fn get(&self, i: usize, j: usize, open: bool) -> AlignScore {
        self.table[self.idx(i, j, open)]
    }

    fn compute(&self, i: usize, j: usize, open: bool) -> AlignScore {
        let (n, m) = (self.orig.len(), self.gen.len());
        if i == n && j == m {
            return AlignScore::ZERO;
        }
        let mut best: Option<AlignScore> = None;
        let mut consider = |s: AlignScore| match best {
            Some(b) if !s.better_than(b) => {}
            _ => best = Some(s),
        };
        if i < n && j < m && self.orig[i] == self.gen[j] {
            consider(self.get(i + 1, j + 1, false).plus(1, 0));
        }
        if j < m {
            consider(self.get(i, j + 1, open));
        }
        if i < n {
            let new_block = if open { 0 } else { 1 };
            consider(self.get(i + 1, j, true).plus(0, new_block));
        }
        best.expect("at least one move is available")
    }
}

/// Offsets of `original` characters not covered by the canonical alignment
/// against `generated`.
///
/// The alignment maximizes matched characters, then minimizes the number of
/// unmatched runs in the original, then matches as early in the original as
/// possible. Resulting spans are trimmed so no interval starts or ends on
/// whitespace. Total: any pair of strings aligns.
pub fn subtract_spans(original: &str, generated: &str) -> SpanSet {
    if original == generated {
        return SpanSet::new();
    }
    let orig: Vec<char> = original.chars().collect();
    let gen: Vec<char> = generated.chars().collect();
    let table = AlignTable::build(&orig, &gen);

    let mut unmatched = SpanSet::new();
    let (mut i, mut j, mut open) = (0usize, 0usize, false);
    let (n, m) = (orig.len(), gen.len());
    while i < n || j < m {
        let want = table.get(i, j, open);
        // Move priority among score-preserving options: match first (earliest
        // original characters get matched), then skip a generated character,
        // then mark an original character unmatched.
        if i < n && j < m && orig[i] == gen[j] && table.get(i + 1, j + 1, false).plus(1, 0) == want
        {
            i += 1;
            j += 1;
            open = false;
            continue;
        }
        if j < m && table.get(i, j + 1, open) == want {
            j += 1;
            continue;
        }
        let new_block = if open { 0 } else { 1 };
        debug_assert!(table.get(i + 1, j, true).plus(0, new_block) == want);
        unmatched.insert(i);
        i += 1;
        open = true;
    }
    trim_spans(original, &unmatched)
}

/// One line of the span report format: text plus offsets and intervals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanReportLine {
    pub text: String,
    pub offsets: Vec<usize>,
    pub intervals: Vec<(usize, usize)>,
}

impl SpanReportLine {
    pub fn new(text: &str, spans: &SpanSet) -> Self {
        Self {
            text: text.to_string(),
            offsets: spans.iter().collect(),
            intervals: spans.intervals(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn spans(offsets: &[usize]) -> SpanSet {
        SpanSet::from_offsets(offsets.iter().copied())
    }

    /// Offsets of every character of `word` inside `text` (first occurrence).
    fn word_offsets(text: &str, word: &str) -> Vec<usize> {
        let start = text.find(word).expect("word present");
        let char_start = text[..start].chars().count();
        (char_start..char_start + word.chars().count()).collect()
    }

    #[test]
    fn remove_spans_deletes_and_collapses() {
        let out = remove_spans("a bad dog", &spans(&[2, 3, 4])).unwrap();
        assert_eq!(out, "a dog");
    }

    #[test]
    fn remove_spans_empty_is_identity() {
        assert_eq!(remove_spans("a  b ", &SpanSet::new()).unwrap(), "a  b ");
        assert_eq!(remove_spans("", &SpanSet::new()).unwrap(), "");
    }

    #[test]
    fn remove_spans_toxic_span_example() {
        let text = "keep hiring imbeciles like this jerk and you will end up \
                    with a no firearms for rent-a-cops bill next session.";
        let mut offsets = word_offsets(text, "imbeciles");
        offsets.extend(word_offsets(text, "jerk"));
        let out = remove_spans(text, &spans(&offsets)).unwrap();
        assert_eq!(
            out,
            "keep hiring like this and you will end up with a no firearms \
             for rent-a-cops bill next session."
        );
    }

    #[test]
    fn remove_spans_rejects_out_of_range() {
        let err = remove_spans("abc", &spans(&[3])).unwrap_err();
        assert!(matches!(err, SpanError::OffsetOutOfRange { offset: 3, len: 3 }));
    }

    #[test]
    fn remove_spans_at_edges() {
        assert_eq!(remove_spans("bad dog", &spans(&[0, 1, 2])).unwrap(), "dog");
        assert_eq!(remove_spans("dog bad", &spans(&[4, 5, 6])).unwrap(), "dog");
        assert_eq!(remove_spans("abc", &spans(&[0, 1, 2])).unwrap(), "");
    }

    #[test]
    fn subtract_spans_recovers_deleted_word() {
        assert_eq!(subtract_spans("a bad dog", "a dog"), spans(&[2, 3, 4]));
    }

    #[test]
    fn subtract_spans_identity_is_empty() {
        assert_eq!(subtract_spans("", ""), SpanSet::new());
        assert_eq!(subtract_spans("abc def", "abc def"), SpanSet::new());
    }

    #[test]
    fn subtract_spans_everything_removed() {
        let got = subtract_spans("bad", "");
        assert_eq!(got, spans(&[0, 1, 2]));
    }

    #[test]
    fn subtract_spans_multiple_words() {
        let text = "keep hiring imbeciles like this jerk and you will end up";
        let generated = "keep hiring like this and you will end up";
        let mut expected: Vec<usize> = word_offsets(text, "imbeciles");
        expected.extend(word_offsets(text, "jerk"));
        assert_eq!(subtract_spans(text, generated), spans(&expected));
    }

    #[test]
    fn intervals_follow_half_open_convention() {
        assert_eq!(spans(&(13..=21).collect::<Vec<_>>()).intervals(), vec![(13, 22)]);
        assert_eq!(SpanSet::new().intervals(), vec![]);
        assert_eq!(spans(&[1, 2, 4]).intervals(), vec![(1, 3), (4, 5)]);
    }

    #[test]
    fn span_set_from_intervals_round_trips() {
        let s = SpanSet::from_intervals(&[(1, 3), (4, 5)]);
        assert_eq!(s, spans(&[1, 2, 4]));
        assert_eq!(span_offsets_to_intervals(&s), vec![(1, 3), (4, 5)]);
    }

    /// Exhaustive reference for the canonical alignment: enumerate every
    /// monotone matching, keep the maximum-cardinality ones, then minimize
    /// unmatched runs, then take the lexicographically smallest matched
    /// sequence of original indices.
    fn oracle_subtract(original: &str, generated: &str) -> SpanSet {
        let orig: Vec<char> = original.chars().collect();
        let gen: Vec<char> = generated.chars().collect();
        let mut matchings: HashSet<Vec<usize>> = HashSet::new();
        let mut current = Vec::new();
        enumerate(&orig, &gen, 0, 0, &mut current, &mut matchings);

        let max_len = matchings.iter().map(|m| m.len()).max().unwrap_or(0);
        let mut best: Option<(u32, Vec<usize>)> = None;
        for matched in matchings.iter().filter(|m| m.len() == max_len) {
            let unmatched: Vec<usize> =
                (0..orig.len()).filter(|i| !matched.contains(i)).collect();
            let blocks = SpanSet::from_offsets(unmatched.iter().copied())
                .intervals()
                .len() as u32;
            let candidate = (blocks, matched.clone());
            match &best {
                Some(b) if *b <= candidate => {}
                _ => best = Some(candidate),
            }
        }
        let matched = best.map(|(_, m)| m).unwrap_or_default();
        let unmatched = SpanSet::from_offsets(
            (0..orig.len()).filter(|i| !matched.contains(i)),
        );
        trim_spans(original, &unmatched)
    }

    fn enumerate(
        orig: &[char],
        gen: &[char],
        i: usize,
        j: usize,
        current: &mut Vec<usize>,
        out: &mut HashSet<Vec<usize>>,
    ) {
        if i == orig.len() || j == gen.len() {
            out.insert(current.clone());
            return;
        }
        if orig[i] == gen[j] {
            current.push(i);
            enumerate(orig, gen, i + 1, j + 1, current, out);
            current.pop();
        }
        enumerate(orig, gen, i + 1, j, current, out);
        enumerate(orig, gen, i, j + 1, current, out);
    }

    #[test]
    fn subtract_matches_exhaustive_oracle_on_short_strings() {
        let cases = [
            ("a bad dog", "a dog"),
            ("xa ya", "xa"),
            ("ab", "ba"),
            ("aa", "a"),
            ("abab", "ab"),
            ("x y z", "x z"),
            ("aaa bb", "bb"),
            ("ab cd", "cd"),
        ];
        for (orig, gen) in cases {
            assert_eq!(
                subtract_spans(orig, gen),
                oracle_subtract(orig, gen),
                "mismatch for ({orig:?}, {gen:?})"
            );
        }
    }

    proptest! {
        #[test]
        fn subtract_matches_oracle_on_random_pairs(
            orig in "[ab ]{0,8}",
            gen in "[ab ]{0,6}",
        ) {
            prop_assert_eq!(subtract_spans(&orig, &gen), oracle_subtract(&orig, &gen));
        }

        #[test]
        fn subtract_offsets_index_original(
            orig in "[abc ]{0,16}",
            gen in "[abc ]{0,12}",
        ) {
            let got = subtract_spans(&orig, &gen);
            let len = orig.chars().count();
            for off in got.iter() {
                prop_assert!(off < len);
            }
        }

        #[test]
        fn subtract_identity_always_empty(text in "\\PC{0,40}") {
            prop_assert!(subtract_spans(&text, &text).is_empty());
        }

        #[test]
        fn remove_then_subtract_round_trips(
            lengths in proptest::collection::vec(2usize..6, 3..12),
            removal_mask in any::<u32>(),
        ) {
            // Each word uses its own letter so the alignment is unique and
            // word-aligned removals are recoverable exactly.
            let words: Vec<String> = lengths
                .iter()
                .enumerate()
                .map(|(i, &len)| {
                    let letter = (b'a' + (i as u8 % 26)) as char;
                    std::iter::repeat(letter).take(len).collect()
                })
                .collect();
            let text = words.join(" ");
            // Maximal groups of removed words span their internal separators.
            let mut removed = SpanSet::new();
            let mut group_start: Option<usize> = None;
            for (i, word) in words.iter().enumerate() {
                if removal_mask & (1 << i) != 0 {
                    let offs = word_offsets(&text, word);
                    let start = group_start.unwrap_or(offs[0]);
                    for off in start..=offs[offs.len() - 1] {
                        removed.insert(off);
                    }
                    group_start = Some(start);
                } else {
                    group_start = None;
                }
            }
            prop_assume!(!removed.is_empty());
            let generated = remove_spans(&text, &removed).unwrap();
            prop_assert_eq!(
                subtract_spans(&text, &generated),
                trim_spans(&text, &removed)
            );
        }
    }
}
