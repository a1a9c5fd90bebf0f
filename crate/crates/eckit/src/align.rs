//! Character-level Levenshtein alignment, normalized edit distance and CER.
//!
//! Characters are Unicode scalar values after NFC; combining marks that do
//! not compose are counted as separate characters.

use std::str::FromStr;

use crate::corpus::{normalize_text, NormScheme};
use crate::error::{Error, Result};

/// Per-utterance edit statistics from a minimal hyp/ref alignment.
///
/// Deletions are reference characters missing from the hypothesis;
/// insertions are hypothesis characters absent from the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AlignmentStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub matches: usize,
}

impl AlignmentStats {
    pub fn distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Which length normalizes the edit distance. The reference convention
/// matches CER and makes thresholds comparable to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NedDenominator {
    #[default]
    Reference,
    Hypothesis,
    Max,
}

impl FromStr for NedDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<NedDenominator> {
        match s {
            "reference" => Ok(NedDenominator::Reference),
            "hypothesis" => Ok(NedDenominator::Hypothesis),
            "max" => Ok(NedDenominator::Max),
            other => Err(Error::Config(format!("unknown edit-distance denominator: {other}"))),
        }
    }
}

/// Minimal unit-cost edit distance with full statistics.
///
/// Among minimal alignments, ties break preferring matches, then
/// substitutions, then deletions, then insertions, so the returned statistics
/// are deterministic.
pub fn edit_distance_stats(hyp: &str, reference: &str) -> AlignmentStats {
    let hyp: Vec<char> = hyp.chars().collect();
    let reference: Vec<char> = reference.chars().collect();
    edit_distance_stats_chars(&hyp, &reference)
}

pub fn edit_distance_stats_chars(hyp: &[char], reference: &[char]) -> AlignmentStats {
    // Cell value: (cost, -matches) minimized lexicographically. With unit
    // costs the minimal-cost alignments differ only in how many matches they
    // contain; maximizing matches fixes S, D and I as well, so the stated
    // tie-break order reduces to preferring matches.
    #[derive(Clone, Copy)]
    struct Cell {
        cost: usize,
        stats: AlignmentStats,
    }

    fn better(a: &Cell, b: &Cell) -> bool {
        (a.cost, std::cmp::Reverse(a.stats.matches)) < (b.cost, std::cmp::Reverse(b.stats.matches))
    }

    let n_hyp = hyp.len();
    let n_ref = reference.len();
    let mut prev: Vec<Cell> = (0..=n_ref)
        .map(|j| Cell {
            cost: j,
            stats: AlignmentStats { deletions: j, ..Default::default() },
        })
        .collect();
    let mut curr = prev.clone();

    for i in 1..=n_hyp {
        curr[0] = Cell {
            cost: i,
            stats: AlignmentStats { insertions: i, ..Default::default() },
        };
        for j in 1..=n_ref {
            // Candidates in tie-break preference order: match/substitution,
            // deletion, insertion. `better` is strict, so earlier candidates
            // win ties.
            let diag = &prev[j - 1];
            let mut best = if hyp[i - 1] == reference[j - 1] {
                Cell {
                    cost: diag.cost,
                    stats: AlignmentStats { matches: diag.stats.matches + 1, ..diag.stats },
                }
            } else {
                Cell {
                    cost: diag.cost + 1,
                    stats: AlignmentStats {
                        substitutions: diag.stats.substitutions + 1,
                        ..diag.stats
                    },
                }
            };
            // advancing in ref only: a reference char the hypothesis misses
            let del = Cell {
                cost: curr[j - 1].cost + 1,
                stats: AlignmentStats {
                    deletions: curr[j - 1].stats.deletions + 1,
                    ..curr[j - 1].stats
                },
            };
            if better(&del, &best) {
                best = del;
            }
            // advancing in hyp only: a hypothesis char absent from the ref
            let ins = Cell {
                cost: prev[j].cost + 1,
                stats: AlignmentStats { insertions: prev[j].stats.insertions + 1, ..prev[j].stats },
            };
            if better(&ins, &best) {
                best = ins;
            }
            curr[j] = best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let cell = prev[n_ref];
    debug_assert_eq!(cell.cost, cell.stats.distance());
    cell.stats
}

/// Plain edit distance between two character sequences.
pub fn edit_distance(hyp: &str, reference: &str) -> usize {
    edit_distance_stats(hyp, reference).distance()
}

/// Edit distance divided by a normalized length (clamped to >= 1), after
/// applying `scheme` to both inputs.
pub fn normalized_edit_distance(hyp: &str, reference: &str, scheme: NormScheme) -> f64 {
    normalized_edit_distance_with(hyp, reference, scheme, NedDenominator::Reference)
}

pub fn normalized_edit_distance_with(
    hyp: &str,
    reference: &str,
    scheme: NormScheme,
    denominator: NedDenominator,
) -> f64 {
    let hyp = normalize_text(hyp, scheme);
    let reference = normalize_text(reference, scheme);
    let hyp_len = hyp.chars().count();
    let ref_len = reference.chars().count();
    let stats = edit_distance_stats(&hyp, &reference);
    let denom = match denominator {
        NedDenominator::Reference => ref_len,
        NedDenominator::Hypothesis => hyp_len,
        NedDenominator::Max => ref_len.max(hyp_len),
    };
    stats.distance() as f64 / denom.max(1) as f64
}

/// Corpus-level (micro-averaged) character error rate:
/// total edit distance over total reference characters.
pub fn corpus_cer(hyps: &[String], refs: &[String]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Shape(format!(
            "corpus_cer: {} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total_distance = 0usize;
    let mut total_ref_chars = 0usize;
    for (hyp, reference) in hyps.iter().zip(refs) {
        total_distance += edit_distance(hyp, reference);
        total_ref_chars += reference.chars().count();
    }
    if total_ref_chars == 0 {
        return Err(Error::UndefinedMetric(
            "corpus_cer: all references are empty".to_string(),
        ));
    }
    Ok(total_distance as f64 / total_ref_chars as f64)
}
