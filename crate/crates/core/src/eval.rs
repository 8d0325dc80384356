//! Scoring for extraction output: word-level exact-match precision/recall/F1
//! with a strict rule for chemical formulas, plus ternary label scoring with
//! a confusion matrix, accuracy, and yield.
//!
//! Entity strings are compared as whitespace-separated word sets. In formula
//! mode, a true entity whose stoichiometry word is missing from the
//! prediction counts as fully missed: partial credit for the surrounding
//! words would overstate how useful a wrong formula is.

use std::collections::BTreeSet;
use std::ops::{Add, AddAssign};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{normalize_entity, StabilityLabel, WaterStabilityRecord};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample count mismatch: {truths} truth samples vs {preds} prediction samples")]
    LengthMismatch { truths: usize, preds: usize },
    #[error("ground truth is empty")]
    EmptyGroundTruth,
}

/// Word-level match counts, summable across samples and corpora.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordTally {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Add for WordTally {
    type Output = WordTally;

    fn add(self, rhs: WordTally) -> WordTally {
        WordTally {
            true_positives: self.true_positives + rhs.true_positives,
            false_positives: self.false_positives + rhs.false_positives,
            false_negatives: self.false_negatives + rhs.false_negatives,
        }
    }
}

impl AddAssign for WordTally {
    fn add_assign(&mut self, rhs: WordTally) {
        *self = *self + rhs;
    }
}

/// Precision, recall, and their harmonic mean. Degenerate denominators
/// score 0 so the metrics stay total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    pub fn from_tally(tally: &WordTally) -> PrfScore {
        let tp = tally.true_positives as f64;
        let precision = match tally.true_positives + tally.false_positives {
            0 => 0.0,
            denom => tp / denom as f64,
        };
        let recall = match tally.true_positives + tally.false_negatives {
            0 => 0.0,
            denom => tp / denom as f64,
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfScore {
            precision,
            recall,
            f1,
        }
    }
}

const ELEMENTS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn",
    "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

fn element_sets() -> &'static (BTreeSet<&'static str>, BTreeSet<&'static str>) {
    static SETS: OnceLock<(BTreeSet<&'static str>, BTreeSet<&'static str>)> = OnceLock::new();
    SETS.get_or_init(|| {
        let one = ELEMENTS.iter().filter(|e| e.len() == 1).copied().collect();
        let two = ELEMENTS.iter().filter(|e| e.len() == 2).copied().collect();
        (one, two)
    })
}

fn eat_subscript(chars: &[char], pos: usize) -> (usize, bool) {
    let mut p = pos;
    while p < chars.len() && chars[p].is_ascii_digit() {
        p += 1;
    }
    if p == pos {
        return (pos, false);
    }
    if p < chars.len() && chars[p] == '.' && p + 1 < chars.len() && chars[p + 1].is_ascii_digit() {
        let mut q = p + 1;
        while q < chars.len() && chars[q].is_ascii_digit() {
            q += 1;
        }
        return (q, true);
    }
    (p, true)
}

/// Candidate readings of one unit at `pos`: a bracketed group, a two-letter
/// element, or a one-letter element, each with an optional subscript.
/// Returns (position after unit, element occurrences, saw a digit).
fn unit_alternatives(chars: &[char], pos: usize) -> Vec<(usize, usize, bool)> {
    let mut alts = Vec::new();
    if pos >= chars.len() {
        return alts;
    }
    let (one, two) = element_sets();
    let c = chars[pos];
    if c == '(' || c == '[' {
        let close = if c == '(' { ')' } else { ']' };
        if let Some((inner_end, elems, digit)) = parse_units(chars, pos + 1, Some(close)) {
            let (after, sub_digit) = eat_subscript(chars, inner_end + 1);
            alts.push((after, elems, digit || sub_digit));
        }
        return alts;
    }
    if pos + 1 < chars.len() {
        let pair: String = chars[pos..pos + 2].iter().collect();
        if two.contains(pair.as_str()) {
            let (after, digit) = eat_subscript(chars, pos + 2);
            alts.push((after, 1, digit));
        }
    }
    let single = c.to_string();
    if one.contains(single.as_str()) {
        let (after, digit) = eat_subscript(chars, pos + 1);
        alts.push((after, 1, digit));
    }
    alts
}

/// Parses one-or-more units from `pos`, ending exactly at the closing
/// bracket (`closer`) or at end of input. Backtracks across unit readings.
fn parse_units(chars: &[char], pos: usize, closer: Option<char>) -> Option<(usize, usize, bool)> {
    for (next, elems, digit) in unit_alternatives(chars, pos) {
        let terminal = match closer {
            None => next == chars.len(),
            Some(c) => next < chars.len() && chars[next] == c,
        };
        if terminal {
            return Some((next, elems, digit));
        }
        if let Some((end, rest_elems, rest_digit)) = parse_units(chars, next, closer) {
            return Some((end, elems + rest_elems, digit || rest_digit));
        }
    }
    None
}

/// True when a word reads as a chemical formula: a full parse into
/// case-sensitive element symbols with optional decimal subscripts and
/// bracketed groups, carrying at least one digit or at least two element
/// occurrences.
pub fn is_stoichiometry(word: &str) -> bool {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return false;
    }
    match parse_units(&chars, 0, None) {
        Some((_, elems, digit)) => digit || elems >= 2,
        None => false,
    }
}

fn tally_sets(
    true_words: &BTreeSet<String>,
    test_words: &BTreeSet<String>,
    formula_mode: bool,
) -> WordTally {
    let false_positives = test_words.difference(true_words).count();
    let demote = formula_mode
        && true_words
            .iter()
            .any(|w| is_stoichiometry(w) && !test_words.contains(w));
    if demote {
        return WordTally {
            true_positives: 0,
            false_positives,
            false_negatives: true_words.len(),
        };
    }
    let true_positives = true_words.intersection(test_words).count();
    WordTally {
        true_positives,
        false_positives,
        false_negatives: true_words.len() - true_positives,
    }
}

fn word_set(text: &str) -> BTreeSet<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Compares one true entity against one predicted entity on word sets.
pub fn word_tally(e_true: &str, e_test: &str, formula_mode: bool) -> WordTally {
    tally_sets(&word_set(e_true), &word_set(e_test), formula_mode)
}

/// Micro-averaged field scoring: samples are aligned by index, each sample's
/// entities are pooled into one word set per side, tallies are summed over
/// samples, and P/R/F1 come from the summed tally.
pub fn score_field(
    truths: &[Vec<String>],
    preds: &[Vec<String>],
    formula_mode: bool,
) -> Result<(WordTally, PrfScore), EvalError> {
    if truths.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            truths: truths.len(),
            preds: preds.len(),
        });
    }
    let mut total = WordTally::default();
    for (true_entities, pred_entities) in truths.iter().zip(preds) {
        let pool = |entities: &[String]| -> BTreeSet<String> {
            entities
                .iter()
                .flat_map(|e| e.split_whitespace())
                .map(str::to_string)
                .collect()
        };
        total += tally_sets(&pool(true_entities), &pool(pred_entities), formula_mode);
    }
    let score = PrfScore::from_tally(&total);
    Ok((total, score))
}

/// 3x3 label confusion indexed `[true][predicted]` in the order Stable,
/// Unstable, NotProvided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TernaryConfusion {
    pub counts: [[usize; 3]; 3],
    pub n_ground_truth: usize,
}

impl TernaryConfusion {
    pub fn matched(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }
}

/// Full ternary scoring result. `yield` is the fraction of ground-truth
/// entries any prediction matched by name; `accuracy` is computed over
/// matched pairs only, with unmatched predictions listed separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TernaryScore {
    pub confusion: TernaryConfusion,
    pub accuracy: f64,
    #[serde(rename = "yield")]
    pub yield_fraction: f64,
    pub spurious_names: Vec<String>,
}

/// Matches predictions to ground truth by normalized, lowercased name; each
/// truth entry is consumable once, in prediction order.
pub fn score_ternary(
    truth: &[(String, StabilityLabel)],
    preds: &[WaterStabilityRecord],
) -> Result<TernaryScore, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let key = |name: &str| normalize_entity(name).to_lowercase();
    let truth_keys: Vec<String> = truth.iter().map(|(name, _)| key(name)).collect();
    let mut consumed = vec![false; truth.len()];
    let mut counts = [[0usize; 3]; 3];
    let mut spurious_names = Vec::new();
    for pred in preds {
        let pred_key = key(&pred.mof_name);
        let slot = truth_keys
            .iter()
            .enumerate()
            .position(|(i, tk)| !consumed[i] && *tk == pred_key);
        match slot {
            Some(i) => {
                consumed[i] = true;
                counts[truth[i].1.index()][pred.label.index()] += 1;
            }
            None => spurious_names.push(pred.mof_name.clone()),
        }
    }
    let confusion = TernaryConfusion {
        counts,
        n_ground_truth: truth.len(),
    };
    let matched = confusion.matched();
    let accuracy = if matched == 0 {
        0.0
    } else {
        confusion.trace() as f64 / matched as f64
    };
    let yield_fraction = matched as f64 / truth.len() as f64;
    Ok(TernaryScore {
        confusion,
        accuracy,
        yield_fraction,
        spurious_names,
    })
}

/// One scored field: raw counts plus derived rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldScore {
    pub tally: WordTally,
    pub score: PrfScore,
}

/// Everything `score` reports for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub per_field: std::collections::BTreeMap<String, FieldScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ternary: Option<TernaryScore>,
}
