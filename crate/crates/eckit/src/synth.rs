//! Deterministic synthetic corpus generator.
//!
//! Builds a toy language with a syllabary-like structure: each phoneme has a
//! primary grapheme (Latin capital) and a homophone variant (Cyrillic
//! capital), and lexicon words fix one spelling per position. Generated
//! pairs carry a `noise_class` tag with one of four labels:
//!
//! - `exact_match`: source == target;
//! - `clean`: the phonemes were slightly corrupted and the source rendered
//!   from them, so the target is inferable and more fluent than the source;
//! - `incorrect_unnecessary`: the source is fine and the target was degraded
//!   (an equally-pronounced respelling or stutter insertion), so it is no
//!   more fluent than the source;
//! - `uninferable`: the target belongs to a different utterance than the
//!   source phonemes.
//!
//! Everything is generated from explicit ChaCha8 states, so corpora are
//! byte-identical across runs and platforms for a fixed seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusMeta, ECPair};
use crate::error::{Error, Result};

const WORD_LEN_MIN: usize = 2;
const WORD_LEN_MAX: usize = 4;
const SENTENCE_WORDS_MIN: usize = 3;
const SENTENCE_WORDS_MAX: usize = 5;
/// Probability that a lexicon word spells a position with the variant
/// grapheme instead of the primary one.
const VARIANT_PROB: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexWord {
    pub graphemes: String,
    pub phonemes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLexicon {
    pub words: Vec<LexWord>,
    /// Weighted confusion alternatives per phoneme; weights sum to 1.
    pub confusion: BTreeMap<String, Vec<(String, f64)>>,
    pub phoneme_alphabet: Vec<String>,
    pub grapheme_alphabet: Vec<char>,
}

impl ToyLexicon {
    fn primary(&self, phoneme: &str) -> char {
        let idx = self.phoneme_alphabet.iter().position(|p| p == phoneme).expect("known phoneme");
        self.grapheme_alphabet[2 * idx]
    }

    fn variant(&self, phoneme: &str) -> char {
        let idx = self.phoneme_alphabet.iter().position(|p| p == phoneme).expect("known phoneme");
        self.grapheme_alphabet[2 * idx + 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMix {
    pub clean: f64,
    pub incorrect_unnecessary: f64,
    pub uninferable: f64,
    pub exact_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub mix: NoiseMix,
    pub substitution_rate: f64,
    pub deletion_rate: f64,
    pub insertion_rate: f64,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        // 34% exact matches; the rest split evenly across the noise classes.
        NoiseProfile {
            mix: NoiseMix {
                clean: 0.22,
                incorrect_unnecessary: 0.22,
                uninferable: 0.22,
                exact_match: 0.34,
            },
            substitution_rate: 0.12,
            deletion_rate: 0.02,
            insertion_rate: 0.02,
            seed: 0,
        }
    }
}

impl NoiseProfile {
    fn validate(&self) -> Result<()> {
        let sum = self.mix.clean
            + self.mix.incorrect_unnecessary
            + self.mix.uninferable
            + self.mix.exact_match;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("noise mix must sum to 1, got {sum}")));
        }
        for (name, rate) in [
            ("clean", self.mix.clean),
            ("incorrect_unnecessary", self.mix.incorrect_unnecessary),
            ("uninferable", self.mix.uninferable),
            ("exact_match", self.mix.exact_match),
            ("substitution_rate", self.substitution_rate),
            ("deletion_rate", self.deletion_rate),
            ("insertion_rate", self.insertion_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Generate a lexicon deterministically. Grapheme and phoneme alphabets are
/// disjoint symbol sets (Latin/Cyrillic capitals vs. lowercase letters).
pub fn gen_lexicon(seed: u64, n_words: usize, phoneme_alphabet_size: usize) -> Result<ToyLexicon> {
    if n_words < 1 {
        return Err(Error::Config("lexicon needs at least one word".to_string()));
    }
    if !(3..=26).contains(&phoneme_alphabet_size) {
        return Err(Error::Config("phoneme alphabet size must be in 3..=26".to_string()));
    }
    let phoneme_alphabet: Vec<String> = (0..phoneme_alphabet_size)
        .map(|k| char::from(b'a' + k as u8).to_string())
        .collect();
    let mut grapheme_alphabet = Vec::with_capacity(2 * phoneme_alphabet_size);
    for k in 0..phoneme_alphabet_size {
        grapheme_alphabet.push(char::from(b'A' + k as u8));
        grapheme_alphabet.push(char::from_u32(0x0410 + k as u32).expect("cyrillic capital"));
    }

    let mut confusion = BTreeMap::new();
    for k in 0..phoneme_alphabet_size {
        let a = phoneme_alphabet[(k + 1) % phoneme_alphabet_size].clone();
        let b = phoneme_alphabet[(k + 2) % phoneme_alphabet_size].clone();
        confusion.insert(phoneme_alphabet[k].clone(), vec![(a, 0.6), (b, 0.4)]);
    }

    let mut lexicon = ToyLexicon {
        words: Vec::with_capacity(n_words),
        confusion,
        phoneme_alphabet,
        grapheme_alphabet,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_words {
        let len = rng.gen_range(WORD_LEN_MIN..=WORD_LEN_MAX);
        let mut phonemes = Vec::with_capacity(len);
        let mut graphemes = String::with_capacity(len);
        for _ in 0..len {
            let k = rng.gen_range(0..lexicon.phoneme_alphabet.len());
            let phoneme = lexicon.phoneme_alphabet[k].clone();
            let grapheme = if rng.gen_bool(VARIANT_PROB) {
                lexicon.variant(&phoneme)
            } else {
                lexicon.primary(&phoneme)
            };
            phonemes.push(phoneme);
            graphemes.push(grapheme);
        }
        lexicon.words.push(LexWord { graphemes, phonemes });
    }
    Ok(lexicon)
}

struct Sentence {
    text: String,
    phonemes: Vec<String>,
    /// (word index in the lexicon, char offset of the word in `text`)
    words: Vec<(usize, usize)>,
}

fn sample_sentence(lexicon: &ToyLexicon, rng: &mut ChaCha8Rng) -> Sentence {
    let n_words = rng.gen_range(SENTENCE_WORDS_MIN..=SENTENCE_WORDS_MAX);
    let mut sentence = Sentence { text: String::new(), phonemes: Vec::new(), words: Vec::new() };
    for _ in 0..n_words {
        let w = rng.gen_range(0..lexicon.words.len());
        sentence.words.push((w, sentence.text.chars().count()));
        sentence.text.push_str(&lexicon.words[w].graphemes);
        sentence.phonemes.extend(lexicon.words[w].phonemes.iter().cloned());
    }
    sentence
}

/// One position-level corruption step.
#[derive(Debug, Clone, PartialEq)]
enum CorruptOp {
    Keep(usize),
    /// (original position, new phoneme)
    Substitute(usize, String),
    Delete(usize),
    /// inserted phoneme (emitted after the preceding op's output)
    Insert(String),
}

fn pick_confused(lexicon: &ToyLexicon, phoneme: &str, rng: &mut ChaCha8Rng) -> String {
    let alternatives = &lexicon.confusion[phoneme];
    let mut roll: f64 = rng.gen();
    for (alt, weight) in alternatives {
        if roll < *weight {
            return alt.clone();
        }
        roll -= weight;
    }
    alternatives.last().expect("nonempty confusion row").0.clone()
}

fn corrupt_ops(
    lexicon: &ToyLexicon,
    phonemes: &[String],
    profile: &NoiseProfile,
    rng: &mut ChaCha8Rng,
) -> Vec<CorruptOp> {
    let mut ops = Vec::with_capacity(phonemes.len() + 2);
    for (i, phoneme) in phonemes.iter().enumerate() {
        let roll: f64 = rng.gen();
        if roll < profile.deletion_rate {
            ops.push(CorruptOp::Delete(i));
        } else if roll < profile.deletion_rate + profile.substitution_rate {
            ops.push(CorruptOp::Substitute(i, pick_confused(lexicon, phoneme, rng)));
        } else {
            ops.push(CorruptOp::Keep(i));
        }
        if rng.gen_bool(profile.insertion_rate) {
            let k = rng.gen_range(0..lexicon.phoneme_alphabet.len());
            ops.push(CorruptOp::Insert(lexicon.phoneme_alphabet[k].clone()));
        }
    }
    ops
}

fn apply_ops_to_phonemes(phonemes: &[String], ops: &[CorruptOp]) -> Vec<String> {
    let mut out = Vec::with_capacity(phonemes.len() + 2);
    for op in ops {
        match op {
            CorruptOp::Keep(i) => out.push(phonemes[*i].clone()),
            CorruptOp::Substitute(_, q) => out.push(q.clone()),
            CorruptOp::Delete(_) => {}
            CorruptOp::Insert(q) => out.push(q.clone()),
        }
    }
    out
}

/// Apply confusion substitutions, deletions and insertions at the profile's
/// rates. Deterministic for a fixed generator state.
pub fn corrupt_phonemes(
    lexicon: &ToyLexicon,
    phonemes: &[String],
    profile: &NoiseProfile,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let ops = corrupt_ops(lexicon, phonemes, profile, rng);
    apply_ops_to_phonemes(phonemes, &ops)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NoiseClass {
    Clean,
    IncorrectUnnecessary,
    Uninferable,
    ExactMatch,
}

impl NoiseClass {
    fn label(&self) -> &'static str {
        match self {
            NoiseClass::Clean => "clean",
            NoiseClass::IncorrectUnnecessary => "incorrect_unnecessary",
            NoiseClass::Uninferable => "uninferable",
            NoiseClass::ExactMatch => "exact_match",
        }
    }
}

/// Largest-remainder allocation of `n` items to the mix fractions.
fn class_counts(mix: &NoiseMix, n: usize) -> [(NoiseClass, usize); 4] {
    let fractions = [
        (NoiseClass::Clean, mix.clean),
        (NoiseClass::IncorrectUnnecessary, mix.incorrect_unnecessary),
        (NoiseClass::Uninferable, mix.uninferable),
        (NoiseClass::ExactMatch, mix.exact_match),
    ];
    let mut counts: Vec<(NoiseClass, usize, f64)> = fractions
        .iter()
        .map(|&(class, f)| {
            let exact = f * n as f64;
            (class, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = counts.iter().map(|c| c.1).sum();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| counts[b].2.partial_cmp(&counts[a].2).unwrap().then(a.cmp(&b)));
    for &idx in order.iter().take(n - assigned) {
        counts[idx].1 += 1;
    }
    [
        (counts[0].0, counts[0].1),
        (counts[1].0, counts[1].1),
        (counts[2].0, counts[2].1),
        (counts[3].0, counts[3].1),
    ]
}

/// Generate `n` labeled pairs. Class proportions match the profile mix
/// within rounding; the `noise_class` tag carries the label.
pub fn gen_labeled_corpus(lexicon: &ToyLexicon, profile: &NoiseProfile, n: usize) -> Result<Corpus> {
    if n < 1 {
        return Err(Error::Config("corpus size must be >= 1".to_string()));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);

    let mut labels = Vec::with_capacity(n);
    for (class, count) in class_counts(&profile.mix, n) {
        labels.extend(std::iter::repeat_n(class, count));
    }
    labels.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n);
    for (i, class) in labels.iter().enumerate() {
        let pair = match class {
            NoiseClass::ExactMatch => {
                let s = sample_sentence(lexicon, &mut rng);
                ECPair::new(format!("synt-{i:06}"), &s.text, s.phonemes, &s.text)
            }
            NoiseClass::Clean => gen_clean_pair(lexicon, profile, &mut rng, i),
            NoiseClass::IncorrectUnnecessary => gen_incorrect_pair(lexicon, &mut rng, i),
            NoiseClass::Uninferable => gen_uninferable_pair(lexicon, &mut rng, i),
        };
        records.push(pair.with_tag("noise_class", class.label()));
    }
    Ok(Corpus {
        meta: CorpusMeta {
            description: format!("synthetic toy corpus (seed {})", profile.seed),
            ..Default::default()
        },
        records,
    })
}

/// Clean pair: phonemes lightly corrupted, source re-rendered from them at
/// the corrupted positions, target untouched. At least one corruption is
/// forced so the pair stays effective.
fn gen_clean_pair(
    lexicon: &ToyLexicon,
    profile: &NoiseProfile,
    rng: &mut ChaCha8Rng,
    idx: usize,
) -> ECPair {
    let s = sample_sentence(lexicon, rng);
    let target_chars: Vec<char> = s.text.chars().collect();
    let mut ops = corrupt_ops(lexicon, &s.phonemes, profile, rng);
    if ops.iter().all(|op| matches!(op, CorruptOp::Keep(_))) {
        let pos = rng.gen_range(0..s.phonemes.len());
        ops[pos] = CorruptOp::Substitute(pos, pick_confused(lexicon, &s.phonemes[pos], rng));
    }
    let mut source_text = String::new();
    let mut source_phonemes = Vec::new();
    for op in &ops {
        match op {
            CorruptOp::Keep(i) => {
                source_phonemes.push(s.phonemes[*i].clone());
                source_text.push(target_chars[*i]);
            }
            CorruptOp::Substitute(_, q) => {
                source_phonemes.push(q.clone());
                source_text.push(lexicon.primary(q));
            }
            CorruptOp::Delete(_) => {}
            CorruptOp::Insert(q) => {
                source_phonemes.push(q.clone());
                source_text.push(lexicon.primary(q));
            }
        }
    }
    ECPair::new(format!("synt-{idx:06}"), &source_text, source_phonemes, &s.text)
}

/// Incorrect/unnecessary pair: the ASR heard and wrote the sentence
/// correctly but the reference is degraded, either by respelling one word
/// with its homophone graphemes (unnecessary) or by a stutter-style
/// character duplication (incorrect).
fn gen_incorrect_pair(lexicon: &ToyLexicon, rng: &mut ChaCha8Rng, idx: usize) -> ECPair {
    let s = sample_sentence(lexicon, rng);
    let target = if rng.gen_bool(0.5) {
        // respell one word occurrence with flipped grapheme choices
        let (w, offset) = s.words[rng.gen_range(0..s.words.len())];
        let word = &lexicon.words[w];
        let mut chars: Vec<char> = s.text.chars().collect();
        for (k, phoneme) in word.phonemes.iter().enumerate() {
            let current = chars[offset + k];
            chars[offset + k] = if current == lexicon.primary(phoneme) {
                lexicon.variant(phoneme)
            } else {
                lexicon.primary(phoneme)
            };
        }
        chars.into_iter().collect::<String>()
    } else {
        // duplicate a short span, like a transcribed disfluency
        let chars: Vec<char> = s.text.chars().collect();
        let pos = rng.gen_range(0..chars.len());
        let mut out: Vec<char> = chars[..=pos].to_vec();
        out.push(chars[pos]);
        out.extend_from_slice(&chars[pos + 1..]);
        out.into_iter().collect::<String>()
    };
    ECPair::new(format!("synt-{idx:06}"), &s.text, s.phonemes, &target)
}

/// Uninferable pair: the target comes from a different utterance than the
/// source and its phonemes.
fn gen_uninferable_pair(lexicon: &ToyLexicon, rng: &mut ChaCha8Rng, idx: usize) -> ECPair {
    let target = sample_sentence(lexicon, rng);
    let mut source = sample_sentence(lexicon, rng);
    for _ in 0..64 {
        if source.text != target.text {
            break;
        }
        source = sample_sentence(lexicon, rng);
    }
    ECPair::new(format!("synt-{idx:06}"), &source.text, source.phonemes, &target.text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{validate_pair, ValidationPolicy};

    #[test]
    fn lexicon_is_deterministic() {
        let a = gen_lexicon(7, 20, 10).unwrap();
        let b = gen_lexicon(7, 20, 10).unwrap();
        assert_eq!(a, b);
        let c = gen_lexicon(8, 20, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lexicon_single_word() {
        let lexicon = gen_lexicon(1, 1, 5).unwrap();
        assert_eq!(lexicon.words.len(), 1);
        assert!(!lexicon.words[0].phonemes.is_empty());
    }

    #[test]
    fn lexicon_alphabets_are_disjoint_and_sized() {
        let lexicon = gen_lexicon(3, 10, 8).unwrap();
        assert_eq!(lexicon.phoneme_alphabet.len(), 8);
        assert_eq!(lexicon.grapheme_alphabet.len(), 16);
        for p in &lexicon.phoneme_alphabet {
            let c = p.chars().next().unwrap();
            assert!(!lexicon.grapheme_alphabet.contains(&c));
        }
        // every word uses only alphabet symbols
        for word in &lexicon.words {
            for p in &word.phonemes {
                assert!(lexicon.phoneme_alphabet.contains(p));
            }
            for g in word.graphemes.chars() {
                assert!(lexicon.grapheme_alphabet.contains(&g));
            }
        }
        // confusion weights sum to 1
        for alternatives in lexicon.confusion.values() {
            let sum: f64 = alternatives.iter().map(|(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn corrupt_identity_at_zero_rates() {
        let lexicon = gen_lexicon(3, 10, 8).unwrap();
        let profile = NoiseProfile {
            substitution_rate: 0.0,
            deletion_rate: 0.0,
            insertion_rate: 0.0,
            ..Default::default()
        };
        let phonemes: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(corrupt_phonemes(&lexicon, &phonemes, &profile, &mut rng), phonemes);
    }

    #[test]
    fn corrupt_full_substitution_uses_confusion_table() {
        let mut lexicon = gen_lexicon(3, 10, 8).unwrap();
        // make the confusion of "a" deterministic
        lexicon.confusion.insert("a".into(), vec![("d".into(), 1.0)]);
        let profile = NoiseProfile {
            substitution_rate: 1.0,
            deletion_rate: 0.0,
            insertion_rate: 0.0,
            ..Default::default()
        };
        let phonemes: Vec<String> = vec!["a".into(), "a".into()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            corrupt_phonemes(&lexicon, &phonemes, &profile, &mut rng),
            vec!["d".to_string(), "d".to_string()]
        );
    }

    #[test]
    fn corruption_rate_matches_binomial_expectation() {
        let lexicon = gen_lexicon(3, 10, 8).unwrap();
        let profile = NoiseProfile {
            substitution_rate: 0.2,
            deletion_rate: 0.0,
            insertion_rate: 0.0,
            ..Default::default()
        };
        let phonemes: Vec<String> =
            (0..10).map(|k| lexicon.phoneme_alphabet[k % 8].clone()).collect();
        let trials = 10_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut corrupted_positions = 0usize;
        for _ in 0..trials {
            let out = corrupt_phonemes(&lexicon, &phonemes, &profile, &mut rng);
            corrupted_positions += out.iter().zip(&phonemes).filter(|(a, b)| a != b).count();
        }
        let n = (trials * phonemes.len()) as f64;
        let p = 0.2;
        let sigma = (n * p * (1.0 - p)).sqrt();
        let expected = n * p;
        assert!(
            (corrupted_positions as f64 - expected).abs() < 3.0 * sigma,
            "{corrupted_positions} vs {expected} +- {sigma}"
        );
    }

    #[test]
    fn corpus_all_exact_match() {
        let lexicon = gen_lexicon(3, 20, 8).unwrap();
        let profile = NoiseProfile {
            mix: NoiseMix {
                clean: 0.0,
                incorrect_unnecessary: 0.0,
                uninferable: 0.0,
                exact_match: 1.0,
            },
            ..Default::default()
        };
        let corpus = gen_labeled_corpus(&lexicon, &profile, 50).unwrap();
        for pair in &corpus.records {
            assert!(pair.is_exact_match());
            assert_eq!(pair.tags["noise_class"], "exact_match");
        }
    }

    #[test]
    fn corpus_proportions_match_mix() {
        let lexicon = gen_lexicon(3, 40, 12).unwrap();
        let profile = NoiseProfile::default();
        let n = 10_000;
        let corpus = gen_labeled_corpus(&lexicon, &profile, n).unwrap();
        assert_eq!(corpus.len(), n);
        let exact = corpus.records.iter().filter(|p| p.tags["noise_class"] == "exact_match").count();
        assert!((exact as f64 / n as f64 - 0.34).abs() < 0.01, "exact fraction {exact}");
        // largest-remainder allocation is exact, not just within 1%
        assert_eq!(exact, 3400);
        let clean = corpus.records.iter().filter(|p| p.tags["noise_class"] == "clean").count();
        assert_eq!(clean, 2200);
    }

    #[test]
    fn corpus_is_deterministic_and_labels_consistent() {
        let lexicon = gen_lexicon(5, 30, 10).unwrap();
        let profile = NoiseProfile { seed: 9, ..Default::default() };
        let a = gen_labeled_corpus(&lexicon, &profile, 200).unwrap();
        let b = gen_labeled_corpus(&lexicon, &profile, 200).unwrap();
        assert_eq!(a, b);
        for pair in &a.records {
            match pair.tags["noise_class"].as_str() {
                "exact_match" => assert!(pair.is_exact_match()),
                // every noise class is an effective pair
                _ => assert!(!pair.is_exact_match(), "pair {} should differ", pair.id),
            }
            // noise classes keep source/target phoneme-consistent lengths
            assert!(!pair.source_phonemes.is_empty());
        }
    }

    #[test]
    fn generated_pairs_pass_default_validation() {
        let lexicon = gen_lexicon(5, 30, 10).unwrap();
        let corpus = gen_labeled_corpus(&lexicon, &NoiseProfile::default(), 500).unwrap();
        let policy = ValidationPolicy::default();
        for pair in &corpus.records {
            assert!(validate_pair(pair, &policy).is_empty());
        }
    }

    #[test]
    fn labels_round_trip_through_jsonl() {
        let lexicon = gen_lexicon(5, 30, 10).unwrap();
        let corpus = gen_labeled_corpus(&lexicon, &NoiseProfile::default(), 20).unwrap();
        let mut buf = Vec::new();
        crate::corpus::write_corpus(&corpus, &mut buf).unwrap();
        let reread = crate::corpus::read_corpus_from(buf.as_slice()).unwrap();
        assert_eq!(reread, corpus);
    }

    #[test]
    fn invalid_mix_is_rejected() {
        let lexicon = gen_lexicon(3, 10, 8).unwrap();
        let profile = NoiseProfile {
            mix: NoiseMix {
                clean: 0.5,
                incorrect_unnecessary: 0.5,
                uninferable: 0.5,
                exact_match: 0.0,
            },
            ..Default::default()
        };
        assert!(matches!(
            gen_labeled_corpus(&lexicon, &profile, 10),
            Err(Error::Config(_))
        ));
    }
}
