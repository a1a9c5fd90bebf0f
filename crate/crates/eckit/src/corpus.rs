//! Corpus data model and JSONL ingestion/emission.
//!
//! A corpus is a sequence of source/target training records for ASR error
//! correction, stored one JSON object per line. An optional first line of the
//! form `{"meta": {...}}` carries corpus-level metadata. Gzip-compressed
//! files are accepted transparently by the `.gz` extension.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1";
/// Version tag for the SFT export record layout.
pub const SFT_EXPORT_VERSION: &str = "sft-v1";
/// Default separator between source text and joined phonemes in
/// phoneme-augmented SFT export.
pub const DEFAULT_SFT_SEPARATOR: &str = "\n";

/// One training/eval record: ASR hypothesis (source), the phonemes the ASR
/// system decoded, and the gold reference (target).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ECPair {
    pub id: String,
    pub source_text: String,
    pub source_phonemes: Vec<String>,
    pub target_text: String,
    pub tags: BTreeMap<String, String>,
}

impl ECPair {
    /// Build a pair with all text fields NFC-normalized.
    pub fn new(
        id: impl Into<String>,
        source_text: &str,
        source_phonemes: Vec<String>,
        target_text: &str,
    ) -> ECPair {
        ECPair {
            id: id.into(),
            source_text: nfc(source_text),
            source_phonemes: source_phonemes.iter().map(|p| nfc(p)).collect(),
            target_text: nfc(target_text),
            tags: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, key: &str, value: &str) -> ECPair {
        self.tags.insert(key.to_string(), value.to_string());
        self
    }

    /// True when source and target are identical (texts are stored
    /// NFC-normalized, so this is comparison after NFC).
    pub fn is_exact_match(&self) -> bool {
        self.source_text == self.target_text
    }

    pub fn has_phonemes(&self) -> bool {
        !self.source_phonemes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub schema_version: String,
    pub normalization: String,
    #[serde(default)]
    pub description: String,
}

impl Default for CorpusMeta {
    fn default() -> Self {
        CorpusMeta {
            schema_version: SCHEMA_VERSION.to_string(),
            normalization: "nfc".to_string(),
            description: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub records: Vec<ECPair>,
}

impl Corpus {
    pub fn from_records(records: Vec<ECPair>) -> Corpus {
        Corpus { meta: CorpusMeta::default(), records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Text normalization
// ---------------------------------------------------------------------------

/// Registered normalization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScheme {
    /// Unicode NFC (canonical composition). The storage normalization.
    Nfc,
    /// Unicode NFKC followed by lowercasing of Latin-script ranges
    /// (U+0041..U+024F).
    NfkcFold,
}

impl FromStr for NormScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<NormScheme> {
        match s {
            "nfc" => Ok(NormScheme::Nfc),
            "nfkc_fold" => Ok(NormScheme::NfkcFold),
            other => Err(Error::Config(format!("unknown normalization scheme: {other}"))),
        }
    }
}

impl NormScheme {
    pub fn name(&self) -> &'static str {
        match self {
            NormScheme::Nfc => "nfc",
            NormScheme::NfkcFold => "nfkc_fold",
        }
    }
}

fn nfc(text: &str) -> String {
    text.nfc().collect()
}

fn is_latin_range(c: char) -> bool {
    (c as u32) >= 0x41 && (c as u32) <= 0x24F
}

/// Apply a registered normalization scheme. Deterministic and idempotent.
pub fn normalize_text(text: &str, scheme: NormScheme) -> String {
    match scheme {
        NormScheme::Nfc => nfc(text),
        NormScheme::NfkcFold => {
            let mut out = String::with_capacity(text.len());
            for c in text.nfkc() {
                if is_latin_range(c) {
                    out.extend(c.to_lowercase());
                } else {
                    out.push(c);
                }
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Record parsing and writing
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    source: Option<String>,
    #[serde(default)]
    phonemes: Option<PhonemesField>,
    target: Option<String>,
    #[serde(default)]
    tags: Option<BTreeMap<String, String>>,
}

/// Phonemes are given either as a token array or as a single kana-style
/// string, which is split into one token per character.
#[derive(Deserialize)]
#[serde(untagged)]
enum PhonemesField {
    Tokens(Vec<String>),
    Joined(String),
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    source: &'a str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    phonemes: &'a Vec<String>,
    target: &'a str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    tags: &'a BTreeMap<String, String>,
}

/// Parse one JSONL line into an [`ECPair`]. `line_number` is 1-based and
/// only used for error reporting.
pub fn parse_record(line: &str, line_number: usize) -> Result<ECPair> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_number,
        message: e.to_string(),
    })?;
    let id = match raw.id {
        Some(id) if !id.is_empty() => id,
        Some(_) => return Err(Error::Schema(format!("line {line_number}: empty `id`"))),
        None => return Err(Error::Schema(format!("line {line_number}: missing `id`"))),
    };
    let source = raw
        .source
        .ok_or_else(|| Error::Schema(format!("record {id}: missing `source`")))?;
    let target = raw
        .target
        .ok_or_else(|| Error::Schema(format!("record {id}: missing `target`")))?;
    let phonemes = match raw.phonemes {
        None => Vec::new(),
        Some(PhonemesField::Tokens(tokens)) => tokens,
        Some(PhonemesField::Joined(s)) => nfc(&s).chars().map(String::from).collect(),
    };
    let mut pair = ECPair::new(id, &source, phonemes, &target);
    pair.tags = raw.tags.unwrap_or_default();
    Ok(pair)
}

/// Serialize a pair to a single JSONL line (no trailing newline). Embedded
/// control characters are escaped by the JSON encoder, so the output never
/// spans multiple lines. `parse_record(write_record(p)) == p` for valid pairs.
pub fn write_record(pair: &ECPair) -> String {
    let out = RecordOut {
        id: &pair.id,
        source: &pair.source_text,
        phonemes: &pair.source_phonemes,
        target: &pair.target_text,
        tags: &pair.tags,
    };
    serde_json::to_string(&out).expect("record serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Corpus I/O
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct MetaLine {
    meta: CorpusMeta,
}

/// Open a corpus file for buffered reading, decompressing transparently when
/// the path ends in `.gz`.
pub fn open_corpus_reader(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(flate2::read::MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Streaming corpus reader: yields records one line at a time, enforcing id
/// uniqueness, and captures the optional leading meta line.
pub struct CorpusReader<R: BufRead> {
    reader: R,
    pub meta: CorpusMeta,
    line_number: usize,
    seen_ids: HashSet<String>,
    buffered_first: Option<String>,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(mut reader: R) -> Result<CorpusReader<R>> {
        let mut first = String::new();
        let n = reader.read_line(&mut first)?;
        let mut meta = CorpusMeta::default();
        let mut buffered_first = None;
        if n > 0 {
            let trimmed = first.trim_end_matches('\n').trim_end_matches('\r');
            if let Ok(m) = serde_json::from_str::<MetaLine>(trimmed) {
                meta = m.meta;
            } else {
                buffered_first = Some(trimmed.to_string());
            }
        }
        Ok(CorpusReader {
            reader,
            meta,
            line_number: 1,
            seen_ids: HashSet::new(),
            buffered_first,
        })
    }

    fn next_record(&mut self) -> Option<Result<ECPair>> {
        loop {
            let (line, line_number) = if let Some(first) = self.buffered_first.take() {
                (first, 1)
            } else {
                let mut buf = String::new();
                match self.reader.read_line(&mut buf) {
                    Ok(0) => return None,
                    Ok(_) => {}
                    Err(e) => return Some(Err(e.into())),
                }
                self.line_number += 1;
                (
                    buf.trim_end_matches('\n').trim_end_matches('\r').to_string(),
                    self.line_number,
                )
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_record(&line, line_number).and_then(|pair| {
                if !self.seen_ids.insert(pair.id.clone()) {
                    Err(Error::DuplicateId(pair.id))
                } else {
                    Ok(pair)
                }
            }));
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<ECPair>;

    fn next(&mut self) -> Option<Result<ECPair>> {
        self.next_record()
    }
}

/// Load a whole corpus, preserving record order and count exactly.
pub fn read_corpus_from(reader: impl BufRead) -> Result<Corpus> {
    let mut stream = CorpusReader::new(reader)?;
    let mut records = Vec::new();
    for record in &mut stream {
        records.push(record?);
    }
    Ok(Corpus { meta: stream.meta, records })
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    read_corpus_from(open_corpus_reader(path)?)
}

/// Write a corpus as JSONL, meta line first.
pub fn write_corpus(corpus: &Corpus, mut writer: impl Write) -> Result<()> {
    let meta = serde_json::json!({ "meta": corpus.meta });
    writeln!(writer, "{meta}")?;
    for pair in &corpus.records {
        writeln!(writer, "{}", write_record(pair))?;
    }
    Ok(())
}

pub fn write_corpus_to_path(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    write_corpus(corpus, &mut file)?;
    file.flush()?;
    Ok(())
}

/// Read every record from a reader without assembling a `Corpus`, applying
/// `f` in input order.
pub fn for_each_record(reader: impl BufRead, mut f: impl FnMut(ECPair) -> Result<()>) -> Result<()> {
    let mut stream = CorpusReader::new(reader)?;
    for record in &mut stream {
        f(record?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ValidationPolicy {
    pub require_nonempty_source: bool,
    pub require_phonemes: bool,
    pub max_chars: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptySource,
    MissingPhonemes,
    /// `field` is "source" or "target"; `len` in Unicode scalar values.
    OverLength { field: &'static str, len: usize, max: usize },
}

/// Check a pair against a policy. Violations are data, not errors; the pair
/// is never mutated.
pub fn validate_pair(pair: &ECPair, policy: &ValidationPolicy) -> Vec<Violation> {
    let mut violations = Vec::new();
    if policy.require_nonempty_source && pair.source_text.is_empty() {
        violations.push(Violation::EmptySource);
    }
    if policy.require_phonemes && pair.source_phonemes.is_empty() {
        violations.push(Violation::MissingPhonemes);
    }
    if let Some(max) = policy.max_chars {
        let source_len = pair.source_text.chars().count();
        if source_len > max {
            violations.push(Violation::OverLength { field: "source", len: source_len, max });
        }
        let target_len = pair.target_text.chars().count();
        if target_len > max {
            violations.push(Violation::OverLength { field: "target", len: target_len, max });
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// SFT export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SftStyle {
    /// `{input: source, output: target}`.
    Pair,
    /// `{input: source ⊕ SEP ⊕ joined phonemes, output: target}`.
    PhonemeAugmented,
}

impl FromStr for SftStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<SftStyle> {
        match s {
            "pair" => Ok(SftStyle::Pair),
            "phoneme_augmented" => Ok(SftStyle::PhonemeAugmented),
            other => Err(Error::Config(format!("unknown SFT style: {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub input: String,
    pub output: String,
}

/// Stream finetuning-ready records from a corpus.
pub fn export_sft<'a>(
    corpus: &'a Corpus,
    style: SftStyle,
    separator: &'a str,
) -> impl Iterator<Item = Result<SftRecord>> + 'a {
    corpus.records.iter().map(move |pair| match style {
        SftStyle::Pair => Ok(SftRecord {
            input: pair.source_text.clone(),
            output: pair.target_text.clone(),
        }),
        SftStyle::PhonemeAugmented => {
            if pair.source_phonemes.is_empty() {
                return Err(Error::Export(pair.id.clone()));
            }
            Ok(SftRecord {
                input: format!("{}{}{}", pair.source_text, separator, pair.source_phonemes.join("")),
                output: pair.target_text.clone(),
            })
        }
    })
}
