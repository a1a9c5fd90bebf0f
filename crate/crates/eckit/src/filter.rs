//! Likelihood-ratio quality filtering of EC training pairs.
//!
//! Each pair is scored under two criteria: the target must be more likely
//! than the source under a language model (C1), and the target must be
//! inferable from the source phonemes under a channel model (C2), both as
//! log-likelihood ratios against configurable thresholds (inclusive, so
//! boundary pairs are clean). Noisy pairs are conservatively rewritten
//! (target := source) or discarded. Exact-match pairs are never altered.
//! Pairs that cannot be scored pass through unmodified and are counted:
//! when unsure, do not teach a correction.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::align::normalized_edit_distance;
use crate::channel::ChannelModel;
use crate::corpus::{Corpus, CorpusMeta, ECPair, NormScheme};
use crate::error::{Error, Result};
use crate::lm::{self, NgramModel};

/// Tag keys used when scored/filtered corpora are written back to JSONL.
pub const TAG_C1: &str = "c1_log_ratio";
pub const TAG_C2: &str = "c2_log_ratio";
pub const TAG_DECISION: &str = "filter_decision";

pub const DEFAULT_HISTOGRAM_BIN_WIDTH: f64 = 0.5;

// ---------------------------------------------------------------------------
// Scorer interfaces
// ---------------------------------------------------------------------------

/// Source of C1 log ratios. `None` means the pair cannot be scored.
pub trait C1Scorer: Sync {
    fn c1_log_ratio(&self, pair: &ECPair) -> Option<f64>;
}

/// Source of C2 log ratios. `None` means the pair cannot be scored
/// (typically: no phonemes).
pub trait C2Scorer: Sync {
    fn c2_log_ratio(&self, pair: &ECPair) -> Option<f64>;
}

impl C1Scorer for NgramModel {
    fn c1_log_ratio(&self, pair: &ECPair) -> Option<f64> {
        Some(lm::c1_log_ratio(self, pair))
    }
}

/// C1 ratios with per-character length normalization (the off-by-default
/// variant of the criterion).
pub struct PerCharC1<'a>(pub &'a NgramModel);

impl C1Scorer for PerCharC1<'_> {
    fn c1_log_ratio(&self, pair: &ECPair) -> Option<f64> {
        Some(lm::c1_log_ratio_per_char(self.0, pair))
    }
}

impl C2Scorer for ChannelModel {
    fn c2_log_ratio(&self, pair: &ECPair) -> Option<f64> {
        ChannelModel::c2_log_ratio(self, pair).ok()
    }
}

/// Precomputed scores carried in record tags, e.g. emitted by an external
/// scorer or a previous `score` run.
pub struct TagScorer {
    pub c1_key: String,
    pub c2_key: String,
}

impl Default for TagScorer {
    fn default() -> Self {
        TagScorer { c1_key: TAG_C1.to_string(), c2_key: TAG_C2.to_string() }
    }
}

impl C1Scorer for TagScorer {
    fn c1_log_ratio(&self, pair: &ECPair) -> Option<f64> {
        pair.tags.get(&self.c1_key).and_then(|v| v.parse().ok())
    }
}

impl C2Scorer for TagScorer {
    fn c2_log_ratio(&self, pair: &ECPair) -> Option<f64> {
        pair.tags.get(&self.c2_key).and_then(|v| v.parse().ok())
    }
}

#[derive(Default, Clone, Copy)]
pub struct FilterScorers<'a> {
    pub c1: Option<&'a dyn C1Scorer>,
    pub c2: Option<&'a dyn C2Scorer>,
}

// ---------------------------------------------------------------------------
// Configuration and decisions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Criteria {
    C1Only,
    C2Only,
    C1AndC2,
    None,
}

impl std::str::FromStr for Criteria {
    type Err = Error;

    fn from_str(s: &str) -> Result<Criteria> {
        match s {
            "c1" | "c1_only" => Ok(Criteria::C1Only),
            "c2" | "c2_only" => Ok(Criteria::C2Only),
            "c1+c2" | "c1_and_c2" => Ok(Criteria::C1AndC2),
            "none" => Ok(Criteria::None),
            other => Err(Error::Config(format!("unknown criteria: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterAction {
    Replace,
    Discard,
}

impl std::str::FromStr for FilterAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<FilterAction> {
        match s {
            "replace" => Ok(FilterAction::Replace),
            "discard" => Ok(FilterAction::Discard),
            other => Err(Error::Config(format!("unknown action: {other}"))),
        }
    }
}

/// Thresholds are in natural-log space; the default 0 corresponds to a
/// plain likelihood-ratio threshold of 1.
#[derive(Debug, Clone, Serialize)]
pub struct FilterConfig {
    pub log_c1: f64,
    pub log_c2: f64,
    pub criteria: Criteria,
    pub action: FilterAction,
    pub inverse: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            log_c1: 0.0,
            log_c2: 0.0,
            criteria: Criteria::C1AndC2,
            action: FilterAction::Replace,
            inverse: false,
        }
    }
}

impl FilterConfig {
    pub fn active_c1(&self) -> bool {
        matches!(self.criteria, Criteria::C1Only | Criteria::C1AndC2)
    }

    pub fn active_c2(&self) -> bool {
        matches!(self.criteria, Criteria::C2Only | Criteria::C1AndC2)
    }

    fn validate(&self) -> Result<()> {
        if !self.log_c1.is_finite() || !self.log_c2.is_finite() {
            return Err(Error::Config("filter thresholds must be finite".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: ECPair,
    pub c1_log_ratio: Option<f64>,
    pub c2_log_ratio: Option<f64>,
    pub exact_match: bool,
    pub norm_edit_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    MissingPhonemes,
    MissingScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Clean,
    NoisyC1,
    NoisyC2,
    NoisyBoth,
    ExactMatch,
    Skipped(SkipReason),
}

impl FilterDecision {
    pub fn is_noisy(&self) -> bool {
        matches!(self, FilterDecision::NoisyC1 | FilterDecision::NoisyC2 | FilterDecision::NoisyBoth)
    }
}

impl fmt::Display for FilterDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FilterDecision::Clean => "clean",
            FilterDecision::NoisyC1 => "noisy_c1",
            FilterDecision::NoisyC2 => "noisy_c2",
            FilterDecision::NoisyBoth => "noisy_both",
            FilterDecision::ExactMatch => "exact_match",
            FilterDecision::Skipped(SkipReason::MissingPhonemes) => "skipped:missing-phonemes",
            FilterDecision::Skipped(SkipReason::MissingScore) => "skipped:missing-score",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------------------
// Scoring and classification
// ---------------------------------------------------------------------------

/// Populate a pair's ratios (absent where no scorer is available), exact
/// match flag and normalized edit distance. Pure.
pub fn score_pair(pair: &ECPair, scorers: &FilterScorers) -> ScoredPair {
    let c1_log_ratio = scorers.c1.and_then(|s| s.c1_log_ratio(pair));
    let c2_log_ratio = scorers.c2.and_then(|s| s.c2_log_ratio(pair));
    ScoredPair {
        exact_match: pair.is_exact_match(),
        norm_edit_distance: normalized_edit_distance(
            &pair.source_text,
            &pair.target_text,
            NormScheme::Nfc,
        ),
        pair: pair.clone(),
        c1_log_ratio,
        c2_log_ratio,
    }
}

/// Classify a scored pair. Clean iff every active criterion's log-ratio is
/// at or above its threshold; exact matches short-circuit and stay verbatim.
pub fn classify(scored: &ScoredPair, config: &FilterConfig) -> FilterDecision {
    if scored.exact_match {
        return FilterDecision::ExactMatch;
    }
    let active_c1 = config.active_c1();
    let active_c2 = config.active_c2();
    if !active_c1 && !active_c2 {
        return FilterDecision::Clean;
    }
    if active_c1 && scored.c1_log_ratio.is_none() {
        return FilterDecision::Skipped(SkipReason::MissingScore);
    }
    if active_c2 && scored.c2_log_ratio.is_none() {
        return if scored.pair.source_phonemes.is_empty() {
            FilterDecision::Skipped(SkipReason::MissingPhonemes)
        } else {
            FilterDecision::Skipped(SkipReason::MissingScore)
        };
    }
    let fail_c1 = active_c1 && scored.c1_log_ratio.unwrap() < config.log_c1;
    let fail_c2 = active_c2 && scored.c2_log_ratio.unwrap() < config.log_c2;
    match (fail_c1, fail_c2) {
        (false, false) => FilterDecision::Clean,
        (true, false) => FilterDecision::NoisyC1,
        (false, true) => FilterDecision::NoisyC2,
        (true, true) => FilterDecision::NoisyBoth,
    }
}

// ---------------------------------------------------------------------------
// Histogram
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioCriterion {
    C1,
    C2,
}

/// Fixed-width histogram over log ratios, with the active threshold as a
/// marker. Bin `k` covers `[k*w, (k+1)*w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub threshold: f64,
    bins: BTreeMap<i64, u64>,
}

impl Histogram {
    fn new(bin_width: f64, threshold: f64) -> Histogram {
        Histogram { bin_width, threshold, bins: BTreeMap::new() }
    }

    fn add(&mut self, value: f64) {
        let idx = (value / self.bin_width).floor() as i64;
        *self.bins.entry(idx).or_insert(0) += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.bins.values().sum()
    }

    /// (bin left edge, count) in ascending order.
    pub fn bins(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.bins.iter().map(|(&idx, &count)| (idx as f64 * self.bin_width, count))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,count\n");
        for (left, count) in self.bins() {
            out.push_str(&format!("{left},{count}\n"));
        }
        out
    }
}

impl Serialize for Histogram {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            bin_width: f64,
            threshold: f64,
            bins: Vec<(f64, u64)>,
        }
        Repr {
            bin_width: self.bin_width,
            threshold: self.threshold,
            bins: self.bins().collect(),
        }
        .serialize(serializer)
    }
}

/// Histogram of one criterion's log ratios over effective (source != target)
/// scored pairs. Empty input or no effective pairs yields an empty histogram.
pub fn ratio_histogram(
    scored: &[ScoredPair],
    criterion: RatioCriterion,
    bin_width: f64,
    threshold: f64,
) -> Result<Histogram> {
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(Error::Config("histogram bin width must be > 0".to_string()));
    }
    let mut histogram = Histogram::new(bin_width, threshold);
    for sp in scored {
        if sp.exact_match {
            continue;
        }
        let ratio = match criterion {
            RatioCriterion::C1 => sp.c1_log_ratio,
            RatioCriterion::C2 => sp.c2_log_ratio,
        };
        if let Some(r) = ratio {
            histogram.add(r);
        }
    }
    Ok(histogram)
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterStats {
    pub total: usize,
    pub exact_match: usize,
    /// Pairs with source != target, scored or not.
    pub effective: usize,
    pub skipped: usize,
    /// Effective pairs below the C1 threshold (among those with a C1 score).
    pub noisy_c1: usize,
    /// Effective pairs below the C2 threshold (among those with a C2 score).
    pub noisy_c2: usize,
    /// Union of the two, i.e. pairs failing at least one criterion.
    pub noisy_combined: usize,
    pub replaced: usize,
    pub discarded: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram_c1: Option<Histogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram_c2: Option<Histogram>,
}

/// One input record after filtering. `pair` reflects the applied action
/// (target possibly replaced); `kept` is false only for discarded records.
#[derive(Debug, Clone)]
pub struct RecordOutcome {
    pub pair: ECPair,
    pub decision: FilterDecision,
    pub kept: bool,
    pub c1_log_ratio: Option<f64>,
    pub c2_log_ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub meta: CorpusMeta,
    pub records: Vec<RecordOutcome>,
    pub stats: FilterStats,
}

impl FilterOutcome {
    /// The filtered corpus: kept records in input order.
    pub fn corpus(&self) -> Corpus {
        Corpus {
            meta: self.meta.clone(),
            records: self
                .records
                .iter()
                .filter(|r| r.kept)
                .map(|r| r.pair.clone())
                .collect(),
        }
    }
}

/// Incremental filter pass: feed scored pairs in corpus order, collect the
/// stats at the end. This is the streaming building block behind
/// [`apply_filter`].
pub struct FilterRun {
    config: FilterConfig,
    stats: FilterStats,
    histogram_c1: Histogram,
    histogram_c2: Histogram,
}

impl FilterRun {
    pub fn new(config: FilterConfig) -> Result<FilterRun> {
        config.validate()?;
        Ok(FilterRun {
            histogram_c1: Histogram::new(DEFAULT_HISTOGRAM_BIN_WIDTH, config.log_c1),
            histogram_c2: Histogram::new(DEFAULT_HISTOGRAM_BIN_WIDTH, config.log_c2),
            config,
            stats: FilterStats::default(),
        })
    }

    /// Classify one scored pair, apply the configured action and update the
    /// running statistics.
    pub fn process(&mut self, sp: &ScoredPair) -> RecordOutcome {
        let stats = &mut self.stats;
        stats.total += 1;
        let decision = classify(sp, &self.config);
        if sp.exact_match {
            stats.exact_match += 1;
        } else {
            stats.effective += 1;
            // Per-criterion diagnostics, independent of the active criteria.
            let below_c1 = sp.c1_log_ratio.is_some_and(|r| r < self.config.log_c1);
            let below_c2 = sp.c2_log_ratio.is_some_and(|r| r < self.config.log_c2);
            stats.noisy_c1 += usize::from(below_c1);
            stats.noisy_c2 += usize::from(below_c2);
            stats.noisy_combined += usize::from(below_c1 || below_c2);
            if let Some(r) = sp.c1_log_ratio {
                self.histogram_c1.add(r);
            }
            if let Some(r) = sp.c2_log_ratio {
                self.histogram_c2.add(r);
            }
        }
        if matches!(decision, FilterDecision::Skipped(_)) {
            stats.skipped += 1;
        }

        // Inverse mode swaps the clean/noisy roles over effective pairs
        // only; exact matches and skipped pairs are untouched.
        let treat_as_noisy = if self.config.inverse {
            decision == FilterDecision::Clean
        } else {
            decision.is_noisy()
        };
        let (pair, kept) = if treat_as_noisy {
            match self.config.action {
                FilterAction::Replace => {
                    stats.replaced += 1;
                    let mut replaced = sp.pair.clone();
                    replaced.target_text = replaced.source_text.clone();
                    (replaced, true)
                }
                FilterAction::Discard => {
                    stats.discarded += 1;
                    (sp.pair.clone(), false)
                }
            }
        } else {
            (sp.pair.clone(), true)
        };
        RecordOutcome {
            pair,
            decision,
            kept,
            c1_log_ratio: sp.c1_log_ratio,
            c2_log_ratio: sp.c2_log_ratio,
        }
    }

    pub fn finish(self) -> FilterStats {
        let mut stats = self.stats;
        stats.histogram_c1 = Some(self.histogram_c1);
        stats.histogram_c2 = Some(self.histogram_c2);
        stats
    }
}

/// Score, classify and rewrite a whole corpus.
pub fn apply_filter(
    corpus: &Corpus,
    scorers: &FilterScorers,
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    let scored = corpus.records.iter().map(|p| score_pair(p, scorers)).collect();
    apply_filter_scored(corpus.meta.clone(), scored, config)
}

/// Same as [`apply_filter`] but over pre-scored pairs (callers may score in
/// parallel as long as input order is preserved).
pub fn apply_filter_scored(
    meta: CorpusMeta,
    scored: Vec<ScoredPair>,
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    let mut run = FilterRun::new(config.clone())?;
    let records = scored.iter().map(|sp| run.process(sp)).collect();
    Ok(FilterOutcome { meta, records, stats: run.finish() })
}

/// Baseline filter: discard pairs whose normalized edit distance (after
/// `scheme` normalization) is strictly above `threshold`; everything else is
/// kept verbatim.
pub fn edit_distance_filter(
    corpus: &Corpus,
    threshold: f64,
    scheme: NormScheme,
) -> Result<(Corpus, FilterStats)> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(Error::Config("edit-distance threshold must be in (0, inf)".to_string()));
    }
    let mut stats = FilterStats::default();
    let mut kept = Vec::new();
    for pair in &corpus.records {
        stats.total += 1;
        if pair.is_exact_match() {
            stats.exact_match += 1;
        } else {
            stats.effective += 1;
        }
        let ned = normalized_edit_distance(&pair.source_text, &pair.target_text, scheme);
        if ned > threshold {
            stats.discarded += 1;
        } else {
            kept.push(pair.clone());
        }
    }
    Ok((Corpus { meta: corpus.meta.clone(), records: kept }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelConfig, ChannelModel};
    use crate::lm::{NgramModel, Smoothing};

    fn scored_with(ratios: (f64, f64), pair: ECPair) -> ScoredPair {
        ScoredPair {
            exact_match: pair.is_exact_match(),
            norm_edit_distance: 0.0,
            pair,
            c1_log_ratio: Some(ratios.0),
            c2_log_ratio: Some(ratios.1),
        }
    }

    fn effective_pair(id: &str) -> ECPair {
        ECPair::new(id, "src", vec!["s".into()], "tgt")
    }

    /// The four published example pairs and their log ratios.
    fn reference_ratios() -> Vec<(f64, f64)> {
        vec![(1.159, 0.812), (0.680, -0.407), (-0.511, 0.174), (-1.187, -2.223)]
    }

    #[test]
    fn classify_reference_ratio_pairs() {
        let config = FilterConfig::default();
        let decisions: Vec<FilterDecision> = reference_ratios()
            .into_iter()
            .enumerate()
            .map(|(i, r)| classify(&scored_with(r, effective_pair(&format!("p{i}"))), &config))
            .collect();
        assert_eq!(
            decisions,
            vec![
                FilterDecision::Clean,
                FilterDecision::NoisyC2,
                FilterDecision::NoisyC1,
                FilterDecision::NoisyBoth,
            ]
        );
    }

    #[test]
    fn classify_threshold_is_inclusive() {
        let config = FilterConfig::default();
        let boundary = scored_with((0.0, 0.0), effective_pair("b"));
        assert_eq!(classify(&boundary, &config), FilterDecision::Clean);
    }

    #[test]
    fn classify_exact_match_short_circuits() {
        let pair = ECPair::new("e", "same", vec![], "same");
        let scored = score_pair(&pair, &FilterScorers::default());
        assert!(scored.exact_match);
        assert_eq!(classify(&scored, &FilterConfig::default()), FilterDecision::ExactMatch);
    }

    #[test]
    fn classify_missing_scores() {
        let mut scored = scored_with((0.5, 0.5), effective_pair("m"));
        scored.c2_log_ratio = None;
        assert_eq!(
            classify(&scored, &FilterConfig::default()),
            FilterDecision::Skipped(SkipReason::MissingScore)
        );
        scored.pair.source_phonemes.clear();
        assert_eq!(
            classify(&scored, &FilterConfig::default()),
            FilterDecision::Skipped(SkipReason::MissingPhonemes)
        );
        // c1-only ignores the missing c2
        let config = FilterConfig { criteria: Criteria::C1Only, ..Default::default() };
        assert_eq!(classify(&scored, &config), FilterDecision::Clean);
        // criteria none passes everything through
        let config = FilterConfig { criteria: Criteria::None, ..Default::default() };
        assert_eq!(classify(&scored, &config), FilterDecision::Clean);
    }

    #[test]
    fn score_pair_matches_single_op_calls() {
        let model = NgramModel::train(&["ab", "ab", "ba"], 2, Smoothing::WittenBell).unwrap();
        let channel = ChannelModel::train(
            &[(vec!["a".into()], "A".to_string()), (vec!["b".into()], "B".to_string())],
            &ChannelConfig { p_max: 1, g_max: 1, ..Default::default() },
        )
        .unwrap();
        let pair = ECPair::new("x", "A", vec!["a".into()], "B");
        let scorers = FilterScorers { c1: Some(&model), c2: Some(&channel) };
        let scored = score_pair(&pair, &scorers);
        assert_eq!(scored.c1_log_ratio, Some(crate::lm::c1_log_ratio(&model, &pair)));
        assert_eq!(scored.c2_log_ratio, Some(channel.c2_log_ratio(&pair).unwrap()));
        assert!(!scored.exact_match);
        assert_eq!(scored.norm_edit_distance, 1.0);
    }

    #[test]
    fn score_pair_without_phonemes_has_no_c2() {
        let channel = ChannelModel::train(
            &[(vec!["a".into()], "A".to_string())],
            &ChannelConfig { p_max: 1, g_max: 1, ..Default::default() },
        )
        .unwrap();
        let pair = ECPair::new("x", "A", vec![], "B");
        let scorers = FilterScorers { c1: None, c2: Some(&channel) };
        let scored = score_pair(&pair, &scorers);
        assert_eq!(scored.c1_log_ratio, None);
        assert_eq!(scored.c2_log_ratio, None);
    }

    fn tagged_corpus() -> Corpus {
        let records = reference_ratios()
            .into_iter()
            .enumerate()
            .map(|(i, (c1, c2))| {
                effective_pair(&format!("p{i}"))
                    .with_tag(TAG_C1, &c1.to_string())
                    .with_tag(TAG_C2, &c2.to_string())
            })
            .collect();
        Corpus::from_records(records)
    }

    fn tag_scorers(tags: &TagScorer) -> FilterScorers<'_> {
        FilterScorers { c1: Some(tags), c2: Some(tags) }
    }

    #[test]
    fn apply_filter_replaces_noisy_targets() {
        let corpus = tagged_corpus();
        let tags = TagScorer::default();
        let outcome = apply_filter(&corpus, &tag_scorers(&tags), &FilterConfig::default()).unwrap();
        let filtered = outcome.corpus();
        assert_eq!(filtered.len(), 4);
        // row 1 kept, rows 2-4 rewritten to their sources
        assert_eq!(filtered.records[0].target_text, "tgt");
        for record in &filtered.records[1..] {
            assert_eq!(record.target_text, record.source_text);
        }
        assert_eq!(outcome.stats.replaced, 3);
        assert_eq!(outcome.stats.noisy_c1, 2);
        assert_eq!(outcome.stats.noisy_c2, 2);
        assert_eq!(outcome.stats.noisy_combined, 3);
        assert_eq!(outcome.stats.effective, 4);
    }

    #[test]
    fn apply_filter_inverse_swaps_roles() {
        let corpus = tagged_corpus();
        let tags = TagScorer::default();
        let config = FilterConfig { inverse: true, ..Default::default() };
        let outcome = apply_filter(&corpus, &tag_scorers(&tags), &config).unwrap();
        let filtered = outcome.corpus();
        // row 1 (clean) is now rewritten; noisy rows 2-4 keep their targets
        assert_eq!(filtered.records[0].target_text, "src");
        for record in &filtered.records[1..] {
            assert_eq!(record.target_text, "tgt");
        }
        assert_eq!(outcome.stats.replaced, 1);
    }

    #[test]
    fn apply_filter_exact_corpus_is_untouched() {
        let records: Vec<ECPair> =
            (0..3).map(|i| ECPair::new(format!("e{i}"), "s", vec![], "s")).collect();
        let corpus = Corpus::from_records(records);
        let tags = TagScorer::default();
        let outcome = apply_filter(&corpus, &tag_scorers(&tags), &FilterConfig::default()).unwrap();
        assert_eq!(outcome.corpus(), corpus);
        assert_eq!(outcome.stats.replaced, 0);
        assert_eq!(outcome.stats.exact_match, 3);
        assert_eq!(outcome.stats.effective, 0);
    }

    #[test]
    fn apply_filter_is_idempotent_in_replace_mode() {
        let corpus = tagged_corpus();
        let tags = TagScorer::default();
        let scorers = tag_scorers(&tags);
        let config = FilterConfig::default();
        let once = apply_filter(&corpus, &scorers, &config).unwrap().corpus();
        let twice = apply_filter(&once, &scorers, &config).unwrap().corpus();
        assert_eq!(once, twice);
    }

    #[test]
    fn apply_filter_discard_mode() {
        let corpus = tagged_corpus();
        let tags = TagScorer::default();
        let config = FilterConfig { action: FilterAction::Discard, ..Default::default() };
        let outcome = apply_filter(&corpus, &tag_scorers(&tags), &config).unwrap();
        let filtered = outcome.corpus();
        assert_eq!(filtered.len(), 1);
        assert_eq!(filtered.records[0].id, "p0");
        assert_eq!(outcome.stats.discarded, 3);
        assert_eq!(outcome.records.len(), 4);
    }

    #[test]
    fn skipped_pairs_pass_through() {
        let pair = effective_pair("np"); // no score tags at all
        let corpus = Corpus::from_records(vec![pair.clone()]);
        let tags = TagScorer::default();
        let outcome = apply_filter(&corpus, &tag_scorers(&tags), &FilterConfig::default()).unwrap();
        assert_eq!(outcome.stats.skipped, 1);
        assert_eq!(outcome.corpus().records[0], pair);
        // also in inverse mode
        let config = FilterConfig { inverse: true, ..Default::default() };
        let outcome = apply_filter(&corpus, &tag_scorers(&tags), &config).unwrap();
        assert_eq!(outcome.corpus().records[0], pair);
    }

    #[test]
    fn edit_filter_boundary_is_kept() {
        // distance 2 / ref length 4 = 0.5 exactly: strictly-above discards
        let at = ECPair::new("at", "ab", vec![], "abcd");
        let above = ECPair::new("ab", "x", vec![], "abcd");
        let same = ECPair::new("id", "abcd", vec![], "abcd");
        let corpus = Corpus::from_records(vec![at.clone(), above, same.clone()]);
        let (filtered, stats) = edit_distance_filter(&corpus, 0.5, NormScheme::Nfc).unwrap();
        assert_eq!(filtered.records, vec![at, same]);
        assert_eq!(stats.discarded, 1);
        assert_eq!(stats.total, 3);
    }

    #[test]
    fn edit_filter_validates_threshold() {
        let corpus = Corpus::default();
        assert!(matches!(
            edit_distance_filter(&corpus, 0.0, NormScheme::Nfc),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn histogram_single_pair_at_zero() {
        let scored = vec![scored_with((0.0, 0.0), effective_pair("h"))];
        let hist = ratio_histogram(&scored, RatioCriterion::C1, 1.0, 0.0).unwrap();
        let bins: Vec<(f64, u64)> = hist.bins().collect();
        assert_eq!(bins, vec![(0.0, 1)]);
    }

    #[test]
    fn histogram_conserves_effective_count() {
        let mut scored: Vec<ScoredPair> = reference_ratios()
            .into_iter()
            .enumerate()
            .map(|(i, r)| scored_with(r, effective_pair(&format!("p{i}"))))
            .collect();
        scored.push({
            let pair = ECPair::new("exact", "s", vec![], "s");
            ScoredPair {
                exact_match: true,
                norm_edit_distance: 0.0,
                pair,
                c1_log_ratio: Some(0.0),
                c2_log_ratio: Some(0.0),
            }
        });
        let hist = ratio_histogram(&scored, RatioCriterion::C2, 0.5, 0.0).unwrap();
        assert_eq!(hist.total(), 4); // exact match excluded
        let csv = hist.to_csv();
        assert!(csv.starts_with("bin_left,count\n"));
    }

    #[test]
    fn histogram_empty_when_no_effective_pairs() {
        let hist = ratio_histogram(&[], RatioCriterion::C1, 0.5, 0.0).unwrap();
        assert!(hist.is_empty());
        assert!(matches!(
            ratio_histogram(&[], RatioCriterion::C1, 0.0, 0.0),
            Err(Error::Config(_))
        ));
    }
}
