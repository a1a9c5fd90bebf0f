//! Phoneme-conditioned graphone channel model.
//!
//! The model scores text given a phoneme sequence by summing over all
//! monotonic co-segmentations of the pair into graphones (phoneme-chunk /
//! grapheme-chunk units). Generation walks left to right over the phonemes:
//! at each step a chunk length is drawn uniformly from the lengths still
//! available, then the grapheme chunk is drawn from a distribution
//! conditioned on the phoneme chunk and, at unit order 2, on the previous
//! unit. Distributions are trained by EM over the segmentation lattice;
//! because the length factor carries no parameters, the M-step is exact and
//! the training log-likelihood is non-decreasing.
//!
//! Unseen units score at a configurable floor probability, so every
//! (text, phonemes) pair is scorable. Pairs that are structurally
//! unalignable (e.g. more graphemes than the span bounds can emit) receive
//! a finite fallback score below any alignable path.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ECPair;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "eckit-channel";
pub const MODEL_VERSION: &str = "1";

/// A phoneme-chunk / grapheme-chunk unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Graphone {
    pub phonemes: Vec<String>,
    pub graphemes: String,
}

impl Graphone {
    pub fn new(phonemes: &[&str], graphemes: &str) -> Graphone {
        Graphone {
            phonemes: phonemes.iter().map(|s| s.to_string()).collect(),
            graphemes: graphemes.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Maximum phoneme tokens per unit (chunks always consume >= 1).
    pub p_max: usize,
    /// Maximum grapheme characters per unit.
    pub g_max: usize,
    /// Unit n-gram order: 1 (no history) or 2 (previous unit).
    pub unit_order: usize,
    pub em_iters: usize,
    /// Early-stop threshold on log-likelihood improvement.
    pub em_tol: f64,
    /// Probability assigned to unseen units at inference.
    pub floor: f64,
    /// Allow units with an empty grapheme side during training
    /// (phoneme deletions). Inference always considers them, floored when
    /// untrained.
    pub allow_empty_graphemes: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            p_max: 2,
            g_max: 2,
            unit_order: 2,
            em_iters: 10,
            em_tol: 1e-7,
            floor: 1e-12,
            allow_empty_graphemes: false,
        }
    }
}

impl ChannelConfig {
    fn validate(&self) -> Result<()> {
        if self.p_max < 1 || self.g_max < 1 {
            return Err(Error::Config("channel span maxima must be >= 1".to_string()));
        }
        if !(1..=2).contains(&self.unit_order) {
            return Err(Error::Config(format!(
                "unit order {} unsupported (1 and 2 are implemented)",
                self.unit_order
            )));
        }
        if self.em_iters < 1 {
            return Err(Error::Config("em_iters must be >= 1".to_string()));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::Config("floor must be in (0, 1)".to_string()));
        }
        Ok(())
    }
}

const BOS_CTX: u32 = 0;

/// Trained channel model. Immutable and safe to share across threads for
/// scoring.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    config: ChannelConfig,
    /// Sorted unit inventory; ids are indices into this vector.
    inventory: Vec<Graphone>,
    unit_ids: HashMap<Graphone, u32>,
    /// `probs[0]` is the BOS context, `probs[u + 1]` the context of unit `u`
    /// (unit order 2). At unit order 1 only index 0 is used.
    /// `probs[ctx][u] = p(graphemes(u) | ctx, phonemes(u))`.
    probs: Vec<HashMap<u32, f64>>,
    /// Phoneme-side group of each unit; normalization is per (ctx, group).
    ph_group: Vec<u32>,
    log_likelihood_trace: Vec<f64>,
    skipped_pairs: usize,
}

// ---------------------------------------------------------------------------
// Lattice
// ---------------------------------------------------------------------------

/// Per-pair segmentation lattice. States are (i, j, incoming-span-shape);
/// the incoming unit's content is determined by its end position and shape.
struct Lattice<'a> {
    ph: &'a [String],
    chars: Vec<char>,
    p_max: usize,
    /// shape list: (p, g) with 1 <= p <= p_max, g_min <= g <= g_max
    shapes: Vec<(usize, usize)>,
    /// unit id (or None if unseen) for the span starting at (i, j) with
    /// shape s; indexed [ (i * (n_ch+1) + j) * n_shapes + s ].
    span_ids: Vec<Option<u32>>,
}

impl<'a> Lattice<'a> {
    fn new(
        model_units: &HashMap<Graphone, u32>,
        ph: &'a [String],
        text: &str,
        p_max: usize,
        g_max: usize,
        g_min: usize,
    ) -> Lattice<'a> {
        let chars: Vec<char> = text.chars().collect();
        let n_ph = ph.len();
        let n_ch = chars.len();
        let mut shapes = Vec::new();
        for p in 1..=p_max {
            for g in g_min..=g_max {
                shapes.push((p, g));
            }
        }
        let n_shapes = shapes.len();
        let mut span_ids = vec![None; (n_ph + 1) * (n_ch + 1) * n_shapes];
        for i in 0..=n_ph {
            for j in 0..=n_ch {
                for (s, &(p, g)) in shapes.iter().enumerate() {
                    if i + p <= n_ph && j + g <= n_ch {
                        let unit = Graphone {
                            phonemes: ph[i..i + p].to_vec(),
                            graphemes: chars[j..j + g].iter().collect(),
                        };
                        span_ids[(i * (n_ch + 1) + j) * n_shapes + s] =
                            model_units.get(&unit).copied();
                    }
                }
            }
        }
        Lattice { ph, chars, p_max, shapes, span_ids }
    }

    fn n_ph(&self) -> usize {
        self.ph.len()
    }

    fn n_ch(&self) -> usize {
        self.chars.len()
    }

    fn n_shapes(&self) -> usize {
        self.shapes.len()
    }

    fn span_id(&self, i: usize, j: usize, s: usize) -> Option<u32> {
        self.span_ids[(i * (self.n_ch() + 1) + j) * self.n_shapes() + s]
    }

    fn state(&self, i: usize, j: usize, s: usize) -> usize {
        (i * (self.n_ch() + 1) + j) * self.n_shapes() + s
    }

    fn n_states(&self) -> usize {
        (self.n_ph() + 1) * (self.n_ch() + 1) * self.n_shapes()
    }

    /// log of the uniform span-length factor at phoneme position i.
    fn log_len_factor(&self, i: usize) -> f64 {
        let choices = self.p_max.min(self.n_ph() - i);
        -((choices as f64).ln())
    }

    /// Context index of the state (i, j, s): the id of the unit that ends at
    /// (i, j) with shape s. None when that unit is not in the inventory.
    fn state_ctx(&self, i: usize, j: usize, s: usize) -> Option<u32> {
        let (p, g) = self.shapes[s];
        self.span_id(i - p, j - g, s)
    }
}

fn lse(acc: f64, term: f64) -> f64 {
    if term == f64::NEG_INFINITY {
        return acc;
    }
    if acc == f64::NEG_INFINITY {
        return term;
    }
    let (hi, lo) = if acc >= term { (acc, term) } else { (term, acc) };
    hi + (lo - hi).exp().ln_1p()
}

impl ChannelModel {
    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn inventory(&self) -> &[Graphone] {
        &self.inventory
    }

    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood_trace
    }

    pub fn skipped_pairs(&self) -> usize {
        self.skipped_pairs
    }

    fn ctx_index(&self, prev: Option<u32>) -> Option<usize> {
        if self.config.unit_order == 1 {
            return Some(BOS_CTX as usize);
        }
        match prev {
            None => Some(BOS_CTX as usize),
            Some(u) => Some(u as usize + 1),
        }
    }

    fn span_prob(&self, prev_ctx: Option<usize>, unit: Option<u32>) -> f64 {
        let floor = self.config.floor;
        let (Some(ctx), Some(unit)) = (prev_ctx, unit) else {
            return floor;
        };
        self.probs[ctx].get(&unit).copied().unwrap_or(floor)
    }

    /// Trained (or floored) probability of `graphemes` given the phoneme
    /// chunk and the previous unit (`None` = sequence start). This is the
    /// per-unit factor used by the lattice, without the span-length factor.
    pub fn unit_prob(&self, prev: Option<&Graphone>, phonemes: &[String], graphemes: &str) -> f64 {
        let prev_id = match prev {
            None => None,
            Some(unit) => match self.unit_ids.get(unit) {
                Some(&id) => Some(id),
                None => {
                    if self.config.unit_order == 1 {
                        None
                    } else {
                        return self.config.floor;
                    }
                }
            },
        };
        let unit = Graphone { phonemes: phonemes.to_vec(), graphemes: graphemes.to_string() };
        self.span_prob(self.ctx_index(prev_id), self.unit_ids.get(&unit).copied())
    }

    /// Score for pairs with no monotonic co-segmentation at all; strictly
    /// below any alignable path of the same size.
    fn no_path_score(&self, n_ph: usize, n_ch: usize) -> f64 {
        self.config.floor.ln() * (n_ph + n_ch + 1) as f64
    }

    fn lattice<'a>(&self, ph: &'a [String], text: &str) -> Lattice<'a> {
        // Inference always admits empty grapheme sides so that short texts
        // stay alignable; untrained spans score at the floor.
        Lattice::new(&self.unit_ids, ph, text, self.config.p_max, self.config.g_max, 0)
    }

    /// Natural-log conditional likelihood of `text` given `phonemes`:
    /// forward sum over all monotonic co-segmentations.
    pub fn conditional_log_prob(&self, text: &str, phonemes: &[String]) -> f64 {
        let lattice = self.lattice(phonemes, text);
        let n_ph = lattice.n_ph();
        let n_ch = lattice.n_ch();
        if n_ph == 0 {
            return if n_ch == 0 { 0.0 } else { self.no_path_score(n_ph, n_ch) };
        }
        let mut alpha = vec![f64::NEG_INFINITY; lattice.n_states()];
        let mut z = f64::NEG_INFINITY;
        self.forward(&lattice, &mut alpha, &mut z);
        if z == f64::NEG_INFINITY {
            return self.no_path_score(n_ph, n_ch);
        }
        z.min(0.0)
    }

    /// Forward pass; fills `alpha` and the total `z` over end states.
    /// The virtual BOS state at (0, 0) is encoded as shape index `n_shapes`.
    fn forward(&self, lattice: &Lattice, alpha: &mut [f64], z: &mut f64) {
        let n_ph = lattice.n_ph();
        let n_ch = lattice.n_ch();
        let n_shapes = lattice.n_shapes();
        for i in 0..=n_ph {
            for j in 0..=n_ch {
                for s in 0..=n_shapes {
                    let is_bos = s == n_shapes;
                    if is_bos && (i != 0 || j != 0) {
                        continue;
                    }
                    let cur = if is_bos { 0.0 } else { alpha[lattice.state(i, j, s)] };
                    if cur == f64::NEG_INFINITY {
                        continue;
                    }
                    if i == n_ph && j == n_ch {
                        if !is_bos {
                            *z = lse(*z, cur);
                        }
                        continue;
                    }
                    if i == n_ph {
                        continue; // graphemes remain but no phonemes: dead end
                    }
                    let ctx = if is_bos || self.config.unit_order == 1 {
                        Some(BOS_CTX as usize)
                    } else {
                        lattice.state_ctx(i, j, s).map(|u| u as usize + 1)
                    };
                    let len_factor = lattice.log_len_factor(i);
                    for (s2, &(p, g)) in lattice.shapes.iter().enumerate() {
                        if i + p > n_ph || j + g > n_ch {
                            continue;
                        }
                        let unit = lattice.span_id(i, j, s2);
                        let w = len_factor + self.span_prob(ctx, unit).ln();
                        let target = lattice.state(i + p, j + g, s2);
                        alpha[target] = lse(alpha[target], cur + w);
                    }
                }
            }
        }
    }

    /// Log-likelihood ratio of target over source given the pair's phonemes.
    /// Exactly 0 when source equals target.
    pub fn c2_log_ratio(&self, pair: &ECPair) -> Result<f64> {
        if pair.source_phonemes.is_empty() {
            return Err(Error::MissingPhonemes(pair.id.clone()));
        }
        if pair.source_text == pair.target_text {
            return Ok(0.0);
        }
        Ok(self.conditional_log_prob(&pair.target_text, &pair.source_phonemes)
            - self.conditional_log_prob(&pair.source_text, &pair.source_phonemes))
    }

    /// Best-scoring segmentation and its log probability. Ties break toward
    /// fewer units, then lexicographically smaller inventory ids (units
    /// outside the inventory compare largest). Returns an empty path with
    /// the no-path score when the pair is unalignable.
    pub fn viterbi_segmentation(&self, text: &str, phonemes: &[String]) -> (Vec<Graphone>, f64) {
        let lattice = self.lattice(phonemes, text);
        let n_ph = lattice.n_ph();
        let n_ch = lattice.n_ch();
        if n_ph == 0 {
            return if n_ch == 0 {
                (Vec::new(), 0.0)
            } else {
                (Vec::new(), self.no_path_score(n_ph, n_ch))
            };
        }

        #[derive(Clone)]
        struct Best {
            score: f64,
            ids: Vec<u32>,
            spans: Vec<(usize, usize, usize, usize)>,
        }
        fn better(a: &Best, b: &Best) -> bool {
            if a.score != b.score {
                return a.score > b.score;
            }
            if a.ids.len() != b.ids.len() {
                return a.ids.len() < b.ids.len();
            }
            a.ids < b.ids
        }

        let mut best: Vec<Option<Best>> = vec![None; lattice.n_states()];
        let mut final_best: Option<Best> = None;
        let start = Best { score: 0.0, ids: Vec::new(), spans: Vec::new() };
        let consider_final = |cand: &Best, final_best: &mut Option<Best>| {
            if final_best.as_ref().is_none_or(|b| better(cand, b)) {
                *final_best = Some(cand.clone());
            }
        };
        // Expand from a state given its context.
        for i in 0..=n_ph {
            for j in 0..=n_ch {
                for s in 0..=lattice.n_shapes() {
                    let (cur, ctx) = if s == lattice.n_shapes() {
                        if i != 0 || j != 0 {
                            continue;
                        }
                        (start.clone(), Some(BOS_CTX as usize))
                    } else {
                        match &best[lattice.state(i, j, s)] {
                            None => continue,
                            Some(b) => {
                                let ctx = if self.config.unit_order == 1 {
                                    Some(BOS_CTX as usize)
                                } else {
                                    lattice.state_ctx(i, j, s).map(|u| u as usize + 1)
                                };
                                (b.clone(), ctx)
                            }
                        }
                    };
                    if i == n_ph && j == n_ch {
                        consider_final(&cur, &mut final_best);
                        continue;
                    }
                    if i == n_ph {
                        continue;
                    }
                    let len_factor = lattice.log_len_factor(i);
                    for (s2, &(p, g)) in lattice.shapes.iter().enumerate() {
                        if i + p > n_ph || j + g > n_ch {
                            continue;
                        }
                        let unit = lattice.span_id(i, j, s2);
                        let w = len_factor + self.span_prob(ctx, unit).ln();
                        let mut cand = cur.clone();
                        cand.score += w;
                        cand.ids.push(unit.unwrap_or(u32::MAX));
                        cand.spans.push((i, j, p, g));
                        let slot = &mut best[lattice.state(i + p, j + g, s2)];
                        if slot.as_ref().is_none_or(|b| better(&cand, b)) {
                            *slot = Some(cand);
                        }
                    }
                }
            }
        }
        match final_best {
            None => (Vec::new(), self.no_path_score(n_ph, n_ch)),
            Some(b) => {
                let path = b
                    .spans
                    .iter()
                    .map(|&(i, j, p, g)| Graphone {
                        phonemes: phonemes[i..i + p].to_vec(),
                        graphemes: lattice.chars[j..j + g].iter().collect(),
                    })
                    .collect();
                (path, b.score)
            }
        }
    }

    // -----------------------------------------------------------------------
    // Training
    // -----------------------------------------------------------------------

    /// Train by EM over monotonic co-segmentations. Pairs are canonically
    /// sorted first, so the result is independent of input order. Pairs with
    /// both sides empty or with no alignment under the span bounds are
    /// skipped and counted; training fails only if nothing is usable.
    pub fn train(pairs: &[(Vec<String>, String)], config: &ChannelConfig) -> Result<ChannelModel> {
        config.validate()?;
        if pairs.is_empty() {
            return Err(Error::Train("empty pair list".to_string()));
        }
        let mut sorted: Vec<&(Vec<String>, String)> = pairs.iter().collect();
        sorted.sort();

        let g_min = if config.allow_empty_graphemes { 0 } else { 1 };

        // Pass 1: find units on complete paths of each pair's lattice.
        let empty_ids = HashMap::new();
        let mut skipped = 0usize;
        let mut usable: Vec<&(Vec<String>, String)> = Vec::new();
        let mut unit_set: std::collections::BTreeSet<Graphone> = std::collections::BTreeSet::new();
        for pair in &sorted {
            let (ph, text) = (&pair.0, &pair.1);
            if ph.is_empty() {
                skipped += 1;
                continue;
            }
            let lattice = Lattice::new(&empty_ids, ph, text, config.p_max, config.g_max, g_min);
            let Some((fwd, bwd)) = reachability(&lattice) else {
                skipped += 1;
                continue;
            };
            collect_path_units(&lattice, &fwd, &bwd, &mut unit_set);
            usable.push(pair);
        }
        if usable.is_empty() {
            return Err(Error::Train(
                "no trainable pairs: all empty or unalignable under the span bounds".to_string(),
            ));
        }

        let inventory: Vec<Graphone> = unit_set.into_iter().collect();
        let unit_ids: HashMap<Graphone, u32> = inventory
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as u32))
            .collect();

        // Phoneme-side groups for per-(ctx, phoneme-chunk) normalization.
        let mut ph_side_ids: HashMap<&[String], u32> = HashMap::new();
        let mut ph_group = Vec::with_capacity(inventory.len());
        for unit in &inventory {
            let next = ph_side_ids.len() as u32;
            let id = *ph_side_ids.entry(unit.phonemes.as_slice()).or_insert(next);
            ph_group.push(id);
        }

        let n_ctx = if config.unit_order == 1 { 1 } else { inventory.len() + 1 };
        let mut model = ChannelModel {
            config: config.clone(),
            inventory,
            unit_ids,
            probs: vec![HashMap::new(); n_ctx],
            ph_group,
            log_likelihood_trace: Vec::new(),
            skipped_pairs: skipped,
        };

        // Pass 2: observed (ctx, unit) events on complete paths, for the
        // flat initialization.
        let mut events: std::collections::BTreeSet<(u32, u32)> = std::collections::BTreeSet::new();
        for pair in &usable {
            let lattice =
                Lattice::new(&model.unit_ids, &pair.0, &pair.1, config.p_max, config.g_max, g_min);
            let (fwd, bwd) = reachability(&lattice).expect("usable pair must align");
            collect_path_events(&model, &lattice, &fwd, &bwd, &mut events);
        }
        model.init_flat(&events);

        // EM.
        let mut prev_ll = f64::NEG_INFINITY;
        for _ in 0..config.em_iters {
            let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
            let mut ll = 0.0;
            for pair in &usable {
                ll += model.accumulate_pair(&pair.0, &pair.1, g_min, &mut counts);
            }
            model.log_likelihood_trace.push(ll);
            model.m_step(&counts);
            if (ll - prev_ll).abs() < config.em_tol {
                break;
            }
            prev_ll = ll;
        }
        Ok(model)
    }

    fn init_flat(&mut self, events: &std::collections::BTreeSet<(u32, u32)>) {
        // Group observed units per (ctx, phoneme side) and spread the mass
        // evenly.
        let mut group_sizes: HashMap<(u32, u32), u32> = HashMap::new();
        for &(ctx, unit) in events {
            *group_sizes.entry((ctx, self.ph_group[unit as usize])).or_insert(0) += 1;
        }
        for &(ctx, unit) in events {
            let size = group_sizes[&(ctx, self.ph_group[unit as usize])];
            self.probs[ctx as usize].insert(unit, 1.0 / size as f64);
        }
    }

    /// One pair's E-step: forward-backward over the lattice, adding expected
    /// counts to `counts`. Returns the pair's log-likelihood.
    fn accumulate_pair(
        &self,
        ph: &[String],
        text: &str,
        g_min: usize,
        counts: &mut HashMap<(u32, u32), f64>,
    ) -> f64 {
        let lattice = Lattice::new(&self.unit_ids, ph, text, self.config.p_max, self.config.g_max, g_min);
        let n_ph = lattice.n_ph();
        let n_ch = lattice.n_ch();
        let n_shapes = lattice.n_shapes();

        // Forward (BOS handled as extra virtual state).
        let mut alpha = vec![f64::NEG_INFINITY; lattice.n_states()];
        let mut z = f64::NEG_INFINITY;
        self.forward(&lattice, &mut alpha, &mut z);
        debug_assert!(z > f64::NEG_INFINITY);

        // Backward: beta[state] = log mass from state to the end node.
        let mut beta = vec![f64::NEG_INFINITY; lattice.n_states()];
        for s in 0..n_shapes {
            beta[lattice.state(n_ph, n_ch, s)] = 0.0;
        }
        let mut bos_beta = f64::NEG_INFINITY;
        if n_ph == 0 && n_ch == 0 {
            bos_beta = 0.0;
        }
        for i in (0..=n_ph).rev() {
            for j in (0..=n_ch).rev() {
                for s in 0..=n_shapes {
                    let is_bos = s == n_shapes;
                    if is_bos && (i != 0 || j != 0) {
                        continue;
                    }
                    if i == n_ph {
                        continue; // end states keep their initial 0.0
                    }
                    if !is_bos {
                        let (p, g) = lattice.shapes[s];
                        if i < p || j < g {
                            continue; // no unit of this shape can end here
                        }
                    }
                    let ctx = if is_bos || self.config.unit_order == 1 {
                        Some(BOS_CTX as usize)
                    } else {
                        lattice.state_ctx(i, j, s).map(|u| u as usize + 1)
                    };
                    let len_factor = lattice.log_len_factor(i);
                    let mut acc = f64::NEG_INFINITY;
                    for (s2, &(p, g)) in lattice.shapes.iter().enumerate() {
                        if i + p > n_ph || j + g > n_ch {
                            continue;
                        }
                        let unit = lattice.span_id(i, j, s2);
                        let w = len_factor + self.span_prob(ctx, unit).ln();
                        acc = lse(acc, w + beta[lattice.state(i + p, j + g, s2)]);
                    }
                    if is_bos {
                        bos_beta = acc;
                    } else {
                        beta[lattice.state(i, j, s)] = acc;
                    }
                }
            }
        }
        debug_assert!((bos_beta - z).abs() < 1e-6 * (1.0 + z.abs()) || n_ph == 0);

        // Edge posteriors.
        for i in 0..=n_ph {
            for j in 0..=n_ch {
                for s in 0..=n_shapes {
                    let is_bos = s == n_shapes;
                    if is_bos && (i != 0 || j != 0) {
                        continue;
                    }
                    if i >= n_ph {
                        continue;
                    }
                    let cur = if is_bos { 0.0 } else { alpha[lattice.state(i, j, s)] };
                    if cur == f64::NEG_INFINITY {
                        continue;
                    }
                    let (ctx_key, ctx) = if is_bos || self.config.unit_order == 1 {
                        (Some(BOS_CTX), Some(BOS_CTX as usize))
                    } else {
                        match lattice.state_ctx(i, j, s) {
                            Some(u) => (Some(u + 1), Some(u as usize + 1)),
                            None => (None, None),
                        }
                    };
                    let len_factor = lattice.log_len_factor(i);
                    for (s2, &(p, g)) in lattice.shapes.iter().enumerate() {
                        if i + p > n_ph || j + g > n_ch {
                            continue;
                        }
                        let Some(unit) = lattice.span_id(i, j, s2) else {
                            continue;
                        };
                        let Some(ctx_key) = ctx_key else { continue };
                        let w = len_factor + self.span_prob(ctx, Some(unit)).ln();
                        let post = cur + w + beta[lattice.state(i + p, j + g, s2)] - z;
                        if post > -700.0 {
                            *counts.entry((ctx_key, unit)).or_insert(0.0) += post.exp();
                        }
                    }
                }
            }
        }
        z
    }

    fn m_step(&mut self, counts: &HashMap<(u32, u32), f64>) {
        // Renormalize each (ctx, phoneme-side) group from its expected
        // counts; groups with no mass keep their previous distribution.
        let mut group_sums: HashMap<(u32, u32), f64> = HashMap::new();
        for (&(ctx, unit), &c) in counts {
            *group_sums.entry((ctx, self.ph_group[unit as usize])).or_insert(0.0) += c;
        }
        // Drop stale entries of groups that received mass, then rewrite.
        for (ctx, dist) in self.probs.iter_mut().enumerate() {
            dist.retain(|&unit, _| {
                group_sums
                    .get(&(ctx as u32, self.ph_group[unit as usize]))
                    .is_none_or(|&s| s <= 0.0)
            });
        }
        for (&(ctx, unit), &c) in counts {
            let sum = group_sums[&(ctx, self.ph_group[unit as usize])];
            if sum > 0.0 && c > 0.0 {
                self.probs[ctx as usize].insert(unit, c / sum);
            }
        }
    }

    // -----------------------------------------------------------------------
    // Serialization
    // -----------------------------------------------------------------------

    pub fn to_json(&self) -> String {
        let contexts: Vec<ContextFile> = self
            .probs
            .iter()
            .enumerate()
            .filter(|(_, dist)| !dist.is_empty())
            .map(|(ctx, dist)| {
                let mut entries: Vec<(u32, f64)> = dist.iter().map(|(&u, &p)| (u, p)).collect();
                entries.sort_by_key(|&(u, _)| u);
                ContextFile {
                    context: if ctx == 0 { None } else { Some(ctx as u32 - 1) },
                    dist: entries,
                }
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION.to_string(),
            config: self.config.clone(),
            inventory: self.inventory.clone(),
            contexts,
            log_likelihood_trace: self.log_likelihood_trace.clone(),
            skipped_pairs: self.skipped_pairs,
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<ChannelModel> {
        let file: ModelFile =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("bad model file: {e}")))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Config(format!("unknown model format: {}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Config(format!("unknown model version: {}", file.version)));
        }
        file.config.validate()?;
        let unit_ids: HashMap<Graphone, u32> = file
            .inventory
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as u32))
            .collect();
        let mut ph_side_ids: HashMap<&[String], u32> = HashMap::new();
        let mut ph_group = Vec::with_capacity(file.inventory.len());
        for unit in &file.inventory {
            let next = ph_side_ids.len() as u32;
            let id = *ph_side_ids.entry(unit.phonemes.as_slice()).or_insert(next);
            ph_group.push(id);
        }
        let n_ctx = if file.config.unit_order == 1 { 1 } else { file.inventory.len() + 1 };
        let mut probs = vec![HashMap::new(); n_ctx];
        for ctx_file in &file.contexts {
            let ctx = match ctx_file.context {
                None => 0usize,
                Some(u) => u as usize + 1,
            };
            if ctx >= n_ctx {
                return Err(Error::Config("context index out of range".to_string()));
            }
            for &(unit, p) in &ctx_file.dist {
                if unit as usize >= file.inventory.len() {
                    return Err(Error::Config("unit index out of range".to_string()));
                }
                probs[ctx].insert(unit, p);
            }
        }
        Ok(ChannelModel {
            config: file.config,
            inventory: file.inventory,
            unit_ids,
            probs,
            ph_group,
            log_likelihood_trace: file.log_likelihood_trace,
            skipped_pairs: file.skipped_pairs,
        })
    }
}

/// Forward and backward reachability over a lattice with all span
/// probabilities treated as positive. Returns None when no complete path
/// exists. Outgoing transitions do not depend on the incoming shape, so
/// backward reachability is uniform across shapes at a node.
fn reachability(lattice: &Lattice) -> Option<(Vec<bool>, Vec<bool>)> {
    let n_ph = lattice.n_ph();
    let n_ch = lattice.n_ch();
    let n_shapes = lattice.n_shapes();
    let mut fwd = vec![false; lattice.n_states()];
    for i in 0..=n_ph {
        for j in 0..=n_ch {
            let at_node = (i == 0 && j == 0)
                || (0..n_shapes).any(|s| fwd[lattice.state(i, j, s)]);
            if !at_node || i >= n_ph {
                continue;
            }
            for (s2, &(p, g)) in lattice.shapes.iter().enumerate() {
                if i + p <= n_ph && j + g <= n_ch {
                    fwd[lattice.state(i + p, j + g, s2)] = true;
                }
            }
        }
    }
    let any_end = (n_ph == 0 && n_ch == 0)
        || (0..n_shapes).any(|s| fwd[lattice.state(n_ph, n_ch, s)]);
    if !any_end {
        return None;
    }
    let mut bwd = vec![false; lattice.n_states()];
    for s in 0..n_shapes {
        bwd[lattice.state(n_ph, n_ch, s)] = true;
    }
    for i in (0..n_ph).rev() {
        for j in (0..=n_ch).rev() {
            let reaches_end = lattice.shapes.iter().enumerate().any(|(s2, &(p, g))| {
                i + p <= n_ph && j + g <= n_ch && bwd[lattice.state(i + p, j + g, s2)]
            });
            if reaches_end {
                for s in 0..n_shapes {
                    bwd[lattice.state(i, j, s)] = true;
                }
            }
        }
    }
    Some((fwd, bwd))
}

/// Add every unit that lies on a complete path to `units`.
fn collect_path_units(
    lattice: &Lattice,
    fwd: &[bool],
    bwd: &[bool],
    units: &mut std::collections::BTreeSet<Graphone>,
) {
    let n_ph = lattice.n_ph();
    let n_ch = lattice.n_ch();
    for i in 0..=n_ph {
        for j in 0..=n_ch {
            let from_start = (i == 0 && j == 0)
                || (0..lattice.n_shapes()).any(|s| fwd[lattice.state(i, j, s)]);
            if !from_start || i >= n_ph {
                continue;
            }
            for (s2, &(p, g)) in lattice.shapes.iter().enumerate() {
                if i + p > n_ph || j + g > n_ch {
                    continue;
                }
                let to_end = (i + p == n_ph && j + g == n_ch)
                    || bwd[lattice.state(i + p, j + g, s2)];
                if to_end {
                    units.insert(Graphone {
                        phonemes: lattice.ph[i..i + p].to_vec(),
                        graphemes: lattice.chars[j..j + g].iter().collect(),
                    });
                }
            }
        }
    }
}

/// Add every (ctx, unit) event on a complete path to `events`.
fn collect_path_events(
    model: &ChannelModel,
    lattice: &Lattice,
    fwd: &[bool],
    bwd: &[bool],
    events: &mut std::collections::BTreeSet<(u32, u32)>,
) {
    let n_ph = lattice.n_ph();
    let n_ch = lattice.n_ch();
    let n_shapes = lattice.n_shapes();
    for i in 0..=n_ph {
        for j in 0..=n_ch {
            for s in 0..=n_shapes {
                let is_bos = s == n_shapes;
                if is_bos && (i != 0 || j != 0) {
                    continue;
                }
                if !is_bos && !fwd[lattice.state(i, j, s)] {
                    continue;
                }
                if i >= n_ph {
                    continue;
                }
                let ctx_key = if is_bos || model.config.unit_order == 1 {
                    BOS_CTX
                } else {
                    match lattice.state_ctx(i, j, s) {
                        Some(u) => u + 1,
                        None => continue,
                    }
                };
                for (s2, &(p, g)) in lattice.shapes.iter().enumerate() {
                    if i + p > n_ph || j + g > n_ch {
                        continue;
                    }
                    let to_end = (i + p == n_ph && j + g == n_ch)
                        || bwd[lattice.state(i + p, j + g, s2)];
                    if !to_end {
                        continue;
                    }
                    if let Some(unit) = lattice.span_id(i, j, s2) {
                        events.insert((ctx_key, unit));
                    }
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: String,
    config: ChannelConfig,
    inventory: Vec<Graphone>,
    contexts: Vec<ContextFile>,
    log_likelihood_trace: Vec<f64>,
    skipped_pairs: usize,
}

#[derive(Serialize, Deserialize)]
struct ContextFile {
    /// None = sequence start (BOS), otherwise the previous unit's index.
    context: Option<u32>,
    dist: Vec<(u32, f64)>,
}
