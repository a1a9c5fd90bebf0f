//! Run the synthetic filtering experiment and print per-class flag rates.
//!
//! Generates a labeled corpus, trains both scorers on the trustworthy slice
//! (clean + exact-match pairs), filters with the default thresholds and
//! reports how often each injected noise class is caught.
//!
//! Usage: synthetic_experiment [n_words] [alphabet] [seed] [n_pairs]

use std::time::Instant;

use eckit::channel::{ChannelConfig, ChannelModel};
use eckit::filter::{apply_filter, FilterConfig, FilterScorers};
use eckit::lm::{NgramModel, Smoothing};
use eckit::synth::{gen_labeled_corpus, gen_lexicon, NoiseProfile};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, default: usize| -> usize {
        args.get(i).map(|s| s.parse().expect("numeric argument")).unwrap_or(default)
    };
    let n_words = arg(1, 60);
    let alphabet = arg(2, 14);
    let seed = arg(3, 42) as u64;
    let n_pairs = arg(4, 10_000);

    let started = Instant::now();
    let lexicon = gen_lexicon(seed, n_words, alphabet).expect("lexicon");
    let profile = NoiseProfile { seed, ..Default::default() };
    let corpus = gen_labeled_corpus(&lexicon, &profile, n_pairs).expect("corpus");
    eprintln!("generated {} pairs in {:?}", corpus.len(), started.elapsed());

    let slice: Vec<&eckit::corpus::ECPair> = corpus
        .records
        .iter()
        .filter(|p| matches!(p.tags["noise_class"].as_str(), "clean" | "exact_match"))
        .collect();
    let texts: Vec<&str> = slice.iter().map(|p| p.target_text.as_str()).collect();
    let lm = NgramModel::train(&texts, 5, Smoothing::WittenBell).expect("lm");
    let channel_pairs: Vec<(Vec<String>, String)> = slice
        .iter()
        .map(|p| (p.source_phonemes.clone(), p.target_text.clone()))
        .collect();
    let channel = ChannelModel::train(&channel_pairs, &ChannelConfig::default()).expect("channel");
    eprintln!(
        "trained scorers on {} pairs ({} channel units) in {:?}",
        slice.len(),
        channel.inventory().len(),
        started.elapsed()
    );

    let scorers = FilterScorers { c1: Some(&lm), c2: Some(&channel) };
    let outcome = apply_filter(&corpus, &scorers, &FilterConfig::default()).expect("filter");

    let mut per_class: std::collections::BTreeMap<&str, [usize; 4]> = Default::default();
    for (rec, pair) in outcome.records.iter().zip(&corpus.records) {
        let row = per_class.entry(pair.tags["noise_class"].as_str()).or_default();
        row[0] += 1;
        let c1 = rec.c1_log_ratio.is_some_and(|r| r < 0.0);
        let c2 = rec.c2_log_ratio.is_some_and(|r| r < 0.0);
        row[1] += usize::from(c1);
        row[2] += usize::from(c2);
        row[3] += usize::from(c1 || c2);
    }
    println!("{:<22} {:>6} {:>7} {:>7} {:>8}", "class", "n", "%c1", "%c2", "%either");
    for (class, [n, c1, c2, either]) in &per_class {
        let pct = |x: usize| 100.0 * x as f64 / *n as f64;
        println!(
            "{class:<22} {n:>6} {:>7.1} {:>7.1} {:>8.1}",
            pct(*c1),
            pct(*c2),
            pct(*either)
        );
    }
    let stats = &outcome.stats;
    println!(
        "total {} | exact {} | effective {} | noisy c1 {} c2 {} combined {} | {:?}",
        stats.total,
        stats.exact_match,
        stats.effective,
        stats.noisy_c1,
        stats.noisy_c2,
        stats.noisy_combined,
        started.elapsed()
    );
}
