//! BLEU-1, entity precision/recall and the variant comparison harness.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::inference::{DecodeOptions, Engine};
use crate::kb::{EntityId, KnowledgeBase};
use crate::model::Variant;
use crate::training::{load_checkpoint, train, TrainingConfig};

fn counts<T: Eq + Hash>(items: &[T]) -> HashMap<&T, usize> {
    let mut m = HashMap::new();
    for x in items {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Size of the multiset intersection.
fn clipped_overlap<T: Eq + Hash>(a: &[T], b: &[T]) -> usize {
    let cb = counts(b);
    counts(a).into_iter().map(|(k, n)| n.min(cb.get(k).copied().unwrap_or(0))).sum()
}

/// Unigram counts of one sentence pair: (clipped matches, hyp length, ref length).
fn unigram_stats(hyp: &[String], reference: &[String]) -> (usize, usize, usize) {
    (clipped_overlap(hyp, reference), hyp.len(), reference.len())
}

fn bleu_from_stats(matches: usize, hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 || matches == 0 {
        return 0.0;
    }
    let precision = matches as f64 / hyp_len as f64;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * precision
}

/// Sentence-level BLEU with unigrams only: clipped unigram precision times
/// the brevity penalty.
pub fn bleu1(hyp: &[String], reference: &[String]) -> f64 {
    let (m, c, r) = unigram_stats(hyp, reference);
    bleu_from_stats(m, c, r)
}

/// Corpus-level BLEU-1: counts are summed over all pairs first.
pub fn corpus_bleu1<'a>(pairs: impl IntoIterator<Item = (&'a [String], &'a [String])>) -> f64 {
    let (mut m, mut c, mut r) = (0, 0, 0);
    for (hyp, reference) in pairs {
        let (a, b, d) = unigram_stats(hyp, reference);
        m += a;
        c += b;
        r += d;
    }
    bleu_from_stats(m, c, r)
}

/// Multiset precision and recall of predicted entities against gold ones.
/// Precision is 0 without predictions; recall is 0 without gold entities.
pub fn entity_metrics<T: Eq + Hash>(predicted: &[T], gold: &[T]) -> (f64, f64) {
    let hit = clipped_overlap(predicted, gold) as f64;
    let precision = if predicted.is_empty() { 0.0 } else { hit / predicted.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
    (precision, recall)
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub bleu1: f64,
    pub precision_mean: f64,
    pub precision_std: f64,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub n_eligible: usize,
    pub n_samples: usize,
}

/// One generated response next to its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub hypothesis: Vec<String>,
    pub predicted: Vec<EntityId>,
    pub gold: Vec<EntityId>,
}

/// Aggregates per-sample outcomes. Samples without gold entities count
/// for BLEU but not for precision/recall.
pub fn summarize(samples: &[SampleOutcome], references: &[Vec<String>]) -> VariantReport {
    let bleu = corpus_bleu1(
        samples
            .iter()
            .zip(references)
            .map(|(s, r)| (s.hypothesis.as_slice(), r.as_slice())),
    );
    let (mut ps, mut rs) = (Vec::new(), Vec::new());
    for s in samples.iter().filter(|s| !s.gold.is_empty()) {
        let (p, r) = entity_metrics(&s.predicted, &s.gold);
        ps.push(p);
        rs.push(r);
    }
    let (precision_mean, precision_std) = mean_std(&ps);
    let (recall_mean, recall_std) = mean_std(&rs);
    VariantReport {
        bleu1: bleu,
        precision_mean,
        precision_std,
        recall_mean,
        recall_std,
        n_eligible: ps.len(),
        n_samples: samples.len(),
    }
}

/// Generates a response for every pair of `test` and scores it.
pub fn run_eval(engine: &Engine, test: &Dataset, opts: &DecodeOptions) -> Result<(VariantReport, Vec<SampleOutcome>)> {
    let mut samples = Vec::with_capacity(test.len());
    for pair in &test.pairs {
        let out = engine.generate_tokens(&pair.message_tokens, opts)?;
        samples.push(SampleOutcome {
            predicted: out.entities(),
            hypothesis: out.tokens,
            gold: pair.response_entities(),
        });
    }
    let refs: Vec<Vec<String>> = test.pairs.iter().map(|p| p.response_tokens.clone()).collect();
    Ok((summarize(&samples, &refs), samples))
}

/// One row per variant; `None` marks a variant whose model was unavailable.
pub type AblationReport = BTreeMap<Variant, Option<VariantReport>>;

/// Evaluates whichever checkpoints exist; missing or unreadable ones
/// become absent rows.
pub fn evaluate_checkpoints(
    checkpoints: &[(Variant, PathBuf)],
    test: &Dataset,
    kb: &KnowledgeBase,
    opts: &DecodeOptions,
) -> Result<AblationReport> {
    let mut report = AblationReport::new();
    for (variant, path) in checkpoints {
        let engine = match load_checkpoint(path).and_then(|c| Engine::from_checkpoint(c, kb.clone())) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("variant {variant}: {e}; row marked absent");
                report.insert(*variant, None);
                continue;
            }
        };
        let (row, _) = run_eval(&engine, test, opts)?;
        report.insert(*variant, Some(row));
    }
    Ok(report)
}

/// Trains every variant with the same settings and evaluates each on `test`.
pub fn run_ablation_suite(
    train_set: &Dataset,
    test: &Dataset,
    kb: &KnowledgeBase,
    config: &TrainingConfig,
    opts: &DecodeOptions,
) -> Result<AblationReport> {
    let mut report = AblationReport::new();
    for variant in Variant::ALL {
        let cfg = TrainingConfig {
            variant,
            ..config.clone()
        };
        let outcome = train(train_set, kb, &cfg)?;
        let engine = Engine::new(outcome.model, outcome.vocab, kb.clone())?;
        let (row, _) = run_eval(&engine, test, opts)?;
        report.insert(variant, Some(row));
    }
    Ok(report)
}

/// `{variant: {bleu1, precision_mean, …}}`; absent rows are `null`.
pub fn report_json(report: &AblationReport) -> Result<String> {
    let map: BTreeMap<&str, &Option<VariantReport>> = report.iter().map(|(v, r)| (v.as_str(), r)).collect();
    serde_json::to_string_pretty(&map).map_err(|e| Error::Internal(e.to_string()))
}

pub fn report_table(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>7} {:>15} {:>15} {:>9}", "variant", "BLEU-1", "precision", "recall", "eligible");
    for (variant, row) in report {
        match row {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "{:<8} {:>7.3} {:>7.3} ± {:<5.3} {:>7.3} ± {:<5.3} {:>9}",
                    variant.as_str(),
                    r.bleu1,
                    r.precision_mean,
                    r.precision_std,
                    r.recall_mean,
                    r.recall_std,
                    r.n_eligible
                );
            }
            None => {
                let _ = writeln!(out, "{:<8} {:>7}", variant.as_str(), "absent");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bleu_hand_values() {
        assert_eq!(bleu1(&toks("a b c"), &toks("a b c")), 1.0);
        assert_eq!(bleu1(&toks("a b"), &toks("a c")), 0.5);
        assert_eq!(bleu1(&toks("a a a"), &toks("a b")), 1.0 / 3.0);
        assert_eq!(bleu1(&[], &toks("a")), 0.0);
        // shorter hypothesis: precision 1, BP = exp(1 - 4/2)
        assert_eq!(bleu1(&toks("a b"), &toks("a b c d")), (-1.0f64).exp());
    }

    #[test]
    fn corpus_bleu_pools_counts() {
        let h1 = toks("a b");
        let r1 = toks("a c");
        let h2 = toks("d");
        let r2 = toks("d");
        let pooled = corpus_bleu1([(h1.as_slice(), r1.as_slice()), (h2.as_slice(), r2.as_slice())]);
        assert_eq!(pooled, 2.0 / 3.0);
    }

    #[test]
    fn entity_metric_examples() {
        assert_eq!(entity_metrics(&["a", "b", "c"], &["b", "c", "d"]), (2.0 / 3.0, 2.0 / 3.0));
        assert_eq!(entity_metrics(&["a", "b"], &["a", "b"]), (1.0, 1.0));
        assert_eq!(entity_metrics(&["a", "a"], &["a"]), (0.5, 1.0));
        assert_eq!(entity_metrics::<&str>(&[], &["a"]), (0.0, 0.0));
    }

    #[test]
    fn eligibility_excludes_entity_free_gold() {
        let s = |hyp: &str, pred: &[&str], gold: &[&str]| SampleOutcome {
            hypothesis: toks(hyp),
            predicted: pred.iter().map(|e| EntityId::new(*e)).collect(),
            gold: gold.iter().map(|e| EntityId::new(*e)).collect(),
        };
        let samples = [s("x", &["a"], &["a"]), s("y", &["b"], &[]), s("z", &[], &["c", "d"])];
        let refs = [toks("x"), toks("y"), toks("z")];
        let r = summarize(&samples, &refs);
        assert_eq!((r.n_eligible, r.n_samples), (2, 3));
        assert_eq!(r.precision_mean, 0.5);
        assert_eq!(r.precision_std, 0.5);
        assert_eq!(r.bleu1, 1.0);
    }

    #[test]
    fn report_renders_absent_rows() {
        let mut report = AblationReport::new();
        report.insert(
            Variant::Full,
            Some(VariantReport {
                bleu1: 0.5,
                precision_mean: 0.9,
                precision_std: 0.1,
                recall_mean: 0.8,
                recall_std: 0.2,
                n_eligible: 10,
                n_samples: 12,
            }),
        );
        report.insert(Variant::S2sa, None);
        let json: serde_json::Value = serde_json::from_str(&report_json(&report).unwrap()).unwrap();
        assert_eq!(json["full"]["n_eligible"], 10);
        assert!(json["s2sa"].is_null());
        let table = report_table(&report);
        assert!(table.contains("absent") && table.contains("0.900"));
    }
}
