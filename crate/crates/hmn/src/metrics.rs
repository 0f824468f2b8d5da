//! Evaluation metrics: corpus BLEU (modified n-gram precision, no smoothing),
//! micro-averaged entity F1 with per-scenario breakdown, and exact-match
//! per-response / per-dialog accuracy.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::model::WordSource;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("pair {0} has an empty gold response")]
    EmptyReference(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One generated/gold pair. Entity sets are the sequence tokens intersected
/// with the entity list, computed at construction.
#[derive(Clone, Debug, Serialize)]
pub struct EvalPair {
    pub dialogue_id: String,
    pub turn_id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub generated: Vec<String>,
    pub gold: Vec<String>,
    pub gold_entities: BTreeSet<String>,
    pub pred_entities: BTreeSet<String>,
}

impl EvalPair {
    pub fn new(
        dialogue_id: String,
        turn_id: usize,
        scenario: Option<String>,
        generated: Vec<String>,
        gold: Vec<String>,
        entity_list: &BTreeSet<String>,
    ) -> Self {
        let pick = |words: &[String]| {
            words
                .iter()
                .filter(|w| entity_list.contains(*w))
                .cloned()
                .collect::<BTreeSet<String>>()
        };
        let gold_entities = pick(&gold);
        let pred_entities = pick(&generated);
        EvalPair {
            dialogue_id,
            turn_id,
            scenario,
            generated,
            gold,
            gold_entities,
            pred_entities,
        }
    }
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if words.len() >= n {
        for window in words.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU in [0, 100]: the geometric mean of modified n-gram
/// precisions for n = 1..=max_n times the brevity penalty, with clipped counts
/// accumulated over the whole corpus. Zero if any precision is zero.
pub fn corpus_bleu(pairs: &[EvalPair], max_n: usize) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.gold.is_empty() {
            return Err(MetricsError::EmptyReference(i));
        }
    }

    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for p in pairs {
        cand_len += p.generated.len();
        ref_len += p.gold.len();
        for n in 1..=max_n {
            let cand = ngram_counts(&p.generated, n);
            let refs = ngram_counts(&p.gold, n);
            for (gram, &count) in &cand {
                let clip = refs.get(gram).copied().unwrap_or(0);
                matched[n - 1] += count.min(clip);
                total[n - 1] += count;
            }
        }
    }

    let mut log_sum = 0.0f64;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let brevity = if cand_len == 0 {
        return Ok(0.0);
    } else if cand_len < ref_len {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * (log_sum / max_n as f64).exp())
}

/// Micro-averaged entity F1 plus the same score per scenario. True/false
/// positives and false negatives accumulate globally before the ratio. The
/// degenerate case with no entities anywhere scores 1.0 (no errors are
/// possible).
#[derive(Clone, Debug, Serialize)]
pub struct F1Breakdown {
    pub global: f64,
    pub by_scenario: BTreeMap<String, f64>,
}

fn f1_of(pairs: &[&EvalPair]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for p in pairs {
        tp += p.pred_entities.intersection(&p.gold_entities).count();
        fp += p.pred_entities.difference(&p.gold_entities).count();
        fn_ += p.gold_entities.difference(&p.pred_entities).count();
    }
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

pub fn entity_f1(pairs: &[EvalPair]) -> F1Breakdown {
    let global = f1_of(&pairs.iter().collect::<Vec<_>>());
    let mut by_scenario: BTreeMap<String, Vec<&EvalPair>> = BTreeMap::new();
    for p in pairs {
        if let Some(s) = &p.scenario {
            by_scenario.entry(s.clone()).or_default().push(p);
        }
    }
    F1Breakdown {
        global,
        by_scenario: by_scenario
            .into_iter()
            .map(|(k, v)| (k, f1_of(&v)))
            .collect(),
    }
}

/// Exact-match accuracy: the fraction of pairs whose generated sequence
/// equals the gold token for token, and the fraction of dialogues whose every
/// pair matches.
pub fn response_accuracy(pairs: &[EvalPair]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let mut correct = 0usize;
    let mut per_dialog: BTreeMap<&str, bool> = BTreeMap::new();
    for p in pairs {
        let ok = p.generated == p.gold;
        if ok {
            correct += 1;
        }
        let entry = per_dialog.entry(p.dialogue_id.as_str()).or_insert(true);
        *entry &= ok;
    }
    let per_response = correct as f64 / pairs.len() as f64;
    let dialogs = per_dialog.len() as f64;
    let good_dialogs = per_dialog.values().filter(|&&v| v).count() as f64;
    (per_response, good_dialogs / dialogs)
}

/// Per-pair diagnostics carried into the evaluation report.
#[derive(Clone, Debug, Serialize)]
pub struct PairDiagnostic {
    pub dialogue_id: String,
    pub turn_id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub gold: Vec<String>,
    pub generated: Vec<String>,
    /// Source tag per generated word: his, kb or vocab.
    pub sources: Vec<WordSource>,
    pub exact_match: bool,
}

/// The evaluation report written by the CLI: global metrics, the per-scenario
/// entity-F1 breakdown, and per-pair diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub pairs_scored: usize,
    pub bleu: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entity_f1: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub entity_f1_by_scenario: BTreeMap<String, f64>,
    pub per_response_accuracy: f64,
    pub per_dialog_accuracy: f64,
    pub diagnostics: Vec<PairDiagnostic>,
}

impl EvalReport {
    pub fn write(&self, path: &std::path::Path) -> Result<(), MetricsError> {
        let body = serde_json::to_string_pretty(self).expect("serializable report");
        std::fs::write(path, body + "\n").map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
