//! Corpus ingestion: dialogue loaders, word tagging, vocabulary construction,
//! copy-supervision labels, knowledge-base narrowing and the synthetic
//! lookup-task generator.
//!
//! Every stored history is a sequence of (token, turn tag, speaker tag)
//! triples ending in the sentinel token; every knowledge base is a triple list
//! whose implicit final slot is the sentinel. Copy labels point at the last
//! matching position, or at the sentinel when the response word occurs nowhere
//! in that memory.

mod babi;
mod normalized;
mod synthetic;
mod vocab;

pub use babi::load_babi_dialogs;
pub use normalized::{load_normalized_dialogs, write_normalized_dialogs, NormalizedRecord};
pub use synthetic::{generate_synthetic_task, SyntheticConfig, SyntheticTask};
pub use vocab::{Vocabulary, EOS, PAD, SENTINEL, SOS, UNK};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("dialogue history must contain at least one turn")]
    EmptyHistory,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("dialogue {index}: missing or invalid field {field}")]
    BadRecord { index: usize, field: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Sys,
}

impl Speaker {
    /// Surface word used for the identity tag embedding.
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::Sys => "sys",
        }
    }
}

/// One history word with its turn and identity tags.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedToken {
    pub token: String,
    pub turn: usize,
    pub speaker: Speaker,
}

impl TaggedToken {
    /// Surface word of the turn tag ("t1", "t2", ...).
    pub fn turn_tag(&self) -> String {
        format!("t{}", self.turn)
    }
}

/// (subject, relation, object) grounding fact. The object is the copyable
/// surface word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl KbTriple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        KbTriple {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub utterance: String,
}

/// A whole dialogue as stored on disk: turns plus the dialogue's knowledge
/// base. Samples are derived from it, one per system response.
#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub scenario: Option<String>,
    pub turns: Vec<Turn>,
    pub kb: Vec<KbTriple>,
    /// Raw KB rows before decomposition into triples (equal to `kb.len()`
    /// when the source already stored triples). Kept for corpus statistics.
    pub kb_rows: usize,
}

/// One supervised example: tagged history ending in the sentinel, the
/// knowledge base (sentinel slot implicit at index `kb.len()`), the gold
/// response ending in the end-of-sequence token, and per-word copy labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueSample {
    pub dialogue_id: String,
    pub turn_id: usize,
    pub scenario: Option<String>,
    pub history: Vec<TaggedToken>,
    pub kb: Vec<KbTriple>,
    pub response: Vec<String>,
    pub his_copy_labels: Vec<usize>,
    pub kb_copy_labels: Vec<usize>,
}

impl DialogueSample {
    /// Index of the sentinel slot in the history memory.
    pub fn his_sentinel(&self) -> usize {
        self.history.len() - 1
    }

    /// Index of the sentinel slot in the knowledge-base memory.
    pub fn kb_sentinel(&self) -> usize {
        self.kb.len()
    }
}

/// Lowercase whitespace tokenization. Dataset entities arrive pre-underscored,
/// so no further splitting is done.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect()
}

/// Tag a turn sequence into the flat history representation: each word is
/// paired with its turn tag (incremented at every user utterance) and speaker
/// tag, and the sentinel is appended as the final element.
pub fn tag_history(turns: &[Turn]) -> Result<Vec<TaggedToken>, CorpusError> {
    if turns.is_empty() {
        return Err(CorpusError::EmptyHistory);
    }
    let mut out = Vec::new();
    let mut turn_no = 0usize;
    for t in turns {
        if t.speaker == Speaker::User {
            turn_no += 1;
        }
        let tag = turn_no.max(1);
        for token in tokenize(&t.utterance) {
            out.push(TaggedToken {
                token,
                turn: tag,
                speaker: t.speaker,
            });
        }
    }
    let last_turn = turn_no.max(1);
    out.push(TaggedToken {
        token: SENTINEL.to_string(),
        turn: last_turn,
        speaker: Speaker::Sys,
    });
    Ok(out)
}

/// Copy labels for a response: for each word, the position of its last
/// occurrence among the history tokens (else the history sentinel position)
/// and the index of the last triple whose object equals the word (else the
/// KB sentinel position).
pub fn make_copy_labels(
    response: &[String],
    history: &[TaggedToken],
    kb: &[KbTriple],
) -> (Vec<usize>, Vec<usize>) {
    let his_sentinel = history.len() - 1;
    let kb_sentinel = kb.len();
    let mut his_labels = Vec::with_capacity(response.len());
    let mut kb_labels = Vec::with_capacity(response.len());
    for word in response {
        let his = history[..his_sentinel]
            .iter()
            .rposition(|t| &t.token == word)
            .unwrap_or(his_sentinel);
        let kb_idx = kb
            .iter()
            .rposition(|t| &t.object == word)
            .unwrap_or(kb_sentinel);
        his_labels.push(his);
        kb_labels.push(kb_idx);
    }
    (his_labels, kb_labels)
}

/// Expand a dialogue into one sample per system response. The history is
/// cumulative up to and including the user utterance that precedes the
/// response; the dialogue's knowledge base is attached to every sample.
pub fn samples_from_dialogue(d: &Dialogue) -> Result<Vec<DialogueSample>, CorpusError> {
    let mut samples = Vec::new();
    let mut turn_id = 0usize;
    for (i, t) in d.turns.iter().enumerate() {
        if t.speaker != Speaker::Sys {
            continue;
        }
        turn_id += 1;
        let history = tag_history(&d.turns[..i])?;
        let mut response = tokenize(&t.utterance);
        response.push(EOS.to_string());
        let (his_copy_labels, kb_copy_labels) = make_copy_labels(&response, &history, &d.kb);
        samples.push(DialogueSample {
            dialogue_id: d.dialogue_id.clone(),
            turn_id,
            scenario: d.scenario.clone(),
            history,
            kb: d.kb.clone(),
            response,
            his_copy_labels,
            kb_copy_labels,
        });
    }
    Ok(samples)
}

pub fn samples_from_dialogues(ds: &[Dialogue]) -> Result<Vec<DialogueSample>, CorpusError> {
    let mut out = Vec::new();
    for d in ds {
        out.extend(samples_from_dialogue(d)?);
    }
    Ok(out)
}

/// Narrow the knowledge base to the `max_triples` candidates most connected to
/// the history. A triple's rank is the number of history token occurrences
/// matching its subject or object; ties keep the original order. The sentinel
/// slot stays implicit and copy labels are recomputed.
pub fn kb_match_filter(sample: &DialogueSample, max_triples: usize) -> DialogueSample {
    let mut counts: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for t in &sample.history[..sample.his_sentinel()] {
        *counts.entry(t.token.as_str()).or_insert(0) += 1;
    }
    let overlap = |triple: &KbTriple| -> usize {
        counts.get(triple.subject.as_str()).copied().unwrap_or(0)
            + counts.get(triple.object.as_str()).copied().unwrap_or(0)
    };
    let mut ranked: Vec<(usize, usize)> = sample
        .kb
        .iter()
        .enumerate()
        .map(|(i, t)| (i, overlap(t)))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let kept: Vec<KbTriple> = ranked
        .into_iter()
        .take(max_triples)
        .map(|(i, _)| sample.kb[i].clone())
        .collect();
    let (his_copy_labels, kb_copy_labels) =
        make_copy_labels(&sample.response, &sample.history, &kept);
    DialogueSample {
        kb: kept,
        his_copy_labels,
        kb_copy_labels,
        ..sample.clone()
    }
}

/// Corpus statistics comparable to the dataset summaries used for loader
/// conformance checks. "Pairs" are reported both as decomposed triples and as
/// raw source rows, since the two differ for wide-table knowledge bases.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub samples: usize,
    pub avg_history_words: f64,
    pub avg_kb_triples: f64,
    pub avg_kb_rows: f64,
    pub avg_response_length: f64,
    pub avg_dialogue_turns: f64,
    pub vocabulary_size: usize,
}

pub fn corpus_stats(dialogues: &[Dialogue]) -> Result<CorpusStats, CorpusError> {
    let samples = samples_from_dialogues(dialogues)?;
    let n_samples = samples.len().max(1) as f64;
    let n_dialogues = dialogues.len().max(1) as f64;
    let history_words: usize = samples.iter().map(|s| s.his_sentinel()).sum();
    let response_words: usize = samples.iter().map(|s| s.response.len() - 1).sum();
    let kb_triples: usize = dialogues.iter().map(|d| d.kb.len()).sum();
    let kb_rows: usize = dialogues.iter().map(|d| d.kb_rows).sum();
    let exchanges: usize = dialogues
        .iter()
        .map(|d| d.turns.iter().filter(|t| t.speaker == Speaker::Sys).count())
        .sum();
    let mut words = std::collections::HashSet::new();
    for s in &samples {
        for t in &s.history[..s.his_sentinel()] {
            words.insert(t.token.clone());
        }
        for w in &s.response[..s.response.len() - 1] {
            words.insert(w.clone());
        }
        for t in &s.kb {
            words.insert(t.subject.clone());
            words.insert(t.relation.clone());
            words.insert(t.object.clone());
        }
    }
    Ok(CorpusStats {
        dialogues: dialogues.len(),
        samples: samples.len(),
        avg_history_words: history_words as f64 / n_samples,
        avg_kb_triples: kb_triples as f64 / n_dialogues,
        avg_kb_rows: kb_rows as f64 / n_dialogues,
        avg_response_length: response_words as f64 / n_samples,
        avg_dialogue_turns: exchanges as f64 / n_dialogues,
        vocabulary_size: words.len(),
    })
}

/// Entity list file: one canonical entity token per line, used by the metrics
/// module for entity F1.
pub fn load_entity_list(path: &std::path::Path) -> Result<Vec<String>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.to_lowercase())
        .collect())
}

pub fn write_entity_list(path: &std::path::Path, entities: &[String]) -> Result<(), CorpusError> {
    let mut text = entities.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}
