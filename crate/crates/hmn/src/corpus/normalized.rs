//! The normalized dialogue file: UTF-8, one JSON record per line, one record
//! per dialogue. This is the interchange format for KVR-style corpora and for
//! synthetic output.
//!
//! ```json
//! {"dialogue_id":"d1","scenario":"navigate",
//!  "turns":[{"speaker":"user","utterance":"address to the gas_station"},
//!           {"speaker":"sys","utterance":"valero is located at 200_alester_ave"}],
//!  "kb":[["valero","address","200_alester_ave"]]}
//! ```
//!
//! `kb` rows are (subject, relation, object) triples. A record may instead
//! carry wide table rows together with a `kb_columns` header naming every
//! column; such rows are decomposed into one triple per value column:
//! `(row[0], kb_columns[j], row[j])`. Without `kb_columns`, every row must
//! have exactly three fields.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dialogue, KbTriple, Turn};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub dialogue_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub turns: Vec<Turn>,
    pub kb: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_columns: Option<Vec<String>>,
}

fn decompose(record: &NormalizedRecord, index: usize) -> Result<Vec<KbTriple>, CorpusError> {
    let bad = |field: &str| CorpusError::BadRecord {
        index,
        field: field.to_string(),
    };
    let mut triples = Vec::new();
    match &record.kb_columns {
        Some(columns) => {
            for row in &record.kb {
                if row.len() > columns.len() || row.len() < 2 {
                    return Err(bad("kb row width vs kb_columns"));
                }
                let subject = row[0].to_lowercase();
                for (j, value) in row.iter().enumerate().skip(1) {
                    triples.push(KbTriple::new(
                        &subject,
                        &columns[j].to_lowercase(),
                        &value.to_lowercase(),
                    ));
                }
            }
        }
        None => {
            for row in &record.kb {
                if row.len() != 3 {
                    return Err(bad("kb row is not a triple"));
                }
                triples.push(KbTriple::new(
                    &row[0].to_lowercase(),
                    &row[1].to_lowercase(),
                    &row[2].to_lowercase(),
                ));
            }
        }
    }
    Ok(triples)
}

pub fn dialogue_from_record(
    record: &NormalizedRecord,
    index: usize,
) -> Result<Dialogue, CorpusError> {
    if record.turns.is_empty() {
        return Err(CorpusError::BadRecord {
            index,
            field: "turns".to_string(),
        });
    }
    let kb = decompose(record, index)?;
    Ok(Dialogue {
        dialogue_id: record.dialogue_id.clone(),
        scenario: record.scenario.clone(),
        turns: record.turns.clone(),
        kb_rows: record.kb.len(),
        kb,
    })
}

/// Load a normalized dialogue file (KVR-style corpora are converted to this
/// layout upstream).
pub fn load_normalized_dialogs(path: &Path) -> Result<Vec<Dialogue>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: NormalizedRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        out.push(dialogue_from_record(&record, i)?);
    }
    Ok(out)
}

/// Serialize dialogues back to the normalized format. Knowledge bases are
/// written as already-decomposed triples, so a reload reproduces the same
/// samples exactly.
pub fn write_normalized_dialogs(path: &Path, dialogues: &[Dialogue]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for d in dialogues {
        let record = NormalizedRecord {
            dialogue_id: d.dialogue_id.clone(),
            scenario: d.scenario.clone(),
            turns: d.turns.clone(),
            kb: d
                .kb
                .iter()
                .map(|t| vec![t.subject.clone(), t.relation.clone(), t.object.clone()])
                .collect(),
            kb_columns: None,
        };
        let line = serde_json::to_string(&record).expect("serializable record");
        writeln!(w, "{line}").map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}
