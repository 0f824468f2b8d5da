//! Loader for the dialog-bAbI text layout.
//!
//! Grammar, applied line by line:
//!
//! ```text
//! file      := dialogue (blank-line dialogue)*
//! dialogue  := line+
//! line      := NUMBER " " body
//! body      := user-utt "\t" sys-utt      # one exchange
//!            | subject " " rel " " object # one KB fact (exactly 3 fields)
//! ```
//!
//! Line numbers restart at 1 for every dialogue; a blank line closes the
//! current dialogue. A body that neither contains a tab nor splits into
//! exactly three whitespace fields is a parse error reported with its line
//! number.

use std::io::BufRead;
use std::path::Path;

use super::{CorpusError, Dialogue, KbTriple, Speaker, Turn};

pub fn load_babi_dialogs(path: &Path) -> Result<Vec<Dialogue>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_babi(std::io::BufReader::new(file), &path.display().to_string())
}

pub fn parse_babi<R: BufRead>(reader: R, path: &str) -> Result<Vec<Dialogue>, CorpusError> {
    let err = |line: usize, message: String| CorpusError::Parse {
        path: path.to_string(),
        line,
        message,
    };

    let mut dialogues = Vec::new();
    let mut turns: Vec<Turn> = Vec::new();
    let mut kb: Vec<KbTriple> = Vec::new();

    let flush = |turns: &mut Vec<Turn>, kb: &mut Vec<KbTriple>, out: &mut Vec<Dialogue>| {
        if turns.is_empty() && kb.is_empty() {
            return;
        }
        let id = format!("babi-{}", out.len() + 1);
        out.push(Dialogue {
            dialogue_id: id,
            scenario: None,
            turns: std::mem::take(turns),
            kb_rows: kb.len(),
            kb: std::mem::take(kb),
        });
    };

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_string(),
            source,
        })?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            flush(&mut turns, &mut kb, &mut dialogues);
            continue;
        }
        let (num, body) = trimmed
            .split_once(' ')
            .ok_or_else(|| err(lineno, "expected \"<number> <body>\"".to_string()))?;
        if num.parse::<usize>().is_err() {
            return Err(err(lineno, format!("bad line number {num:?}")));
        }
        if let Some((user, sys)) = body.split_once('\t') {
            turns.push(Turn {
                speaker: Speaker::User,
                utterance: user.trim().to_string(),
            });
            turns.push(Turn {
                speaker: Speaker::Sys,
                utterance: sys.trim().to_string(),
            });
        } else {
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(
                    lineno,
                    format!(
                        "expected an exchange (tab-separated) or a 3-field fact, got {:?}",
                        body
                    ),
                ));
            }
            kb.push(KbTriple::new(
                &fields[0].to_lowercase(),
                &fields[1].to_lowercase(),
                &fields[2].to_lowercase(),
            ));
        }
    }
    flush(&mut turns, &mut kb, &mut dialogues);
    Ok(dialogues)
}
