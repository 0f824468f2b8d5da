use std::collections::HashMap;

use super::DialogueSample;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const SENTINEL: &str = "<sentinel>";

/// Bidirectional word/index map with fixed reserved slots. Indices are
/// assigned in first-seen order over the training samples, so rebuilding from
/// the same corpus yields the same table.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const SOS_ID: usize = 2;
    pub const EOS_ID: usize = 3;
    pub const SENTINEL_ID: usize = 4;

    pub fn new() -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in [PAD, UNK, SOS, EOS, SENTINEL] {
            v.add(w);
        }
        v
    }

    /// Vocabulary over every training-set word: history tokens, turn and
    /// speaker tags, responses and knowledge-base components.
    pub fn build(samples: &[DialogueSample]) -> Self {
        let mut v = Vocabulary::new();
        for s in samples {
            for t in &s.history {
                v.add(&t.token);
                v.add(&t.turn_tag());
                v.add(t.speaker.tag());
            }
            for t in &s.kb {
                v.add(&t.subject);
                v.add(&t.relation);
                v.add(&t.object);
            }
            for w in &s.response {
                v.add(w);
            }
        }
        v
    }

    pub fn add(&mut self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        let i = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), i);
        i
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Index of a word, falling back to the unknown-word slot. Out-of-
    /// vocabulary words stay copyable by position; only their embedding
    /// degrades to UNK.
    pub fn lookup_or_unk(&self, word: &str) -> usize {
        self.lookup(word).unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Rebuild from a serialized word list (index order).
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { words, index }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}
