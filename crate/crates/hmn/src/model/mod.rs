//! The encoder-decoder model: fixed-query encoding over the history memory, a
//! gated-recurrence controller, the vocabulary head over the controller state
//! and the first history-hop output, copy distributions from the last hop of
//! each memory, the joint loss, and greedy word selection.
//!
//! The encoder and decoder share one parameter set and one built memory per
//! sample: memories are built once, the encoder's fixed query produces the
//! context vector that seeds the controller, and every decode step re-queries
//! the same slots. The decoder input embedding is the level-1 history
//! embedding matrix.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueSample, Vocabulary};
use crate::memory::{
    build_context_aware, build_context_free, gru_step, run_hops, ContextAwareLevel, GruNodes,
    HmnReadout, MemorySlots,
};
use crate::numerics::{
    bind_params, Array, BoundParams, Graph, NamedArrays, NodeId, NumericsError, Real,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("word {0:?} missing from vocabulary; map to <unk> upstream")]
    WordNotInVocabulary(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hops_history: usize,
    pub hops_kb: usize,
    /// Ablation: store the history in a context-free memory (no gating)
    /// instead of the gated context-aware memory.
    pub context_free_history: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim must be positive and even, got {}",
                self.embed_dim
            )));
        }
        if self.hops_history == 0 || self.hops_kb == 0 {
            return Err(ModelError::InvalidConfig(
                "hop counts must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct GruParamIdx {
    reset_in: usize,
    reset_hid: usize,
    reset_bias: usize,
    update_in: usize,
    update_hid: usize,
    update_bias: usize,
    cand_in: usize,
    cand_hid: usize,
    cand_bias: usize,
}

impl GruParamIdx {
    fn nodes(&self, bound: &BoundParams) -> GruNodes {
        GruNodes {
            reset_in: bound.id(self.reset_in),
            reset_hid: bound.id(self.reset_hid),
            reset_bias: bound.id(self.reset_bias),
            update_in: bound.id(self.update_in),
            update_hid: bound.id(self.update_hid),
            update_bias: bound.id(self.update_bias),
            cand_in: bound.id(self.cand_in),
            cand_hid: bound.id(self.cand_hid),
            cand_bias: bound.id(self.cand_bias),
        }
    }
}

#[derive(Clone, Debug)]
struct ParamLayout {
    enc_query: usize,
    his_embed: Vec<usize>,
    /// Per level, (forward, backward); empty under the context-free ablation.
    his_gru: Vec<(GruParamIdx, GruParamIdx)>,
    kb_embed: Vec<usize>,
    dec_gru: GruParamIdx,
    vocab_proj: usize,
}

/// All trainable arrays plus the vocabulary and shape configuration.
#[derive(Clone, Debug)]
pub struct HmnModel<R: Real> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: NamedArrays<R>,
    layout: ParamLayout,
}

fn gru_shapes(hidden: usize, input: usize) -> [(&'static str, Vec<usize>); 9] {
    [
        ("reset_in", vec![hidden, input]),
        ("reset_hid", vec![hidden, hidden]),
        ("reset_bias", vec![hidden]),
        ("update_in", vec![hidden, input]),
        ("update_hid", vec![hidden, hidden]),
        ("update_bias", vec![hidden]),
        ("cand_in", vec![hidden, input]),
        ("cand_hid", vec![hidden, hidden]),
        ("cand_bias", vec![hidden]),
    ]
}

/// Declare every parameter (zero-valued) in the fixed layout order.
fn build_layout<R: Real>(
    config: &ModelConfig,
    vocab_size: usize,
) -> Result<(NamedArrays<R>, ParamLayout), ModelError> {
    config.validate()?;
    let d = config.embed_dim;
    let half = d / 2;
    let mut params = NamedArrays::new();

    let enc_query = params.insert("enc.query", Array::zeros(&[d]))?;

    let mut his_embed = Vec::new();
    for k in 1..=config.hops_history + 1 {
        his_embed.push(params.insert(&format!("his.embed.{k}"), Array::zeros(&[vocab_size, d]))?);
    }

    let mut his_gru = Vec::new();
    if !config.context_free_history {
        for k in 1..=config.hops_history + 1 {
            let mut dirs = Vec::with_capacity(2);
            for dir in ["fw", "bw"] {
                let mut idx = [0usize; 9];
                for (i, (name, shape)) in gru_shapes(half, d).iter().enumerate() {
                    idx[i] = params.insert(
                        &format!("his.level{k}.{dir}.{name}"),
                        Array::zeros(shape),
                    )?;
                }
                dirs.push(GruParamIdx {
                    reset_in: idx[0],
                    reset_hid: idx[1],
                    reset_bias: idx[2],
                    update_in: idx[3],
                    update_hid: idx[4],
                    update_bias: idx[5],
                    cand_in: idx[6],
                    cand_hid: idx[7],
                    cand_bias: idx[8],
                });
            }
            his_gru.push((dirs[0], dirs[1]));
        }
    }

    let mut kb_embed = Vec::new();
    for k in 1..=config.hops_kb + 1 {
        kb_embed.push(params.insert(&format!("kb.embed.{k}"), Array::zeros(&[vocab_size, d]))?);
    }

    let mut dec_idx = [0usize; 9];
    for (i, (name, shape)) in gru_shapes(d, d).iter().enumerate() {
        dec_idx[i] = params.insert(&format!("dec.gru.{name}"), Array::zeros(shape))?;
    }
    let dec_gru = GruParamIdx {
        reset_in: dec_idx[0],
        reset_hid: dec_idx[1],
        reset_bias: dec_idx[2],
        update_in: dec_idx[3],
        update_hid: dec_idx[4],
        update_bias: dec_idx[5],
        cand_in: dec_idx[6],
        cand_hid: dec_idx[7],
        cand_bias: dec_idx[8],
    };

    let vocab_proj = params.insert("dec.vocab_proj", Array::zeros(&[vocab_size, 2 * d]))?;

    Ok((
        params,
        ParamLayout {
            enc_query,
            his_embed,
            his_gru,
            kb_embed,
            dec_gru,
            vocab_proj,
        },
    ))
}

impl<R: Real> HmnModel<R> {
    /// Fresh model with embeddings and weights drawn uniformly from
    /// (-0.1, 0.1) and zero biases. Values are sampled at f64 before
    /// conversion, so a given seed produces the same model at every
    /// precision.
    pub fn init(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        let (mut params, layout) = build_layout::<R>(&config, vocab.len())?;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        for i in 0..params.len() {
            if params.name(i).ends_with("_bias") {
                continue;
            }
            for x in params.array_mut(i).data_mut() {
                *x = R::from_f64(rng.gen_range(-0.1..0.1));
            }
        }
        Ok(HmnModel {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        params: NamedArrays<R>,
    ) -> Result<Self, ModelError> {
        let (expected, layout) = build_layout::<R>(&config, vocab.len())?;
        if expected.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters for this config, found {}",
                expected.len(),
                params.len()
            )));
        }
        for i in 0..expected.len() {
            if expected.name(i) != params.name(i) {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} should be {:?}, found {:?}",
                    i,
                    expected.name(i),
                    params.name(i)
                )));
            }
            if expected.array(i).shape() != params.array(i).shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {:?} should have shape {:?}, found {:?}",
                    expected.name(i),
                    expected.array(i).shape(),
                    params.array(i).shape()
                )));
            }
        }
        Ok(HmnModel {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn convert<T: Real>(&self) -> HmnModel<T> {
        HmnModel {
            config: self.config,
            vocab: self.vocab.clone(),
            params: self.params.convert(),
            layout: self.layout.clone(),
        }
    }

    pub fn bind(&self, g: &mut Graph<R>) -> BoundParams {
        bind_params(g, &self.params)
    }

    /// Convert a corpus sample to vocabulary ids. Out-of-vocabulary surface
    /// words map to the unknown id but keep their surface form for copying.
    pub fn index_sample(&self, s: &DialogueSample) -> IndexedSample {
        let history: Vec<[usize; 3]> = s
            .history
            .iter()
            .map(|t| {
                [
                    self.vocab.lookup_or_unk(&t.token),
                    self.vocab.lookup_or_unk(&t.turn_tag()),
                    self.vocab.lookup_or_unk(t.speaker.tag()),
                ]
            })
            .collect();
        let history_words = s.history.iter().map(|t| t.token.clone()).collect();
        let mut kb_items: Vec<Vec<usize>> = s
            .kb
            .iter()
            .map(|t| {
                vec![
                    self.vocab.lookup_or_unk(&t.subject),
                    self.vocab.lookup_or_unk(&t.relation),
                    self.vocab.lookup_or_unk(&t.object),
                ]
            })
            .collect();
        kb_items.push(vec![Vocabulary::SENTINEL_ID]);
        let kb_objects = s.kb.iter().map(|t| t.object.clone()).collect();
        IndexedSample {
            history,
            history_words,
            kb_items,
            kb_objects,
            response_ids: s
                .response
                .iter()
                .map(|w| self.vocab.lookup_or_unk(w))
                .collect(),
            response_words: s.response.clone(),
            his_labels: s.his_copy_labels.clone(),
            kb_labels: s.kb_copy_labels.clone(),
        }
    }

    fn ca_levels(&self, bound: &BoundParams) -> Vec<ContextAwareLevel> {
        self.layout
            .his_embed
            .iter()
            .zip(&self.layout.his_gru)
            .map(|(&e, (fw, bw))| ContextAwareLevel {
                embed: bound.id(e),
                forward: fw.nodes(bound),
                backward: bw.nodes(bound),
            })
            .collect()
    }

    /// Build both memories for a sample. Under the ablation the history goes
    /// into a context-free memory whose slots sum the token, turn and speaker
    /// embeddings with no recurrence.
    pub fn build_memories(
        &self,
        g: &mut Graph<R>,
        bound: &BoundParams,
        sample: &IndexedSample,
    ) -> Result<BuiltMemories, ModelError> {
        let history = if self.config.context_free_history {
            let embeds: Vec<NodeId> = self
                .layout
                .his_embed
                .iter()
                .map(|&i| bound.id(i))
                .collect();
            let items: Vec<Vec<usize>> = sample.history.iter().map(|ids| ids.to_vec()).collect();
            build_context_free(g, &embeds, &items)?
        } else {
            build_context_aware(g, &self.ca_levels(bound), &sample.history)?
        };
        let kb_embeds: Vec<NodeId> = self.layout.kb_embed.iter().map(|&i| bound.id(i)).collect();
        let kb = build_context_free(g, &kb_embeds, &sample.kb_items)?;
        Ok(BuiltMemories { history, kb })
    }

    /// Encode a sample: build both memories and run the history hop stack
    /// from the trainable fixed query. Returns the context vector that seeds
    /// the controller; the memories are retained for decoding.
    pub fn encode(
        &self,
        g: &mut Graph<R>,
        bound: &BoundParams,
        sample: &IndexedSample,
    ) -> Result<(NodeId, BuiltMemories), ModelError> {
        let memories = self.build_memories(g, bound, sample)?;
        let hops = run_hops(g, &memories.history, bound.id(self.layout.enc_query))?;
        let context = hops.last().expect("hops_history >= 1").output;
        Ok((context, memories))
    }

    /// One decoder step: advance the controller with the previous word's
    /// embedding, query the stacked memories with the new state, and form the
    /// vocabulary distribution from the state and the first history-hop
    /// output. `activation_dropout` masks the controller state during
    /// training; pass `None` to run deterministically.
    pub fn decode_step(
        &self,
        g: &mut Graph<R>,
        bound: &BoundParams,
        memories: &BuiltMemories,
        prev_hidden: NodeId,
        input_word: usize,
        activation_dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<StepNodes, ModelError> {
        let embed_matrix = bound.id(self.layout.his_embed[0]);
        let input = g.row_select(embed_matrix, input_word)?;
        let mut hidden = gru_step(g, &self.layout.dec_gru.nodes(bound), input, prev_hidden)?;

        if let Some((rate, rng)) = activation_dropout {
            if rate > 0.0 {
                let keep = 1.0 - rate;
                let d = g.value(hidden).len();
                let mask: Vec<R> = (0..d)
                    .map(|_| {
                        if rng.gen_range(0.0..1.0) < keep {
                            R::from_f64(1.0 / keep)
                        } else {
                            R::zero()
                        }
                    })
                    .collect();
                let mask = g.vector(mask);
                hidden = g.mul(hidden, mask)?;
            }
        }

        let readout: HmnReadout = crate::memory::query_hmn(g, &memories.history, &memories.kb, hidden)?;
        let head_in = g.concat(&[hidden, readout.first_hop_output])?;
        let logits = g.matvec(bound.id(self.layout.vocab_proj), head_in)?;
        let p_vocab = g.softmax(logits)?;

        Ok(StepNodes {
            p_vocab,
            p_his: readout.p_his,
            p_kb: readout.p_kb,
            first_hop_output: readout.first_hop_output,
            hidden,
        })
    }

    /// Joint negative log-likelihood over the three distributions, averaged
    /// over response positions. `coins[t]` chooses the input for step `t`:
    /// the gold previous word when true, the model's previous emission when
    /// false (step 0 always starts from the start token). The gold word, its
    /// history label and its knowledge-base label each contribute a log term.
    pub fn joint_loss(
        &self,
        g: &mut Graph<R>,
        bound: &BoundParams,
        sample: &IndexedSample,
        coins: &[bool],
        mut activation_dropout: Option<(f64, &mut dyn rand::RngCore)>,
    ) -> Result<(NodeId, Vec<StepNodes>), ModelError> {
        let t_len = sample.response_ids.len();
        assert!(t_len >= 1, "responses are EOS-terminated and non-empty");
        assert!(coins.len() >= t_len, "one teacher-forcing draw per step");
        for (w, &id) in sample.response_words.iter().zip(&sample.response_ids) {
            // Contract: gold words were mapped upstream; an unknown id is only
            // legal if the surface word is genuinely out of vocabulary.
            if id == Vocabulary::UNK_ID && self.vocab.lookup(w).is_some() {
                return Err(ModelError::WordNotInVocabulary(w.clone()));
            }
        }

        let (context, memories) = self.encode(g, bound, sample)?;
        let mut hidden = context;
        let mut input = Vocabulary::SOS_ID;
        let mut log_terms = Vec::with_capacity(3 * t_len);
        let mut steps = Vec::with_capacity(t_len);

        for t in 0..t_len {
            let dropout = activation_dropout
                .as_mut()
                .map(|(rate, rng)| (*rate, &mut **rng as &mut dyn rand::RngCore));
            let step = self.decode_step(g, bound, &memories, hidden, input, dropout)?;

            let pv = g.pick(step.p_vocab, sample.response_ids[t])?;
            log_terms.push(g.ln(pv));
            let ph = g.pick(step.p_his, sample.his_labels[t])?;
            log_terms.push(g.ln(ph));
            let pk = g.pick(step.p_kb, sample.kb_labels[t])?;
            log_terms.push(g.ln(pk));

            hidden = step.hidden;
            if t + 1 < t_len {
                input = if coins[t + 1] {
                    sample.response_ids[t]
                } else {
                    let emission = select_word(
                        g.value(step.p_vocab).data(),
                        g.value(step.p_his).data(),
                        g.value(step.p_kb).data(),
                        &self.vocab,
                        &sample.history_words,
                        &sample.kb_objects,
                    );
                    self.vocab.lookup_or_unk(&emission.word)
                };
            }
            steps.push(step);
        }

        let mut total = log_terms[0];
        for &term in &log_terms[1..] {
            total = g.add(total, term)?;
        }
        let loss = g.scale(total, R::from_f64(-1.0 / t_len as f64));
        Ok((loss, steps))
    }

    /// Greedy generation: decode until the end token or `max_len`, feeding
    /// each emission back through its embedding (unknown for copied
    /// out-of-vocabulary words). Dropout and input masking are off, so the
    /// output is a pure function of the parameters and the sample.
    pub fn generate(
        &self,
        sample: &DialogueSample,
        max_len: usize,
    ) -> Result<GeneratedResponse, ModelError> {
        assert!(max_len >= 1);
        let indexed = self.index_sample(sample);
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let (context, memories) = self.encode(&mut g, &bound, &indexed)?;

        let mut hidden = context;
        let mut input = Vocabulary::SOS_ID;
        let mut words = Vec::new();
        let mut sources = Vec::new();
        let mut truncated = true;
        for _ in 0..max_len {
            let step = self.decode_step(&mut g, &bound, &memories, hidden, input, None)?;
            let emission = select_word(
                g.value(step.p_vocab).data(),
                g.value(step.p_his).data(),
                g.value(step.p_kb).data(),
                &self.vocab,
                &indexed.history_words,
                &indexed.kb_objects,
            );
            if emission.source == WordSource::Vocab && emission.word == crate::corpus::EOS {
                truncated = false;
                break;
            }
            input = self.vocab.lookup_or_unk(&emission.word);
            words.push(emission.word);
            sources.push(emission.source);
            hidden = step.hidden;
        }
        Ok(GeneratedResponse {
            words,
            sources,
            truncated,
        })
    }
}

/// A sample converted to vocabulary ids, with surface words kept for copying.
#[derive(Clone, Debug)]
pub struct IndexedSample {
    pub history: Vec<[usize; 3]>,
    pub history_words: Vec<String>,
    pub kb_items: Vec<Vec<usize>>,
    pub kb_objects: Vec<String>,
    pub response_ids: Vec<usize>,
    pub response_words: Vec<String>,
    pub his_labels: Vec<usize>,
    pub kb_labels: Vec<usize>,
}

impl IndexedSample {
    /// Replace each input token id with the unknown id independently with
    /// probability `rate`: history tokens (turn and speaker tags stay
    /// intact) and the components of every knowledge triple. Copy labels are
    /// positional, so supervision is unaffected; masked triples are what
    /// teach the copy path to select never-seen entries at test time.
    pub fn mask_input_tokens(&mut self, rate: f64, rng: &mut impl Rng) {
        if rate <= 0.0 {
            return;
        }
        for ids in &mut self.history {
            if rng.gen_range(0.0..1.0) < rate {
                ids[0] = Vocabulary::UNK_ID;
            }
        }
        for item in &mut self.kb_items {
            if item.len() < 3 {
                continue; // sentinel slot
            }
            for id in item.iter_mut() {
                if rng.gen_range(0.0..1.0) < rate {
                    *id = Vocabulary::UNK_ID;
                }
            }
        }
    }
}

/// Built memories for one sample.
pub struct BuiltMemories {
    pub history: MemorySlots,
    pub kb: MemorySlots,
}

/// Node handles produced by one decode step.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub p_vocab: NodeId,
    pub p_his: NodeId,
    pub p_kb: NodeId,
    pub first_hop_output: NodeId,
    pub hidden: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordSource {
    #[serde(rename = "his")]
    History,
    Kb,
    Vocab,
}

impl WordSource {
    pub fn tag(self) -> &'static str {
        match self {
            WordSource::History => "his",
            WordSource::Kb => "kb",
            WordSource::Vocab => "vocab",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Emission {
    pub word: String,
    pub source: WordSource,
}

/// First index attaining the maximum (lowest index wins ties).
fn argmax<R: Real>(xs: &[R]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Greedy selection across the three distributions. When both copy argmaxes
/// land off the sentinel the higher-probability word wins (history preferred
/// on exact ties); one sentinel defers to the other memory; two sentinels
/// fall back to the vocabulary distribution. Knowledge-base emissions surface
/// the triple's object word.
pub fn select_word<R: Real>(
    p_vocab: &[R],
    p_his: &[R],
    p_kb: &[R],
    vocab: &Vocabulary,
    history_words: &[String],
    kb_objects: &[String],
) -> Emission {
    debug_assert_eq!(p_his.len(), history_words.len());
    debug_assert_eq!(p_kb.len(), kb_objects.len() + 1);
    let his_sentinel = history_words.len() - 1;
    let kb_sentinel = kb_objects.len();

    let a = argmax(p_his);
    let b = argmax(p_kb);
    let his_hit = a != his_sentinel;
    let kb_hit = b != kb_sentinel;

    match (his_hit, kb_hit) {
        (true, true) => {
            if p_his[a] >= p_kb[b] {
                Emission {
                    word: history_words[a].clone(),
                    source: WordSource::History,
                }
            } else {
                Emission {
                    word: kb_objects[b].clone(),
                    source: WordSource::Kb,
                }
            }
        }
        (true, false) => Emission {
            word: history_words[a].clone(),
            source: WordSource::History,
        },
        (false, true) => Emission {
            word: kb_objects[b].clone(),
            source: WordSource::Kb,
        },
        (false, false) => Emission {
            word: vocab.word(argmax(p_vocab)).to_string(),
            source: WordSource::Vocab,
        },
    }
}

/// The per-step distribution values, extracted from the graph.
#[derive(Clone, Debug)]
pub struct OutputDistributions<R> {
    pub p_vocab: Vec<R>,
    pub p_his: Vec<R>,
    pub p_kb: Vec<R>,
    pub first_hop_output: Vec<R>,
}

impl StepNodes {
    pub fn values<R: Real>(&self, g: &Graph<R>) -> OutputDistributions<R> {
        OutputDistributions {
            p_vocab: g.value(self.p_vocab).data().to_vec(),
            p_his: g.value(self.p_his).data().to_vec(),
            p_kb: g.value(self.p_kb).data().to_vec(),
            first_hop_output: g.value(self.first_hop_output).data().to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedResponse {
    pub words: Vec<String>,
    pub sources: Vec<WordSource>,
    pub truncated: bool,
}
