//! The optimization loop: per-timestep teacher forcing, unknown-word input
//! masking, mini-batch gradients with global-norm clipping, Adam updates,
//! per-epoch dev evaluation with best-checkpoint retention, and the CSV loss
//! log.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DialogueSample;
use crate::metrics::{corpus_bleu, entity_f1, response_accuracy, EvalPair};
use crate::model::{HmnModel, ModelConfig, ModelError};
use crate::numerics::{collect_grads, Graph, NamedArrays, Real, TrainReal};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {}, batch {}", .0.epoch, .0.batch_index)]
    NonFiniteLoss(Box<LossDiagnostics>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Dump produced when a loss goes non-finite: which batch, which samples, and
/// every parameter norm at the failure point.
#[derive(Clone, Debug, Serialize)]
pub struct LossDiagnostics {
    pub epoch: usize,
    pub batch_index: usize,
    pub sample_ids: Vec<String>,
    pub loss: f64,
    pub param_norms: Vec<(String, f64)>,
}

fn default_embed_dim() -> usize {
    128
}
fn default_hops() -> usize {
    1
}
fn default_dropout() -> f64 {
    0.1
}
fn default_learning_rate() -> f64 {
    0.001
}
fn default_batch_size() -> usize {
    64
}
fn default_epochs() -> usize {
    100
}
fn default_teacher_forcing() -> f64 {
    0.5
}
fn default_clip_norm() -> f64 {
    10.0
}
fn default_patience() -> usize {
    10
}
fn default_max_generate_len() -> usize {
    30
}

/// Everything the trainer needs; doubles as the on-disk config file, so every
/// field has a default and can be overridden by a CLI flag.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hops")]
    pub hops_history: usize,
    #[serde(default = "default_hops")]
    pub hops_kb: usize,
    /// Rate at which input tokens are masked to the unknown word in training.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Standard activation dropout on the controller state; off by default
    /// (input masking is the only dropout the model calls for).
    #[serde(default)]
    pub activation_dropout: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Probability of feeding the gold previous word rather than the model's
    /// own emission, drawn per timestep.
    #[serde(default = "default_teacher_forcing")]
    pub teacher_forcing: f64,
    #[serde(default)]
    pub seed: u64,
    /// Replace the gated context-aware history memory with a context-free
    /// one.
    #[serde(default)]
    pub cfo: bool,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    /// Stop after this many epochs without a dev improvement; 0 disables.
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_max_generate_len")]
    pub max_generate_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hops_history: self.hops_history,
            hops_kb: self.hops_kb,
            context_free_history: self.cfo,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model_config()
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        for (name, rate) in [
            ("dropout", self.dropout),
            ("activation_dropout", self.activation_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {rate}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(TrainError::InvalidConfig(format!(
                "teacher_forcing must be in [0, 1], got {}",
                self.teacher_forcing
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size and epochs must be positive".to_string(),
            ));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Adam with the standard defaults (beta1 0.9, beta2 0.999, eps 1e-8).
/// Moment arithmetic runs at f64 regardless of the parameter precision.
pub struct Adam<R: Real> {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    m: NamedArrays<R>,
    v: NamedArrays<R>,
}

impl<R: Real> Adam<R> {
    pub fn new(learning_rate: f64, params: &NamedArrays<R>) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut NamedArrays<R>, grads: &NamedArrays<R>) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads.array(i).data();
            let m = self.m.array_mut(i).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = R::from_f64(self.beta1 * mi.as_f64() + (1.0 - self.beta1) * gi.as_f64());
            }
            let v = self.v.array_mut(i).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                let gf = gi.as_f64();
                *vi = R::from_f64(self.beta2 * vi.as_f64() + (1.0 - self.beta2) * gf * gf);
            }
            let m = self.m.array(i).data();
            let v = self.v.array(i).data();
            let p = params.array_mut(i).data_mut();
            for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
                let m_hat = mi.as_f64() / bc1;
                let v_hat = vi.as_f64() / bc2;
                *pi = R::from_f64(
                    pi.as_f64() - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon),
                );
            }
        }
    }
}

/// Scale gradients so the global norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_global_norm<R: Real>(grads: &mut NamedArrays<R>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        let factor = R::from_f64(max_norm / norm);
        for i in 0..grads.len() {
            for x in grads.array_mut(i).data_mut() {
                *x *= factor;
            }
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    /// First epoch whose mean train loss drops to `threshold`, if any.
    pub fn first_epoch_reaching_loss(&self, threshold: f64) -> Option<usize> {
        self.epochs
            .iter()
            .find(|e| e.train_loss <= threshold)
            .map(|e| e.epoch)
    }
}

fn param_norms<R: Real>(params: &NamedArrays<R>) -> Vec<(String, f64)> {
    params
        .iter()
        .map(|(name, a)| (name.to_string(), a.norm()))
        .collect()
}

/// Deterministic mean joint loss (gold forcing, no masking) over a split.
pub fn mean_loss(
    model: &HmnModel<TrainReal>,
    samples: &[DialogueSample],
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for s in samples {
        let indexed = model.index_sample(s);
        let coins = vec![true; indexed.response_ids.len()];
        let mut g = Graph::new();
        let bound = model.bind(&mut g);
        let (loss, _) = model.joint_loss(&mut g, &bound, &indexed, &coins, None)?;
        total += g.value(loss).data()[0].as_f64();
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Run generation over a dev split and compute the metric map used for model
/// selection and the loss log: deterministic loss, exact-match accuracies,
/// BLEU, and entity F1 when an entity list is supplied.
pub fn evaluate_dev(
    model: &HmnModel<TrainReal>,
    dev: &[DialogueSample],
    entity_list: Option<&BTreeSet<String>>,
    max_len: usize,
) -> Result<BTreeMap<String, f64>, TrainError> {
    let mut out = BTreeMap::new();
    if dev.is_empty() {
        return Ok(out);
    }
    let empty = BTreeSet::new();
    let entities = entity_list.unwrap_or(&empty);
    let mut pairs = Vec::with_capacity(dev.len());
    for s in dev {
        let generated = model.generate(s, max_len)?;
        let gold: Vec<String> = s.response[..s.response.len() - 1].to_vec();
        pairs.push(EvalPair::new(
            s.dialogue_id.clone(),
            s.turn_id,
            s.scenario.clone(),
            generated.words,
            gold,
            entities,
        ));
    }
    let (per_response, per_dialog) = response_accuracy(&pairs);
    out.insert("per_response".to_string(), per_response);
    out.insert("per_dialog".to_string(), per_dialog);
    let scorable: Vec<EvalPair> = pairs.iter().filter(|p| !p.gold.is_empty()).cloned().collect();
    if !scorable.is_empty() {
        out.insert("bleu".to_string(), corpus_bleu(&scorable, 4).expect("non-empty"));
    }
    if entity_list.is_some() {
        out.insert("entity_f1".to_string(), entity_f1(&pairs).global);
    }
    out.insert("loss".to_string(), mean_loss(model, dev)?);
    Ok(out)
}

/// Train a model from scratch. Per sample and step, a seeded coin picks gold
/// or self feedback; each history token is independently masked to the
/// unknown word at the dropout rate. Batch gradients are the mean of sample
/// gradients, clipped to the configured global norm. The best dev checkpoint
/// (by per-response accuracy) is retained and returned.
pub fn train(
    config: &TrainConfig,
    train_samples: &[DialogueSample],
    dev_samples: &[DialogueSample],
    entity_list: Option<&BTreeSet<String>>,
) -> Result<(HmnModel<TrainReal>, TrainReport), TrainError> {
    config.validate()?;
    if train_samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }

    let vocab = crate::corpus::Vocabulary::build(train_samples);
    let mut model = HmnModel::<TrainReal>::init(config.model_config(), vocab, config.seed)?;
    let indexed: Vec<_> = train_samples.iter().map(|s| model.index_sample(s)).collect();

    let mut adam = Adam::new(config.learning_rate, &model.params);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        best_metric: f64::NEG_INFINITY,
        stopped_early: false,
    };
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        let started = std::time::Instant::now();
        let mut order: Vec<usize> = (0..indexed.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }

        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grad_accum = model.params.zeros_like();
            let mut batch_loss = 0.0f64;
            for &si in batch {
                let mut sample = indexed[si].clone();
                sample.mask_input_tokens(config.dropout, &mut rng);
                let coins: Vec<bool> = (0..sample.response_ids.len())
                    .map(|_| rng.gen_range(0.0..1.0) < config.teacher_forcing)
                    .collect();

                let mut g = Graph::new();
                let bound = model.bind(&mut g);
                let dropout = if config.activation_dropout > 0.0 {
                    Some((config.activation_dropout, &mut rng as &mut dyn rand::RngCore))
                } else {
                    None
                };
                let (loss, _) = model.joint_loss(&mut g, &bound, &sample, &coins, dropout)?;
                let loss_value = g.value(loss).data()[0].as_f64();
                if !loss_value.is_finite() {
                    return Err(TrainError::NonFiniteLoss(Box::new(LossDiagnostics {
                        epoch,
                        batch_index,
                        sample_ids: batch
                            .iter()
                            .map(|&i| train_samples[i].dialogue_id.clone())
                            .collect(),
                        loss: loss_value,
                        param_norms: param_norms(&model.params),
                    })));
                }
                batch_loss += loss_value;
                g.backward(loss).map_err(ModelError::from)?;
                let grads = collect_grads(&g, &model.params, &bound);
                for i in 0..grad_accum.len() {
                    let acc = grad_accum.array_mut(i).data_mut();
                    for (a, b) in acc.iter_mut().zip(grads.array(i).data()) {
                        *a += *b;
                    }
                }
            }
            let scale = TrainReal::from_f64(1.0 / batch.len() as f64);
            for i in 0..grad_accum.len() {
                for x in grad_accum.array_mut(i).data_mut() {
                    *x *= scale;
                }
            }
            clip_global_norm(&mut grad_accum, config.clip_norm);
            adam.step(&mut model.params, &grad_accum);
            epoch_loss += batch_loss;
            seen += batch.len();
        }

        let train_loss = epoch_loss / seen as f64;
        let dev = evaluate_dev(&model, dev_samples, entity_list, config.max_generate_len)?;
        // Model selection: dev per-response accuracy, falling back to train
        // loss when no dev split is provided.
        let metric = dev
            .get("per_response")
            .copied()
            .unwrap_or_else(|| -train_loss);
        let record = EpochRecord {
            epoch,
            train_loss,
            dev,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.4}, dev {:?}",
            record.dev
        );
        report.epochs.push(record);

        if metric > report.best_metric {
            report.best_metric = metric;
            report.best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience > 0 && since_best >= config.early_stop_patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    model.params = best_params;
    Ok((model, report))
}

/// Write the per-epoch loss log: one train row and one dev row per epoch with
/// a stable column order. Re-emitting the same report is byte-identical.
pub fn emit_loss_log(report: &TrainReport, path: &Path) -> Result<(), TrainError> {
    let io_err = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let fmt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    };
    (|| -> std::io::Result<()> {
        writeln!(
            w,
            "epoch,split,loss,per_response,per_dialog,bleu,entity_f1"
        )?;
        for e in &report.epochs {
            writeln!(w, "{},train,{:.6},,,,", e.epoch, e.train_loss)?;
            if !e.dev.is_empty() {
                writeln!(
                    w,
                    "{},dev,{},{},{},{},{}",
                    e.epoch,
                    fmt(e.dev.get("loss").copied()),
                    fmt(e.dev.get("per_response").copied()),
                    fmt(e.dev.get("per_dialog").copied()),
                    fmt(e.dev.get("bleu").copied()),
                    fmt(e.dev.get("entity_f1").copied()),
                )?;
            }
        }
        w.flush()
    })()
    .map_err(io_err)
}
