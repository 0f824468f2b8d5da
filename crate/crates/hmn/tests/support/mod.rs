//! Straight-line f64 re-implementation of the model's forward pass, used as
//! an independent oracle. No tape, no shared code with the graph engine:
//! plain vectors and loops, reading parameters from a model by name.

#![allow(dead_code)]

use hmn::corpus::{DialogueSample, Vocabulary};
use hmn::model::HmnModel;

#[derive(Clone, Debug)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

pub fn matvec(m: &Mat, v: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols, v.len());
    (0..m.rows)
        .map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect()
}

pub fn tanh(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug)]
pub struct GruW {
    pub reset_in: Mat,
    pub reset_hid: Mat,
    pub reset_bias: Vec<f64>,
    pub update_in: Mat,
    pub update_hid: Mat,
    pub update_bias: Vec<f64>,
    pub cand_in: Mat,
    pub cand_hid: Mat,
    pub cand_bias: Vec<f64>,
}

/// r = sig(Wr x + Ur h + br); z = sig(Wz x + Uz h + bz);
/// e = tanh(Wc x + r * (Uc h + bc)); h' = (1 - z) * e + z * h
pub fn gru(w: &GruW, x: &[f64], h: &[f64]) -> Vec<f64> {
    let r = sigmoid(&add(
        &add(&matvec(&w.reset_in, x), &matvec(&w.reset_hid, h)),
        &w.reset_bias,
    ));
    let z = sigmoid(&add(
        &add(&matvec(&w.update_in, x), &matvec(&w.update_hid, h)),
        &w.update_bias,
    ));
    let gated = mul(&r, &add(&matvec(&w.cand_hid, h), &w.cand_bias));
    let e = tanh(&add(&matvec(&w.cand_in, x), &gated));
    (0..h.len())
        .map(|i| (1.0 - z[i]) * e[i] + z[i] * h[i])
        .collect()
}

#[derive(Clone, Debug)]
pub struct OracleModel {
    pub dim: usize,
    pub cfo: bool,
    pub enc_query: Vec<f64>,
    pub his_embed: Vec<Mat>,
    pub his_gru: Vec<(GruW, GruW)>,
    pub kb_embed: Vec<Mat>,
    pub dec_gru: GruW,
    pub vocab_proj: Mat,
}

fn to_mat(a: &hmn::numerics::Array<f64>) -> Mat {
    let shape = a.shape();
    let (rows, cols) = if shape.len() == 2 {
        (shape[0], shape[1])
    } else {
        (1, shape[0])
    };
    Mat {
        rows,
        cols,
        data: a.data().to_vec(),
    }
}

impl OracleModel {
    pub fn from_model(m: &HmnModel<f64>) -> Self {
        let get = |name: &str| m.params.get(name).unwrap_or_else(|| panic!("{name}"));
        let vec_of = |name: &str| get(name).data().to_vec();
        let gru_of = |prefix: &str| GruW {
            reset_in: to_mat(get(&format!("{prefix}.reset_in"))),
            reset_hid: to_mat(get(&format!("{prefix}.reset_hid"))),
            reset_bias: vec_of(&format!("{prefix}.reset_bias")),
            update_in: to_mat(get(&format!("{prefix}.update_in"))),
            update_hid: to_mat(get(&format!("{prefix}.update_hid"))),
            update_bias: vec_of(&format!("{prefix}.update_bias")),
            cand_in: to_mat(get(&format!("{prefix}.cand_in"))),
            cand_hid: to_mat(get(&format!("{prefix}.cand_hid"))),
            cand_bias: vec_of(&format!("{prefix}.cand_bias")),
        };
        let mut his_embed = Vec::new();
        for k in 1..=m.config.hops_history + 1 {
            his_embed.push(to_mat(get(&format!("his.embed.{k}"))));
        }
        let mut his_gru = Vec::new();
        if !m.config.context_free_history {
            for k in 1..=m.config.hops_history + 1 {
                his_gru.push((
                    gru_of(&format!("his.level{k}.fw")),
                    gru_of(&format!("his.level{k}.bw")),
                ));
            }
        }
        let mut kb_embed = Vec::new();
        for k in 1..=m.config.hops_kb + 1 {
            kb_embed.push(to_mat(get(&format!("kb.embed.{k}"))));
        }
        OracleModel {
            dim: m.config.embed_dim,
            cfo: m.config.context_free_history,
            enc_query: vec_of("enc.query"),
            his_embed,
            his_gru,
            kb_embed,
            dec_gru: gru_of("dec.gru"),
            vocab_proj: to_mat(get("dec.vocab_proj")),
        }
    }
}

pub fn embed_sum(embed: &Mat, ids: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; embed.cols];
    for &id in ids {
        for (o, v) in out.iter_mut().zip(embed.row(id)) {
            *o += v;
        }
    }
    out
}

/// Gated memory slots: per level, embed each position, run the forward and
/// backward recurrences, concatenate the two states per position.
pub fn gated_slots(model: &OracleModel, history: &[[usize; 3]]) -> Vec<Vec<Vec<f64>>> {
    let half = model.dim / 2;
    let mut levels = Vec::new();
    for (embed, (fw, bw)) in model.his_embed.iter().zip(&model.his_gru) {
        let inputs: Vec<Vec<f64>> = history.iter().map(|ids| embed_sum(embed, ids)).collect();
        let mut fwd = Vec::new();
        let mut state = vec![0.0; half];
        for x in &inputs {
            state = gru(fw, x, &state);
            fwd.push(state.clone());
        }
        let mut bwd_rev = Vec::new();
        let mut state = vec![0.0; half];
        for x in inputs.iter().rev() {
            state = gru(bw, x, &state);
            bwd_rev.push(state.clone());
        }
        bwd_rev.reverse();
        let slots: Vec<Vec<f64>> = fwd
            .into_iter()
            .zip(bwd_rev)
            .map(|(f, b)| {
                let mut s = f;
                s.extend(b);
                s
            })
            .collect();
        levels.push(slots);
    }
    levels
}

/// Context-free slots: per level, the summed component embeddings.
pub fn context_free_slots(embeds: &[Mat], items: &[Vec<usize>]) -> Vec<Vec<Vec<f64>>> {
    embeds
        .iter()
        .map(|e| items.iter().map(|ids| embed_sum(e, ids)).collect())
        .collect()
}

/// One attention pass: p = softmax(slots_in . q), u = sum p_i slots_out_i,
/// output = q + u. This is also the standard end-to-end memory-network
/// attention formula.
pub fn hop(
    slots_in: &[Vec<f64>],
    slots_out: &[Vec<f64>],
    q: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = slots_in
        .iter()
        .map(|s| s.iter().zip(q).map(|(a, b)| a * b).sum())
        .collect();
    let p = softmax(&scores);
    let mut u = vec![0.0; slots_out[0].len()];
    for (w, slot) in p.iter().zip(slots_out) {
        for (ui, si) in u.iter_mut().zip(slot) {
            *ui += w * si;
        }
    }
    let oc = add(q, &u);
    (p, u, oc)
}

pub fn run_hops(levels: &[Vec<Vec<f64>>], query: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut q = query.to_vec();
    let mut attentions = Vec::new();
    let mut outputs = Vec::new();
    for k in 0..levels.len() - 1 {
        let (p, _, oc) = hop(&levels[k], &levels[k + 1], &q);
        attentions.push(p);
        outputs.push(oc.clone());
        q = oc;
    }
    (attentions, outputs)
}

pub struct OracleStep {
    pub p_vocab: Vec<f64>,
    pub p_his: Vec<f64>,
    pub p_kb: Vec<f64>,
    pub first_hop_output: Vec<f64>,
    pub hidden: Vec<f64>,
}

pub struct OracleMemories {
    pub his: Vec<Vec<Vec<f64>>>,
    pub kb: Vec<Vec<Vec<f64>>>,
}

pub fn build_memories(model: &OracleModel, sample: &OracleSample) -> OracleMemories {
    let his = if model.cfo {
        let items: Vec<Vec<usize>> = sample.history.iter().map(|ids| ids.to_vec()).collect();
        context_free_slots(&model.his_embed, &items)
    } else {
        gated_slots(model, &sample.history)
    };
    let kb = context_free_slots(&model.kb_embed, &sample.kb_items);
    OracleMemories { his, kb }
}

pub fn encode(model: &OracleModel, mems: &OracleMemories) -> Vec<f64> {
    let (_, outputs) = run_hops(&mems.his, &model.enc_query);
    outputs.last().expect("at least one hop").clone()
}

pub fn decode_step(
    model: &OracleModel,
    mems: &OracleMemories,
    h_prev: &[f64],
    input_word: usize,
) -> OracleStep {
    let x = model.his_embed[0].row(input_word).to_vec();
    let hidden = gru(&model.dec_gru, &x, h_prev);
    let (his_atts, his_outs) = run_hops(&mems.his, &hidden);
    let (kb_atts, _) = run_hops(&mems.kb, his_outs.last().unwrap());
    let first_hop_output = his_outs[0].clone();
    let mut head_in = hidden.clone();
    head_in.extend(first_hop_output.iter());
    let p_vocab = softmax(&matvec(&model.vocab_proj, &head_in));
    OracleStep {
        p_vocab,
        p_his: his_atts.last().unwrap().clone(),
        p_kb: kb_atts.last().unwrap().clone(),
        first_hop_output,
        hidden,
    }
}

/// Mirror of the indexed sample: vocabulary ids plus copy labels.
pub struct OracleSample {
    pub history: Vec<[usize; 3]>,
    pub kb_items: Vec<Vec<usize>>,
    pub response_ids: Vec<usize>,
    pub his_labels: Vec<usize>,
    pub kb_labels: Vec<usize>,
}

impl OracleSample {
    pub fn from_sample(vocab: &Vocabulary, s: &DialogueSample) -> Self {
        let history = s
            .history
            .iter()
            .map(|t| {
                [
                    vocab.lookup_or_unk(&t.token),
                    vocab.lookup_or_unk(&t.turn_tag()),
                    vocab.lookup_or_unk(t.speaker.tag()),
                ]
            })
            .collect();
        let mut kb_items: Vec<Vec<usize>> = s
            .kb
            .iter()
            .map(|t| {
                vec![
                    vocab.lookup_or_unk(&t.subject),
                    vocab.lookup_or_unk(&t.relation),
                    vocab.lookup_or_unk(&t.object),
                ]
            })
            .collect();
        kb_items.push(vec![Vocabulary::SENTINEL_ID]);
        OracleSample {
            history,
            kb_items,
            response_ids: s.response.iter().map(|w| vocab.lookup_or_unk(w)).collect(),
            his_labels: s.his_copy_labels.clone(),
            kb_labels: s.kb_copy_labels.clone(),
        }
    }
}

/// Gold-forced joint loss: -(1/T) sum of the three log-probabilities at each
/// step's targets.
pub fn joint_loss(model: &OracleModel, sample: &OracleSample) -> f64 {
    let mems = build_memories(model, sample);
    let mut hidden = encode(model, &mems);
    let mut input = Vocabulary::SOS_ID;
    let t_len = sample.response_ids.len();
    let mut total = 0.0;
    for t in 0..t_len {
        let step = decode_step(model, &mems, &hidden, input);
        total += step.p_vocab[sample.response_ids[t]].ln();
        total += step.p_his[sample.his_labels[t]].ln();
        total += step.p_kb[sample.kb_labels[t]].ln();
        hidden = step.hidden;
        input = sample.response_ids[t];
    }
    -total / t_len as f64
}
