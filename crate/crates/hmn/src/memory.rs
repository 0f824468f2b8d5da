//! The two memories and their stacked composition.
//!
//! The context-aware memory embeds each (token, turn, speaker) triple per
//! level, then runs a bidirectional gated recurrence over the sequence so
//! every slot encodes its neighbors; slot dimension is the embedding dimension
//! (two half-width directions concatenated). The context-free memory stores
//! the summed component embeddings of each knowledge triple with no gating.
//! Both use adjacent weight sharing: level k is hop k's input memory and hop
//! (k-1)'s output memory, so K hops need K+1 levels.
//!
//! A hop scores the query against every input slot, softmaxes into attention
//! weights, reads a weighted sum of output slots and adds it to the query.
//! The stacked query path walks all history hops, then feeds the result
//! through all knowledge-base hops.

use crate::numerics::{Graph, NodeId, NumericsError, Real};

/// Node ids for one gated-recurrence weight set (one direction of one level).
#[derive(Clone, Copy, Debug)]
pub struct GruNodes {
    pub reset_in: NodeId,
    pub reset_hid: NodeId,
    pub reset_bias: NodeId,
    pub update_in: NodeId,
    pub update_hid: NodeId,
    pub update_bias: NodeId,
    pub cand_in: NodeId,
    pub cand_hid: NodeId,
    pub cand_bias: NodeId,
}

/// One gated recurrence step:
///   r = sigmoid(Wr x + Ur h + br)
///   z = sigmoid(Wz x + Uz h + bz)
///   e = tanh(Wc x + r * (Uc h + bc))
///   h' = (1 - z) * e + z * h
pub fn gru_step<R: Real>(
    g: &mut Graph<R>,
    w: &GruNodes,
    input: NodeId,
    hidden: NodeId,
) -> Result<NodeId, NumericsError> {
    let rx = g.matvec(w.reset_in, input)?;
    let rh = g.matvec(w.reset_hid, hidden)?;
    let r_pre = g.add(rx, rh)?;
    let r_pre = g.add(r_pre, w.reset_bias)?;
    let r = g.sigmoid(r_pre);

    let zx = g.matvec(w.update_in, input)?;
    let zh = g.matvec(w.update_hid, hidden)?;
    let z_pre = g.add(zx, zh)?;
    let z_pre = g.add(z_pre, w.update_bias)?;
    let z = g.sigmoid(z_pre);

    let cx = g.matvec(w.cand_in, input)?;
    let ch = g.matvec(w.cand_hid, hidden)?;
    let ch = g.add(ch, w.cand_bias)?;
    let gated = g.mul(r, ch)?;
    let e_pre = g.add(cx, gated)?;
    let e = g.tanh(e_pre);

    let keep = g.mul(z, hidden)?;
    let one = g.leaf(crate::numerics::Array::new(
        vec![g.value(z).len()],
        vec![R::one(); g.value(z).len()],
    )?);
    let open = g.sub(one, z)?;
    let new = g.mul(open, e)?;
    g.add(new, keep)
}

/// Per-level parameter nodes for the context-aware memory.
#[derive(Clone, Copy, Debug)]
pub struct ContextAwareLevel {
    pub embed: NodeId,
    pub forward: GruNodes,
    pub backward: GruNodes,
}

/// Built memory: one slot matrix node per level, each `slot_count x dim`.
/// Slots are immutable once built; any number of hops may read them.
#[derive(Clone, Debug)]
pub struct MemorySlots {
    pub levels: Vec<NodeId>,
    pub slot_count: usize,
}

impl MemorySlots {
    /// Number of hops this memory supports.
    pub fn hops(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Sum the level-`k` embeddings of the given vocabulary ids.
fn summed_embedding<R: Real>(
    g: &mut Graph<R>,
    embed: NodeId,
    ids: &[usize],
) -> Result<NodeId, NumericsError> {
    let rows: Vec<NodeId> = ids
        .iter()
        .map(|&i| g.row_select(embed, i))
        .collect::<Result<_, _>>()?;
    if rows.len() == 1 {
        return Ok(rows[0]);
    }
    let stacked = g.concat_rows(&rows)?;
    g.sum_rows(stacked)
}

/// Build the context-aware memory over a tagged history. `history` holds the
/// vocabulary ids of (token, turn tag, speaker tag) per position, sentinel
/// included as the final element. Each level embeds the sequence with its own
/// matrix and runs its own bidirectional gated recurrence; a slot is the
/// concatenation of the forward and backward states at that position.
pub fn build_context_aware<R: Real>(
    g: &mut Graph<R>,
    levels: &[ContextAwareLevel],
    history: &[[usize; 3]],
) -> Result<MemorySlots, NumericsError> {
    if history.is_empty() {
        return Err(NumericsError::EmptyInput("build_context_aware"));
    }
    let mut level_slots = Vec::with_capacity(levels.len());
    for level in levels {
        let inputs: Vec<NodeId> = history
            .iter()
            .map(|ids| summed_embedding(g, level.embed, ids))
            .collect::<Result<_, _>>()?;

        let half = g.value(level.forward.reset_bias).len();
        let mut fwd = Vec::with_capacity(inputs.len());
        let mut state = g.zeros(&[half]);
        for &x in &inputs {
            state = gru_step(g, &level.forward, x, state)?;
            fwd.push(state);
        }
        let mut bwd = Vec::with_capacity(inputs.len());
        let mut state = g.zeros(&[half]);
        for &x in inputs.iter().rev() {
            state = gru_step(g, &level.backward, x, state)?;
            bwd.push(state);
        }
        bwd.reverse();

        let slots: Vec<NodeId> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<_, _>>()?;
        level_slots.push(g.concat_rows(&slots)?);
    }
    Ok(MemorySlots {
        levels: level_slots,
        slot_count: history.len(),
    })
}

/// Build a context-free memory. Each element of `items` lists the vocabulary
/// ids summed into one slot: `[subject, relation, object]` for a knowledge
/// triple, `[token, turn, speaker]` for the ablation that stores history
/// without gating, or the lone sentinel id for the final slot.
pub fn build_context_free<R: Real>(
    g: &mut Graph<R>,
    level_embeds: &[NodeId],
    items: &[Vec<usize>],
) -> Result<MemorySlots, NumericsError> {
    if items.is_empty() {
        return Err(NumericsError::EmptyInput("build_context_free"));
    }
    let mut level_slots = Vec::with_capacity(level_embeds.len());
    for &embed in level_embeds {
        let slots: Vec<NodeId> = items
            .iter()
            .map(|ids| summed_embedding(g, embed, ids))
            .collect::<Result<_, _>>()?;
        level_slots.push(g.concat_rows(&slots)?);
    }
    Ok(MemorySlots {
        levels: level_slots,
        slot_count: items.len(),
    })
}

/// One attention pass over a memory.
#[derive(Clone, Copy, Debug)]
pub struct Hop {
    /// Attention weights over slots (a probability simplex).
    pub attention: NodeId,
    /// Weighted sum of output-level slots.
    pub readout: NodeId,
    /// Query plus readout; also the next hop's query.
    pub output: NodeId,
}

/// Run hop `k` (1-based): score the query against level-k slots, softmax,
/// read from level-(k+1) slots, and add the readout to the query.
pub fn hop<R: Real>(
    g: &mut Graph<R>,
    memory: &MemorySlots,
    k: usize,
    query: NodeId,
) -> Result<Hop, NumericsError> {
    assert!(k >= 1 && k <= memory.hops(), "hop {k} of {}", memory.hops());
    let scores = g.matvec(memory.levels[k - 1], query)?;
    let attention = g.softmax(scores)?;
    let readout = g.vecmat(attention, memory.levels[k])?;
    let output = g.add(query, readout)?;
    Ok(Hop {
        attention,
        readout,
        output,
    })
}

/// Run every hop of one memory, chaining each output into the next query.
pub fn run_hops<R: Real>(
    g: &mut Graph<R>,
    memory: &MemorySlots,
    query: NodeId,
) -> Result<Vec<Hop>, NumericsError> {
    let mut hops = Vec::with_capacity(memory.hops());
    let mut q = query;
    for k in 1..=memory.hops() {
        let h = hop(g, memory, k, q)?;
        q = h.output;
        hops.push(h);
    }
    Ok(hops)
}

/// Result of one stacked query: final output vector, last-hop attention over
/// each memory, and the first history hop's output (fed to the vocabulary
/// head).
#[derive(Clone, Copy, Debug)]
pub struct HmnReadout {
    pub output: NodeId,
    pub p_his: NodeId,
    pub p_kb: NodeId,
    pub first_hop_output: NodeId,
}

/// Query the stacked memories: all history hops, then all knowledge-base hops
/// seeded with the final history output.
pub fn query_hmn<R: Real>(
    g: &mut Graph<R>,
    history: &MemorySlots,
    kb: &MemorySlots,
    query: NodeId,
) -> Result<HmnReadout, NumericsError> {
    let his_hops = run_hops(g, history, query)?;
    let last_his = his_hops.last().expect("at least one hop");
    let kb_hops = run_hops(g, kb, last_his.output)?;
    let last_kb = kb_hops.last().expect("at least one hop");
    Ok(HmnReadout {
        output: last_kb.output,
        p_his: last_his.attention,
        p_kb: last_kb.attention,
        first_hop_output: his_hops[0].output,
    })
}
