//! The differentiable forward pass: relation encoding, the relation-aware
//! self-attention stack, session readout, scoring, and the loss.
//!
//! Every function builds nodes on a caller-supplied [`Tape`]; the convenience
//! wrappers at the bottom create a fresh tape per call, which is what the
//! training loop and the evaluator use (one tape per instance, so instances
//! can run in parallel against a shared immutable parameter store).

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_graph, shortest_paths, SessionGraph};
use crate::model::config::{validate_inventory, LossMode, ModelConfig, Readout};
use crate::model::gru::{gru_run, GruCell};
use crate::scalar::Scalar;
use crate::tensor::store::TensorStore;
use crate::tensor::{Tape, TensorId};

/// Lower clamp for probabilities inside logarithms.
pub const PROB_CLAMP: f64 = 1e-8;

/// Tape handles of one self-attention encoder layer.
#[derive(Debug, Clone, Copy)]
struct LayerIds {
    w_q: TensorId,
    w_k: TensorId,
    w_v: TensorId,
    w_o: TensorId,
    ffn_w1: TensorId,
    ffn_b1: TensorId,
    ffn_w2: TensorId,
    ffn_b2: TensorId,
    norm1_gain: TensorId,
    norm1_bias: TensorId,
    norm2_gain: TensorId,
    norm2_bias: TensorId,
}

/// Tape handles of the soft-attention readout parameters.
#[derive(Debug, Clone, Copy)]
struct ReadoutIds {
    item_proj: TensorId,
    interest_proj: TensorId,
    bias: TensorId,
    score: TensorId,
}

/// Every parameter of a store bound to one tape as leaves.
pub struct BoundParams {
    /// Leaf ids in store-entry order; gradients are extracted through these.
    pub ids: Vec<TensorId>,
    item_table: TensorId,
    edge_type_table: Option<TensorId>,
    gru_fwd: Option<GruCell>,
    gru_bwd: Option<GruCell>,
    relation_split: Option<TensorId>,
    position_table: Option<TensorId>,
    layers: Vec<LayerIds>,
    san: Option<LayerIds>,
    readout: Option<ReadoutIds>,
}

/// Load every store entry onto `tape` and resolve the named handles the
/// forward pass needs. `requires_grad` controls whether backward will
/// produce gradients for the leaves.
pub fn bind_parameters<S: Scalar>(
    tape: &mut Tape<S>,
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    requires_grad: bool,
) -> Result<BoundParams> {
    cfg.validate()?;
    validate_inventory(cfg, store)?;

    let mut ids = Vec::with_capacity(store.len());
    let mut by_name: HashMap<&str, TensorId> = HashMap::with_capacity(store.len());
    for entry in store.entries() {
        let id = tape.leaf(entry.data.clone(), entry.shape.clone(), requires_grad)?;
        ids.push(id);
        by_name.insert(entry.name.as_str(), id);
    }
    let grab = |name: &str| -> Result<TensorId> {
        by_name.get(name).copied().ok_or_else(|| {
            Error::Internal(format!("parameter '{name}' vanished after inventory validation"))
        })
    };
    let gru = |prefix: &str| -> Result<GruCell> {
        Ok(GruCell {
            w_z: grab(&format!("{prefix}.w_z"))?,
            u_z: grab(&format!("{prefix}.u_z"))?,
            b_z: grab(&format!("{prefix}.b_z"))?,
            w_r: grab(&format!("{prefix}.w_r"))?,
            u_r: grab(&format!("{prefix}.u_r"))?,
            b_r: grab(&format!("{prefix}.b_r"))?,
            w_h: grab(&format!("{prefix}.w_h"))?,
            u_h: grab(&format!("{prefix}.u_h"))?,
            b_h: grab(&format!("{prefix}.b_h"))?,
        })
    };
    let layer = |prefix: &str| -> Result<LayerIds> {
        Ok(LayerIds {
            w_q: grab(&format!("{prefix}.w_q"))?,
            w_k: grab(&format!("{prefix}.w_k"))?,
            w_v: grab(&format!("{prefix}.w_v"))?,
            w_o: grab(&format!("{prefix}.w_o"))?,
            ffn_w1: grab(&format!("{prefix}.ffn_w1"))?,
            ffn_b1: grab(&format!("{prefix}.ffn_b1"))?,
            ffn_w2: grab(&format!("{prefix}.ffn_w2"))?,
            ffn_b2: grab(&format!("{prefix}.ffn_b2"))?,
            norm1_gain: grab(&format!("{prefix}.norm1_gain"))?,
            norm1_bias: grab(&format!("{prefix}.norm1_bias"))?,
            norm2_gain: grab(&format!("{prefix}.norm2_gain"))?,
            norm2_bias: grab(&format!("{prefix}.norm2_bias"))?,
        })
    };

    let mut layers = Vec::new();
    if cfg.has_encoder() {
        for i in 0..cfg.n_layers {
            layers.push(layer(&format!("attn.{i}"))?);
        }
    }
    Ok(BoundParams {
        item_table: grab("item_table")?,
        edge_type_table: cfg.has_relations().then(|| grab("edge_type_table")).transpose()?,
        gru_fwd: cfg.has_relations().then(|| gru("gru_fwd")).transpose()?,
        gru_bwd: cfg.has_relations().then(|| gru("gru_bwd")).transpose()?,
        relation_split: cfg.has_relations().then(|| grab("relation_split")).transpose()?,
        position_table: cfg.has_positions().then(|| grab("position_table")).transpose()?,
        layers,
        san: (cfg.readout == Readout::San).then(|| layer("san")).transpose()?,
        readout: matches!(cfg.readout, Readout::SoftAttention | Readout::Graph)
            .then(|| {
                Ok::<_, Error>(ReadoutIds {
                    item_proj: grab("readout.item_proj")?,
                    interest_proj: grab("readout.interest_proj")?,
                    bias: grab("readout.bias")?,
                    score: grab("readout.score")?,
                })
            })
            .transpose()?,
        ids,
    })
}

/// Intermediate tensors surfaced for fixture tests and debugging.
#[derive(Debug, Default)]
pub struct Trace {
    /// Pre-softmax attention score matrices (m×m row-major), one per
    /// (layer, head) in layer-major order.
    pub attention_scores: Vec<TensorId>,
    /// Readout aggregation weights γ, when the readout computes them.
    pub readout_weights: Option<TensorId>,
    /// Session representation s_h (1×d).
    pub session_repr: Option<TensorId>,
    /// Raw item scores ẑ (1×n).
    pub scores: Option<TensorId>,
}

/// Directional relation rows for one session.
struct SessionRelations {
    /// (2u)×d matrix: rows 2k / 2k+1 hold the forward / backward relation of
    /// unique path k.
    rows: TensorId,
    /// Unique-path index per node pair, m×m row-major (symmetric).
    pair_index: Vec<usize>,
}

/// Encode each distinct shortest-path signature once with the bi-directional
/// GRU and split it into directional halves.
fn encode_relations<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    graph: &SessionGraph,
) -> Result<SessionRelations> {
    let paths = shortest_paths(graph, cfg.path_cap)?;
    let m = graph.node_count();

    // Intern path signatures in deterministic (i, j) scan order.
    let mut signatures = Vec::new();
    let mut lookup = HashMap::new();
    let mut pair_index = vec![0usize; m * m];
    for i in 0..m {
        for j in i..m {
            let sig = &paths.get(i, j).edge_types;
            let k = *lookup.entry(sig.clone()).or_insert_with(|| {
                signatures.push(sig.clone());
                signatures.len() - 1
            });
            pair_index[i * m + j] = k;
            pair_index[j * m + i] = k;
        }
    }

    let missing = || Error::Internal("relation parameters absent from binding".into());
    let edge_table = bound.edge_type_table.ok_or_else(missing)?;
    let fwd = bound.gru_fwd.as_ref().ok_or_else(missing)?;
    let bwd = bound.gru_bwd.as_ref().ok_or_else(missing)?;
    let split = bound.relation_split.ok_or_else(missing)?;
    let hidden = cfg.gru_hidden();

    let mut encoded = Vec::with_capacity(signatures.len());
    for sig in &signatures {
        let codes: Vec<usize> = sig.iter().map(|e| e.code()).collect();
        let embeds = tape.gather_rows(edge_table, &codes)?;
        let last_fwd = gru_run(tape, fwd, embeds, 0..codes.len(), hidden)?;
        let last_bwd = gru_run(tape, bwd, embeds, (0..codes.len()).rev(), hidden)?;
        encoded.push(tape.concat(&[last_fwd, last_bwd], 1)?);
    }
    let stacked = tape.concat(&encoded, 0)?; // u×d
    let projected = tape.matmul(stacked, split)?; // u×2d
    let rows = tape.reshape(projected, vec![2 * signatures.len(), cfg.d_model])?;
    Ok(SessionRelations { rows, pair_index })
}

fn maybe_dropout<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    p: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<TensorId> {
    match rng.as_deref_mut() {
        Some(r) => tape.dropout(x, p, true, r),
        None => Ok(x),
    }
}

/// One encoder layer: relation-aware multi-head attention (relations shift
/// queries and keys, never values), output projection, residual + norm, FFN,
/// residual + norm.
fn encoder_layer<S: Scalar>(
    tape: &mut Tape<S>,
    x: TensorId,
    m: usize,
    layer: &LayerIds,
    rel: Option<&SessionRelations>,
    cfg: &ModelConfig,
    dropout_rng: &mut Option<&mut ChaCha8Rng>,
    trace: &mut Option<&mut Trace>,
) -> Result<TensorId> {
    let dh = cfg.head_dim();

    // Per ordered pair (i, j), flattened row i·m + j: the query side carries
    // h_i (+ r_{i→j}), the key side h_j (+ r_{j→i}).
    let mut iq = Vec::with_capacity(m * m);
    let mut ik = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            iq.push(i);
            ik.push(j);
        }
    }
    let hq = tape.gather_rows(x, &iq)?;
    let hk = tape.gather_rows(x, &ik)?;
    let (q_in, k_in) = match rel {
        Some(r) => {
            let mut rq = Vec::with_capacity(m * m);
            let mut rk = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m {
                    let k = r.pair_index[i * m + j];
                    // The forward half is oriented lower→higher node index;
                    // flip it when the query sits on the higher side.
                    let flip = usize::from(i > j);
                    rq.push(2 * k + flip);
                    rk.push(2 * k + 1 - flip);
                }
            }
            let rq_rows = tape.gather_rows(r.rows, &rq)?;
            let rk_rows = tape.gather_rows(r.rows, &rk)?;
            (tape.add(hq, rq_rows)?, tape.add(hk, rk_rows)?)
        }
        None => (hq, hk),
    };

    let q = tape.matmul(q_in, layer.w_q)?; // m²×d
    let k = tape.matmul(k_in, layer.w_k)?;
    let qk = tape.mul(q, k)?;
    let v = tape.matmul(x, layer.w_v)?; // m×d

    let mut head_outs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let cols = tape.slice(qk, 1, h * dh, (h + 1) * dh)?;
        let summed = tape.sum(cols, Some(1))?; // [m²]
        let scaled = tape.scale(summed, 1.0 / (dh as f64).sqrt())?;
        let scores = tape.reshape(scaled, vec![m, m])?;
        if let Some(t) = trace.as_deref_mut() {
            t.attention_scores.push(scores);
        }
        let probs = tape.softmax(scores, 1)?;
        let probs = maybe_dropout(tape, probs, cfg.dropout, dropout_rng)?;
        let vh = tape.slice(v, 1, h * dh, (h + 1) * dh)?;
        head_outs.push(tape.matmul(probs, vh)?);
    }
    let merged = tape.concat(&head_outs, 1)?;
    let attn = tape.matmul(merged, layer.w_o)?;

    let res1 = tape.add(x, attn)?;
    let x1 = tape.layer_norm(res1, layer.norm1_gain, layer.norm1_bias)?;

    let f = tape.matmul(x1, layer.ffn_w1)?;
    let f = tape.add(f, layer.ffn_b1)?;
    let f = tape.relu(f)?;
    let f = tape.matmul(f, layer.ffn_w2)?;
    let f = tape.add(f, layer.ffn_b2)?;
    let f = maybe_dropout(tape, f, cfg.dropout, dropout_rng)?;

    let res2 = tape.add(x1, f)?;
    tape.layer_norm(res2, layer.norm2_gain, layer.norm2_bias)
}

/// Soft attention over `rows` (k×d) with the `interest_row` as the anchor:
/// ε = (rows·W₄ + anchor·W₅ + b)·q, γ = softmax(ε), out = γᵀ·rows.
fn soft_attention<S: Scalar>(
    tape: &mut Tape<S>,
    ids: &ReadoutIds,
    rows: TensorId,
    interest_row: usize,
    trace: &mut Option<&mut Trace>,
) -> Result<TensorId> {
    let d = tape.shape(rows)[1];
    let anchor = tape.slice(rows, 0, interest_row, interest_row + 1)?;
    let a = tape.matmul(rows, ids.item_proj)?;
    let b = tape.matmul(anchor, ids.interest_proj)?;
    let mix = tape.add(a, b)?; // row broadcast
    let mix = tape.add(mix, ids.bias)?;
    let q = tape.reshape(ids.score, vec![d, 1])?;
    let eps = tape.matmul(mix, q)?; // k×1
    let gamma = tape.softmax(eps, 0)?;
    if let Some(t) = trace.as_deref_mut() {
        t.readout_weights = Some(gamma);
    }
    let weights = tape.transpose(gamma)?; // 1×k
    tape.matmul(weights, rows)
}

/// Collapse per-node representations into the session vector s_h (1×d).
fn readout<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    graph: &SessionGraph,
    h_nodes: TensorId,
    dropout_rng: &mut Option<&mut ChaCha8Rng>,
    trace: &mut Option<&mut Trace>,
) -> Result<TensorId> {
    let positions = graph.position_to_node();

    if cfg.readout == Readout::Graph {
        let last_node = *positions.last().expect("graphs come from non-empty sessions");
        let ids = bound.readout.as_ref().ok_or_else(|| {
            Error::Internal("soft-attention parameters absent from binding".into())
        })?;
        return soft_attention(tape, ids, h_nodes, last_node, trace);
    }

    // Sequence-based readouts: revert to the (most recent) session order.
    let keep = positions.len().min(cfg.max_positions);
    let recent = &positions[positions.len() - keep..];
    let mut hs = tape.gather_rows(h_nodes, recent)?;
    if let Some(pos_table) = bound.position_table {
        // Reversed positions: the last item uses row 0, the one before row 1…
        let rows: Vec<usize> = (0..keep).map(|i| keep - 1 - i).collect();
        let pos = tape.gather_rows(pos_table, &rows)?;
        hs = tape.add(hs, pos)?;
    }

    match cfg.readout {
        Readout::Sum => {
            let total = tape.sum(hs, Some(0))?;
            tape.reshape(total, vec![1, cfg.d_model])
        }
        Readout::San => {
            let layer = bound
                .san
                .as_ref()
                .ok_or_else(|| Error::Internal("san parameters absent from binding".into()))?;
            let out = encoder_layer(tape, hs, keep, layer, None, cfg, dropout_rng, &mut None)?;
            tape.slice(out, 0, keep - 1, keep)
        }
        Readout::SoftAttention => {
            let ids = bound.readout.as_ref().ok_or_else(|| {
                Error::Internal("soft-attention parameters absent from binding".into())
            })?;
            soft_attention(tape, ids, hs, keep - 1, trace)
        }
        Readout::Graph => unreachable!("handled above"),
    }
}

fn check_session(cfg: &ModelConfig, session: &[usize]) -> Result<()> {
    if session.is_empty() {
        return Err(Error::Contract("cannot score an empty session".into()));
    }
    for (pos, &item) in session.iter().enumerate() {
        if item >= cfg.n_items {
            return Err(Error::Bounds(format!(
                "session position {pos} holds item {item}, but the vocabulary has {} items",
                cfg.n_items
            )));
        }
    }
    Ok(())
}

/// Full forward pass producing raw scores ẑ (1×n) for every vocabulary item.
pub fn forward_scores<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    session: &[usize],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
    mut trace: Option<&mut Trace>,
) -> Result<TensorId> {
    check_session(cfg, session)?;
    let graph = build_graph(session)?;
    let mut h = tape.gather_rows(bound.item_table, graph.nodes())?;

    if cfg.has_encoder() {
        let relations = if cfg.has_relations() {
            Some(encode_relations(tape, bound, cfg, &graph)?)
        } else {
            None
        };
        for layer in &bound.layers {
            h = encoder_layer(
                tape,
                h,
                graph.node_count(),
                layer,
                relations.as_ref(),
                cfg,
                &mut dropout_rng,
                &mut trace,
            )?;
        }
    }

    let s_h = readout(tape, bound, cfg, &graph, h, &mut dropout_rng, &mut trace)?;
    if let Some(t) = trace.as_deref_mut() {
        t.session_repr = Some(s_h);
    }

    let normalized = tape.l2_normalize_rows(bound.item_table)?;
    let transposed = tape.transpose(normalized)?;
    let scores = tape.matmul(s_h, transposed)?; // 1×n
    if let Some(t) = trace.as_deref_mut() {
        t.scores = Some(scores);
    }
    Ok(scores)
}

/// Forward pass plus the training loss against `target`.
pub fn forward_loss<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    session: &[usize],
    target: usize,
    dropout_rng: Option<&mut ChaCha8Rng>,
    trace: Option<&mut Trace>,
) -> Result<TensorId> {
    if target >= cfg.n_items {
        return Err(Error::Bounds(format!(
            "target item {target} out of range for a vocabulary of {}",
            cfg.n_items
        )));
    }
    let scores = forward_scores(tape, bound, cfg, session, dropout_rng, trace)?;
    let probs = tape.softmax(scores, 1)?;
    let clamped = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_p = tape.log(clamped)?;

    let n = cfg.n_items;
    let mut one_hot = vec![S::default(); n];
    one_hot[target] = S::from_f64(1.0);
    let y = tape.constant(one_hot, vec![1, n])?;
    let hit = tape.mul(y, log_p)?;
    let hit_sum = tape.sum(hit, None)?;

    match cfg.loss_mode {
        LossMode::TargetCe => tape.scale(hit_sum, -1.0),
        LossMode::FullBce => {
            let ones = tape.constant_filled(1.0, vec![1, n])?;
            let miss_weight = tape.sub(ones, y)?;
            let miss_prob = tape.sub(ones, clamped)?;
            let log_miss = tape.log(miss_prob)?;
            let miss = tape.mul(miss_weight, log_miss)?;
            let miss_sum = tape.sum(miss, None)?;
            let total = tape.add(hit_sum, miss_sum)?;
            tape.scale(total, -1.0)
        }
    }
}

// ─── store-level conveniences (fresh tape per call) ───

/// Raw scores ẑ for every item, evaluation mode (no dropout).
pub fn predict_scores<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    session: &[usize],
) -> Result<Vec<S>> {
    let mut tape = Tape::new();
    let bound = bind_parameters(&mut tape, store, cfg, false)?;
    let scores = forward_scores(&mut tape, &bound, cfg, session, None, None)?;
    Ok(tape.data(scores).to_vec())
}

/// Loss value only (no gradients). Pass a dropout RNG for training mode.
pub fn instance_loss_value<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    session: &[usize],
    target: usize,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bind_parameters(&mut tape, store, cfg, false)?;
    let loss = forward_loss(&mut tape, &bound, cfg, session, target, dropout_rng, None)?;
    tape.scalar_value(loss)
}

/// Loss value and the gradient of every parameter, in store-entry order.
pub fn instance_gradients<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    session: &[usize],
    target: usize,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Vec<S>>)> {
    let mut tape = Tape::new();
    let bound = bind_parameters(&mut tape, store, cfg, true)?;
    let loss = forward_loss(&mut tape, &bound, cfg, session, target, dropout_rng, None)?;
    let value = tape.scalar_value(loss)?;
    tape.backward(loss)?;
    let grads = bound
        .ids
        .iter()
        .map(|&id| tape.grad(id).expect("bound leaves require gradients").to_vec())
        .collect();
    Ok((value, grads))
}

/// Materialized intermediate values of one evaluation-mode forward pass.
#[derive(Debug, Clone)]
pub struct Inspection<S> {
    /// Pre-softmax attention scores per (layer, head), each m×m row-major.
    pub attention_scores: Vec<Vec<S>>,
    /// Readout weights γ, when the readout variant computes them.
    pub readout_weights: Option<Vec<S>>,
    /// Session representation s_h.
    pub session_repr: Vec<S>,
    /// Raw scores ẑ.
    pub scores: Vec<S>,
    /// Softmax probabilities ŷ.
    pub probabilities: Vec<S>,
}

/// Run one evaluation-mode forward pass and materialize its intermediates.
pub fn inspect_forward<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    session: &[usize],
) -> Result<Inspection<S>> {
    let mut tape = Tape::new();
    let bound = bind_parameters(&mut tape, store, cfg, false)?;
    let mut trace = Trace::default();
    let scores = forward_scores(&mut tape, &bound, cfg, session, None, Some(&mut trace))?;
    let probs = tape.softmax(scores, 1)?;
    Ok(Inspection {
        attention_scores: trace
            .attention_scores
            .iter()
            .map(|&id| tape.data(id).to_vec())
            .collect(),
        readout_weights: trace.readout_weights.map(|id| tape.data(id).to_vec()),
        session_repr: tape.data(trace.session_repr.expect("forward sets session_repr")).to_vec(),
        scores: tape.data(scores).to_vec(),
        probabilities: tape.data(probs).to_vec(),
    })
}

/// Attention score matrices per (layer, head) for one session, evaluation
/// mode. Convenience wrapper over [`inspect_forward`].
pub fn attention_score_matrices<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    session: &[usize],
) -> Result<Vec<Vec<S>>> {
    Ok(inspect_forward(store, cfg, session)?.attention_scores)
}
