//! Encoder and decoder over a packed batch of graphs, recorded on a tape.
//!
//! Node rows of every graph are stacked so the linear layers run as one
//! matrix product; attention and the per-step logits stay per graph.

use mres_core::ProblemKind;
use mres_tensor::{Tape, Tensor, Var};

use crate::decode::DecodeState;
use crate::features::InvariantFeatures;
use crate::params::PolicyParams;
use crate::Result;

/// Puts every parameter on `tape`, as gradient leaves when `trainable`.
pub(crate) fn bind<'a>(tape: &mut Tape<'a>, params: &'a PolicyParams, trainable: bool) -> Vec<Var> {
    params
        .tensors()
        .iter()
        .map(|t| if trainable { tape.param(t) } else { tape.constant_ref(t) })
        .collect()
}

pub(crate) struct Encoded {
    /// `N x d` node embeddings of all graphs, stacked.
    pub nodes: Var,
    /// `G x d` mean embedding of each graph.
    pub graphs: Var,
    /// First row of each graph in `nodes`.
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl Encoded {
    pub fn total_nodes(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.sizes[self.sizes.len() - 1])
    }
}

fn rows_of(tape: &mut Tape<'_>, x: Var, start: usize, len: usize, total: usize) -> Result<Var> {
    if start == 0 && len == total {
        Ok(x)
    } else {
        Ok(tape.slice_rows(x, start, len)?)
    }
}

pub(crate) fn encode(
    tape: &mut Tape<'_>,
    params: &PolicyParams,
    v: &[Var],
    feats: &[&InvariantFeatures],
) -> Result<Encoded> {
    let cfg = params.config();
    let lay = params.layout();
    let d = cfg.d_model;
    let inv_sqrt = 1.0 / (cfg.head_dim as f64).sqrt();

    let sizes: Vec<usize> = feats.iter().map(|f| f.n()).collect();
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut total = 0;
    for &n in &sizes {
        offsets.push(total);
        total += n;
    }
    let width = feats[0].node_scalars.cols();
    let mut scalars = Vec::with_capacity(total * width);
    let mut dists = Vec::new();
    for f in feats {
        scalars.extend_from_slice(f.node_scalars.data());
        dists.extend_from_slice(f.pair_dists.data());
    }
    let pairs = dists.len();
    let x = tape.constant(Tensor::matrix(total, width, scalars)?);
    let dcol = tape.constant(Tensor::matrix(pairs, 1, dists)?);

    let h0 = tape.matmul(x, v[lay.wx])?;
    let mut h = tape.add_row(h0, v[lay.bx])?;

    for l in &lay.layers {
        let z = tape.layer_norm(h, v[l.ln1_g], v[l.ln1_b])?;
        let qkv = tape.matmul(z, v[l.wqkv])?;

        let ph = tape.matmul(dcol, v[l.phi_w1])?;
        let ph = tape.add_row(ph, v[l.phi_b1])?;
        let ph = tape.relu(ph)?;
        let bias = tape.matmul(ph, v[l.phi_w2])?;
        let bias = tape.add_row(bias, v[l.phi_b2])?;

        let mut outs = Vec::with_capacity(sizes.len());
        let mut pair_off = 0;
        for (&off, &n) in offsets.iter().zip(&sizes) {
            let rows = rows_of(tape, qkv, off, n, total)?;
            let q = tape.slice_cols(rows, 0, d)?;
            let k = tape.slice_cols(rows, d, d)?;
            let val = tape.slice_cols(rows, 2 * d, d)?;
            let b = rows_of(tape, bias, pair_off, n * n, pairs)?;
            pair_off += n * n;
            outs.push(tape.attention(q, k, val, Some(b), cfg.heads, inv_sqrt, None)?);
        }
        let o = if outs.len() == 1 { outs[0] } else { tape.stack_rows(&outs)? };
        let o = tape.matmul(o, v[l.wo])?;
        let o = tape.add_row(o, v[l.bo])?;
        h = tape.add(h, o)?;

        let z = tape.layer_norm(h, v[l.ln2_g], v[l.ln2_b])?;
        let f = tape.matmul(z, v[l.ff_w1])?;
        let f = tape.add_row(f, v[l.ff_b1])?;
        let f = tape.relu(f)?;
        let f = tape.matmul(f, v[l.ff_w2])?;
        let f = tape.add_row(f, v[l.ff_b2])?;
        h = tape.add(h, f)?;
    }
    let nodes = tape.layer_norm(h, v[lay.lnf_g], v[lay.lnf_b])?;
    let mut means = Vec::with_capacity(sizes.len());
    for (&off, &n) in offsets.iter().zip(&sizes) {
        let rows = rows_of(tape, nodes, off, n, total)?;
        means.push(tape.mean_rows(rows)?);
    }
    let graphs = if means.len() == 1 { means[0] } else { tape.stack_rows(&means)? };
    Ok(Encoded {
        nodes,
        graphs,
        offsets,
        sizes,
    })
}

/// Projections of the node embeddings reused at every decoding step.
pub(crate) struct Decoder {
    /// Node rows followed by the first-node and current-node placeholders.
    nodes_ext: Var,
    total: usize,
    offsets: Vec<usize>,
    /// `G x d`: the graph-embedding part of each context query.
    graph_query: Var,
    /// Context weights for the remaining (first, current, capacity) inputs.
    w_rest: Var,
    glimpse_keys: Vec<Var>,
    glimpse_vals: Vec<Var>,
    logit_keys: Vec<Var>,
}

pub(crate) fn prepare_decoder(
    tape: &mut Tape<'_>,
    params: &PolicyParams,
    v: &[Var],
    enc: &Encoded,
) -> Result<Decoder> {
    let cfg = params.config();
    let lay = params.layout();
    let d = cfg.d_model;
    let total = enc.total_nodes();
    let nodes_ext = tape.stack_rows(&[enc.nodes, v[lay.v_first], v[lay.v_cur]])?;
    let ctx = cfg.context_dim();
    let w_graph = tape.slice_rows(v[lay.w_ctx], 0, d)?;
    let w_rest = tape.slice_rows(v[lay.w_ctx], d, ctx - d)?;
    let graph_query = tape.matmul(enc.graphs, w_graph)?;

    let kvl = tape.matmul(enc.nodes, v[lay.w_kvl])?;
    let g = enc.sizes.len();
    let mut glimpse_keys = Vec::with_capacity(g);
    let mut glimpse_vals = Vec::with_capacity(g);
    let mut logit_keys = Vec::with_capacity(g);
    for (&off, &n) in enc.offsets.iter().zip(&enc.sizes) {
        let rows = rows_of(tape, kvl, off, n, total)?;
        glimpse_keys.push(tape.slice_cols(rows, 0, d)?);
        glimpse_vals.push(tape.slice_cols(rows, d, d)?);
        logit_keys.push(tape.slice_cols(rows, 2 * d, d)?);
    }
    Ok(Decoder {
        nodes_ext,
        total,
        offsets: enc.offsets.clone(),
        graph_query,
        w_rest,
        glimpse_keys,
        glimpse_vals,
        logit_keys,
    })
}

/// One decoding step for the graphs in `active`. Returns a `1 x n` row of
/// action probabilities per active graph; masked entries are exactly zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_probs(
    tape: &mut Tape<'_>,
    params: &PolicyParams,
    v: &[Var],
    dec: &Decoder,
    feats: &[&InvariantFeatures],
    active: &[usize],
    states: &[DecodeState],
    masks: &[Vec<bool>],
) -> Result<Vec<Var>> {
    let cfg = params.config();
    let lay = params.layout();
    let (d, dh) = (cfg.d_model, cfg.head_dim);
    let a_n = active.len();

    let first: Vec<usize> = active
        .iter()
        .map(|&g| states[g].first.map_or(dec.total, |i| dec.offsets[g] + i))
        .collect();
    let current: Vec<usize> = active
        .iter()
        .map(|&g| states[g].current.map_or(dec.total + 1, |i| dec.offsets[g] + i))
        .collect();
    let mut parts = vec![
        tape.gather_rows(dec.nodes_ext, &first)?,
        tape.gather_rows(dec.nodes_ext, &current)?,
    ];
    if cfg.problem == ProblemKind::Cvrp {
        let caps = active.iter().map(|&g| states[g].capacity).collect();
        parts.push(tape.constant(Tensor::matrix(a_n, 1, caps)?));
    }
    let x = tape.concat(&parts)?;
    let q = tape.matmul(x, dec.w_rest)?;
    let base = tape.gather_rows(dec.graph_query, active)?;
    let q = tape.add(q, base)?;

    let glimpse_scale = 1.0 / (dh as f64).sqrt();
    let mut glimpses = Vec::with_capacity(a_n);
    for (r, &g) in active.iter().enumerate() {
        let qg = rows_of(tape, q, r, 1, a_n)?;
        glimpses.push(tape.attention(
            qg,
            dec.glimpse_keys[g],
            dec.glimpse_vals[g],
            None,
            cfg.heads,
            glimpse_scale,
            Some(&masks[g]),
        )?);
    }
    let gl = if a_n == 1 { glimpses[0] } else { tape.stack_rows(&glimpses)? };
    let gl = tape.matmul(gl, v[lay.w_out])?;

    let logit_scale = 1.0 / (d as f64).sqrt();
    let mut out = Vec::with_capacity(a_n);
    for (r, &g) in active.iter().enumerate() {
        let gg = rows_of(tape, gl, r, 1, a_n)?;
        let u = tape.matmul_t(gg, dec.logit_keys[g])?;
        let mut u = tape.scale(u, logit_scale)?;
        if let Some(c) = states[g].current {
            let row = tape.constant(Tensor::row(feats[g].dist_row(c).to_vec()));
            let near = tape.scale_by(row, v[lay.w_dist])?;
            u = tape.add(u, near)?;
        }
        let u = tape.tanh(u)?;
        let u = tape.scale(u, cfg.clip)?;
        out.push(tape.masked_softmax(u, Some(&masks[g]))?);
    }
    Ok(out)
}
