use super::params::{block_idx, final_norm_idx, ModelConfig, Params, POS_EMB, TOK_EMB};
use crate::error::{ensure, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Per-layer states, per-head attention and logits of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `hidden[l]` is the `N×d` residual stream after `l` blocks (0 = embeddings).
    pub hidden: Vec<Tensor>,
    /// `attention[l][h]` is the causal `N×N` attention of block `l`, head `h`.
    pub attention: Vec<Vec<Tensor>>,
    /// `queries[l][h]` is the `N×d_head` query matrix of block `l`, head `h`.
    pub queries: Vec<Vec<Tensor>>,
    pub logits: Tensor,
}

/// Replacement of rows of `hidden[layer]` before later blocks run.
#[derive(Clone, Copy, Debug)]
pub struct Patch<'a> {
    pub layer: usize,
    pub rows: &'a [usize],
    pub donor: &'a Tensor,
}

/// Tape handles for a batch of equal-length sequences stacked row-wise.
pub struct Graph {
    /// `hidden[l]` has `B·N` rows.
    pub hidden: Vec<Var>,
    /// `attention[l][b][h]`.
    pub attention: Vec<Vec<Vec<Var>>>,
    pub queries: Vec<Vec<Vec<Var>>>,
    pub logits: Var,
    pub batch: usize,
    pub seq_len: usize,
}

fn check_tokens(cfg: &ModelConfig, batch: &[Vec<usize>]) -> Result<usize> {
    ensure!(!batch.is_empty(), Input, "empty batch");
    let n = batch[0].len();
    ensure!(n >= 1, Input, "empty token sequence");
    ensure!(n <= cfg.max_seq, Input, "sequence length {n} exceeds max_seq {}", cfg.max_seq);
    for seq in batch {
        ensure!(seq.len() == n, Input, "sequences in a batch must share one length");
        if let Some(&bad) = seq.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(crate::Error::Input(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
    }
    Ok(n)
}

fn affine_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = tape.layer_norm(x);
    let g = tape.mul_row(n, gain)?;
    tape.add_row(g, bias)
}

struct BlockOut {
    out: Var,
    attention: Vec<Vec<Var>>,
    queries: Vec<Vec<Var>>,
}

fn block(
    tape: &mut Tape,
    vars: &[Var],
    cfg: &ModelConfig,
    l: usize,
    x: Var,
    batch: usize,
    n: usize,
) -> Result<BlockOut> {
    let ix = block_idx(l);
    let dk = cfg.d_head;
    let h = affine_norm(tape, x, vars[ix.ln1_g], vars[ix.ln1_b])?;
    let q = tape.matmul(h, vars[ix.w_q])?;
    let q = tape.add_row(q, vars[ix.b_q])?;
    let k = tape.matmul(h, vars[ix.w_k])?;
    let v = tape.matmul(h, vars[ix.w_v])?;
    let v = tape.add_row(v, vars[ix.b_v])?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut attention = Vec::with_capacity(batch);
    let mut queries = Vec::with_capacity(batch);
    let mut seq_out = Vec::with_capacity(batch);
    for b in 0..batch {
        let (r0, r1) = (b * n, (b + 1) * n);
        let (qb, kb, vb) = if batch == 1 {
            (q, k, v)
        } else {
            (tape.slice_rows(q, r0, r1)?, tape.slice_rows(k, r0, r1)?, tape.slice_rows(v, r0, r1)?)
        };
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut attn_b = Vec::with_capacity(cfg.n_heads);
        let mut q_b = Vec::with_capacity(cfg.n_heads);
        for hd in 0..cfg.n_heads {
            let (c0, c1) = (hd * dk, (hd + 1) * dk);
            let qh = tape.slice_cols(qb, c0, c1)?;
            let kh = tape.slice_cols(kb, c0, c1)?;
            let vh = tape.slice_cols(vb, c0, c1)?;
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let a = tape.softmax_rows(s, true)?;
            heads.push(tape.matmul(a, vh)?);
            attn_b.push(a);
            q_b.push(qh);
        }
        seq_out.push(if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? });
        attention.push(attn_b);
        queries.push(q_b);
    }
    let att = if seq_out.len() == 1 { seq_out[0] } else { tape.concat_rows(&seq_out)? };
    let o = tape.matmul(att, vars[ix.w_o])?;
    let o = tape.add_row(o, vars[ix.b_o])?;
    let x1 = tape.add(x, o)?;
    let h2 = affine_norm(tape, x1, vars[ix.ln2_g], vars[ix.ln2_b])?;
    let f = tape.matmul(h2, vars[ix.w_in])?;
    let f = tape.add_row(f, vars[ix.b_in])?;
    let f = tape.gelu(f);
    let f = tape.matmul(f, vars[ix.w_out])?;
    let f = tape.add_row(f, vars[ix.b_out])?;
    let out = tape.add(x1, f)?;
    Ok(BlockOut {
        out,
        attention,
        queries,
    })
}

/// Records the full model on `tape`, with `vars` holding the parameters in layout order.
pub fn build_graph(
    tape: &mut Tape,
    vars: &[Var],
    cfg: &ModelConfig,
    batch: &[Vec<usize>],
    patch: Option<Patch<'_>>,
) -> Result<Graph> {
    let n = check_tokens(cfg, batch)?;
    ensure!(vars.len() == cfg.layout().len(), Shape, "parameter count mismatch");
    let b = batch.len();
    let ids: Vec<usize> = batch.iter().flatten().copied().collect();
    let pos: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
    let te = tape.gather(vars[TOK_EMB], &ids)?;
    let pe = tape.gather(vars[POS_EMB], &pos)?;
    let mut x = tape.add(te, pe)?;
    if let Some(p) = patch {
        ensure!(p.layer <= cfg.n_layers, Input, "patch layer {} beyond {}", p.layer, cfg.n_layers);
        if p.layer == 0 {
            x = tape.replace_rows(x, p.rows, p.donor)?;
        }
    }
    let mut hidden = vec![x];
    let mut attention = Vec::with_capacity(cfg.n_layers);
    let mut queries = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let out = block(tape, vars, cfg, l, x, b, n)?;
        x = out.out;
        if let Some(p) = patch {
            if p.layer == l + 1 {
                x = tape.replace_rows(x, p.rows, p.donor)?;
            }
        }
        hidden.push(x);
        attention.push(out.attention);
        queries.push(out.queries);
    }
    let (g, bi) = final_norm_idx(cfg);
    let h = affine_norm(tape, x, vars[g], vars[bi])?;
    let wt = tape.transpose(vars[TOK_EMB]);
    let logits = tape.matmul(h, wt)?;
    Ok(Graph {
        hidden,
        attention,
        queries,
        logits,
        batch: b,
        seq_len: n,
    })
}

/// Loads parameters onto a tape, as differentiable leaves or as constants.
pub fn load_params(tape: &mut Tape, params: &Params, differentiable: bool) -> Vec<Var> {
    params
        .tensors
        .iter()
        .map(|t| {
            if differentiable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect()
}

fn trace_from_graph(tape: &Tape, g: &Graph) -> ForwardTrace {
    ForwardTrace {
        hidden: g.hidden.iter().map(|v| tape.value(*v).clone()).collect(),
        attention: g
            .attention
            .iter()
            .map(|l| l[0].iter().map(|v| tape.value(*v).clone()).collect())
            .collect(),
        queries: g
            .queries
            .iter()
            .map(|l| l[0].iter().map(|v| tape.value(*v).clone()).collect())
            .collect(),
        logits: tape.value(g.logits).clone(),
    }
}

/// Runs the model on one token sequence.
pub fn forward(params: &Params, tokens: &[usize]) -> Result<ForwardTrace> {
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, false);
    let g = build_graph(&mut tape, &vars, &params.config, &[tokens.to_vec()], None)?;
    Ok(trace_from_graph(&tape, &g))
}

/// Like [`forward`], but rows `token_set` of `hidden[layer]` are replaced by
/// `donor_states` before any later block runs.
pub fn patch_forward(
    params: &Params,
    tokens: &[usize],
    layer: usize,
    token_set: &[usize],
    donor_states: &Tensor,
) -> Result<ForwardTrace> {
    ensure!(
        token_set.iter().all(|&i| i < tokens.len()),
        Input,
        "patched token index out of range for length {}",
        tokens.len()
    );
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, false);
    let patch = Patch {
        layer,
        rows: token_set,
        donor: donor_states,
    };
    let g = build_graph(&mut tape, &vars, &params.config, &[tokens.to_vec()], Some(patch))?;
    Ok(trace_from_graph(&tape, &g))
}

/// Output of block `layer` applied to a single-sequence state `z` (`N×d`).
pub fn block_forward(params: &Params, layer: usize, z: &Tensor) -> Result<Tensor> {
    let cfg = &params.config;
    ensure!(layer < cfg.n_layers, Input, "block {layer} of {}", cfg.n_layers);
    ensure!(z.cols() == cfg.d_model, Shape, "state width {} vs d_model {}", z.cols(), cfg.d_model);
    ensure!(z.rows() >= 1 && z.rows() <= cfg.max_seq, Shape, "state length {}", z.rows());
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, false);
    let x = tape.constant(z.clone());
    let out = block(&mut tape, &vars, cfg, layer, x, 1, z.rows())?;
    Ok(tape.value(out.out).clone())
}

/// The residual update `f_l(z)` with `block(z) = z + f_l(z)`.
pub fn layer_update(params: &Params, layer: usize, z: &Tensor) -> Result<Tensor> {
    block_forward(params, layer, z)?.sub(z)
}

/// Runs blocks `from..L` starting from state `z`, returning the final residual stream.
pub fn propagate(params: &Params, from: usize, z: &Tensor) -> Result<Tensor> {
    let mut x = z.clone();
    for l in from..params.config.n_layers {
        x = block_forward(params, l, &x)?;
    }
    Ok(x)
}

/// Logits produced from a final residual stream `z` (final norm, tied unembedding).
pub fn readout(params: &Params, z: &Tensor) -> Result<Tensor> {
    let cfg = &params.config;
    ensure!(z.cols() == cfg.d_model, Shape, "state width {} vs d_model {}", z.cols(), cfg.d_model);
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, false);
    let x = tape.constant(z.clone());
    let (g, b) = final_norm_idx(cfg);
    let h = affine_norm(&mut tape, x, vars[g], vars[b])?;
    let wt = tape.transpose(vars[TOK_EMB]);
    let logits = tape.matmul(h, wt)?;
    Ok(tape.value(logits).clone())
}

/// Mean cross-entropy of `targets` under the recorded logits.
pub fn loss_ce(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, targets)
}

/// [`loss_ce`] evaluated on a finished trace.
pub fn trace_loss_ce(trace: &ForwardTrace, targets: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.constant(trace.logits.clone());
    let v = tape.cross_entropy(l, targets)?;
    Ok(tape.scalar(v))
}
