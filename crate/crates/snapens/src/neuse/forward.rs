use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::NeighborIndex;
use crate::error::SnapError;
use crate::mat::{axpy, dot, softmax, Mat};

use super::config::NeuSEConfig;
use super::params::NeuSEParams;

/// Train mode draws dropout masks from the supplied stream; infer mode is
/// deterministic and mask-free.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut ChaCha8Rng),
}

/// Memory outputs of one hop. Attention vectors over empty neighborhoods
/// are empty; their q is zero and their bias is hard zero (the projection
/// is bypassed, not fed a zero vector).
#[derive(Debug, Clone)]
pub struct HopTrace {
    pub w_model: Vec<f64>,
    pub w_user: Vec<f64>,
    pub w_item: Vec<f64>,
    pub q_m: Vec<f64>,
    pub q_u: Vec<f64>,
    pub q_i: Vec<f64>,
    pub b_m: f64,
    pub b_u: f64,
    pub b_i: f64,
}

/// Everything the backward pass needs to replay one example.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub user: u32,
    pub item: u32,
    pub q_p: Vec<f64>,
    /// Items the user rated (target item excluded).
    pub nu_rows: Vec<u32>,
    /// Users who rated the item (target user excluded).
    pub ni_rows: Vec<u32>,
    /// Raw pair embedding before dropout.
    pub e_ui: Vec<f64>,
    /// Hop queries: zs[0] is the (possibly dropped) pair embedding, zs[h]
    /// the state after intermediate hop h. Length = hops.
    pub zs: Vec<Vec<f64>>,
    /// Dropout masks aligned with zs (all-ones in infer mode).
    pub masks: Vec<Vec<f64>>,
    /// Preactivations of the intermediate hop transfers. Length = hops - 1.
    pub pre: Vec<Vec<f64>>,
    /// Hop attention simplexes over snapshots. Length = hops - 1.
    pub hop_attn: Vec<Vec<f64>>,
    /// Memory outputs per hop; the last entry feeds the output layer.
    pub hops: Vec<HopTrace>,
    /// Final simplex over snapshots.
    pub y_hat: Vec<f64>,
}

/// Concatenated user and item embeddings, e_ui = [e_u ; e_i].
pub fn embed_pair(user: u32, item: u32, params: &NeuSEParams) -> Vec<f64> {
    let mut e = Vec::with_capacity(params.dims.dd());
    e.extend_from_slice(params.user_embed.row(user as usize));
    e.extend_from_slice(params.item_embed.row(item as usize));
    e
}

/// Attention over the given memory rows: scores are internal-row dot query,
/// weights their softmax, output the weighted sum of external rows. Empty
/// row sets yield (empty weights, zero output).
pub fn memory_attend(
    internal: &Mat,
    external: &Mat,
    rows: &[u32],
    query: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    if rows.is_empty() {
        return (Vec::new(), vec![0.0; external.cols]);
    }
    let scores: Vec<f64> = rows
        .iter()
        .map(|&r| dot(internal.row(r as usize), query))
        .collect();
    let weights = softmax(&scores);
    let mut q = vec![0.0; external.cols];
    for (&r, &w) in rows.iter().zip(&weights) {
        axpy(&mut q, external.row(r as usize), w);
    }
    (weights, q)
}

/// Scalar bias from a memory output.
pub fn bias_project(q: &[f64], w: &[f64], b: f64) -> f64 {
    dot(w, q) + b
}

/// Order of the output-layer input: snapshot predictions first.
pub(super) fn concat_final(trace_hop: &HopTrace, q_p: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(q_p.len() + 3 * trace_hop.q_m.len() + 3);
    c.extend_from_slice(q_p);
    c.extend_from_slice(&trace_hop.q_m);
    c.extend_from_slice(&trace_hop.q_u);
    c.extend_from_slice(&trace_hop.q_i);
    c.push(trace_hop.b_m);
    c.push(trace_hop.b_u);
    c.push(trace_hop.b_i);
    c
}

/// Order of the hop-attention input: memory outputs first.
pub(super) fn concat_hop(trace_hop: &HopTrace, q_p: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(q_p.len() + 3 * trace_hop.q_m.len() + 3);
    c.extend_from_slice(&trace_hop.q_m);
    c.extend_from_slice(&trace_hop.q_u);
    c.extend_from_slice(&trace_hop.q_i);
    c.extend_from_slice(q_p);
    c.push(trace_hop.b_m);
    c.push(trace_hop.b_u);
    c.push(trace_hop.b_i);
    c
}

fn dropout_mask(len: usize, rate: f64, mode: &mut Mode) -> Vec<f64> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            // Inverted scaling: kept units are amplified so inference needs
            // no rescaling.
            let keep = 1.0 - rate;
            (0..len)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
                .collect()
        }
        _ => vec![1.0; len],
    }
}

fn memory_hop(
    params: &NeuSEParams,
    model_rows: &[u32],
    ni_rows: &[u32],
    nu_rows: &[u32],
    query: &[f64],
) -> HopTrace {
    let (w_model, q_m) = memory_attend(&params.model_mem_m, &params.model_mem_c, model_rows, query);
    let (w_user, q_u) = memory_attend(&params.user_mem_m, &params.user_mem_c, ni_rows, query);
    let (w_item, q_i) = memory_attend(&params.item_mem_m, &params.item_mem_c, nu_rows, query);
    let b_m = bias_project(&q_m, &params.w_model, params.b_model);
    let b_u = if ni_rows.is_empty() {
        0.0
    } else {
        bias_project(&q_u, &params.w_user, params.b_user)
    };
    let b_i = if nu_rows.is_empty() {
        0.0
    } else {
        bias_project(&q_i, &params.w_item, params.b_item)
    };
    HopTrace { w_model, w_user, w_item, q_m, q_u, q_i, b_m, b_u, b_i }
}

/// One full forward pass for (user, item) with snapshot predictions `q_p`.
/// The target item is excluded from the user's neighborhood and vice versa.
pub fn forward(
    user: u32,
    item: u32,
    q_p: &[f64],
    neighbors: &NeighborIndex,
    params: &NeuSEParams,
    config: &NeuSEConfig,
    mut mode: Mode,
) -> Result<ForwardTrace, SnapError> {
    let dims = params.dims;
    if user as usize >= dims.num_users || item as usize >= dims.num_items {
        return Err(SnapError::OutOfRange(format!(
            "pair ({user}, {item}) outside {} users x {} items",
            dims.num_users, dims.num_items
        )));
    }
    assert_eq!(q_p.len(), dims.n_m, "snapshot vector width mismatch");

    let nu_rows: Vec<u32> = neighbors.by_user[user as usize]
        .iter()
        .copied()
        .filter(|&j| j != item)
        .collect();
    let ni_rows: Vec<u32> = neighbors.by_item[item as usize]
        .iter()
        .copied()
        .filter(|&v| v != user)
        .collect();
    let model_rows: Vec<u32> = (0..dims.n_m as u32).collect();

    let e_ui = embed_pair(user, item, params);
    let mask0 = dropout_mask(e_ui.len(), config.dropout_rate, &mut mode);
    let z0: Vec<f64> = e_ui.iter().zip(&mask0).map(|(e, m)| e * m).collect();

    let mut zs = vec![z0];
    let mut masks = vec![mask0];
    let mut pre = Vec::with_capacity(dims.hops - 1);
    let mut hop_attn = Vec::with_capacity(dims.hops - 1);
    let mut hops = Vec::with_capacity(dims.hops);

    for hidx in 0..dims.hops {
        let hop = memory_hop(params, &model_rows, &ni_rows, &nu_rows, &zs[hidx]);
        if hidx + 1 < dims.hops {
            let concat = concat_hop(&hop, q_p);
            let mut logits = params.hop_attn_w[hidx].matvec_t(&concat);
            axpy(&mut logits, &params.hop_attn_b[hidx], 1.0);
            let p_h = softmax(&logits);
            // o^h: hop-attended combination of the external snapshot rows.
            let mut o_h = vec![0.0; dims.dd()];
            for (s, &w) in p_h.iter().enumerate() {
                axpy(&mut o_h, params.model_mem_c.row(s), w);
            }
            let mut a_h = params.hop_trans_w[hidx].matvec(&zs[hidx]);
            axpy(&mut a_h, &o_h, 1.0);
            axpy(&mut a_h, &params.hop_trans_b[hidx], 1.0);
            if a_h.iter().any(|v| !v.is_finite()) {
                return Err(SnapError::NonFinite("hop transfer preactivation"));
            }
            let mask = dropout_mask(dims.dd(), config.dropout_rate, &mut mode);
            let z: Vec<f64> = a_h
                .iter()
                .zip(&mask)
                .map(|(a, m)| config.activation.apply(*a) * m)
                .collect();
            pre.push(a_h);
            hop_attn.push(p_h);
            zs.push(z);
            masks.push(mask);
            hops.push(hop);
        } else {
            let concat = concat_final(&hop, q_p);
            let mut logits = params.out_w.matvec_t(&concat);
            axpy(&mut logits, &params.out_b, 1.0);
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(SnapError::NonFinite("output logits"));
            }
            let y_hat = softmax(&logits);
            hops.push(hop);
            return Ok(ForwardTrace {
                user,
                item,
                q_p: q_p.to_vec(),
                nu_rows,
                ni_rows,
                e_ui,
                zs,
                masks,
                pre,
                hop_attn,
                hops,
                y_hat,
            });
        }
    }
    unreachable!("hops >= 1 always reaches the output layer");
}
