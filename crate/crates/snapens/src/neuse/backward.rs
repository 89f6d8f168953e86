use crate::mat::{axpy, dot, Mat};

use super::config::{Dims, NeuSEConfig};
use super::forward::{concat_final, concat_hop, ForwardTrace, HopTrace};
use super::params::NeuSEParams;
use super::soft_label::kl_loss;

/// Gradient of one attended memory, stored by position in the trace's row
/// list so both hops accumulate into the same buffers.
#[derive(Debug, Clone)]
pub struct MemGrad {
    pub rows: Vec<u32>,
    pub g_m: Mat,
    pub g_c: Mat,
}

impl MemGrad {
    fn new(rows: Vec<u32>, width: usize) -> MemGrad {
        let n = rows.len();
        MemGrad { rows, g_m: Mat::zeros(n, width), g_c: Mat::zeros(n, width) }
    }
}

/// Complete gradient of the KL loss for one example. Embedding and
/// neighborhood-memory parts are sparse (touched rows only); everything
/// else is dense but small.
#[derive(Debug, Clone)]
pub struct PairGrad {
    pub user: u32,
    pub item: u32,
    pub g_user_embed: Vec<f64>,
    pub g_item_embed: Vec<f64>,
    pub g_model_m: Mat,
    pub g_model_c: Mat,
    pub g_user_mem: MemGrad,
    pub g_item_mem: MemGrad,
    pub g_w_model: Vec<f64>,
    pub g_b_model: f64,
    pub g_w_user: Vec<f64>,
    pub g_b_user: f64,
    pub g_w_item: Vec<f64>,
    pub g_b_item: f64,
    pub g_out_w: Mat,
    pub g_out_b: Vec<f64>,
    pub g_hop_attn_w: Vec<Mat>,
    pub g_hop_attn_b: Vec<Vec<f64>>,
    pub g_hop_trans_w: Vec<Mat>,
    pub g_hop_trans_b: Vec<Vec<f64>>,
    pub loss: f64,
}

impl PairGrad {
    fn zeros(trace: &ForwardTrace, dims: Dims) -> PairGrad {
        let dd = dims.dd();
        let concat = dims.concat();
        let inner = dims.hops - 1;
        PairGrad {
            user: trace.user,
            item: trace.item,
            g_user_embed: vec![0.0; dims.d],
            g_item_embed: vec![0.0; dims.d],
            g_model_m: Mat::zeros(dims.n_m, dd),
            g_model_c: Mat::zeros(dims.n_m, dd),
            g_user_mem: MemGrad::new(trace.ni_rows.clone(), dd),
            g_item_mem: MemGrad::new(trace.nu_rows.clone(), dd),
            g_w_model: vec![0.0; dd],
            g_b_model: 0.0,
            g_w_user: vec![0.0; dd],
            g_b_user: 0.0,
            g_w_item: vec![0.0; dd],
            g_b_item: 0.0,
            g_out_w: Mat::zeros(concat, dims.n_m),
            g_out_b: vec![0.0; dims.n_m],
            g_hop_attn_w: (0..inner).map(|_| Mat::zeros(concat, dims.n_m)).collect(),
            g_hop_attn_b: vec![vec![0.0; dims.n_m]; inner],
            g_hop_trans_w: (0..inner).map(|_| Mat::zeros(dd, dd)).collect(),
            g_hop_trans_b: vec![vec![0.0; dd]; inner],
            loss: 0.0,
        }
    }

    /// accum += scale * self, mapping sparse rows back to full tensors.
    /// Folding examples in a fixed order keeps training bit-reproducible.
    pub fn fold_into(&self, accum: &mut NeuSEParams, scale: f64) {
        axpy(accum.user_embed.row_mut(self.user as usize), &self.g_user_embed, scale);
        axpy(accum.item_embed.row_mut(self.item as usize), &self.g_item_embed, scale);
        axpy(&mut accum.model_mem_m.data, &self.g_model_m.data, scale);
        axpy(&mut accum.model_mem_c.data, &self.g_model_c.data, scale);
        for (pos, &r) in self.g_user_mem.rows.iter().enumerate() {
            axpy(accum.user_mem_m.row_mut(r as usize), self.g_user_mem.g_m.row(pos), scale);
            axpy(accum.user_mem_c.row_mut(r as usize), self.g_user_mem.g_c.row(pos), scale);
        }
        for (pos, &r) in self.g_item_mem.rows.iter().enumerate() {
            axpy(accum.item_mem_m.row_mut(r as usize), self.g_item_mem.g_m.row(pos), scale);
            axpy(accum.item_mem_c.row_mut(r as usize), self.g_item_mem.g_c.row(pos), scale);
        }
        axpy(&mut accum.w_model, &self.g_w_model, scale);
        accum.b_model += scale * self.g_b_model;
        axpy(&mut accum.w_user, &self.g_w_user, scale);
        accum.b_user += scale * self.g_b_user;
        axpy(&mut accum.w_item, &self.g_w_item, scale);
        accum.b_item += scale * self.g_b_item;
        axpy(&mut accum.out_w.data, &self.g_out_w.data, scale);
        axpy(&mut accum.out_b, &self.g_out_b, scale);
        for h in 0..self.g_hop_attn_w.len() {
            axpy(&mut accum.hop_attn_w[h].data, &self.g_hop_attn_w[h].data, scale);
            axpy(&mut accum.hop_attn_b[h], &self.g_hop_attn_b[h], scale);
            axpy(&mut accum.hop_trans_w[h].data, &self.g_hop_trans_w[h].data, scale);
            axpy(&mut accum.hop_trans_b[h], &self.g_hop_trans_b[h], scale);
        }
    }
}

/// Gradient slices of one hop's concat vector.
struct HopSplit {
    q_m: Vec<f64>,
    q_u: Vec<f64>,
    q_i: Vec<f64>,
    b_m: f64,
    b_u: f64,
    b_i: f64,
}

impl HopSplit {
    /// Output-layer order: [q_p, q_m, q_u, q_i, b_m, b_u, b_i].
    fn from_final(g: &[f64], n_m: usize, dd: usize) -> HopSplit {
        let qm = n_m;
        HopSplit {
            q_m: g[qm..qm + dd].to_vec(),
            q_u: g[qm + dd..qm + 2 * dd].to_vec(),
            q_i: g[qm + 2 * dd..qm + 3 * dd].to_vec(),
            b_m: g[qm + 3 * dd],
            b_u: g[qm + 3 * dd + 1],
            b_i: g[qm + 3 * dd + 2],
        }
    }

    /// Hop-attention order: [q_m, q_u, q_i, q_p, b_m, b_u, b_i].
    fn from_hop(g: &[f64], n_m: usize, dd: usize) -> HopSplit {
        HopSplit {
            q_m: g[..dd].to_vec(),
            q_u: g[dd..2 * dd].to_vec(),
            q_i: g[2 * dd..3 * dd].to_vec(),
            b_m: g[3 * dd + n_m],
            b_u: g[3 * dd + n_m + 1],
            b_i: g[3 * dd + n_m + 2],
        }
    }
}

/// Reverse of `memory_attend`: q = sum_k softmax(m_k . query)_k * c_k.
/// Accumulates into position-indexed g_m/g_c and into the query gradient.
#[allow(clippy::too_many_arguments)]
fn attend_backward(
    internal: &Mat,
    external: &Mat,
    rows: &[u32],
    weights: &[f64],
    query: &[f64],
    g_q: &[f64],
    g_m: &mut Mat,
    g_c: &mut Mat,
    g_query: &mut [f64],
) {
    if rows.is_empty() {
        return;
    }
    debug_assert_eq!(rows.len(), weights.len());
    let mut g_w = vec![0.0; rows.len()];
    for (pos, &r) in rows.iter().enumerate() {
        g_w[pos] = dot(external.row(r as usize), g_q);
        axpy(g_c.row_mut(pos), g_q, weights[pos]);
    }
    // Softmax jacobian: g_score_k = w_k (g_w_k - sum_j w_j g_w_j).
    let mixed: f64 = weights.iter().zip(&g_w).map(|(w, g)| w * g).sum();
    for (pos, &r) in rows.iter().enumerate() {
        let g_score = weights[pos] * (g_w[pos] - mixed);
        axpy(g_m.row_mut(pos), query, g_score);
        axpy(g_query, internal.row(r as usize), g_score);
    }
}

/// Backward through one hop's three memories and bias projections. Bias
/// gradients are dropped for empty neighborhoods, matching the forward
/// pass's hard zero there.
#[allow(clippy::too_many_arguments)]
fn hop_backward(
    grads: &mut PairGrad,
    params: &NeuSEParams,
    hop: &HopTrace,
    model_rows: &[u32],
    ni_rows: &[u32],
    nu_rows: &[u32],
    query: &[f64],
    split: HopSplit,
    g_query: &mut [f64],
) {
    let mut g_qm = split.q_m;
    axpy(&mut grads.g_w_model, &hop.q_m, split.b_m);
    grads.g_b_model += split.b_m;
    axpy(&mut g_qm, &params.w_model, split.b_m);

    let mut g_qu = split.q_u;
    if !ni_rows.is_empty() {
        axpy(&mut grads.g_w_user, &hop.q_u, split.b_u);
        grads.g_b_user += split.b_u;
        axpy(&mut g_qu, &params.w_user, split.b_u);
    }
    let mut g_qi = split.q_i;
    if !nu_rows.is_empty() {
        axpy(&mut grads.g_w_item, &hop.q_i, split.b_i);
        grads.g_b_item += split.b_i;
        axpy(&mut g_qi, &params.w_item, split.b_i);
    }

    attend_backward(
        &params.model_mem_m,
        &params.model_mem_c,
        model_rows,
        &hop.w_model,
        query,
        &g_qm,
        &mut grads.g_model_m,
        &mut grads.g_model_c,
        g_query,
    );
    attend_backward(
        &params.user_mem_m,
        &params.user_mem_c,
        ni_rows,
        &hop.w_user,
        query,
        &g_qu,
        &mut grads.g_user_mem.g_m,
        &mut grads.g_user_mem.g_c,
        g_query,
    );
    attend_backward(
        &params.item_mem_m,
        &params.item_mem_c,
        nu_rows,
        &hop.w_item,
        query,
        &g_qi,
        &mut grads.g_item_mem.g_m,
        &mut grads.g_item_mem.g_c,
        g_query,
    );
}

/// Gradient of KL(y || y_hat) with respect to every parameter touched by
/// the trace. The softmax and KL fuse into logits gradient y_hat - y.
pub fn backward(
    trace: &ForwardTrace,
    y: &[f64],
    params: &NeuSEParams,
    config: &NeuSEConfig,
) -> PairGrad {
    let dims = params.dims;
    let (n_m, dd, hops) = (dims.n_m, dims.dd(), dims.hops);
    assert_eq!(y.len(), n_m);
    let mut grads = PairGrad::zeros(trace, dims);
    grads.loss = kl_loss(y, &trace.y_hat);
    let model_rows: Vec<u32> = (0..n_m as u32).collect();

    // Output layer.
    let g_logits: Vec<f64> = trace.y_hat.iter().zip(y).map(|(p, t)| p - t).collect();
    axpy(&mut grads.g_out_b, &g_logits, 1.0);
    let last = &trace.hops[hops - 1];
    let concat = concat_final(last, &trace.q_p);
    grads.g_out_w.add_outer(&concat, &g_logits, 1.0);
    let g_concat = params.out_w.matvec(&g_logits);

    // Hop states, accumulated newest to oldest. The q_p slice of either
    // concat is input data, so its gradient is discarded.
    let mut g_zs: Vec<Vec<f64>> = vec![vec![0.0; dd]; hops];
    {
        let split = HopSplit::from_final(&g_concat, n_m, dd);
        let (query, g_query) = (&trace.zs[hops - 1], &mut g_zs[hops - 1]);
        hop_backward(
            &mut grads,
            params,
            last,
            &model_rows,
            &trace.ni_rows,
            &trace.nu_rows,
            query,
            split,
            g_query,
        );
    }

    for hidx in (0..hops - 1).rev() {
        // z^{h+1} = phi(a) * mask, a = W z^h + o + b.
        let g_phi: Vec<f64> = g_zs[hidx + 1]
            .iter()
            .zip(&trace.masks[hidx + 1])
            .map(|(g, m)| g * m)
            .collect();
        let g_a: Vec<f64> = g_phi
            .iter()
            .zip(&trace.pre[hidx])
            .map(|(g, a)| g * config.activation.grad(*a))
            .collect();
        axpy(&mut grads.g_hop_trans_b[hidx], &g_a, 1.0);
        grads.g_hop_trans_w[hidx].add_outer(&g_a, &trace.zs[hidx], 1.0);
        let g_z_prev = params.hop_trans_w[hidx].matvec_t(&g_a);
        axpy(&mut g_zs[hidx], &g_z_prev, 1.0);

        // o = sum_s p_s * external_s, p = softmax(W_h^T concat + b_h).
        let p_h = &trace.hop_attn[hidx];
        let mut g_p = vec![0.0; n_m];
        for s in 0..n_m {
            axpy(grads.g_model_c.row_mut(s), &g_a, p_h[s]);
            g_p[s] = dot(params.model_mem_c.row(s), &g_a);
        }
        let mixed: f64 = p_h.iter().zip(&g_p).map(|(p, g)| p * g).sum();
        let g_l: Vec<f64> = p_h.iter().zip(&g_p).map(|(p, g)| p * (g - mixed)).collect();
        axpy(&mut grads.g_hop_attn_b[hidx], &g_l, 1.0);
        let hop = &trace.hops[hidx];
        let concat_h = concat_hop(hop, &trace.q_p);
        grads.g_hop_attn_w[hidx].add_outer(&concat_h, &g_l, 1.0);
        let g_concat_h = params.hop_attn_w[hidx].matvec(&g_l);

        let split = HopSplit::from_hop(&g_concat_h, n_m, dd);
        let (query, g_query) = (&trace.zs[hidx], &mut g_zs[hidx]);
        hop_backward(
            &mut grads,
            params,
            hop,
            &model_rows,
            &trace.ni_rows,
            &trace.nu_rows,
            query,
            split,
            g_query,
        );
    }

    // Through the input dropout into the pair embedding halves.
    let g_e: Vec<f64> = g_zs[0].iter().zip(&trace.masks[0]).map(|(g, m)| g * m).collect();
    grads.g_user_embed.copy_from_slice(&g_e[..dims.d]);
    grads.g_item_embed.copy_from_slice(&g_e[dims.d..]);
    grads
}
