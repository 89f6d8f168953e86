use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::SnapError;
use crate::mat::Mat;
use crate::rng::{stream_rng, Stream};

use super::config::{Dims, NeuSEConfig};

/// All trainable tensors. Gradients and Adam moments reuse this type, so
/// anything iterating [`NeuSEParams::groups`] stays in sync by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuSEParams {
    pub dims: Dims,
    pub user_embed: Mat,
    pub item_embed: Mat,
    /// Snapshot-model memory, internal (scoring) and external (output) rows.
    pub model_mem_m: Mat,
    pub model_mem_c: Mat,
    /// User memory rows, gathered by the ids of users who rated the item.
    pub user_mem_m: Mat,
    pub user_mem_c: Mat,
    /// Item memory rows, gathered by the ids of items the user rated.
    pub item_mem_m: Mat,
    pub item_mem_c: Mat,
    pub w_model: Vec<f64>,
    pub b_model: f64,
    pub w_user: Vec<f64>,
    pub b_user: f64,
    pub w_item: Vec<f64>,
    pub b_item: f64,
    /// Output projection, concat -> snapshot logits.
    pub out_w: Mat,
    pub out_b: Vec<f64>,
    /// Per intermediate hop: attention projection and state transfer.
    pub hop_attn_w: Vec<Mat>,
    pub hop_attn_b: Vec<Vec<f64>>,
    pub hop_trans_w: Vec<Mat>,
    pub hop_trans_b: Vec<Vec<f64>>,
}

impl NeuSEParams {
    pub fn zeros(dims: Dims) -> NeuSEParams {
        let dd = dims.dd();
        let concat = dims.concat();
        let inner = dims.hops - 1;
        NeuSEParams {
            dims,
            user_embed: Mat::zeros(dims.num_users, dims.d),
            item_embed: Mat::zeros(dims.num_items, dims.d),
            model_mem_m: Mat::zeros(dims.n_m, dd),
            model_mem_c: Mat::zeros(dims.n_m, dd),
            user_mem_m: Mat::zeros(dims.num_users, dd),
            user_mem_c: Mat::zeros(dims.num_users, dd),
            item_mem_m: Mat::zeros(dims.num_items, dd),
            item_mem_c: Mat::zeros(dims.num_items, dd),
            w_model: vec![0.0; dd],
            b_model: 0.0,
            w_user: vec![0.0; dd],
            b_user: 0.0,
            w_item: vec![0.0; dd],
            b_item: 0.0,
            out_w: Mat::zeros(concat, dims.n_m),
            out_b: vec![0.0; dims.n_m],
            hop_attn_w: (0..inner).map(|_| Mat::zeros(concat, dims.n_m)).collect(),
            hop_attn_b: vec![vec![0.0; dims.n_m]; inner],
            hop_trans_w: (0..inner).map(|_| Mat::zeros(dd, dd)).collect(),
            hop_trans_b: vec![vec![0.0; dd]; inner],
        }
    }

    pub fn zeros_like(&self) -> NeuSEParams {
        NeuSEParams::zeros(self.dims)
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    /// Named views over every tensor, in a fixed order shared with
    /// [`NeuSEParams::groups_mut`].
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("user_embed".into(), &self.user_embed.data),
            ("item_embed".into(), &self.item_embed.data),
            ("model_mem_m".into(), &self.model_mem_m.data),
            ("model_mem_c".into(), &self.model_mem_c.data),
            ("user_mem_m".into(), &self.user_mem_m.data),
            ("user_mem_c".into(), &self.user_mem_c.data),
            ("item_mem_m".into(), &self.item_mem_m.data),
            ("item_mem_c".into(), &self.item_mem_c.data),
            ("w_model".into(), &self.w_model),
            ("b_model".into(), std::slice::from_ref(&self.b_model)),
            ("w_user".into(), &self.w_user),
            ("b_user".into(), std::slice::from_ref(&self.b_user)),
            ("w_item".into(), &self.w_item),
            ("b_item".into(), std::slice::from_ref(&self.b_item)),
            ("out_w".into(), &self.out_w.data),
            ("out_b".into(), &self.out_b),
        ];
        for h in 0..self.hop_attn_w.len() {
            out.push((format!("hop_attn_w[{h}]"), &self.hop_attn_w[h].data));
            out.push((format!("hop_attn_b[{h}]"), &self.hop_attn_b[h]));
            out.push((format!("hop_trans_w[{h}]"), &self.hop_trans_w[h].data));
            out.push((format!("hop_trans_b[{h}]"), &self.hop_trans_b[h]));
        }
        out
    }

    /// Mutable twin of [`NeuSEParams::groups`], same names and order.
    pub fn groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("user_embed".into(), self.user_embed.data.as_mut_slice()),
            ("item_embed".into(), self.item_embed.data.as_mut_slice()),
            ("model_mem_m".into(), self.model_mem_m.data.as_mut_slice()),
            ("model_mem_c".into(), self.model_mem_c.data.as_mut_slice()),
            ("user_mem_m".into(), self.user_mem_m.data.as_mut_slice()),
            ("user_mem_c".into(), self.user_mem_c.data.as_mut_slice()),
            ("item_mem_m".into(), self.item_mem_m.data.as_mut_slice()),
            ("item_mem_c".into(), self.item_mem_c.data.as_mut_slice()),
            ("w_model".into(), self.w_model.as_mut_slice()),
            ("b_model".into(), std::slice::from_mut(&mut self.b_model)),
            ("w_user".into(), self.w_user.as_mut_slice()),
            ("b_user".into(), std::slice::from_mut(&mut self.b_user)),
            ("w_item".into(), self.w_item.as_mut_slice()),
            ("b_item".into(), std::slice::from_mut(&mut self.b_item)),
            ("out_w".into(), self.out_w.data.as_mut_slice()),
            ("out_b".into(), self.out_b.as_mut_slice()),
        ];
        let hops = self
            .hop_attn_w
            .iter_mut()
            .zip(self.hop_attn_b.iter_mut())
            .zip(self.hop_trans_w.iter_mut().zip(self.hop_trans_b.iter_mut()))
            .enumerate();
        for (h, ((aw, ab), (tw, tb))) in hops {
            out.push((format!("hop_attn_w[{h}]"), aw.data.as_mut_slice()));
            out.push((format!("hop_attn_b[{h}]"), ab.as_mut_slice()));
            out.push((format!("hop_trans_w[{h}]"), tw.data.as_mut_slice()));
            out.push((format!("hop_trans_b[{h}]"), tb.as_mut_slice()));
        }
        out
    }
}

/// Every tensor i.i.d. Gaussian(0, init_std), deterministic under the seed.
pub fn init_params(dims: Dims, config: &NeuSEConfig) -> NeuSEParams {
    let mut params = NeuSEParams::zeros(dims);
    if config.init_std == 0.0 {
        return params;
    }
    let normal = Normal::new(0.0, config.init_std).expect("init_std must be finite");
    let mut rng = stream_rng(config.seed, Stream::NetInit, 0);
    for (_, group) in params.groups_mut() {
        for v in group {
            *v = normal.sample(&mut rng);
        }
    }
    params
}

const PARAMS_MAGIC: &[u8; 8] = b"snpnet1\n";

/// Versioned little-endian binary blob: magic, five u64 dims, then each
/// group's length and raw f64 data in group order.
pub fn save_params(params: &NeuSEParams, path: &Path) -> Result<(), SnapError> {
    let mut buf: Vec<u8> = Vec::with_capacity(16 + params.num_params() * 8);
    buf.extend_from_slice(PARAMS_MAGIC);
    for dim in [
        params.dims.num_users,
        params.dims.num_items,
        params.dims.n_m,
        params.dims.d,
        params.dims.hops,
    ] {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for (_, group) in params.groups() {
        buf.extend_from_slice(&(group.len() as u64).to_le_bytes());
        for v in group {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| SnapError::io(path, e))
}

pub fn load_params(path: &Path) -> Result<NeuSEParams, SnapError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| SnapError::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], SnapError> {
        if pos + n > bytes.len() {
            return Err(SnapError::StoreMismatch("truncated parameter file".into()));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(8)? != PARAMS_MAGIC {
        return Err(SnapError::StoreMismatch("bad parameter file magic".into()));
    }
    let mut dim = || -> Result<usize, SnapError> {
        Ok(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize)
    };
    let dims = Dims {
        num_users: dim()?,
        num_items: dim()?,
        n_m: dim()?,
        d: dim()?,
        hops: dim()?,
    };
    let mut params = NeuSEParams::zeros(dims);
    for (name, group) in params.groups_mut() {
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if len != group.len() {
            return Err(SnapError::StoreMismatch(format!(
                "group {name} has {len} values, expected {}",
                group.len()
            )));
        }
        for v in group.iter_mut() {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
    }
    if pos != bytes.len() {
        return Err(SnapError::StoreMismatch(
            "trailing bytes in parameter file".into(),
        ));
    }
    Ok(params)
}
