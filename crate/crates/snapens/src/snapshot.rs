//! Frozen per-pair snapshot predictions and the `snapens-v1` text format.
//!
//! A materialized set is the only thing ensemble methods see: base models
//! can be dropped (or produced by external tools) once their predictions
//! for the needed pairs are frozen here.
//!
//! File layout: a header `snapens-v1,N_m,tag1,...,tagN`, optional `#`
//! metadata lines (`# key=value`), then one row `user,item,p_1,...,p_N` per
//! pair. Floats are written with 17 significant digits so loads reproduce
//! saves bit-exactly. Files written by other tools may omit the metadata
//! lines; defaults are then derived from the data.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cf::{Predict, Tagged};
use crate::error::SnapError;
use crate::parallel::{map_slice, map_slice_seq};

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMeta {
    pub index: usize,
    /// Capture epoch for SGD snapshots, neighbor count for KNN.
    pub tag: u32,
    pub source: String,
    /// Validation RMSE (rating task) or validation HR@N (ranking task).
    pub val_metric: Option<f64>,
}

/// Immutable map (user, item) -> clipped predictions of every snapshot.
/// Pairs are kept sorted, so equal inputs produce byte-equal saves.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub metas: Vec<SnapshotMeta>,
    pub rating_scale: (f64, f64),
    pairs: Vec<(u32, u32)>,
    values: Vec<f64>,
    index: HashMap<(u32, u32), usize>,
}

impl SnapshotSet {
    pub fn n_m(&self) -> usize {
        self.metas.len()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn tags(&self) -> Vec<u32> {
        self.metas.iter().map(|m| m.tag).collect()
    }

    pub fn get(&self, user: u32, item: u32) -> Option<&[f64]> {
        self.index
            .get(&(user, item))
            .map(|&row| &self.values[row * self.n_m()..(row + 1) * self.n_m()])
    }

    pub fn expect(&self, user: u32, item: u32) -> Result<&[f64], SnapError> {
        self.get(user, item)
            .ok_or(SnapError::MissingPair { user, item })
    }

    /// Attach validation metrics, one per snapshot, in meta order.
    pub fn set_val_metrics(&mut self, metrics: &[f64]) {
        assert_eq!(metrics.len(), self.metas.len());
        for (meta, &m) in self.metas.iter_mut().zip(metrics) {
            meta.val_metric = Some(m);
        }
    }

    fn from_rows(
        metas: Vec<SnapshotMeta>,
        rating_scale: (f64, f64),
        mut rows: Vec<((u32, u32), Vec<f64>)>,
    ) -> Result<SnapshotSet, SnapError> {
        rows.sort_by_key(|&(pair, _)| pair);
        let n_m = metas.len();
        let mut pairs = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * n_m);
        let mut index = HashMap::with_capacity(rows.len());
        for (pair, row) in rows {
            debug_assert_eq!(row.len(), n_m);
            if index.insert(pair, pairs.len()).is_some() {
                return Err(SnapError::StoreMismatch(format!(
                    "duplicate pair ({}, {})",
                    pair.0, pair.1
                )));
            }
            pairs.push(pair);
            values.extend_from_slice(&row);
        }
        Ok(SnapshotSet {
            metas,
            rating_scale,
            pairs,
            values,
            index,
        })
    }
}

fn check_and_sort<M>(
    snapshots: &[Tagged<M>],
    pairs: &[(u32, u32)],
    dims: (u32, u32),
) -> Result<(Vec<usize>, Vec<(u32, u32)>), SnapError> {
    if snapshots.is_empty() {
        return Err(SnapError::Config("no snapshots to materialize".into()));
    }
    let mut order: Vec<usize> = (0..snapshots.len()).collect();
    order.sort_by_key(|&s| snapshots[s].tag);
    if order.windows(2).any(|w| snapshots[w[0]].tag == snapshots[w[1]].tag) {
        return Err(SnapError::Config("duplicate snapshot tags".into()));
    }
    let mut sorted: Vec<(u32, u32)> = pairs.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &(u, i) in &sorted {
        if u >= dims.0 || i >= dims.1 {
            return Err(SnapError::OutOfRange(format!(
                "pair ({u}, {i}) outside {} users x {} items",
                dims.0, dims.1
            )));
        }
    }
    Ok((order, sorted))
}

fn pair_row<M: Predict>(
    snapshots: &[Tagged<M>],
    order: &[usize],
    scale: (f64, f64),
    pair: (u32, u32),
) -> Vec<f64> {
    order
        .iter()
        .map(|&s| {
            snapshots[s]
                .model
                .predict(pair.0, pair.1)
                .clamp(scale.0, scale.1)
        })
        .collect()
}

fn metas_for<M>(snapshots: &[Tagged<M>], order: &[usize], source: &str) -> Vec<SnapshotMeta> {
    order
        .iter()
        .enumerate()
        .map(|(index, &s)| SnapshotMeta {
            index,
            tag: snapshots[s].tag,
            source: source.to_string(),
            val_metric: None,
        })
        .collect()
}

/// Freeze every snapshot's clipped prediction for each pair (parallel over
/// pairs). `dims` bounds the valid id range; pairs are deduplicated, so the
/// result is independent of their order.
pub fn materialize<M: Predict + Sync>(
    snapshots: &[Tagged<M>],
    source: &str,
    pairs: &[(u32, u32)],
    scale: (f64, f64),
    dims: (u32, u32),
) -> Result<SnapshotSet, SnapError> {
    let (order, sorted) = check_and_sort(snapshots, pairs, dims)?;
    let rows: Vec<Vec<f64>> = map_slice(&sorted, |&pair| pair_row(snapshots, &order, scale, pair));
    finish(snapshots, &order, source, scale, sorted, rows)
}

/// Sequential twin of [`materialize`]; bit-identical output.
pub fn materialize_seq<M: Predict>(
    snapshots: &[Tagged<M>],
    source: &str,
    pairs: &[(u32, u32)],
    scale: (f64, f64),
    dims: (u32, u32),
) -> Result<SnapshotSet, SnapError> {
    let (order, sorted) = check_and_sort(snapshots, pairs, dims)?;
    let rows: Vec<Vec<f64>> =
        map_slice_seq(&sorted, |&pair| pair_row(snapshots, &order, scale, pair));
    finish(snapshots, &order, source, scale, sorted, rows)
}

fn finish<M>(
    snapshots: &[Tagged<M>],
    order: &[usize],
    source: &str,
    scale: (f64, f64),
    pairs: Vec<(u32, u32)>,
    rows: Vec<Vec<f64>>,
) -> Result<SnapshotSet, SnapError> {
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SnapError::NonFinite("snapshot prediction"));
    }
    SnapshotSet::from_rows(
        metas_for(snapshots, order, source),
        scale,
        pairs.into_iter().zip(rows).collect(),
    )
}

/// 17 significant digits: enough for exact f64 round-trips.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn save(set: &SnapshotSet, path: &Path) -> Result<(), SnapError> {
    let mut out = String::new();
    out.push_str("snapens-v1,");
    out.push_str(&set.n_m().to_string());
    for meta in &set.metas {
        out.push(',');
        out.push_str(&meta.tag.to_string());
    }
    out.push('\n');

    let sources: Vec<&str> = set.metas.iter().map(|m| m.source.as_str()).collect();
    out.push_str(&format!("# source={}\n", sources.join(",")));
    out.push_str(&format!(
        "# scale={},{}\n",
        fmt17(set.rating_scale.0),
        fmt17(set.rating_scale.1)
    ));
    if set.metas.iter().any(|m| m.val_metric.is_some()) {
        let vals: Vec<String> = set
            .metas
            .iter()
            .map(|m| m.val_metric.map(fmt17).unwrap_or_default())
            .collect();
        out.push_str(&format!("# val={}\n", vals.join(",")));
    }

    for (row, &(u, i)) in set.pairs.iter().enumerate() {
        out.push_str(&u.to_string());
        out.push(',');
        out.push_str(&i.to_string());
        let n_m = set.n_m();
        for v in &set.values[row * n_m..(row + 1) * n_m] {
            out.push(',');
            out.push_str(&fmt17(*v));
        }
        out.push('\n');
    }

    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| SnapError::io(path, e))
}

pub fn load(path: &Path) -> Result<SnapshotSet, SnapError> {
    let text = fs::read_to_string(path).map_err(|e| SnapError::io(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| SnapError::StoreMismatch("empty file".into()))?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields[0] != "snapens-v1" {
        return Err(SnapError::StoreMismatch(format!(
            "expected snapens-v1 header, got '{}'",
            fields[0]
        )));
    }
    let n_m: usize = fields
        .get(1)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| SnapError::StoreMismatch("bad snapshot count in header".into()))?;
    if fields.len() != 2 + n_m {
        return Err(SnapError::StoreMismatch(format!(
            "header lists {} tags, expected {n_m}",
            fields.len() - 2
        )));
    }
    let mut tags = Vec::with_capacity(n_m);
    for f in &fields[2..] {
        let tag: u32 = f
            .parse()
            .map_err(|_| SnapError::StoreMismatch(format!("bad tag '{f}'")))?;
        if let Some(&prev) = tags.last() {
            if tag <= prev {
                return Err(SnapError::StoreMismatch(
                    "tags must be strictly increasing".into(),
                ));
            }
        }
        tags.push(tag);
    }

    let mut sources: Vec<String> = vec!["unknown".to_string(); n_m];
    let mut scale: Option<(f64, f64)> = None;
    let mut val_metrics: Vec<Option<f64>> = vec![None; n_m];
    let mut rows: Vec<((u32, u32), Vec<f64>)> = Vec::new();

    for (lineidx, line) in lines {
        let lineno = lineidx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let Some((key, value)) = meta.trim().split_once('=') else {
                continue;
            };
            match key.trim() {
                "source" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() == n_m {
                        sources = parts.iter().map(|s| s.to_string()).collect();
                    }
                }
                "scale" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() == 2 {
                        let lo = parts[0].parse().map_err(|_| {
                            SnapError::parse(path, lineno, "bad scale value")
                        })?;
                        let hi = parts[1].parse().map_err(|_| {
                            SnapError::parse(path, lineno, "bad scale value")
                        })?;
                        scale = Some((lo, hi));
                    }
                }
                "val" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() == n_m {
                        for (slot, part) in val_metrics.iter_mut().zip(parts) {
                            *slot = if part.is_empty() {
                                None
                            } else {
                                Some(part.parse().map_err(|_| {
                                    SnapError::parse(path, lineno, "bad val metric")
                                })?)
                            };
                        }
                    }
                }
                _ => {}
            }
            continue;
        }

        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + n_m {
            return Err(SnapError::parse(
                path,
                lineno,
                format!("row has {} prediction columns, expected {n_m}", fields.len().saturating_sub(2)),
            ));
        }
        let user: u32 = fields[0]
            .parse()
            .map_err(|_| SnapError::parse(path, lineno, "bad user id"))?;
        let item: u32 = fields[1]
            .parse()
            .map_err(|_| SnapError::parse(path, lineno, "bad item id"))?;
        let mut preds = Vec::with_capacity(n_m);
        for f in &fields[2..] {
            let v: f64 = f
                .parse()
                .map_err(|_| SnapError::parse(path, lineno, format!("bad prediction '{f}'")))?;
            if !v.is_finite() {
                return Err(SnapError::parse(path, lineno, "non-finite prediction"));
            }
            preds.push(v);
        }
        rows.push(((user, item), preds));
    }

    let scale = scale.unwrap_or_else(|| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, row) in &rows {
            for &v in row {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo.is_finite() {
            (lo, hi)
        } else {
            (0.0, 1.0)
        }
    });

    let metas = tags
        .into_iter()
        .enumerate()
        .map(|(index, tag)| SnapshotMeta {
            index,
            tag,
            source: sources[index].clone(),
            val_metric: val_metrics[index],
        })
        .collect();
    SnapshotSet::from_rows(metas, scale, rows)
}
