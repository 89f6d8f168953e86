//! End-to-end experiment runner: declarative config in, metric reports out.
//!
//! One root seed fans out through named streams to every random choice in
//! the pipeline (synthetic data, base training, negative sampling, network
//! init, dropout), so a (config, seed) pair pins the run down to the byte.
//! The seed fields inside the `[neuse]`, `[hse]`, and base sections are
//! overwritten with the root seed for the same reason. Report records carry
//! no wall-clock content; timings live on the in-memory reports only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cf::{
    knn_snapshots, train_fm_sgd, train_rsvd, KnnKind, SgdConfig, SnapshotSchedule, Tagged,
};
use crate::dataset::{
    build_neighbor_index, chronological_leave_one_out, load_ratings, negatives_for,
    sample_negatives, Format, NeighborIndex, RatingDataset, SplitDataset, Task,
};
use crate::ensemble::{
    average_combine, hse_train, se_combine, single_select, HseConfig, TrainedHse,
};
use crate::error::SnapError;
use crate::metrics::{hr_at_n, mean, ndcg_at_n, rank_in, rmse};
use crate::neuse::{
    predict_pairs, ranking_negatives, train_neuse, NeuSEConfig, TrainedNeuSE, VAL_NEGATIVES,
};
use crate::parallel::map_range;
use crate::rng::{sub_seed, Stream};
use crate::snapshot::{materialize, SnapshotSet};
use crate::synth::{generate, SynthConfig};

/// Unseen items ranked against each test positive.
pub const EVAL_NEGATIVES: usize = 99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Single,
    Average,
    Se,
    Hse,
    Neuse,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Single => "single",
            Method::Average => "average",
            Method::Se => "se",
            Method::Hse => "hse",
            Method::Neuse => "neuse",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = SnapError;

    fn from_str(s: &str) -> Result<Self, SnapError> {
        match s {
            "single" => Ok(Method::Single),
            "average" => Ok(Method::Average),
            "se" => Ok(Method::Se),
            "hse" => Ok(Method::Hse),
            "neuse" => Ok(Method::Neuse),
            other => Err(SnapError::Config(format!(
                "unknown method {other:?}, expected single, average, se, hse, or neuse"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseAlgo {
    Rsvd,
    Itemknn,
    Fm,
}

impl BaseAlgo {
    pub fn name(self) -> &'static str {
        match self {
            BaseAlgo::Rsvd => "rsvd",
            BaseAlgo::Itemknn => "itemknn",
            BaseAlgo::Fm => "fm",
        }
    }
}

impl std::str::FromStr for BaseAlgo {
    type Err = SnapError;

    fn from_str(s: &str) -> Result<Self, SnapError> {
        match s {
            "rsvd" => Ok(BaseAlgo::Rsvd),
            "itemknn" => Ok(BaseAlgo::Itemknn),
            "fm" => Ok(BaseAlgo::Fm),
            other => Err(SnapError::Config(format!(
                "unknown base algorithm {other:?}, expected rsvd, itemknn, or fm"
            ))),
        }
    }
}

/// Where ratings come from: a file on disk, or the built-in generator when
/// no path is given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub format: Format,
    /// Generator shape, ignored when `path` is set.
    pub num_users: u32,
    pub num_items: u32,
    pub interactions: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            format: Format::MovielensTab,
            num_users: 943,
            num_items: 1682,
            interactions: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseConfig {
    pub algo: BaseAlgo,
    pub factors: usize,
    pub lr: f64,
    pub reg: f64,
    /// SGD epochs; must be a multiple of `delta_t` (and of `cycles` when
    /// the se method is requested).
    pub epochs: u32,
    pub delta_t: u32,
    /// Neighbor counts, one KNN snapshot each.
    pub k_list: Vec<u32>,
    /// Restart count for the cyclic-schedule lane behind the se method.
    pub cycles: u32,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig {
            algo: BaseAlgo::Rsvd,
            factors: 8,
            lr: 0.005,
            reg: 0.02,
            epochs: 90,
            delta_t: 10,
            k_list: (1..=10).map(|k| k * 10).collect(),
            cycles: 9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub methods: Vec<Method>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { methods: vec![Method::Single, Method::Average, Method::Neuse] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub task: Task,
    /// The N in HR@N and NDCG@N.
    pub cutoff: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { task: Task::Rating, cutoff: 20 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output location; not part of the experiment identity.
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub base: BaseConfig,
    pub ensemble: EnsembleConfig,
    pub neuse: NeuSEConfig,
    pub hse: HseConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            base: BaseConfig::default(),
            ensemble: EnsembleConfig::default(),
            neuse: NeuSEConfig::default(),
            hse: HseConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, SnapError> {
        let mut config: RunConfig = toml::from_str(text)
            .map_err(|e| SnapError::Config(format!("config parse: {e}")))?;
        // All sub-seeds slave to the root so one knob reproduces the run.
        config.neuse.seed = config.seed;
        config.hse.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, SnapError> {
        let text = fs::read_to_string(path).map_err(|e| SnapError::io(path, e))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), SnapError> {
        if self.ensemble.methods.is_empty() {
            return Err(SnapError::Config("ensemble.methods must be non-empty".into()));
        }
        for (k, m) in self.ensemble.methods.iter().enumerate() {
            if self.ensemble.methods[..k].contains(m) {
                return Err(SnapError::Config(format!(
                    "method {} requested twice",
                    m.name()
                )));
            }
        }
        let wants_se = self.ensemble.methods.contains(&Method::Se);
        match self.base.algo {
            BaseAlgo::Rsvd | BaseAlgo::Fm => {
                self.main_schedule().validate()?;
                if wants_se {
                    self.cyclic_schedule().validate()?;
                }
            }
            BaseAlgo::Itemknn => {
                self.main_schedule().validate()?;
                if wants_se {
                    return Err(SnapError::Config(
                        "the se method averages snapshots from cyclic-rate restarts, \
                         which needs an SGD-trained base model; itemknn is not one"
                            .into(),
                    ));
                }
            }
        }
        if self.base.factors == 0 {
            return Err(SnapError::Config("base.factors must be >= 1".into()));
        }
        if !(self.base.lr.is_finite() && self.base.lr > 0.0) {
            return Err(SnapError::Config("base.lr must be positive".into()));
        }
        if !(self.base.reg.is_finite() && self.base.reg >= 0.0) {
            return Err(SnapError::Config("base.reg must be >= 0".into()));
        }
        if self.data.path.is_none()
            && (self.data.num_users == 0
                || self.data.num_items == 0
                || self.data.interactions == 0)
        {
            return Err(SnapError::Config("synthetic data shape must be positive".into()));
        }
        if self.eval.cutoff < 1 || self.eval.cutoff > 1 + EVAL_NEGATIVES {
            return Err(SnapError::Config(format!(
                "eval.cutoff must be in 1..={}",
                1 + EVAL_NEGATIVES
            )));
        }
        self.neuse.validate()?;
        self.hse.validate()?;
        Ok(())
    }

    /// Snapshot schedule of the main base-training lane.
    pub fn main_schedule(&self) -> SnapshotSchedule {
        match self.base.algo {
            BaseAlgo::Rsvd | BaseAlgo::Fm => SnapshotSchedule::EveryDeltaT {
                delta_t: self.base.delta_t,
                max_epoch: self.base.epochs,
            },
            BaseAlgo::Itemknn => {
                SnapshotSchedule::KnnKList { k_list: self.base.k_list.clone() }
            }
        }
    }

    /// Schedule of the extra lane behind the se method.
    pub fn cyclic_schedule(&self) -> SnapshotSchedule {
        SnapshotSchedule::CyclicLr { cycles: self.base.cycles, max_epoch: self.base.epochs }
    }

    /// Canonical rendering of everything that defines the experiment.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// FNV-1a over the canonical rendering.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in self.canonical().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// One method's test-set outcome. `seconds` covers that method's training
/// plus scoring and is the one field excluded from rendered records.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub method: Method,
    pub task: Task,
    pub rmse: Option<f64>,
    pub hr_at_n: Option<f64>,
    pub ndcg_at_n: Option<f64>,
    pub cutoff: usize,
    pub fingerprint: u64,
    pub seconds: f64,
}

/// Machine-readable records, one `method,task,metric,value` line each.
pub fn render_records(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let task = r.task.name();
        if let Some(v) = r.rmse {
            let _ = writeln!(out, "{},{},rmse,{:.6}", r.method.name(), task, v);
        }
        if let Some(v) = r.hr_at_n {
            let _ = writeln!(out, "{},{},hr@{},{:.6}", r.method.name(), task, r.cutoff, v);
        }
        if let Some(v) = r.ndcg_at_n {
            let _ = writeln!(out, "{},{},ndcg@{},{:.6}", r.method.name(), task, r.cutoff, v);
        }
    }
    out
}

/// Human-readable table with provenance and timings.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    if let Some(first) = reports.first() {
        let _ = writeln!(out, "config fingerprint {:016x}", first.fingerprint);
    }
    let _ = writeln!(out, "{:<10} {:<8} {:<10} {:>12} {:>10}", "method", "task", "metric", "value", "seconds");
    for r in reports {
        let mut metrics: Vec<(String, f64)> = Vec::new();
        if let Some(v) = r.rmse {
            metrics.push(("rmse".into(), v));
        }
        if let Some(v) = r.hr_at_n {
            metrics.push((format!("hr@{}", r.cutoff), v));
        }
        if let Some(v) = r.ndcg_at_n {
            metrics.push((format!("ndcg@{}", r.cutoff), v));
        }
        for (k, (name, value)) in metrics.iter().enumerate() {
            let secs = if k == 0 { format!("{:.1}", r.seconds) } else { String::new() };
            let _ = writeln!(
                out,
                "{:<10} {:<8} {:<10} {:>12.6} {:>10}",
                r.method.name(),
                r.task.name(),
                name,
                value,
                secs
            );
        }
    }
    out
}

pub fn write_records(reports: &[EvalReport], path: &Path) -> Result<(), SnapError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SnapError::io(parent, e))?;
    }
    fs::write(path, render_records(reports)).map_err(|e| SnapError::io(path, e))
}

/// Data stage output: the loaded (or generated) ratings, their split, and
/// the capped neighborhood index used by the attention network.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: RatingDataset,
    pub split: SplitDataset,
    pub neighbors: NeighborIndex,
}

/// Train-set neighborhoods are capped at this many most-recent entries.
pub const NEIGHBOR_CAP: usize = 50;

pub fn load_dataset(config: &RunConfig) -> Result<RatingDataset, SnapError> {
    match &config.data.path {
        Some(path) => load_ratings(path, config.data.format),
        None => Ok(generate(&SynthConfig {
            num_users: config.data.num_users,
            num_items: config.data.num_items,
            interactions: config.data.interactions,
            seed: config.seed,
        })),
    }
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, SnapError> {
    let data = load_dataset(config)?;
    let split = chronological_leave_one_out(&data);
    let neighbors = build_neighbor_index(&split.train, NEIGHBOR_CAP);
    Ok(Prepared { data, split, neighbors })
}

/// Every user-item pair any downstream consumer will ask the snapshot set
/// for: train examples (plus their fixed ranking negatives), validation and
/// test examples (plus their 99 sampled negatives on ranking tasks). The
/// negative streams here must match the ones the trainers derive from the
/// same root seed, which is why the seed is taken from `config` and not a
/// parameter.
pub fn experiment_pairs(
    config: &RunConfig,
    split: &SplitDataset,
) -> Result<Vec<(u32, u32)>, SnapError> {
    let task = config.eval.task;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for it in &split.train.interactions {
        pairs.push((it.user, it.item));
    }
    if task == Task::Ranking {
        let negs = ranking_negatives(split, config.seed)?;
        for (it, negs) in split.train.interactions.iter().zip(&negs) {
            for &n in negs {
                pairs.push((it.user, n));
            }
        }
    }
    for it in &split.validation.interactions {
        pairs.push((it.user, it.item));
    }
    if task == Task::Ranking {
        let negs = negatives_for(
            &split.validation,
            split,
            VAL_NEGATIVES,
            sub_seed(config.seed, Stream::ValNegatives, 0),
        )?;
        for (user, list) in &negs.per_example {
            for &n in list {
                pairs.push((*user, n));
            }
        }
    }
    for it in &split.test.interactions {
        pairs.push((it.user, it.item));
    }
    if task == Task::Ranking {
        let negs = sample_negatives(
            split,
            EVAL_NEGATIVES,
            sub_seed(config.seed, Stream::EvalNegatives, 0),
        )?;
        for (user, list) in &negs.per_example {
            for &n in list {
                pairs.push((*user, n));
            }
        }
    }
    Ok(pairs)
}

fn materialize_scale(task: Task, train: &RatingDataset) -> (f64, f64) {
    match task {
        // Out-of-range regression outputs are clipped once, here, so every
        // combiner sees the same bounded inputs.
        Task::Rating => train.rating_scale,
        // Ranking scores only order items; clipping would create rank ties.
        Task::Ranking => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

fn lane_snapshots(
    config: &RunConfig,
    train: &RatingDataset,
    schedule: &SnapshotSchedule,
    source: &str,
    pairs: &[(u32, u32)],
) -> Result<SnapshotSet, SnapError> {
    let task = config.eval.task;
    let scale = materialize_scale(task, train);
    let dims = (train.num_users, train.num_items);
    let sgd = SgdConfig {
        factors: config.base.factors,
        lr: config.base.lr,
        reg: config.base.reg,
        seed: config.seed,
    };
    match config.base.algo {
        BaseAlgo::Rsvd => {
            let run = train_rsvd(train, task, &sgd, schedule)?;
            materialize(&run.snapshots, source, pairs, scale, dims)
        }
        BaseAlgo::Fm => {
            let run = train_fm_sgd(train, task, &sgd, schedule)?;
            materialize(&run.snapshots, source, pairs, scale, dims)
        }
        BaseAlgo::Itemknn => {
            let snaps: Vec<Tagged<_>> = knn_snapshots(train, KnnKind::Item, &config.base.k_list);
            materialize(&snaps, source, pairs, scale, dims)
        }
    }
}

/// Train the base lane(s) and freeze their predictions over the pair union.
/// The second set exists only when the se method is requested.
pub fn build_snapshots(
    config: &RunConfig,
    prepared: &Prepared,
) -> Result<(SnapshotSet, Option<SnapshotSet>), SnapError> {
    let pairs = experiment_pairs(config, &prepared.split)?;
    let main = lane_snapshots(
        config,
        &prepared.split.train,
        &config.main_schedule(),
        config.base.algo.name(),
        &pairs,
    )?;
    let cyclic = if config.ensemble.methods.contains(&Method::Se) {
        let source = format!("{}-cyclic", config.base.algo.name());
        Some(lane_snapshots(
            config,
            &prepared.split.train,
            &config.cyclic_schedule(),
            &source,
            &pairs,
        )?)
    } else {
        None
    };
    Ok((main, cyclic))
}

/// Per-snapshot validation quality: RMSE on rating tasks (lower better),
/// HR@cutoff on ranking tasks (higher better). Drives single-snapshot
/// selection.
fn snapshot_val_metrics(
    set: &SnapshotSet,
    split: &SplitDataset,
    config: &RunConfig,
) -> Result<Vec<f64>, SnapError> {
    let n_m = set.n_m();
    match config.eval.task {
        Task::Rating => {
            let truths: Vec<f64> =
                split.validation.interactions.iter().map(|it| it.rating).collect();
            let mut metrics = Vec::with_capacity(n_m);
            for s in 0..n_m {
                let mut preds = Vec::with_capacity(truths.len());
                for it in &split.validation.interactions {
                    preds.push(set.expect(it.user, it.item)?[s]);
                }
                metrics.push(rmse(&preds, &truths));
            }
            Ok(metrics)
        }
        Task::Ranking => {
            let negs = negatives_for(
                &split.validation,
                split,
                VAL_NEGATIVES,
                sub_seed(config.seed, Stream::ValNegatives, 0),
            )?;
            let mut metrics = Vec::with_capacity(n_m);
            for s in 0..n_m {
                let mut hits = Vec::with_capacity(split.validation.interactions.len());
                for (it, (_, list)) in
                    split.validation.interactions.iter().zip(&negs.per_example)
                {
                    let mut scored = Vec::with_capacity(1 + list.len());
                    scored.push((it.item, set.expect(it.user, it.item)?[s]));
                    for &n in list {
                        scored.push((n, set.expect(it.user, n)?[s]));
                    }
                    hits.push(hr_at_n(rank_in(&scored, it.item), config.eval.cutoff));
                }
                metrics.push(mean(&hits));
            }
            Ok(metrics)
        }
    }
}

/// A finished run: the frozen inputs, whatever got trained, and the
/// reports. Trained models are kept so callers can inspect training
/// trajectories without re-running anything.
#[derive(Debug)]
pub struct Experiment {
    pub split: SplitDataset,
    pub neighbors: NeighborIndex,
    pub set: SnapshotSet,
    pub cyclic: Option<SnapshotSet>,
    /// Index of the snapshot the single method picked, when it ran.
    pub single_choice: Option<usize>,
    pub neuse: Option<TrainedNeuSE>,
    pub hse: Option<TrainedHse>,
    pub reports: Vec<EvalReport>,
}

impl Experiment {
    pub fn records(&self) -> String {
        render_records(&self.reports)
    }

    pub fn report(&self, method: Method) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

pub fn run_experiment(config: &RunConfig) -> Result<Experiment, SnapError> {
    config.validate()?;
    let prepared = prepare(config)?;
    let (set, cyclic) = build_snapshots(config, &prepared)?;
    run_with_snapshots(config, prepared, set, cyclic)
}

/// The evaluation half of [`run_experiment`], reusable with snapshot sets
/// loaded from disk. Errors when a provided set does not match the config's
/// schedule or scale.
pub fn run_with_snapshots(
    config: &RunConfig,
    prepared: Prepared,
    mut set: SnapshotSet,
    cyclic: Option<SnapshotSet>,
) -> Result<Experiment, SnapError> {
    config.validate()?;
    let task = config.eval.task;
    let cutoff = config.eval.cutoff;
    let split = prepared.split;
    let neighbors = prepared.neighbors;

    let expected = config.main_schedule().num_snapshots();
    if set.n_m() != expected {
        return Err(SnapError::StoreMismatch(format!(
            "snapshot set holds {} models but the schedule produces {expected}",
            set.n_m()
        )));
    }
    let scale = materialize_scale(task, &split.train);
    if set.rating_scale != scale {
        return Err(SnapError::StoreMismatch(format!(
            "snapshot set scale {:?} does not match the task's {:?}",
            set.rating_scale, scale
        )));
    }
    if config.ensemble.methods.contains(&Method::Se) && cyclic.is_none() {
        return Err(SnapError::Config(
            "the se method needs the cyclic snapshot set; run the base-training step with se \
             in ensemble.methods"
                .into(),
        ));
    }

    let val = snapshot_val_metrics(&set, &split, config)?;
    set.set_val_metrics(&val);

    let mut neuse_cfg = config.neuse.clone();
    neuse_cfg.seed = config.seed;
    let mut hse_cfg = config.hse.clone();
    hse_cfg.seed = config.seed;

    // Pairs each method scores: the test pairs, plus per-example negative
    // blocks on ranking tasks (positive first, then its 99 negatives).
    let eval_pairs: Vec<(u32, u32)> = match task {
        Task::Rating => {
            split.test.interactions.iter().map(|it| (it.user, it.item)).collect()
        }
        Task::Ranking => {
            let negs = sample_negatives(
                &split,
                EVAL_NEGATIVES,
                sub_seed(config.seed, Stream::EvalNegatives, 0),
            )?;
            let mut pairs = Vec::with_capacity(split.test.interactions.len() * (1 + EVAL_NEGATIVES));
            for (it, (_, list)) in split.test.interactions.iter().zip(&negs.per_example) {
                pairs.push((it.user, it.item));
                for &n in list {
                    pairs.push((it.user, n));
                }
            }
            pairs
        }
    };

    let fingerprint = config.fingerprint();
    let mut out = Experiment {
        split,
        neighbors,
        set,
        cyclic,
        single_choice: None,
        neuse: None,
        hse: None,
        reports: Vec::with_capacity(config.ensemble.methods.len()),
    };

    for &method in &config.ensemble.methods {
        let started = Instant::now();
        let preds: Vec<f64> = match method {
            Method::Single => {
                let choice = single_select(&out.set, task == Task::Ranking)?;
                out.single_choice = Some(choice);
                collect_rows(&out.set, &eval_pairs, |row| row[choice])?
            }
            Method::Average => collect_rows(&out.set, &eval_pairs, average_combine)?,
            Method::Se => {
                let cyc = out.cyclic.as_ref().expect("checked above");
                let mut preds = Vec::with_capacity(eval_pairs.len());
                for &(u, i) in &eval_pairs {
                    preds.push(se_combine(cyc, u, i)?);
                }
                preds
            }
            Method::Hse => {
                let trained = hse_train(&out.set, &out.split, task, &hse_cfg)?;
                let preds =
                    collect_rows(&out.set, &eval_pairs, |row| trained.model.predict(row))?;
                out.hse = Some(trained);
                preds
            }
            Method::Neuse => {
                let trained =
                    train_neuse(&out.set, &out.split, &out.neighbors, task, &neuse_cfg)?;
                let preds = predict_pairs(
                    &trained.params,
                    &out.set,
                    &out.neighbors,
                    &neuse_cfg,
                    &eval_pairs,
                )?;
                out.neuse = Some(trained);
                preds
            }
        };

        let mut report = EvalReport {
            method,
            task,
            rmse: None,
            hr_at_n: None,
            ndcg_at_n: None,
            cutoff,
            fingerprint,
            seconds: 0.0,
        };
        match task {
            Task::Rating => {
                let (lo, hi) = task.clip_scale(out.split.train.rating_scale);
                let clipped: Vec<f64> = preds.iter().map(|p| p.clamp(lo, hi)).collect();
                let truths: Vec<f64> =
                    out.split.test.interactions.iter().map(|it| it.rating).collect();
                report.rmse = Some(rmse(&clipped, &truths));
            }
            Task::Ranking => {
                let width = 1 + EVAL_NEGATIVES;
                let n_ex = out.split.test.interactions.len();
                debug_assert_eq!(eval_pairs.len(), n_ex * width);
                let per_example: Vec<(f64, f64)> = {
                    let eval_pairs = &eval_pairs;
                    let preds = &preds;
                    let test = &out.split.test.interactions;
                    map_range(n_ex, move |e| {
                        let base = e * width;
                        let scored: Vec<(u32, f64)> = (base..base + width)
                            .map(|k| (eval_pairs[k].1, preds[k]))
                            .collect();
                        let rank = rank_in(&scored, test[e].item);
                        (hr_at_n(rank, cutoff), ndcg_at_n(rank, cutoff))
                    })
                };
                let hrs: Vec<f64> = per_example.iter().map(|p| p.0).collect();
                let ndcgs: Vec<f64> = per_example.iter().map(|p| p.1).collect();
                report.hr_at_n = Some(mean(&hrs));
                report.ndcg_at_n = Some(mean(&ndcgs));
            }
        }
        report.seconds = started.elapsed().as_secs_f64();
        out.reports.push(report);
    }

    Ok(out)
}

fn collect_rows(
    set: &SnapshotSet,
    pairs: &[(u32, u32)],
    f: impl Fn(&[f64]) -> f64,
) -> Result<Vec<f64>, SnapError> {
    let mut preds = Vec::with_capacity(pairs.len());
    for &(u, i) in pairs {
        preds.push(f(set.expect(u, i)?));
    }
    Ok(preds)
}

/// Persist the three split parts as tab-separated `user item rating ts`
/// lines (0-based contiguous ids, for inspection and external tooling).
pub fn write_split(split: &SplitDataset, dir: &Path) -> Result<(), SnapError> {
    fs::create_dir_all(dir).map_err(|e| SnapError::io(dir, e))?;
    for (name, part) in [
        ("train.tsv", &split.train),
        ("validation.tsv", &split.validation),
        ("test.tsv", &split.test),
    ] {
        let mut text = String::new();
        for it in &part.interactions {
            let _ = writeln!(text, "{}\t{}\t{}\t{}", it.user, it.item, it.rating, it.ts);
        }
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| SnapError::io(&path, e))?;
    }
    Ok(())
}

/// Persist the capped neighborhoods: `u <id> <items...>` then
/// `i <id> <users...>`, tab-separated, space-joined lists.
pub fn write_neighbors(index: &NeighborIndex, path: &Path) -> Result<(), SnapError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SnapError::io(parent, e))?;
    }
    let mut text = format!("# cap={}\n", index.cap);
    for (kind, lists) in [("u", &index.by_user), ("i", &index.by_item)] {
        for (id, list) in lists.iter().enumerate() {
            let joined: Vec<String> = list.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(text, "{kind}\t{id}\t{}", joined.join(" "));
        }
    }
    fs::write(path, text).map_err(|e| SnapError::io(path, e))
}
