use crate::error::SnapError;

/// When snapshots are taken along a training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnapshotSchedule {
    /// Capture every `delta_t` epochs up to `max_epoch`.
    EveryDeltaT { delta_t: u32, max_epoch: u32 },
    /// One KNN model per neighbor count; no training epochs involved.
    KnnKList { k_list: Vec<u32> },
    /// Cosine-annealed learning rate restarting every `max_epoch / cycles`
    /// epochs; capture at each cycle end.
    CyclicLr { cycles: u32, max_epoch: u32 },
}

impl SnapshotSchedule {
    pub fn validate(&self) -> Result<(), SnapError> {
        match self {
            SnapshotSchedule::EveryDeltaT { delta_t, max_epoch } => {
                if *delta_t < 1 {
                    return Err(SnapError::Config("delta_t must be >= 1".into()));
                }
                if *max_epoch == 0 || max_epoch % delta_t != 0 {
                    return Err(SnapError::Config(format!(
                        "max_epoch {max_epoch} must be a positive multiple of delta_t {delta_t}"
                    )));
                }
            }
            SnapshotSchedule::KnnKList { k_list } => {
                if k_list.is_empty() {
                    return Err(SnapError::Config("k_list must be non-empty".into()));
                }
                if k_list.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(SnapError::Config(
                        "k_list must be strictly increasing".into(),
                    ));
                }
                if k_list[0] == 0 {
                    return Err(SnapError::Config("k must be >= 1".into()));
                }
            }
            SnapshotSchedule::CyclicLr { cycles, max_epoch } => {
                if *cycles < 1 {
                    return Err(SnapError::Config("cycles must be >= 1".into()));
                }
                if *max_epoch == 0 || max_epoch % cycles != 0 {
                    return Err(SnapError::Config(format!(
                        "max_epoch {max_epoch} must be a positive multiple of cycles {cycles}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn max_epoch(&self) -> u32 {
        match self {
            SnapshotSchedule::EveryDeltaT { max_epoch, .. } => *max_epoch,
            SnapshotSchedule::KnnKList { .. } => 0,
            SnapshotSchedule::CyclicLr { max_epoch, .. } => *max_epoch,
        }
    }

    /// Whether a snapshot is captured after 1-based epoch `epoch` completes.
    pub fn captures_at(&self, epoch: u32) -> bool {
        match self {
            SnapshotSchedule::EveryDeltaT { delta_t, .. } => epoch % delta_t == 0,
            SnapshotSchedule::KnnKList { .. } => false,
            SnapshotSchedule::CyclicLr { cycles, max_epoch } => {
                epoch % (max_epoch / cycles) == 0
            }
        }
    }

    /// Learning rate for 0-based epoch index `epoch`.
    pub fn lr_at(&self, epoch: u32, base_lr: f64) -> f64 {
        match self {
            SnapshotSchedule::CyclicLr { cycles, max_epoch } => {
                cyclic_lr(epoch, base_lr, max_epoch / cycles)
            }
            _ => base_lr,
        }
    }

    /// Number of snapshots the schedule produces.
    pub fn num_snapshots(&self) -> usize {
        match self {
            SnapshotSchedule::EveryDeltaT { delta_t, max_epoch } => {
                (max_epoch / delta_t) as usize
            }
            SnapshotSchedule::KnnKList { k_list } => k_list.len(),
            SnapshotSchedule::CyclicLr { cycles, .. } => *cycles as usize,
        }
    }
}

/// Cosine-annealed rate within a cycle: base_lr at each cycle start,
/// decaying toward 0 at the cycle end.
pub fn cyclic_lr(epoch: u32, base_lr: f64, cycle_len: u32) -> f64 {
    assert!(cycle_len >= 1, "cycle_len must be >= 1");
    let phase = (epoch % cycle_len) as f64 / cycle_len as f64;
    base_lr / 2.0 * ((std::f64::consts::PI * phase).cos() + 1.0)
}
