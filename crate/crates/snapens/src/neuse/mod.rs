//! The snapshot-combining attention network.
//!
//! Per user-item pair the forward pass queries three memories (snapshot
//! models, co-rating users, co-rated items) with the pair embedding, refines
//! the query over `hops` rounds, and emits a probability vector over
//! snapshots. Training distills soft labels built from each example's best
//! snapshot through a KL objective, optimized with Adam on exact
//! hand-derived gradients.

mod adam;
mod backward;
mod config;
mod forward;
mod params;
mod soft_label;
mod train;

pub use adam::{adam_step, AdamState};
pub use backward::{backward, PairGrad};
pub use config::{Activation, Dims, NeuSEConfig};
pub use forward::{
    bias_project, embed_pair, forward, memory_attend, ForwardTrace, HopTrace, Mode,
};
pub use params::{init_params, load_params, save_params, NeuSEParams};
pub use soft_label::{kl_loss, optimal_tag, soft_labels, SoftLabel};
pub use train::{
    batch_gradients, batch_gradients_seq, ensemble_predict, predict_pairs, prepare_examples,
    ranking_negatives, train_neuse, PreparedExample, TrainedNeuSE, VAL_NEGATIVES,
};
