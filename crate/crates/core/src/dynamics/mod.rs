//! Bipartite attractor networks: architecture, weights, evidence, layerwise
//! settling, energy and limit-cycle detection.

mod arch;
mod cycle;
mod evidence;
mod network;
mod state;

pub use arch::{ArchSpec, LayerKind, LayerSpec, Role};
pub use cycle::{detect_cycle, synchronous_iterate, SyncReport};
pub use evidence::{Evidence, EvidenceMode};
pub use network::{matrix_norm_1inf, Params, WeightBundle};
pub use state::{
    energy, energy_per_item, layer_preactivation, settle, settle_with, sweep, unclamped_visible, update_layer,
    NetState, SettleOptions, SettleReport, CYCLE_WINDOW, DEFAULT_MAX_ITERS, DEFAULT_THETA,
};

pub(crate) use network::Net;
pub(crate) use state::{fold_item_delta, sweep_in_place};
