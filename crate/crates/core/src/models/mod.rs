//! Network graphs, builders, forward execution, op counting and dumps.

mod checkpoint;
mod dump;
mod network;
mod ops;
mod spec;

pub use checkpoint::{load_checkpoint, read_weights, save_checkpoint, write_weights, CHECKPOINT_MAGIC};
pub use dump::{dump_feature_maps, DumpFormat};
pub use network::{forward_window, ForwardOptions, Mode, Network, Phase, WindowTrace};
pub use ops::{count_ops, LayerOps, OpsReport};
pub use spec::{
    build_convsnn, build_sts_resnet, sts_resnet_widths, LayerKind, LayerNode, Merge, NetworkSpec, SkipEdge,
    DEFAULT_BLOCK_DROPOUT, DEFAULT_WINDOW,
};
