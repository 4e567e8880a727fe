//! Student/teacher parameter sets, EMA coupling and view generation.

mod augment;
mod masks;
mod store;

pub use augment::{apply_augmentation, AugmentationKind, AugmentationSpec, AugmentedSample, Warp};
pub use masks::complementary_channel_masks;
pub use store::{ema_update, ParameterStore, Role, DEFAULT_EMA_MOMENTUM};
