//! Segmentation-label priors and the machinery that injects them into the
//! mask-guided restorer: mask average pooling, region dropout, and the
//! SPI / CAT fusion modes.

mod map;
mod ops;
mod provider;

pub use map::SegmentationMap;
pub use ops::{cat_fuse, dropout_draw, map_pool, region_dropout, spi_fuse};
pub use provider::{quantile_masks, MaskProvider};
