//! Micrograph ingestion, phase encoding, region geometry and patch sampling.

mod io;
mod micrograph;
mod patches;
mod region;

pub use io::{decode_micrograph, encode_png, load_micrograph, save_png, KindHint, MAX_PHASES};
pub use micrograph::{
    decode_argmax, encode_onehot, equally_spaced_values, rgb_to_gray, ImageKind, Micrograph, GRAY_WEIGHTS,
};
pub use patches::{sample_patches, Augmentation, PatchSet, DEFAULT_PATCH};
pub use region::{point_in_polygon, snap8, Mask, Rect, Region, RegionShape, DEFAULT_ANNULUS, MIN_EXTENT};
