//! Inpaint quality statistics: border contiguity, volume fractions, pixel
//! histograms, baseline fills and the seed propagation probe.

mod baseline;
mod contiguity;
mod ks;
mod probe;
mod vf;

pub use crate::inpaint::{paste_audit, InpaintMethod, InpaintResult};
pub use baseline::{baseline_fill, BaselineKind};
pub use contiguity::{
    border_contiguity, border_sq_diffs, reference_sq_diffs, ContiguityReport, MAX_REFERENCE_PAIRS, REFERENCE_SEED,
};
pub use ks::{kolmogorov_q, ks_two_sample, KsResult};
pub use probe::{affected_width, column_profile, seed_propagation_probe, ProbeProfile, ProbeRow, PROBE_THRESHOLD};
pub use vf::{
    fixed_seed_fractions, ground_truth_fractions, label_fractions, pixel_histogram, random_seed_fractions,
    region_fractions, volume_fractions, volume_fractions_of, VfReport,
};
