//! Seeded synthetic benchmark: paired pseudo-H&E / pseudo-IHC images
//! with exact ground-truth molecular maps and nuclei counts, plus
//! misalignment injection and the ablation harness.

mod ablation;
mod dataset;
mod generate;
mod misalign;

pub use ablation::{run_ablation, AblationArm, AblationReport, AblationRow};
pub use dataset::{load_dataset, load_image_png, save_dataset, save_image_png, PairMeta};
pub use generate::{generate_pair, GenParams, SyntheticPair};
pub use misalign::{inject_misalignment, realign, Misalignment};
