//! Line preprocessing, dense patch extraction, ensemble sampling, dataset
//! indexes and the synthetic benchmark generator.

pub mod dataset;
pub mod ensemble;
pub mod image;
pub mod patches;
pub mod synth;

pub use dataset::{load_dataset, parse_index, ClassDictionary, IndexEntry, LoadFailure, LoadedDataset};
pub use ensemble::{make_ensemble_dataset, EnsembleDataset, EnsembleSample, SAMPLES_PER_PATCH};
pub use image::{line_width, load_image, preprocess, resize_bilinear, write_pgm, LineImage, RawImage, LINE_HEIGHT};
pub use patches::{
    extract_patches, large_count, small_count, window_origins, PatchOrigin, PatchSet, LARGE_WINDOW, SMALL_WINDOW, STEP,
};
pub use synth::{synth_generate, synth_images, SynthConfig, SynthImage, SynthSplits};

use crate::error::Result;
use crate::tensor::Scalar;

/// Extracts patch sets for a batch of line images, in input order.
pub fn extract_all<T: Scalar>(lines: &[LineImage]) -> Result<Vec<PatchSet<T>>> {
    use rayon::prelude::*;
    lines.par_iter().map(extract_patches).collect()
}
