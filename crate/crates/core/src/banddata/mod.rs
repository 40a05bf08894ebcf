//! Synthetic banding data: quantisation, gradient corpora, patch datasets,
//! padding helpers and image/dataset I/O.

mod corpus;
mod dataset;
mod io;
mod synth;

pub use corpus::gen_gradient_corpus;
pub use dataset::{
    extract_patches, make_dataset, patch_offsets, split_counts, ImagePair, PatchDataset, Source,
    Split,
};
pub use io::{
    load_dataset, load_image, save_image, save_mask, write_dataset, ManifestRecord, MANIFEST_FILE,
};
pub use synth::{crop_to, pad_to_multiple, synth_band, Padded};
