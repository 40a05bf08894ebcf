use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::synth_band;
use crate::error::{arg_err, Result};
use crate::feature::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Imported,
}

/// A banded patch and its pristine counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub pristine: FeatureMap,
    pub banded: FeatureMap,
    pub source: Source,
    /// Quantiser bit depth, if known.
    pub bits: Option<u32>,
    /// Top-left patch offset `(y, x)` in the source image.
    pub offset: (usize, usize),
    /// Index of the source image the patch was cut from.
    pub origin: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub pairs: Vec<ImagePair>,
    pub split: BTreeMap<String, Split>,
    pub patch_size: usize,
    pub seed: u64,
}

impl PatchDataset {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split.get(id).copied()
    }

    /// Pairs in `which`, in dataset order.
    pub fn pairs_in(&self, which: Split) -> Vec<&ImagePair> {
        self.pairs
            .iter()
            .filter(|p| self.split_of(&p.id) == Some(which))
            .collect()
    }

    pub fn count(&self, which: Split) -> usize {
        self.split.values().filter(|&&s| s == which).count()
    }
}

fn axis_offsets(n: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + patch <= n).collect();
    if let Some(&last) = out.last() {
        if last + patch < n {
            out.push(n - patch);
        }
    }
    out
}

/// Raster-order patch origins; the last row and column are pinned to the
/// image edge so every pixel is covered.
pub fn patch_offsets(height: usize, width: usize, patch: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || stride == 0 {
        return arg_err("patch and stride must be >= 1");
    }
    if patch > height.min(width) {
        return arg_err(format!("patch {patch} exceeds image {height}x{width}"));
    }
    let ys = axis_offsets(height, patch, stride);
    let xs = axis_offsets(width, patch, stride);
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect())
}

pub fn extract_patches(img: &FeatureMap, patch: usize, stride: usize) -> Result<Vec<FeatureMap>> {
    patch_offsets(img.height(), img.width(), patch, stride)?
        .into_iter()
        .map(|(y, x)| img.crop(y, x, patch, patch))
        .collect()
}

/// Image counts per split for `n` source images: round(0.7n), round(0.2n),
/// remainder.
pub fn split_counts(n: usize) -> Result<[usize; 3]> {
    let train = (0.7 * n as f64).round() as usize;
    let val = (0.2 * n as f64).round() as usize;
    let test = n.saturating_sub(train + val);
    if train == 0 || val == 0 || test == 0 {
        return arg_err(format!("{n} source images cannot populate train/val/test splits"));
    }
    Ok([train, val, test])
}

/// Shuffles `n` group indices with `seed` and assigns 70/20/10.
pub(crate) fn assign_groups(n: usize, seed: u64) -> Result<Vec<Split>> {
    let counts = split_counts(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Split::Train; n];
    for (rank, &g) in order.iter().enumerate() {
        out[g] = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

pub(crate) fn patch_id(origin: usize, y: usize, x: usize) -> String {
    format!("s{origin:04}_y{y:04}_x{x:04}")
}

/// Cuts every corpus image into patches and pairs each with its quantised
/// version. Source image `i` is quantised at `bits[i % bits.len()]`; splits
/// are drawn per source image.
pub fn make_dataset(
    corpus: &[FeatureMap],
    bits: &[u32],
    patch: usize,
    stride: usize,
    seed: u64,
) -> Result<PatchDataset> {
    if corpus.is_empty() {
        return arg_err("empty corpus");
    }
    if bits.is_empty() {
        return arg_err("at least one bit depth is required");
    }
    let groups = assign_groups(corpus.len(), seed)?;
    let mut pairs = Vec::new();
    let mut split = BTreeMap::new();
    for (origin, img) in corpus.iter().enumerate() {
        let b = bits[origin % bits.len()];
        let banded = synth_band(img, b, None)?;
        for (y, x) in patch_offsets(img.height(), img.width(), patch, stride)? {
            let id = patch_id(origin, y, x);
            split.insert(id.clone(), groups[origin]);
            pairs.push(ImagePair {
                id,
                pristine: img.crop(y, x, patch, patch)?,
                banded: banded.crop(y, x, patch, patch)?,
                source: Source::Synthetic,
                bits: Some(b),
                offset: (y, x),
                origin,
            });
        }
    }
    Ok(PatchDataset {
        pairs,
        split,
        patch_size: patch,
        seed,
    })
}
