use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, ImageReader, RgbImage};
use serde::{Deserialize, Serialize};

use super::dataset::{assign_groups, ImagePair, PatchDataset, Source, Split};
use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::freqmask::MaskMap;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

const PRISTINE_SUFFIX: &str = "_pristine";
const BANDED_SUFFIX: &str = "_banded";

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: u.to_string(),
        },
        other => Error::Image {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Reads an 8-bit image as RGB with values `byte / 255`. Grey images are
/// replicated across channels and alpha is dropped; 16-bit and float
/// images are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e))?;
    let rgb = match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => img.to_rgb8(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("only 8-bit images are supported, found {other:?}"),
            })
        }
    };
    let (w, h) = rgb.dimensions();
    let values = rgb.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    FeatureMap::from_vec(h as usize, w as usize, 3, values)
}

fn to_byte(v: f32) -> u8 {
    // f32::round rounds half away from zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a 1- or 3-channel map as an 8-bit image; the format follows the
/// file extension.
pub fn save_image(img: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = img.dims();
    let bytes: Vec<u8> = img.values().iter().map(|&v| to_byte(v)).collect();
    let dynamic = match c {
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer size")),
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer size")),
        _ => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("cannot save a {c}-channel map"),
            })
        }
    };
    dynamic.save(path).map_err(|e| image_err(path, e))
}

/// Saves a mask as an 8-bit greyscale image (`round(255 m)`).
pub fn save_mask(mask: &MaskMap, path: impl AsRef<Path>) -> Result<()> {
    save_image(&mask.as_feature_map(), path)
}

/// One manifest line per pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub source: Source,
    pub bits: Option<u32>,
    pub y: usize,
    pub x: usize,
    pub origin: usize,
}

/// Writes `<id>_pristine.png`, `<id>_banded.png` and the manifest.
pub fn write_dataset(dataset: &PatchDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for pair in &dataset.pairs {
        save_image(&pair.pristine, dir.join(format!("{}{PRISTINE_SUFFIX}.png", pair.id)))?;
        save_image(&pair.banded, dir.join(format!("{}{BANDED_SUFFIX}.png", pair.id)))?;
        let record = ManifestRecord {
            id: pair.id.clone(),
            split: dataset.split_of(&pair.id).unwrap_or(Split::Train),
            source: pair.source,
            bits: pair.bits,
            y: pair.offset.0,
            x: pair.offset.1,
            origin: pair.origin,
        };
        manifest.push_str(&serde_json::to_string(&record)?);
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(manifest.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Finds `<id>_pristine.<ext>` / `<id>_banded.<ext>` pairs in `dir`.
fn scan_pairs(dir: &Path) -> Result<BTreeMap<String, (PathBuf, PathBuf)>> {
    let mut pristine = BTreeMap::new();
    let mut banded = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(id) = stem.strip_suffix(PRISTINE_SUFFIX) {
            pristine.insert(id.to_string(), path.clone());
        } else if let Some(id) = stem.strip_suffix(BANDED_SUFFIX) {
            banded.insert(id.to_string(), path.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (id, p) in pristine {
        match banded.remove(&id) {
            Some(b) => {
                out.insert(id, (p, b));
            }
            None => log::warn!("{}: no banded counterpart, skipped", p.display()),
        }
    }
    for b in banded.values() {
        log::warn!("{}: no pristine counterpart, skipped", b.display());
    }
    Ok(out)
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Loads a dataset directory. With a manifest, its splits and metadata are
/// used as-is. Without one, every `<id>_pristine` / `<id>_banded` pair is
/// imported and assigned to a split by a seeded per-pair shuffle.
pub fn load_dataset(dir: impl AsRef<Path>, seed: u64) -> Result<PatchDataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let files = scan_pairs(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let records: Vec<ManifestRecord> = if manifest_path.is_file() {
        read_manifest(&manifest_path)?
    } else {
        let groups = assign_groups(files.len(), seed)?;
        files
            .keys()
            .zip(groups)
            .enumerate()
            .map(|(origin, (id, split))| ManifestRecord {
                id: id.clone(),
                split,
                source: Source::Imported,
                bits: None,
                y: 0,
                x: 0,
                origin,
            })
            .collect()
    };

    let mut pairs = Vec::with_capacity(records.len());
    let mut split = BTreeMap::new();
    for r in records {
        let Some((p, b)) = files.get(&r.id) else {
            return Err(Error::io(
                dir.join(format!("{}{PRISTINE_SUFFIX}.png", r.id)),
                std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry without image pair"),
            ));
        };
        let pristine = load_image(p)?;
        let banded = load_image(b)?;
        if !pristine.same_dims(&banded) {
            return Err(Error::Dimension(format!("pair {} has mismatched sizes", r.id)));
        }
        split.insert(r.id.clone(), r.split);
        pairs.push(ImagePair {
            id: r.id,
            pristine,
            banded,
            source: r.source,
            bits: r.bits,
            offset: (r.y, r.x),
            origin: r.origin,
        });
    }
    let patch_size = pairs.first().map_or(0, |p| p.pristine.height());
    Ok(PatchDataset {
        pairs,
        split,
        patch_size,
        seed,
    })
}
