//! Part-annotated datasets on disk.
//!
//! Layout, one directory per object:
//!
//! ```text
//! root/{split}/{category}/category.json            optional: {"format_version", "tags"}
//! root/{split}/{category}/{object_id}/image.png
//! root/{split}/{category}/{object_id}/parts.png    8-bit index map, 0 = background, i+1 = tags[i]
//! root/{split}/{category}/{object_id}/parts.json   {"format_version", "object_id", "category", "tags"}
//! ```
//!
//! Without `category.json` the canonical tag order of a category is the
//! order of first appearance over its objects in id order.

pub mod coco;
pub mod synth;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskops::BitMask;
use crate::sampling::{Part, PartDataset, PartObject};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (train|val|test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFile {
    pub format_version: u32,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartsFile {
    pub format_version: u32,
    pub object_id: String,
    pub category: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub object_id: String,
    pub category: String,
    pub image: PathBuf,
    pub parts_map: PathBuf,
    /// `(tag, index in parts_map)`.
    pub parts: Vec<(String, u8)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

fn dataset_err(entry: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Dataset {
        entry: entry.into(),
        reason: reason.into(),
    }
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| dataset_err(dir.display().to_string(), e.to_string()))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort_by(|a, b| a.as_os_str().as_encoded_bytes().cmp(b.as_os_str().as_encoded_bytes()));
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Object parts before canonical reordering.
struct RawObject {
    object_id: String,
    category: String,
    image: image::RgbImage,
    parts: Vec<Part>,
}

fn load_object(dir: &Path, category: &str) -> Result<RawObject> {
    let dir_id = file_name(dir);
    let err = |reason: String| dataset_err(dir_id.clone(), reason);
    let read = |name: &str| -> Result<Vec<u8>> {
        std::fs::read(dir.join(name)).map_err(|e| err(format!("{name}: {e}")))
    };
    let meta: PartsFile =
        serde_json::from_slice(&read("parts.json")?).map_err(|e| err(format!("parts.json: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(err(format!("unsupported format_version {}", meta.format_version)));
    }
    if meta.object_id != dir_id || meta.category != category {
        return Err(err(format!(
            "parts.json names {}/{}, directory is {category}/{dir_id}",
            meta.category, meta.object_id
        )));
    }
    if meta.tags.is_empty() || meta.tags.len() > 255 {
        return Err(err(format!("{} part tags (need 1..=255)", meta.tags.len())));
    }
    for (i, t) in meta.tags.iter().enumerate() {
        if meta.tags[..i].contains(t) {
            return Err(err(format!("duplicate tag {t:?}")));
        }
    }
    let image = image::load_from_memory(&read("image.png")?)
        .map_err(|e| err(format!("image.png: {e}")))?
        .to_rgb8();
    let map = image::load_from_memory(&read("parts.png")?)
        .map_err(|e| err(format!("parts.png: {e}")))?
        .to_luma8();
    if map.dimensions() != image.dimensions() {
        return Err(err(format!(
            "parts.png is {}x{} but image.png is {}x{}",
            map.width(),
            map.height(),
            image.width(),
            image.height()
        )));
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut masks = vec![BitMask::new(h, w)?; meta.tags.len()];
    for (x, y, px) in map.enumerate_pixels() {
        let idx = px[0] as usize;
        if idx == 0 {
            continue;
        }
        if idx > meta.tags.len() {
            return Err(err(format!("parts.png index {idx} at ({y}, {x}) has no tag")));
        }
        masks[idx - 1].set(y as usize, x as usize, true);
    }
    let mut parts = Vec::with_capacity(masks.len());
    for (tag, mask) in meta.tags.into_iter().zip(masks) {
        if mask.is_empty() {
            return Err(err(format!("part {tag:?} has no pixels")));
        }
        parts.push(Part { tag, mask });
    }
    Ok(RawObject {
        object_id: dir_id,
        category: category.to_string(),
        image,
        parts,
    })
}

/// Load and validate every object of `split` under `root`.
pub fn load_part_dataset(root: &Path, split: Split) -> Result<PartDataset> {
    let split_dir = root.join(split.name());
    let mut objects = Vec::new();
    for cat_dir in sorted_subdirs(&split_dir)? {
        let category = file_name(&cat_dir);
        let declared: Option<CategoryFile> = match std::fs::read(cat_dir.join("category.json")) {
            Ok(bytes) => Some(
                serde_json::from_slice(&bytes)
                    .map_err(|e| dataset_err(category.clone(), format!("category.json: {e}")))?,
            ),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let raw: Vec<RawObject> = sorted_subdirs(&cat_dir)?
            .par_iter()
            .map(|dir| load_object(dir, &category))
            .collect::<Result<_>>()?;

        let canonical: Vec<String> = match declared {
            Some(c) => c.tags,
            None => {
                let mut tags: Vec<String> = Vec::new();
                for o in &raw {
                    for p in &o.parts {
                        if !tags.contains(&p.tag) {
                            tags.push(p.tag.clone());
                        }
                    }
                }
                tags
            }
        };
        for mut o in raw {
            if let Some(p) = o.parts.iter().find(|p| !canonical.contains(&p.tag)) {
                return Err(dataset_err(
                    o.object_id,
                    format!("tag {:?} is not declared for category {category}", p.tag),
                ));
            }
            o.parts
                .sort_by_key(|p| canonical.iter().position(|t| *t == p.tag).expect("checked above"));
            objects.push(PartObject {
                object_id: o.object_id,
                category: o.category,
                image: Arc::new(o.image),
                parts: o.parts,
            });
        }
    }
    PartDataset::new(objects)
}

/// Make parts pairwise disjoint: a pixel claimed by several parts stays
/// with the byte-wise smallest tag. Returns the number of contested pixels.
pub fn resolve_overlaps(parts: &mut [Part]) -> Result<usize> {
    if parts.is_empty() {
        return Ok(0);
    }
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| parts[a].tag.as_bytes().cmp(parts[b].tag.as_bytes()));
    let (h, w) = parts[0].mask.dims();
    let mut claimed = BitMask::new(h, w)?;
    let mut contested = BitMask::new(h, w)?;
    for &i in &order {
        let overlap = parts[i].mask.intersection(&claimed)?;
        contested = contested.union(&overlap)?;
        claimed = claimed.union(&parts[i].mask)?;
        parts[i].mask = parts[i].mask.difference(&overlap)?;
    }
    Ok(contested.count())
}

fn object_dir(root: &Path, split: Split, obj: &PartObject) -> PathBuf {
    root.join(split.name()).join(&obj.category).join(&obj.object_id)
}

/// Write `dataset` in the directory layout. Overlapping parts are resolved
/// first (the count is logged).
pub fn export_tda(dataset: &PartDataset, root: &Path, split: Split) -> Result<DatasetManifest> {
    let split_dir = root.join(split.name());
    std::fs::create_dir_all(&split_dir)?;
    for (category, ids) in dataset.categories() {
        let mut tags: Vec<String> = Vec::new();
        for &i in ids {
            for t in dataset.objects()[i].tags() {
                if !tags.iter().any(|s| s == t) {
                    tags.push(t.to_string());
                }
            }
        }
        let cat_dir = split_dir.join(category);
        std::fs::create_dir_all(&cat_dir)?;
        let file = CategoryFile {
            format_version: FORMAT_VERSION,
            tags,
        };
        std::fs::write(cat_dir.join("category.json"), serde_json::to_vec_pretty(&file)?)?;
    }

    let entries: Vec<ManifestEntry> = dataset
        .objects()
        .par_iter()
        .map(|obj| write_object(root, split, obj))
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        split,
        entries,
    };
    std::fs::write(split_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn write_object(root: &Path, split: Split, obj: &PartObject) -> Result<ManifestEntry> {
    if obj.parts.len() > 255 {
        return Err(dataset_err(obj.object_id.clone(), "more than 255 parts"));
    }
    let mut parts = obj.parts.clone();
    let contested = resolve_overlaps(&mut parts)?;
    if contested > 0 {
        tracing::warn!(object = %obj.object_id, contested, "overlapping part pixels resolved");
    }
    let (h, w) = obj.dims();
    let mut map = GrayImage::new(w as u32, h as u32);
    for (i, p) in parts.iter().enumerate() {
        if p.mask.dims() != (h, w) {
            return Err(dataset_err(obj.object_id.clone(), format!("part {} has the wrong size", p.tag)));
        }
        for (r, c) in p.mask.pixels() {
            map.put_pixel(c as u32, r as u32, Luma([(i + 1) as u8]));
        }
    }
    let dir = object_dir(root, split, obj);
    std::fs::create_dir_all(&dir)?;
    obj.image.save(dir.join("image.png"))?;
    map.save(dir.join("parts.png"))?;
    let meta = PartsFile {
        format_version: FORMAT_VERSION,
        object_id: obj.object_id.clone(),
        category: obj.category.clone(),
        tags: parts.iter().map(|p| p.tag.clone()).collect(),
    };
    std::fs::write(dir.join("parts.json"), serde_json::to_vec_pretty(&meta)?)?;
    Ok(ManifestEntry {
        object_id: obj.object_id.clone(),
        category: obj.category.clone(),
        image: dir.join("image.png"),
        parts_map: dir.join("parts.png"),
        parts: meta
            .tags
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, (i + 1) as u8))
            .collect(),
    })
}
