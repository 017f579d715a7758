//! Conversion from COCO-style part annotations (the PartImageNet release
//! format) into part objects.
//!
//! Mapping:
//! - one COCO image is one object; `object_id` is the file stem
//! - the object category is the part category's `supercategory`
//! - the tag is the part category `name`, lower-cased, with a leading
//!   supercategory word removed and spaces turned into underscores
//! - all polygons of one tag in one image are filled (even-odd, pixel
//!   centres) and unioned; RLE segmentations are not supported
//! - overlapping parts are resolved with `resolve_overlaps`
//! - images without any part annotation are skipped

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use super::resolve_overlaps;
use crate::error::{Error, Result};
use crate::maskops::BitMask;
use crate::sampling::{Part, PartDataset, PartObject};

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    segmentation: serde_json::Value,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
    supercategory: String,
}

fn tag_name(name: &str, supercategory: &str) -> String {
    let lower = name.to_lowercase();
    let sup = supercategory.to_lowercase();
    let trimmed = lower.strip_prefix(&sup).unwrap_or(&lower).trim();
    trimmed.split_whitespace().collect::<Vec<_>>().join("_")
}

/// Even-odd fill of a flat `[x0, y0, x1, y1, ...]` polygon into `m`.
fn fill_polygon(m: &mut BitMask, coords: &[f64]) {
    let pts: Vec<(f64, f64)> = coords.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    if pts.len() < 3 {
        return;
    }
    let (h, w) = m.dims();
    let mut xs = Vec::new();
    for r in 0..h {
        let y = r as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            if (a.1 <= y) != (b.1 <= y) {
                xs.push(a.0 + (y - a.1) / (b.1 - a.1) * (b.0 - a.0));
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks_exact(2) {
            let c0 = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let c1 = ((pair[1] - 0.5).ceil().max(0.0) as usize).min(w);
            for c in c0..c1 {
                m.set(r, c, !m.get(r, c));
            }
        }
    }
}

/// Read `annotations` and the images it names from `image_dir`.
/// Returns the dataset and the number of contested pixels resolved.
pub fn convert_coco_parts(annotations: &Path, image_dir: &Path) -> Result<(PartDataset, usize)> {
    let file: CocoFile = serde_json::from_slice(&std::fs::read(annotations)?)?;
    let cats: BTreeMap<u64, &CocoCategory> = file.categories.iter().map(|c| (c.id, c)).collect();
    let mut by_image: BTreeMap<u64, Vec<&CocoAnnotation>> = BTreeMap::new();
    for a in &file.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }

    let mut objects = Vec::new();
    let mut contested = 0;
    for img in &file.images {
        let Some(anns) = by_image.get(&img.id) else { continue };
        let stem = Path::new(&img.file_name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| img.id.to_string());
        let err = |reason: String| Error::Dataset {
            entry: stem.clone(),
            reason,
        };
        let mut category: Option<String> = None;
        let mut parts: Vec<Part> = Vec::new();
        for a in anns {
            let cat = cats
                .get(&a.category_id)
                .ok_or_else(|| err(format!("unknown category id {}", a.category_id)))?;
            match &category {
                None => category = Some(cat.supercategory.clone()),
                Some(c) if *c != cat.supercategory => {
                    return Err(err(format!("mixes supercategories {c} and {}", cat.supercategory)))
                }
                _ => {}
            }
            let polys: Vec<Vec<f64>> = serde_json::from_value(a.segmentation.clone())
                .map_err(|_| err("only polygon segmentations are supported".into()))?;
            let tag = tag_name(&cat.name, &cat.supercategory);
            let idx = match parts.iter().position(|p| p.tag == tag) {
                Some(i) => i,
                None => {
                    parts.push(Part {
                        tag,
                        mask: BitMask::new(img.height, img.width)?,
                    });
                    parts.len() - 1
                }
            };
            let mut filled = BitMask::new(img.height, img.width)?;
            for p in &polys {
                fill_polygon(&mut filled, p);
            }
            parts[idx].mask = parts[idx].mask.union(&filled)?;
        }
        parts.retain(|p| !p.mask.is_empty());
        if parts.is_empty() {
            continue;
        }
        contested += resolve_overlaps(&mut parts)?;
        parts.retain(|p| !p.mask.is_empty());
        parts.sort_by(|a, b| a.tag.as_bytes().cmp(b.tag.as_bytes()));

        let image = image::open(image_dir.join(&img.file_name))
            .map_err(|e| err(format!("{}: {e}", img.file_name)))?
            .to_rgb8();
        if (image.height() as usize, image.width() as usize) != (img.height, img.width) {
            return Err(err("image size differs from the annotation".into()));
        }
        objects.push(PartObject {
            object_id: stem,
            category: category.unwrap_or_default(),
            image: Arc::new(image),
            parts,
        });
    }
    if contested > 0 {
        tracing::warn!(contested, "overlapping part pixels resolved during conversion");
    }
    Ok((PartDataset::new(objects)?, contested))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_names() {
        assert_eq!(tag_name("Quadruped Head", "Quadruped"), "head");
        assert_eq!(tag_name("Car Side Mirror", "Car"), "side_mirror");
        assert_eq!(tag_name("wing", "Aeroplane"), "wing");
    }

    #[test]
    fn square_polygon_fill() {
        let mut m = BitMask::new(6, 6).unwrap();
        fill_polygon(&mut m, &[1.0, 1.0, 4.0, 1.0, 4.0, 3.0, 1.0, 3.0]);
        let want = BitMask::from_fn(6, 6, |r, c| (1..3).contains(&r) && (1..4).contains(&c)).unwrap();
        assert_eq!(m, want);
    }

    #[test]
    fn converts_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        image::RgbImage::new(8, 8).save(dir.path().join("n01_1.png")).unwrap();
        let json = serde_json::json!({
            "images": [{"id": 1, "file_name": "n01_1.png", "width": 8, "height": 8}],
            "categories": [
                {"id": 1, "name": "Quadruped Head", "supercategory": "Quadruped"},
                {"id": 2, "name": "Quadruped Body", "supercategory": "Quadruped"}
            ],
            "annotations": [
                {"image_id": 1, "category_id": 1, "segmentation": [[0, 0, 4, 0, 4, 4, 0, 4]]},
                {"image_id": 1, "category_id": 2, "segmentation": [[2, 2, 8, 2, 8, 8, 2, 8]]}
            ]
        });
        let path = dir.path().join("ann.json");
        std::fs::write(&path, json.to_string()).unwrap();
        let (ds, contested) = convert_coco_parts(&path, dir.path()).unwrap();
        assert_eq!(contested, 4);
        let obj = &ds.objects()[0];
        assert_eq!(obj.category, "Quadruped");
        let tags: Vec<&str> = obj.tags().collect();
        assert_eq!(tags, ["body", "head"]);
        assert_eq!(obj.part("body").unwrap().mask.count(), 36);
        assert_eq!(obj.part("head").unwrap().mask.count(), 12);
    }
}
