use std::path::Path;
use std::sync::Arc;

use image::{GrayImage, Luma, Rgb, RgbImage};
use refcut_core::data::synth::{synthesize, SynthConfig};
use refcut_core::data::{export_tda, load_part_dataset, Split};
use refcut_core::maskops::BitMask;
use refcut_core::sampling::{build_eval_samples, manifest_jsonl, Part, PartDataset, PartObject};
use refcut_core::Error;

fn small_synth(seed: u64) -> PartDataset {
    synthesize(&SynthConfig {
        n_categories: 3,
        instances_per_category: 2,
        image_size: 48,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn assert_same(a: &PartDataset, b: &PartDataset) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.objects().iter().zip(b.objects()) {
        assert_eq!(x.object_id, y.object_id);
        assert_eq!(x.category, y.category);
        assert_eq!(*x.image, *y.image);
        assert_eq!(x.parts, y.parts);
    }
}

#[test]
fn export_then_load_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(3);
    let manifest = export_tda(&data, dir.path(), Split::Val).unwrap();
    assert_eq!(manifest.entries.len(), data.len());
    let back = load_part_dataset(dir.path(), Split::Val).unwrap();
    assert_same(&data, &back);
    assert_eq!(
        manifest_jsonl(&build_eval_samples(&data)).unwrap(),
        manifest_jsonl(&build_eval_samples(&back)).unwrap()
    );
}

#[test]
fn synthesis_is_seeded() {
    assert_same(&small_synth(5), &small_synth(5));
    let (a, b) = (small_synth(5), small_synth(6));
    assert!(a.objects().iter().zip(b.objects()).any(|(x, y)| x.image != y.image));
}

fn object(id: &str, category: &str, masks: Vec<(&str, BitMask)>) -> PartObject {
    let (h, w) = masks[0].1.dims();
    PartObject {
        object_id: id.into(),
        category: category.into(),
        image: Arc::new(RgbImage::from_pixel(w as u32, h as u32, Rgb([10, 20, 30]))),
        parts: masks
            .into_iter()
            .map(|(tag, mask)| Part { tag: tag.into(), mask })
            .collect(),
    }
}

#[test]
fn overlapping_parts_are_resolved_on_export() {
    let dir = tempfile::tempdir().unwrap();
    let a = BitMask::from_fn(6, 6, |r, _| r < 4).unwrap();
    let b = BitMask::from_fn(6, 6, |r, _| r >= 2).unwrap();
    let data = PartDataset::new(vec![
        object("o1", "cat", vec![("zeta", a.clone()), ("alpha", b.clone())]),
        object("o2", "cat", vec![("alpha", b), ("zeta", a)]),
    ])
    .unwrap();
    export_tda(&data, dir.path(), Split::Train).unwrap();
    let back = load_part_dataset(dir.path(), Split::Train).unwrap();
    for obj in back.objects() {
        let alpha = &obj.part("alpha").unwrap().mask;
        let zeta = &obj.part("zeta").unwrap().mask;
        assert!(alpha.intersection(zeta).unwrap().is_empty());
        // Contested rows 2..4 stay with the byte-wise smaller tag.
        assert_eq!(alpha.count(), 24);
        assert_eq!(zeta.count(), 12);
    }
}

fn write_object(root: &Path, image: (u32, u32), map: GrayImage, tags: &[&str]) {
    let dir = root.join("test").join("cup").join("c1");
    std::fs::create_dir_all(&dir).unwrap();
    RgbImage::new(image.0, image.1).save(dir.join("image.png")).unwrap();
    map.save(dir.join("parts.png")).unwrap();
    let meta = serde_json::json!({
        "format_version": 1,
        "object_id": "c1",
        "category": "cup",
        "tags": tags,
    });
    std::fs::write(dir.join("parts.json"), meta.to_string()).unwrap();
}

fn load_error(root: &Path) -> String {
    match load_part_dataset(root, Split::Test) {
        Err(Error::Dataset { entry, reason }) => format!("{entry}: {reason}"),
        other => panic!("expected a dataset error, got {:?}", other.map(|d| d.len())),
    }
}

#[test]
fn part_map_larger_than_image_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let map = GrayImage::from_fn(12, 10, |x, _| Luma([if x < 6 { 1 } else { 0 }]));
    write_object(dir.path(), (8, 8), map, &["handle"]);
    let msg = load_error(dir.path());
    assert!(msg.contains("c1") && msg.contains("12x10"), "{msg}");
}

#[test]
fn undeclared_index_and_empty_part_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let map = GrayImage::from_fn(8, 8, |x, _| Luma([if x < 4 { 1 } else { 3 }]));
    write_object(dir.path(), (8, 8), map, &["handle", "body"]);
    assert!(load_error(dir.path()).contains("index 3"));

    let dir = tempfile::tempdir().unwrap();
    let map = GrayImage::from_fn(8, 8, |_, _| Luma([1]));
    write_object(dir.path(), (8, 8), map, &["handle", "body"]);
    assert!(load_error(dir.path()).contains("no pixels"));
}

#[test]
fn mismatched_metadata_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let map = GrayImage::from_fn(8, 8, |_, _| Luma([1]));
    write_object(dir.path(), (8, 8), map, &["handle"]);
    let parts = dir.path().join("test/cup/c1/parts.json");
    let edited = std::fs::read_to_string(&parts).unwrap().replace("\"c1\"", "\"c2\"");
    std::fs::write(&parts, edited).unwrap();
    assert!(load_error(dir.path()).contains("directory is cup/c1"));
}
