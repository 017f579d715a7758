//! Target/reference pair sampling.
//!
//! Training draws a random object, a random non-empty subset of its parts as
//! the target, and a different object of the same category as reference:
//! the same parts on the reference form the positive mask, the remaining
//! parts the negative mask. Evaluation enumerates every single part, every
//! connected pair of parts and the whole object, and picks the reference
//! deterministically as the next object id of the same category.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::RgbImage;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskops::{connected_components, BitMask, Connectivity};
use crate::prompt::ReferenceGuidance;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    pub tag: String,
    pub mask: BitMask,
}

/// One annotated object: an image plus tagged, pairwise-disjoint part masks.
#[derive(Debug, Clone)]
pub struct PartObject {
    pub object_id: String,
    pub category: String,
    pub image: Arc<RgbImage>,
    pub parts: Vec<Part>,
}

impl PartObject {
    pub fn dims(&self) -> (usize, usize) {
        (self.image.height() as usize, self.image.width() as usize)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().map(|p| p.tag.as_str())
    }

    pub fn part(&self, tag: &str) -> Option<&Part> {
        self.parts.iter().find(|p| p.tag == tag)
    }

    /// Union of the masks whose tag satisfies `select`.
    pub fn union_where(&self, mut select: impl FnMut(&str) -> bool) -> BitMask {
        let (h, w) = self.dims();
        let mut out = BitMask::new(h, w).expect("object image is nonempty");
        for p in self.parts.iter().filter(|p| select(&p.tag)) {
            out = out.union(&p.mask).expect("part masks match the image");
        }
        out
    }

    pub fn union_of(&self, tags: &[String]) -> BitMask {
        self.union_where(|t| tags.iter().any(|s| s == t))
    }

    pub fn whole(&self) -> BitMask {
        self.union_where(|_| true)
    }
}

/// Objects sorted by id (byte-wise), grouped by category.
#[derive(Debug, Clone, Default)]
pub struct PartDataset {
    objects: Vec<PartObject>,
    by_category: BTreeMap<String, Vec<usize>>,
}

impl PartDataset {
    pub fn new(mut objects: Vec<PartObject>) -> Result<Self> {
        objects.sort_by(|a, b| a.object_id.as_bytes().cmp(b.object_id.as_bytes()));
        for pair in objects.windows(2) {
            if pair[0].object_id == pair[1].object_id {
                return Err(Error::Dataset {
                    entry: pair[0].object_id.clone(),
                    reason: "duplicate object id".into(),
                });
            }
        }
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, o) in objects.iter().enumerate() {
            by_category.entry(o.category.clone()).or_default().push(i);
        }
        Ok(Self {
            objects,
            by_category,
        })
    }

    pub fn objects(&self) -> &[PartObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.by_category.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn get(&self, object_id: &str) -> Option<&PartObject> {
        self.objects
            .binary_search_by(|o| o.object_id.as_bytes().cmp(object_id.as_bytes()))
            .ok()
            .map(|i| &self.objects[i])
    }

    pub fn into_objects(self) -> Vec<PartObject> {
        self.objects
    }
}

/// Probabilities of keeping only one reference mask during training.
///
/// With both masks present: keep only the positive with probability
/// `positive_only`, only the negative with `negative_only`, neither with
/// `neither`, and both otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceDropout {
    pub positive_only: f64,
    pub negative_only: f64,
    pub neither: f64,
}

impl Default for ReferenceDropout {
    fn default() -> Self {
        Self::even(0.25)
    }
}

impl ReferenceDropout {
    /// Total single-mask probability `p`, split evenly between polarities.
    pub fn even(p: f64) -> Self {
        Self {
            positive_only: p / 2.0,
            negative_only: p / 2.0,
            neither: 0.0,
        }
    }

    pub fn disabled() -> Self {
        Self::even(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.positive_only, self.negative_only, self.neither];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || ps.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(format!("invalid reference dropout {self:?}")));
        }
        Ok(())
    }
}

/// Randomly reduce a two-mask reference to one mask. Guidance that already
/// lacks a mask is returned unchanged.
pub fn reference_dropout<R: Rng + ?Sized>(
    guidance: ReferenceGuidance,
    rng: &mut R,
    dropout: &ReferenceDropout,
) -> ReferenceGuidance {
    if !(guidance.has_positive() && guidance.has_negative()) {
        return guidance;
    }
    let u: f64 = rng.gen();
    let (keep_pos, keep_neg) = if u < dropout.positive_only {
        (true, false)
    } else if u < dropout.positive_only + dropout.negative_only {
        (false, true)
    } else if u < dropout.positive_only + dropout.negative_only + dropout.neither {
        (false, false)
    } else {
        (true, true)
    };
    ReferenceGuidance {
        image: guidance.image,
        positive: if keep_pos { guidance.positive } else { None },
        negative: if keep_neg { guidance.negative } else { None },
    }
}

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub target_id: String,
    pub reference_id: String,
    pub image: Arc<RgbImage>,
    pub gt: BitMask,
    pub guidance: ReferenceGuidance,
    pub selected_tags: Vec<String>,
}

fn guidance_for(reference: &PartObject, tags: &[String]) -> ReferenceGuidance {
    let pos = reference.union_of(tags);
    let neg = reference.union_where(|t| !tags.iter().any(|s| s == t));
    ReferenceGuidance {
        image: (*reference.image).clone(),
        positive: Some(pos),
        negative: Some(neg),
    }
}

/// Draw one training pair, then apply reference dropout.
pub fn sample_training_pair<R: Rng + ?Sized>(
    dataset: &PartDataset,
    rng: &mut R,
    dropout: &ReferenceDropout,
) -> Result<TrainingPair> {
    let usable: Vec<&[usize]> = dataset
        .categories()
        .map(|(_, ids)| ids)
        .filter(|ids| ids.len() >= 2)
        .collect();
    if usable.is_empty() {
        return Err(Error::Sampling(
            "no category has at least two objects to pair".into(),
        ));
    }
    let objects = dataset.objects();
    // Uniform over objects, redrawing objects whose category is a singleton.
    let target_idx = loop {
        let i = rng.gen_range(0..objects.len());
        let cat = &objects[i].category;
        if dataset.by_category[cat].len() >= 2 {
            break i;
        }
    };
    let target = &objects[target_idx];
    let n = target.parts.len();
    let k = rng.gen_range(1..=n);
    let mut picks = index::sample(rng, n, k).into_vec();
    picks.sort_unstable();
    let tags: Vec<String> = picks.iter().map(|&i| target.parts[i].tag.clone()).collect();

    let peers: Vec<usize> = dataset.by_category[&target.category]
        .iter()
        .copied()
        .filter(|&i| i != target_idx)
        .collect();
    let reference = &objects[*peers.choose(rng).expect("category has a peer")];

    let guidance = reference_dropout(guidance_for(reference, &tags), rng, dropout);
    Ok(TrainingPair {
        target_id: target.object_id.clone(),
        reference_id: reference.object_id.clone(),
        image: target.image.clone(),
        gt: target.union_of(&tags),
        guidance,
        selected_tags: tags,
    })
}

/// True when the union of `a` and `b` is one 8-connected region.
pub fn parts_connected(a: &BitMask, b: &BitMask) -> Result<bool> {
    let u = a.union(b)?;
    Ok(connected_components(&u, Connectivity::Eight).count() == 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComboKind {
    Single,
    Pair,
    Whole,
}

/// Part-tag subsets evaluated for one object: singles in part order,
/// connected pairs in index order, then the whole object. With a single
/// part the whole object is the single and is emitted once.
pub fn enumerate_eval_combinations(obj: &PartObject) -> Vec<(ComboKind, Vec<String>)> {
    let n = obj.parts.len();
    let mut out: Vec<(ComboKind, Vec<String>)> = obj
        .parts
        .iter()
        .map(|p| (ComboKind::Single, vec![p.tag.clone()]))
        .collect();
    for i in 0..n {
        for j in i + 1..n {
            if parts_connected(&obj.parts[i].mask, &obj.parts[j].mask).unwrap_or(false) {
                out.push((
                    ComboKind::Pair,
                    vec![obj.parts[i].tag.clone(), obj.parts[j].tag.clone()],
                ));
            }
        }
    }
    if n > 1 {
        out.push((ComboKind::Whole, obj.tags().map(String::from).collect()));
    }
    out
}

/// Same-category object with the next larger id, wrapping to the smallest.
pub fn select_reference<'a>(eval_set: &'a PartDataset, current: &PartObject) -> Result<&'a PartObject> {
    let ids = eval_set
        .by_category
        .get(&current.category)
        .ok_or_else(|| Error::Sampling(format!("unknown category {}", current.category)))?;
    if ids.len() < 2 {
        return Err(Error::Sampling(format!(
            "{} is the only object of category {}",
            current.object_id, current.category
        )));
    }
    let objects = eval_set.objects();
    let next = ids
        .iter()
        .map(|&i| &objects[i])
        .find(|o| o.object_id.as_bytes() > current.object_id.as_bytes())
        .unwrap_or(&objects[ids[0]]);
    Ok(next)
}

/// One combination-evaluation case.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub target_id: String,
    pub reference_id: String,
    pub kind: ComboKind,
    pub combo: Vec<String>,
    pub image: Arc<RgbImage>,
    pub gt: BitMask,
    pub guidance: ReferenceGuidance,
}

impl EvalSample {
    /// Stable identifier `target_id:tag+tag`.
    pub fn id(&self) -> String {
        format!("{}:{}", self.target_id, self.combo.join("+"))
    }

    pub fn descriptor(&self) -> EvalDescriptor {
        EvalDescriptor {
            target_id: self.target_id.clone(),
            combo: self.combo.clone(),
            reference_id: self.reference_id.clone(),
            kind: self.kind,
        }
    }
}

/// One line of the evaluation manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalDescriptor {
    pub target_id: String,
    pub combo: Vec<String>,
    pub reference_id: String,
    pub kind: ComboKind,
}

/// Every combination of every object whose category has a reference
/// candidate, in object-id order.
pub fn build_eval_samples(eval_set: &PartDataset) -> Vec<EvalSample> {
    let mut out = Vec::new();
    for obj in eval_set.objects() {
        let Ok(reference) = select_reference(eval_set, obj) else {
            continue;
        };
        for (kind, combo) in enumerate_eval_combinations(obj) {
            out.push(EvalSample {
                target_id: obj.object_id.clone(),
                reference_id: reference.object_id.clone(),
                kind,
                gt: obj.union_of(&combo),
                guidance: guidance_for(reference, &combo),
                image: obj.image.clone(),
                combo,
            });
        }
    }
    out
}

/// JSON-lines manifest, one descriptor per line.
pub fn manifest_jsonl(samples: &[EvalSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&s.descriptor())?);
        out.push('\n');
    }
    Ok(out)
}
