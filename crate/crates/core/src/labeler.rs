//! Semantic labels for ArtMeshes: seed voting from weak score maps, boundary
//! snapping of pixel label maps, and hierarchy-based propagation to meshes
//! that received no vote.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ArtMesh, CharacterModel, ClassId, MeshId, Taxonomy};
use crate::pngio::{self, PngError};
use crate::raster::VisibilityMask;
use crate::tensor::Tensor;

/// Label-map value for pixels without a class.
pub const BACKGROUND: u8 = 255;

pub const DEFAULT_TAU_BG: f64 = 0.05;

/// Tokens of Live2D structural names that say nothing about the body part.
const GENERIC_TOKENS: [&str; 9] = [
    "part", "art", "mesh", "layer", "group", "copy", "clip", "mask", "new",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no labeled mesh to propagate from")]
    NoLabeledMesh,
    #[error("unknown mesh {0}")]
    UnknownMesh(MeshId),
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error("threshold {0} outside [0, 1)")]
    InvalidThreshold(f64),
    #[error("score value {value} at index {index} outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f32 },
}

/// `H x W x N` weak class activations in `[0, 1]`, classes innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStack {
    pub width: u32,
    pub height: u32,
    pub n_classes: usize,
    pub scores: Vec<f32>,
}

impl ScoreStack {
    pub fn new(
        width: u32,
        height: u32,
        n_classes: usize,
        scores: Vec<f32>,
    ) -> Result<Self, LabelError> {
        let want = width as usize * height as usize * n_classes;
        if scores.len() != want {
            return Err(LabelError::DimensionMismatch(format!(
                "{} scores for {width}x{height}x{n_classes}",
                scores.len()
            )));
        }
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(LabelError::ScoreOutOfRange { index, value });
        }
        Ok(ScoreStack {
            width,
            height,
            n_classes,
            scores,
        })
    }

    /// Builds a stack in taxonomy order from a tensor whose channels are named
    /// by `channels` (the JSON sidecar). Classes without a channel score 0.
    pub fn from_tensor(
        t: &Tensor,
        channels: &[String],
        taxonomy: &Taxonomy,
    ) -> Result<Self, LabelError> {
        if channels.len() != t.channels as usize {
            return Err(LabelError::DimensionMismatch(format!(
                "sidecar names {} channels, tensor has {}",
                channels.len(),
                t.channels
            )));
        }
        let map: Vec<ClassId> = channels
            .iter()
            .map(|c| {
                taxonomy
                    .class_id(c)
                    .ok_or_else(|| LabelError::UnknownClass(c.clone()))
            })
            .collect::<Result<_, _>>()?;
        let n = taxonomy.len();
        let pixels = t.width as usize * t.height as usize;
        let mut scores = vec![0.0f32; pixels * n];
        for p in 0..pixels {
            for (ch, class) in map.iter().enumerate() {
                scores[p * n + class.index()] = t.data[p * t.channels as usize + ch];
            }
        }
        ScoreStack::new(t.width, t.height, n, scores)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            height: self.height,
            width: self.width,
            channels: self.n_classes as u32,
            data: self.scores.clone(),
        }
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.scores[p * self.n_classes..(p + 1) * self.n_classes]
    }
}

/// Per-pixel class indices; [`BACKGROUND`] where no class applies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn background(width: u32, height: u32) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![BACKGROUND; width as usize * height as usize],
        }
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), LabelError> {
        if self.labels.len() != self.width as usize * self.height as usize {
            return Err(LabelError::DimensionMismatch("label buffer size".into()));
        }
        if let Some(&bad) = self
            .labels
            .iter()
            .find(|&&l| l != BACKGROUND && l as usize >= taxonomy.len())
        {
            return Err(LabelError::UnknownClass(format!("index {bad}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LabelSource {
    Vote,
    String,
    Sibling,
    Parent,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub class: Option<ClassId>,
    pub confidence: f64,
    pub source: Option<LabelSource>,
}

impl LabelEntry {
    pub const UNLABELED: LabelEntry = LabelEntry {
        class: None,
        confidence: 0.0,
        source: None,
    };

    pub fn is_manual(&self) -> bool {
        self.source == Some(LabelSource::Manual)
    }
}

/// One label entry per mesh of a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelAssignment {
    pub entries: BTreeMap<MeshId, LabelEntry>,
}

#[derive(Serialize, Deserialize)]
struct EntryDoc {
    mesh: MeshId,
    #[serde(flatten)]
    entry: LabelEntry,
}

impl LabelAssignment {
    /// Every mesh unlabeled.
    pub fn unlabeled(model: &CharacterModel) -> Self {
        LabelAssignment {
            entries: model
                .meshes
                .iter()
                .map(|m| (m.id, LabelEntry::UNLABELED))
                .collect(),
        }
    }

    /// Labels stored in the model are treated as human-verified.
    pub fn from_model(model: &CharacterModel) -> Self {
        LabelAssignment {
            entries: model
                .meshes
                .iter()
                .map(|m| {
                    let e = match m.label {
                        Some(c) => LabelEntry {
                            class: Some(c),
                            confidence: 1.0,
                            source: Some(LabelSource::Manual),
                        },
                        None => LabelEntry::UNLABELED,
                    };
                    (m.id, e)
                })
                .collect(),
        }
    }

    pub fn get(&self, id: MeshId) -> Option<&LabelEntry> {
        self.entries.get(&id)
    }

    pub fn class_of(&self, id: MeshId) -> Option<ClassId> {
        self.entries.get(&id).and_then(|e| e.class)
    }

    pub fn labeled_count(&self) -> usize {
        self.entries.values().filter(|e| e.class.is_some()).count()
    }

    /// Checks that exactly the model's meshes are present with valid classes.
    pub fn check(&self, model: &CharacterModel) -> Result<(), LabelError> {
        for m in &model.meshes {
            if !self.entries.contains_key(&m.id) {
                return Err(LabelError::UnknownMesh(m.id));
            }
        }
        for (id, e) in &self.entries {
            if model.mesh(*id).is_none() {
                return Err(LabelError::UnknownMesh(*id));
            }
            if let Some(c) = e.class {
                if !model.taxonomy.contains(c) {
                    return Err(LabelError::UnknownClass(format!("index {}", c.0)));
                }
            }
        }
        Ok(())
    }

    /// Writes the assigned classes into a copy of the model.
    pub fn apply(&self, model: &CharacterModel) -> CharacterModel {
        let mut out = model.clone();
        for m in &mut out.meshes {
            m.label = self.class_of(m.id);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let docs: Vec<EntryDoc> = self
            .entries
            .iter()
            .map(|(&mesh, &entry)| EntryDoc { mesh, entry })
            .collect();
        serde_json::to_string_pretty(&docs).expect("assignment serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let docs: Vec<EntryDoc> = serde_json::from_str(text)?;
        Ok(LabelAssignment {
            entries: docs.into_iter().map(|d| (d.mesh, d.entry)).collect(),
        })
    }
}

fn check_masks(model: &CharacterModel, masks: &[VisibilityMask]) -> Result<(), LabelError> {
    if masks.len() != model.meshes.len() {
        return Err(LabelError::DimensionMismatch(format!(
            "{} masks for {} meshes",
            masks.len(),
            model.meshes.len()
        )));
    }
    for (m, v) in model.meshes.iter().zip(masks) {
        if v.mesh_id != m.id
            || v.mask.width != model.canvas_width
            || v.mask.height != model.canvas_height
        {
            return Err(LabelError::DimensionMismatch(format!(
                "mask for mesh {} does not match the model",
                m.id
            )));
        }
    }
    Ok(())
}

/// Index of the largest value; ties go to the lower index.
fn argmax<T: PartialOrd + Copy>(values: impl IntoIterator<Item = T>) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

/// Seeds one label per mesh: the class with the highest mean score over the
/// mesh's visible region. Meshes with no visible pixel stay unlabeled.
pub fn vote_seed_labels(
    model: &CharacterModel,
    stack: &ScoreStack,
    masks: &[VisibilityMask],
) -> Result<LabelAssignment, LabelError> {
    if stack.width != model.canvas_width || stack.height != model.canvas_height {
        return Err(LabelError::DimensionMismatch(format!(
            "score stack {}x{} vs canvas {}x{}",
            stack.width, stack.height, model.canvas_width, model.canvas_height
        )));
    }
    if stack.n_classes != model.taxonomy.len() {
        return Err(LabelError::DimensionMismatch(format!(
            "score stack has {} classes, taxonomy {}",
            stack.n_classes,
            model.taxonomy.len()
        )));
    }
    check_masks(model, masks)?;
    let mut out = LabelAssignment::default();
    for vm in masks {
        let mut sums = vec![0.0f64; stack.n_classes];
        let mut count = 0usize;
        for (p, _) in vm.mask.bits.iter().enumerate().filter(|(_, &b)| b) {
            for (s, &v) in sums.iter_mut().zip(stack.pixel(p)) {
                *s += v as f64;
            }
            count += 1;
        }
        let entry = if count == 0 {
            LabelEntry::UNLABELED
        } else {
            let means = sums.iter().map(|s| s / count as f64);
            let (class, mean) = argmax(means).expect("taxonomy is non-empty");
            LabelEntry {
                class: Some(ClassId(class as u8)),
                confidence: mean,
                source: Some(LabelSource::Vote),
            }
        };
        out.entries.insert(vm.mesh_id, entry);
    }
    Ok(out)
}

/// Naive per-pixel argmax over classes, the baseline that seed voting
/// improves on. Pixels whose best score is below `tau_bg` are background.
pub fn max_pool_labels(stack: &ScoreStack, tau_bg: f64) -> Result<LabelMap, LabelError> {
    if !(0.0..1.0).contains(&tau_bg) {
        return Err(LabelError::InvalidThreshold(tau_bg));
    }
    let n = stack.width as usize * stack.height as usize;
    let labels = (0..n)
        .map(|p| match argmax(stack.pixel(p).iter().copied()) {
            Some((c, v)) if (v as f64) >= tau_bg => c as u8,
            _ => BACKGROUND,
        })
        .collect();
    Ok(LabelMap {
        width: stack.width,
        height: stack.height,
        labels,
    })
}

/// For each pixel, the index (into `model.meshes`) of the topmost mesh whose
/// visibility mask contains it.
pub fn owner_map(model: &CharacterModel, masks: &[VisibilityMask]) -> Vec<Option<usize>> {
    let mut owners = vec![None; model.pixel_count()];
    for i in model.draw_sequence() {
        for (p, &b) in masks[i].mask.bits.iter().enumerate() {
            if b {
                owners[p] = Some(i);
            }
        }
    }
    owners
}

fn render_with_owners(
    model: &CharacterModel,
    assignment: &LabelAssignment,
    owners: &[Option<usize>],
) -> LabelMap {
    LabelMap {
        width: model.canvas_width,
        height: model.canvas_height,
        labels: owners
            .iter()
            .map(|o| {
                o.and_then(|i| assignment.class_of(model.meshes[i].id))
                    .map_or(BACKGROUND, |c| c.0)
            })
            .collect(),
    }
}

/// Pixel labels from mesh labels: each pixel takes the class of the topmost
/// mesh visible there, or background when that mesh is unlabeled.
pub fn render_label_map(
    model: &CharacterModel,
    assignment: &LabelAssignment,
    masks: &[VisibilityMask],
) -> Result<LabelMap, LabelError> {
    check_masks(model, masks)?;
    Ok(render_with_owners(
        model,
        assignment,
        &owner_map(model, masks),
    ))
}

/// Regularizes an arbitrary pixel label map to fragment boundaries. Each
/// mesh takes the majority non-background class over the pixels it owns
/// (ties go to the lower class index); meshes owning no labeled pixel keep
/// their previous entry, and manual labels are never replaced. The returned
/// map is re-rendered from the resulting assignment.
pub fn snap_labels(
    model: &CharacterModel,
    label_map: &LabelMap,
    masks: &[VisibilityMask],
    previous: &LabelAssignment,
) -> Result<(LabelMap, LabelAssignment), LabelError> {
    if label_map.width != model.canvas_width || label_map.height != model.canvas_height {
        return Err(LabelError::DimensionMismatch(format!(
            "label map {}x{} vs canvas {}x{}",
            label_map.width, label_map.height, model.canvas_width, model.canvas_height
        )));
    }
    label_map.validate(&model.taxonomy)?;
    check_masks(model, masks)?;
    let owners = owner_map(model, masks);
    let n_classes = model.taxonomy.len();
    let mut hist = vec![vec![0u64; n_classes]; model.meshes.len()];
    for (p, o) in owners.iter().enumerate() {
        let l = label_map.labels[p];
        if let (Some(i), true) = (o, l != BACKGROUND) {
            hist[*i][l as usize] += 1;
        }
    }
    let mut out = previous.clone();
    for (mesh, h) in model.meshes.iter().zip(&hist) {
        let entry = out.entries.entry(mesh.id).or_insert(LabelEntry::UNLABELED);
        if entry.is_manual() {
            continue;
        }
        let total: u64 = h.iter().sum();
        if total == 0 {
            continue;
        }
        let (class, votes) = argmax(h.iter().copied()).expect("non-empty taxonomy");
        *entry = LabelEntry {
            class: Some(ClassId(class as u8)),
            confidence: votes as f64 / total as f64,
            source: Some(LabelSource::Vote),
        };
    }
    Ok((render_with_owners(model, &out, &owners), out))
}

/// Visible pixel count per mesh.
pub fn visible_areas(masks: &[VisibilityMask]) -> BTreeMap<MeshId, u64> {
    masks
        .iter()
        .map(|m| (m.mesh_id, m.mask.count() as u64))
        .collect()
}

/// Lowercased name tokens: split on non-alphanumerics, camel-case humps and
/// letter/digit boundaries; keeps tokens of at least three characters that
/// are not numbers or generic structural words.
pub fn name_tokens(name: &str) -> BTreeSet<String> {
    let chars: Vec<char> = name.chars().collect();
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_alphanumeric() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            continue;
        }
        if let Some(&prev) = cur.chars().last().as_ref() {
            let next = chars.get(i + 1).copied();
            let hump = prev.is_lowercase() && c.is_uppercase();
            let acronym_end =
                prev.is_uppercase() && c.is_uppercase() && next.is_some_and(|n| n.is_lowercase());
            let digit_edge = prev.is_ascii_digit() != c.is_ascii_digit();
            if hump || acronym_end || digit_edge {
                words.push(std::mem::take(&mut cur));
            }
        }
        cur.push(c);
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
        .into_iter()
        .map(|w| w.to_lowercase())
        .filter(|w| {
            w.chars().count() >= 3
                && !w.chars().all(|c| c.is_ascii_digit())
                && !GENERIC_TOKENS.contains(&w.as_str())
        })
        .collect()
}

/// Weighted majority vote; ties go to the lower class index. Returns the
/// winner and its share of the total weight.
fn majority<'a>(
    voters: impl Iterator<Item = (&'a ArtMesh, ClassId)>,
    weights: &BTreeMap<MeshId, u64>,
) -> Option<(ClassId, f64)> {
    let mut tally: BTreeMap<ClassId, u64> = BTreeMap::new();
    for (mesh, class) in voters {
        let w = weights.get(&mesh.id).copied().unwrap_or(0).max(1);
        *tally.entry(class).or_default() += w;
    }
    let total: u64 = tally.values().sum();
    let mut best: Option<(ClassId, u64)> = None;
    for (&c, &w) in &tally {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((c, w));
        }
    }
    best.map(|(c, w)| (c, w as f64 / total as f64))
}

/// Fills unlabeled meshes from labeled ones in three stages: shared name
/// tokens, then siblings in the same group, then the nearest ancestor group
/// with labeled descendants. Votes are weighted by visible area (at least 1
/// per mesh) and only meshes labeled on entry act as voters. Labeled and
/// manually edited meshes are left untouched.
pub fn propagate_labels(
    model: &CharacterModel,
    assignment: &LabelAssignment,
    visible_area: &BTreeMap<MeshId, u64>,
) -> Result<LabelAssignment, LabelError> {
    let sources: Vec<(&ArtMesh, ClassId)> = model
        .meshes
        .iter()
        .filter_map(|m| assignment.class_of(m.id).map(|c| (m, c)))
        .collect();
    if sources.is_empty() {
        return Err(LabelError::NoLabeledMesh);
    }
    let source_tokens: Vec<BTreeSet<String>> =
        sources.iter().map(|(m, _)| name_tokens(&m.name)).collect();

    let mut out = assignment.clone();
    for mesh in &model.meshes {
        let entry = out.entries.entry(mesh.id).or_insert(LabelEntry::UNLABELED);
        if entry.class.is_some() || entry.is_manual() {
            continue;
        }
        let tokens = name_tokens(&mesh.name);
        let by_string = majority(
            sources
                .iter()
                .zip(&source_tokens)
                .filter(|(_, t)| !t.is_disjoint(&tokens))
                .map(|(s, _)| *s),
            visible_area,
        );
        let resolved = by_string
            .map(|r| (r, LabelSource::String))
            .or_else(|| {
                majority(
                    sources
                        .iter()
                        .filter(|(s, _)| s.hierarchy_path == mesh.hierarchy_path)
                        .copied(),
                    visible_area,
                )
                .map(|r| (r, LabelSource::Sibling))
            })
            .or_else(|| {
                (0..=mesh.hierarchy_path.len()).rev().find_map(|depth| {
                    let group = &mesh.hierarchy_path[..depth];
                    majority(
                        sources
                            .iter()
                            .filter(|(s, _)| s.hierarchy_path.starts_with(group))
                            .copied(),
                        visible_area,
                    )
                    .map(|r| (r, LabelSource::Parent))
                })
            });
        if let Some(((class, confidence), source)) = resolved {
            *entry = LabelEntry {
                class: Some(class),
                confidence,
                source: Some(source),
            };
        }
    }
    Ok(out)
}

/// Overwrites one mesh's label as a human correction.
pub fn set_manual_label(
    model: &CharacterModel,
    assignment: &LabelAssignment,
    mesh_id: MeshId,
    class: Option<ClassId>,
) -> Result<LabelAssignment, LabelError> {
    if model.mesh(mesh_id).is_none() {
        return Err(LabelError::UnknownMesh(mesh_id));
    }
    if let Some(c) = class {
        if !model.taxonomy.contains(c) {
            return Err(LabelError::UnknownClass(format!("index {}", c.0)));
        }
    }
    let mut out = assignment.clone();
    out.entries.insert(
        mesh_id,
        LabelEntry {
            class,
            confidence: 1.0,
            source: Some(LabelSource::Manual),
        },
    );
    Ok(out)
}

/// Display color of a class: hues spaced by the golden angle, so colors
/// depend only on the class index.
pub fn class_color(class: ClassId) -> [u8; 3] {
    let h = (class.0 as f64 * 137.507_764).rem_euclid(360.0) / 60.0;
    let (s, v) = (0.65, 0.95);
    let c = v * s;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r, g, b].map(|u| ((u + v - c) * 255.0).round() as u8)
}

/// Indexed PNG whose palette follows taxonomy order; background is
/// index 255 and transparent.
pub fn encode_label_map(map: &LabelMap) -> Result<Vec<u8>, PngError> {
    let mut palette: Vec<[u8; 3]> = (0..=254).map(|i| class_color(ClassId(i))).collect();
    palette.push([0, 0, 0]);
    pngio::encode_indexed(map.width, map.height, &map.labels, &palette, &[BACKGROUND])
}

pub fn decode_label_map(bytes: &[u8]) -> Result<LabelMap, PngError> {
    let (width, height, labels) = pngio::decode_indices(bytes)?;
    Ok(LabelMap {
        width,
        height,
        labels,
    })
}
