//! In-memory character model: texture atlases, ArtMeshes, deformation
//! parameters and the semantic taxonomy.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of an ArtMesh, unique within a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeshId(pub u32);

impl fmt::Display for MeshId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Index of a class in the model's [`Taxonomy`].
///
/// Index 255 is reserved for background in label maps, so a taxonomy holds at
/// most [`MAX_CLASSES`] entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u8);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const MAX_CLASSES: usize = 255;

pub const DEFAULT_CLASSES: [&str; 19] = [
    "Hair",
    "Face",
    "Eyes",
    "Eyebrows",
    "Mouth",
    "Ears",
    "Neck",
    "Torso",
    "Arms",
    "Hands",
    "Legs",
    "Feet",
    "Topwear",
    "Bottomwear",
    "Handwear",
    "Footwear",
    "Headwear",
    "Accessories",
    "Other",
];

pub const DEFAULT_STRATIFY: [&str; 4] = ["Hair", "Handwear", "Topwear", "Bottomwear"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed archive: {0}")]
    MalformedArchive(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl ModelError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::SchemaViolation {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Ordered list of semantic class names plus the subset eligible for
/// depth stratification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    classes: Vec<String>,
    stratify: Vec<ClassId>,
}

impl Taxonomy {
    pub fn new<S: AsRef<str>>(classes: &[S], stratify: &[S]) -> Result<Self, ModelError> {
        let classes: Vec<String> = classes.iter().map(|c| c.as_ref().to_string()).collect();
        if classes.is_empty() {
            return Err(ModelError::schema("taxonomy", "taxonomy is empty"));
        }
        if classes.len() > MAX_CLASSES {
            return Err(ModelError::schema(
                "taxonomy",
                format!("at most {MAX_CLASSES} classes are supported"),
            ));
        }
        let mut seen = HashSet::new();
        for (i, name) in classes.iter().enumerate() {
            if name.is_empty() {
                return Err(ModelError::schema(
                    format!("taxonomy[{i}]"),
                    "empty class name",
                ));
            }
            if !seen.insert(name.as_str()) {
                return Err(ModelError::schema(
                    format!("taxonomy[{i}]"),
                    format!("duplicate class name {name:?}"),
                ));
            }
        }
        let mut ids = Vec::with_capacity(stratify.len());
        for (i, name) in stratify.iter().enumerate() {
            let name = name.as_ref();
            let pos = classes.iter().position(|c| c == name).ok_or_else(|| {
                ModelError::schema(format!("stratify[{i}]"), format!("unknown class {name:?}"))
            })?;
            let id = ClassId(pos as u8);
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        ids.sort();
        Ok(Taxonomy {
            classes,
            stratify: ids,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, class: ClassId) -> Option<&str> {
        self.classes.get(class.index()).map(String::as_str)
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.classes
            .iter()
            .position(|c| c == name)
            .map(|i| ClassId(i as u8))
    }

    pub fn contains(&self, class: ClassId) -> bool {
        class.index() < self.classes.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.classes.len()).map(|i| ClassId(i as u8))
    }

    pub fn stratify_set(&self) -> &[ClassId] {
        &self.stratify
    }

    pub fn stratify_names(&self) -> Vec<&str> {
        self.stratify.iter().filter_map(|&c| self.name(c)).collect()
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::new(&DEFAULT_CLASSES, &DEFAULT_STRATIFY).expect("default taxonomy is valid")
    }
}

/// Straight-alpha 8-bit RGBA texture atlas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextureAtlas {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[u8; 4]>,
}

impl TextureAtlas {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 4]>) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::schema(
                "atlases",
                "atlas dimensions must be >= 1",
            ));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(ModelError::schema(
                "atlases",
                format!(
                    "atlas has {} pixels, expected {}x{}",
                    pixels.len(),
                    width,
                    height
                ),
            ));
        }
        Ok(TextureAtlas {
            width,
            height,
            pixels,
        })
    }

    pub fn solid(width: u32, height: u32, rgba: [u8; 4]) -> Self {
        TextureAtlas {
            width,
            height,
            pixels: vec![rgba; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn texel(&self, x: u32, y: u32) -> [u8; 4] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }
}

/// One drawable fragment: a textured triangle mesh with a drawing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtMesh {
    pub id: MeshId,
    pub name: String,
    /// Group names from the root down to the group that holds this mesh.
    pub hierarchy_path: Vec<String>,
    /// Canvas pixel coordinates, y pointing down.
    pub vertices: Vec<[f64; 2]>,
    /// Normalized atlas coordinates, v = 0 is the top row.
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[u32; 3]>,
    pub texture_index: usize,
    pub draw_order: i64,
    pub opacity: f64,
    pub label: Option<ClassId>,
}

/// Per-vertex offsets of one mesh at the parameter extremes. The keyframe at
/// 0 is implicitly all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshKeyframes {
    pub mesh: MeshId,
    pub minus: Vec<[f64; 2]>,
    pub plus: Vec<[f64; 2]>,
}

impl MeshKeyframes {
    /// Piecewise-linear offset of vertex `i` at parameter value `t ∈ [-1, 1]`.
    pub fn offset(&self, i: usize, t: f64) -> [f64; 2] {
        let (k, w) = if t < 0.0 {
            (&self.minus[i], -t)
        } else {
            (&self.plus[i], t)
        };
        [k[0] * w, k[1] * w]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformParameter {
    pub name: String,
    pub keyframes: Vec<MeshKeyframes>,
}

impl DeformParameter {
    pub fn keyframes_for(&self, mesh: MeshId) -> Option<&MeshKeyframes> {
        self.keyframes.iter().find(|k| k.mesh == mesh)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterModel {
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub atlases: Vec<TextureAtlas>,
    pub meshes: Vec<ArtMesh>,
    pub parameters: Vec<DeformParameter>,
    pub taxonomy: Taxonomy,
    pub metadata: BTreeMap<String, String>,
}

impl CharacterModel {
    /// Checks every structural invariant. Parsing calls this; code that builds
    /// models programmatically should too.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return Err(ModelError::schema(
                "canvas",
                "canvas dimensions must be >= 1",
            ));
        }
        if self.atlases.is_empty() {
            return Err(ModelError::schema(
                "atlases",
                "at least one atlas is required",
            ));
        }
        for (i, atlas) in self.atlases.iter().enumerate() {
            if atlas.width == 0
                || atlas.height == 0
                || atlas.pixels.len() != atlas.width as usize * atlas.height as usize
            {
                return Err(ModelError::schema(
                    format!("atlases[{i}]"),
                    "atlas size does not match its pixel data",
                ));
            }
        }
        if self.meshes.is_empty() {
            return Err(ModelError::schema(
                "meshes",
                "a model needs at least one mesh",
            ));
        }
        for (i, mesh) in self.meshes.iter().enumerate() {
            self.validate_mesh(i, mesh)?;
        }

        let mut ids = HashSet::new();
        let mut orders: BTreeMap<i64, MeshId> = BTreeMap::new();
        for mesh in &self.meshes {
            if !ids.insert(mesh.id) {
                return Err(ModelError::InvariantViolation(format!(
                    "duplicate mesh id {}",
                    mesh.id
                )));
            }
            if let Some(other) = orders.insert(mesh.draw_order, mesh.id) {
                return Err(ModelError::InvariantViolation(format!(
                    "meshes {} and {} share draw order {}",
                    other, mesh.id, mesh.draw_order
                )));
            }
        }

        let mut names = HashSet::new();
        for (p, param) in self.parameters.iter().enumerate() {
            if param.name.is_empty() {
                return Err(ModelError::schema(
                    format!("parameters[{p}].name"),
                    "empty parameter name",
                ));
            }
            if !names.insert(param.name.as_str()) {
                return Err(ModelError::InvariantViolation(format!(
                    "duplicate parameter {:?}",
                    param.name
                )));
            }
            let mut seen = HashSet::new();
            for (k, kf) in param.keyframes.iter().enumerate() {
                let path = format!("parameters[{p}].keyframes[{k}]");
                let mesh = self.mesh(kf.mesh).ok_or_else(|| {
                    ModelError::InvariantViolation(format!(
                        "{path}: keyframes reference unknown mesh {}",
                        kf.mesh
                    ))
                })?;
                if !seen.insert(kf.mesh) {
                    return Err(ModelError::InvariantViolation(format!(
                        "{path}: mesh {} has two keyframe sets",
                        kf.mesh
                    )));
                }
                let n = mesh.vertices.len();
                if kf.minus.len() != n || kf.plus.len() != n {
                    return Err(ModelError::InvariantViolation(format!(
                        "{path}: offsets do not match the {n} vertices of mesh {}",
                        kf.mesh
                    )));
                }
                if kf
                    .minus
                    .iter()
                    .chain(&kf.plus)
                    .flatten()
                    .any(|v| !v.is_finite())
                {
                    return Err(ModelError::schema(path, "non-finite offset"));
                }
            }
        }
        Ok(())
    }

    fn validate_mesh(&self, i: usize, mesh: &ArtMesh) -> Result<(), ModelError> {
        let at = |field: &str| format!("meshes[{i}].{field}");
        if mesh.uvs.len() != mesh.vertices.len() {
            return Err(ModelError::schema(
                at("uvs"),
                format!(
                    "{} uvs for {} vertices",
                    mesh.uvs.len(),
                    mesh.vertices.len()
                ),
            ));
        }
        if let Some(j) = mesh
            .vertices
            .iter()
            .position(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(ModelError::schema(
                format!("meshes[{i}].vertices[{j}]"),
                "non-finite coordinate",
            ));
        }
        if let Some(j) = mesh
            .uvs
            .iter()
            .position(|uv| !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]))
        {
            return Err(ModelError::schema(
                format!("meshes[{i}].uvs[{j}]"),
                "uv outside [0, 1]",
            ));
        }
        let n = mesh.vertices.len() as u32;
        if let Some(j) = mesh
            .triangles
            .iter()
            .position(|t| t.iter().any(|&v| v >= n))
        {
            return Err(ModelError::schema(
                format!("meshes[{i}].triangles[{j}]"),
                format!("vertex index out of range (mesh has {n} vertices)"),
            ));
        }
        if mesh.texture_index >= self.atlases.len() {
            return Err(ModelError::schema(
                at("texture"),
                format!(
                    "texture {} but model has {} atlases",
                    mesh.texture_index,
                    self.atlases.len()
                ),
            ));
        }
        if !(0.0..=1.0).contains(&mesh.opacity) {
            return Err(ModelError::schema(at("opacity"), "opacity outside [0, 1]"));
        }
        if let Some(label) = mesh.label {
            if !self.taxonomy.contains(label) {
                return Err(ModelError::schema(
                    at("label"),
                    format!("class index {} outside taxonomy", label.0),
                ));
            }
        }
        if mesh.hierarchy_path.iter().any(String::is_empty) {
            return Err(ModelError::schema(at("path"), "empty group name"));
        }
        Ok(())
    }

    pub fn mesh(&self, id: MeshId) -> Option<&ArtMesh> {
        self.meshes.iter().find(|m| m.id == id)
    }

    pub fn mesh_index(&self, id: MeshId) -> Option<usize> {
        self.meshes.iter().position(|m| m.id == id)
    }

    pub fn mesh_ids(&self) -> Vec<MeshId> {
        self.meshes.iter().map(|m| m.id).collect()
    }

    /// Mesh indices sorted back-to-front (ascending draw order).
    pub fn draw_sequence(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.meshes.len()).collect();
        order.sort_by_key(|&i| (self.meshes[i].draw_order, self.meshes[i].id));
        order
    }

    pub fn parameter(&self, name: &str) -> Option<&DeformParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn pixel_count(&self) -> usize {
        self.canvas_width as usize * self.canvas_height as usize
    }

    pub fn meshes_of_class(&self, class: ClassId) -> BTreeSet<MeshId> {
        self.meshes
            .iter()
            .filter(|m| m.label == Some(class))
            .map(|m| m.id)
            .collect()
    }

    /// All group paths (including the root `[]`) in lexicographic order.
    pub fn groups(&self) -> BTreeSet<Vec<String>> {
        let mut groups = BTreeSet::new();
        groups.insert(Vec::new());
        for mesh in &self.meshes {
            for len in 1..=mesh.hierarchy_path.len() {
                groups.insert(mesh.hierarchy_path[..len].to_vec());
            }
        }
        groups
    }

    /// Breaks draw-order ties by ascending mesh id, shifting later meshes up
    /// only as far as needed to make the order strict.
    pub fn retie_draw_orders(&mut self) {
        let order = self.draw_sequence();
        let mut prev: Option<i64> = None;
        for i in order {
            let z = self.meshes[i].draw_order;
            let z = match prev {
                Some(p) if z <= p => p + 1,
                _ => z,
            };
            self.meshes[i].draw_order = z;
            prev = Some(z);
        }
    }
}
