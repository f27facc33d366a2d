//! CPU rasterization of ArtMeshes, back-to-front compositing, visibility
//! masks and keyframe pose deformation.
//!
//! Coverage is decided at pixel centers `(x + 0.5, y + 0.5)` with a top-left
//! tie rule, so triangles sharing an edge cover every pixel on it exactly
//! once. Within a mesh a later triangle overwrites an earlier one.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::image::{over, Mask, RgbaImage};
use crate::model::{ArtMesh, CharacterModel, MeshId, TextureAtlas};

pub const DEFAULT_TAU_VIS: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("unknown mesh {0}")]
    UnknownMesh(MeshId),
    #[error("visibility threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("parameter {name:?} value {value} outside [-1, 1]")]
    OutOfRange { name: String, value: f64 },
    #[error("model lacks parameter {0:?}")]
    MissingParameter(String),
}

/// Texture lookup used when rasterizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Crisp texel lookup, used for masks and labels.
    Nearest,
    /// Premultiplied bilinear interpolation, used for color renders.
    Bilinear,
}

/// A mesh's own sampled alpha (texture alpha times opacity) before any
/// occlusion. Zero outside the rasterized footprint.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap {
    pub mesh_id: MeshId,
    pub width: u32,
    pub height: u32,
    pub alpha: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshRaster {
    pub alpha: AlphaMap,
    pub rgb: Vec<[f32; 3]>,
}

impl MeshRaster {
    pub fn rgba(&self, i: usize) -> [f32; 4] {
        let [r, g, b] = self.rgb[i];
        [r, g, b, self.alpha.alpha[i]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    pub mesh_id: MeshId,
    pub mask: Mask,
}

type Pt = [f64; 2];

fn cross(u: Pt, v: Pt, p: Pt) -> f64 {
    (v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0])
}

/// Edge function evaluated with a canonical endpoint order so that the two
/// triangles sharing an edge get exactly negated values.
fn edge(u: Pt, v: Pt, p: Pt) -> f64 {
    if (u[0], u[1]) <= (v[0], v[1]) {
        cross(u, v, p)
    } else {
        -cross(v, u, p)
    }
}

/// Whether pixels exactly on edge `u -> v` belong to the triangle lying to its
/// positive side: left edges and top edges own their pixels.
fn owns_boundary(u: Pt, v: Pt) -> bool {
    let nx = -(v[1] - u[1]);
    let ny = v[0] - u[0];
    nx > 0.0 || (nx == 0.0 && ny > 0.0)
}

/// Calls `f(pixel_index, barycentrics)` for every covered pixel center of the
/// triangle. Barycentrics are relative to the vertex order given.
pub(crate) fn scan_triangle(
    width: u32,
    height: u32,
    tri: [Pt; 3],
    mut f: impl FnMut(usize, [f64; 3]),
) -> bool {
    let [a, mut b, mut c] = tri;
    let mut swapped = false;
    let area = cross(a, b, c);
    if area == 0.0 || !area.is_finite() {
        return false;
    }
    if area < 0.0 {
        std::mem::swap(&mut b, &mut c);
        swapped = true;
    }
    let area = area.abs();
    let min_x = a[0].min(b[0]).min(c[0]);
    let max_x = a[0].max(b[0]).max(c[0]);
    let min_y = a[1].min(b[1]).min(c[1]);
    let max_y = a[1].max(b[1]).max(c[1]);
    let x0 = (min_x - 0.5).ceil().max(0.0) as i64;
    let x1 = ((max_x - 0.5).floor() as i64).min(width as i64 - 1);
    let y0 = (min_y - 0.5).ceil().max(0.0) as i64;
    let y1 = ((max_y - 0.5).floor() as i64).min(height as i64 - 1);
    if x0 > x1 || y0 > y1 {
        return true;
    }
    let own = [
        owns_boundary(b, c),
        owns_boundary(c, a),
        owns_boundary(a, b),
    ];
    let inside = |w: f64, own: bool| w > 0.0 || (w == 0.0 && own);
    for y in y0..=y1 {
        let py = y as f64 + 0.5;
        for x in x0..=x1 {
            let p = [x as f64 + 0.5, py];
            let w0 = edge(b, c, p);
            let w1 = edge(c, a, p);
            let w2 = edge(a, b, p);
            if inside(w0, own[0]) && inside(w1, own[1]) && inside(w2, own[2]) {
                let (l0, l1, l2) = (w0 / area, w1 / area, w2 / area);
                let bary = if swapped { [l0, l2, l1] } else { [l0, l1, l2] };
                f(y as usize * width as usize + x as usize, bary);
            }
        }
    }
    true
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Samples an atlas at normalized `(u, v)`; returns straight RGBA in [0, 1].
pub fn sample_atlas(atlas: &TextureAtlas, u: f64, v: f64, sampling: Sampling) -> [f32; 4] {
    let (w, h) = (atlas.width, atlas.height);
    match sampling {
        Sampling::Nearest => {
            let tx = ((u * w as f64).floor().max(0.0) as u32).min(w - 1);
            let ty = ((v * h as f64).floor().max(0.0) as u32).min(h - 1);
            atlas.texel(tx, ty).map(|c| c as f32 / 255.0)
        }
        Sampling::Bilinear => {
            let fx = (u * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = (v * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (tx, ty) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
            let premul = |t: [u8; 4]| {
                let a = t[3] as f32 / 255.0;
                [
                    t[0] as f32 / 255.0 * a,
                    t[1] as f32 / 255.0 * a,
                    t[2] as f32 / 255.0 * a,
                    a,
                ]
            };
            let (p00, p10) = (premul(atlas.texel(x0, y0)), premul(atlas.texel(x1, y0)));
            let (p01, p11) = (premul(atlas.texel(x0, y1)), premul(atlas.texel(x1, y1)));
            let mut out = [0.0f32; 4];
            for k in 0..4 {
                out[k] = lerp(lerp(p00[k], p10[k], tx), lerp(p01[k], p11[k], tx), ty);
            }
            let a = out[3];
            if a <= 0.0 {
                return [0.0; 4];
            }
            if a < 1.0 {
                for c in &mut out[..3] {
                    *c = (*c / a).min(1.0);
                }
            }
            out
        }
    }
}

fn rasterize(model: &CharacterModel, mesh: &ArtMesh, sampling: Sampling) -> MeshRaster {
    let (w, h) = (model.canvas_width, model.canvas_height);
    let n = model.pixel_count();
    let mut alpha = vec![0.0f32; n];
    let mut rgb = vec![[0.0f32; 3]; n];
    let atlas = &model.atlases[mesh.texture_index];
    let opacity = mesh.opacity as f32;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let pts = tri.map(|i| mesh.vertices[i as usize]);
        let uvs = tri.map(|i| mesh.uvs[i as usize]);
        let ok = scan_triangle(w, h, pts, |i, l| {
            let u = l[0] * uvs[0][0] + l[1] * uvs[1][0] + l[2] * uvs[2][0];
            let v = l[0] * uvs[0][1] + l[1] * uvs[1][1] + l[2] * uvs[2][1];
            let [r, g, b, a] = sample_atlas(atlas, u, v, sampling);
            alpha[i] = a * opacity;
            rgb[i] = [r, g, b];
        });
        if !ok {
            log::warn!("mesh {} triangle {t} is degenerate; skipped", mesh.id);
        }
    }
    MeshRaster {
        alpha: AlphaMap {
            mesh_id: mesh.id,
            width: w,
            height: h,
            alpha,
        },
        rgb,
    }
}

/// Rasterizes one mesh: barycentric UV interpolation, atlas sampling and
/// opacity.
pub fn rasterize_mesh(
    model: &CharacterModel,
    mesh_id: MeshId,
    sampling: Sampling,
) -> Result<MeshRaster, RasterError> {
    let mesh = model
        .mesh(mesh_id)
        .ok_or(RasterError::UnknownMesh(mesh_id))?;
    Ok(rasterize(model, mesh, sampling))
}

/// Composites meshes back-to-front in ascending draw order. `visible`
/// restricts the set of drawn meshes; `None` draws everything.
pub fn render_composite(model: &CharacterModel, visible: Option<&BTreeSet<MeshId>>) -> RgbaImage {
    let mut out = RgbaImage::transparent(model.canvas_width, model.canvas_height);
    for i in model.draw_sequence() {
        let mesh = &model.meshes[i];
        if visible.is_some_and(|v| !v.contains(&mesh.id)) {
            continue;
        }
        let r = rasterize(model, mesh, Sampling::Bilinear);
        for (p, dst) in out.pixels.iter_mut().enumerate() {
            if r.alpha.alpha[p] > 0.0 {
                *dst = over(r.rgba(p), *dst);
            }
        }
    }
    out
}

/// Per-mesh visibility: pixel `p` belongs to mesh `m` when
/// `alpha_m(p) * prod_{k above m} (1 - alpha_k(p)) >= tau_vis`. The
/// transmittance product is accumulated from the topmost mesh downward.
/// Masks are returned in model mesh order.
pub fn visibility_masks(
    model: &CharacterModel,
    tau_vis: f64,
) -> Result<Vec<VisibilityMask>, RasterError> {
    if !(tau_vis > 0.0 && tau_vis < 1.0) {
        return Err(RasterError::InvalidThreshold(tau_vis));
    }
    let tau = tau_vis as f32;
    let (w, h) = (model.canvas_width, model.canvas_height);
    let mut transmittance = vec![1.0f32; model.pixel_count()];
    let mut masks: Vec<Option<VisibilityMask>> = vec![None; model.meshes.len()];
    for &i in model.draw_sequence().iter().rev() {
        let mesh = &model.meshes[i];
        let a = rasterize(model, mesh, Sampling::Nearest).alpha.alpha;
        let mut mask = Mask::empty(w, h);
        for (p, t) in transmittance.iter_mut().enumerate() {
            if a[p] > 0.0 {
                mask.bits[p] = a[p] * *t >= tau;
                *t *= 1.0 - a[p];
            }
        }
        masks[i] = Some(VisibilityMask {
            mesh_id: mesh.id,
            mask,
        });
    }
    Ok(masks
        .into_iter()
        .map(|m| m.expect("every mesh visited"))
        .collect())
}

/// Displaces vertices by the interpolated keyframe offsets of each set
/// parameter. Parameters at exactly 0 are skipped, so an all-zero pose is a
/// bit-exact identity.
pub fn apply_pose(
    model: &CharacterModel,
    values: &BTreeMap<String, f64>,
) -> Result<CharacterModel, PoseError> {
    for (name, &value) in values {
        if model.parameter(name).is_none() {
            return Err(PoseError::UnknownParameter(name.clone()));
        }
        if !(-1.0..=1.0).contains(&value) {
            return Err(PoseError::OutOfRange {
                name: name.clone(),
                value,
            });
        }
    }
    let mut posed = model.clone();
    for param in &model.parameters {
        let t = match values.get(&param.name) {
            Some(&t) if t != 0.0 => t,
            _ => continue,
        };
        for kf in &param.keyframes {
            let Some(idx) = posed.mesh_index(kf.mesh) else {
                continue;
            };
            for (j, v) in posed.meshes[idx].vertices.iter_mut().enumerate() {
                let [dx, dy] = kf.offset(j, t);
                v[0] += dx;
                v[1] += dy;
            }
        }
    }
    Ok(posed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosedModel {
    /// `3 * (angle_y + 1) + (angle_x + 1)`; the unposed center is 4.
    pub pose_id: u8,
    pub angle_x: f64,
    pub angle_y: f64,
    pub model: CharacterModel,
}

pub const ANGLE_X: &str = "AngleX";
pub const ANGLE_Y: &str = "AngleY";

/// The 3x3 grid of head orientations over AngleX, AngleY in {-1, 0, 1}.
pub fn generate_orientation_grid(model: &CharacterModel) -> Result<Vec<PosedModel>, PoseError> {
    for name in [ANGLE_X, ANGLE_Y] {
        if model.parameter(name).is_none() {
            return Err(PoseError::MissingParameter(name.into()));
        }
    }
    let mut out = Vec::with_capacity(9);
    for (iy, ay) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
        for (ix, ax) in [-1.0, 0.0, 1.0].into_iter().enumerate() {
            let values = BTreeMap::from([(ANGLE_X.to_string(), ax), (ANGLE_Y.to_string(), ay)]);
            out.push(PosedModel {
                pose_id: (3 * iy + ix) as u8,
                angle_x: ax,
                angle_y: ay,
                model: apply_pose(model, &values)?,
            });
        }
    }
    Ok(out)
}
