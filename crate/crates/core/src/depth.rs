//! Pseudo-depth from drawing order, dense depth maps, 1-D k-means
//! stratification of a semantic layer, and push-pull hole filling.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::image::{Mask, RgbaImage};
use crate::model::{CharacterModel, ClassId, MeshId};
use crate::raster::{rasterize_mesh, Sampling};

/// Stored in [`PseudoDepthMap::depth`] where no mesh contributes.
pub const INVALID_DEPTH: f32 = -1.0;

const LLOYD_MAX_ITERS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("unknown class {0:?}")]
    UnknownClass(ClassId),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("class {0:?} is not in the stratify set")]
    NotStratifiable(ClassId),
    #[error("alpha mask is empty")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid strata count {0}")]
    InvalidK(usize),
}

/// Min-max normalized drawing order per mesh. A single-mesh model maps to 0.
pub fn pseudo_depth(model: &CharacterModel) -> BTreeMap<MeshId, f64> {
    let z_min = model.meshes.iter().map(|m| m.draw_order).min().unwrap_or(0);
    let z_max = model.meshes.iter().map(|m| m.draw_order).max().unwrap_or(0);
    if z_max == z_min {
        log::warn!("pseudo-depth of a model with a single draw order is defined as 0");
        return model.meshes.iter().map(|m| (m.id, 0.0)).collect();
    }
    let span = (z_max - z_min) as f64;
    model
        .meshes
        .iter()
        .map(|m| (m.id, (m.draw_order - z_min) as f64 / span))
        .collect()
}

/// Per-pixel depth in `[0, 1]` with a validity mask; invalid pixels hold
/// [`INVALID_DEPTH`].
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDepthMap {
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f32>,
}

impl PseudoDepthMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        PseudoDepthMap {
            width,
            height,
            depth: vec![INVALID_DEPTH; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn is_valid(&self, p: usize) -> bool {
        self.depth[p] >= 0.0
    }

    #[inline]
    pub fn get(&self, p: usize) -> Option<f32> {
        self.is_valid(p).then(|| self.depth[p])
    }

    pub fn valid_mask(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: (0..self.depth.len()).map(|p| self.is_valid(p)).collect(),
        }
    }

    /// 16-bit quantization `round(d * 65535)` with invalid pixels at 0.
    pub fn to_gray16(&self) -> Vec<u16> {
        self.depth
            .iter()
            .map(|&d| {
                if d >= 0.0 {
                    (d as f64 * 65535.0 + 0.5).floor() as u16
                } else {
                    0
                }
            })
            .collect()
    }

    /// Median of valid depths inside `support` (all valid pixels when
    /// `None`). Even counts take the lower middle element.
    pub fn median(&self, support: Option<&[f32]>) -> Option<f32> {
        let mut v: Vec<f32> = (0..self.depth.len())
            .filter(|&p| self.is_valid(p) && support.is_none_or(|a| a[p] > 0.0))
            .map(|p| self.depth[p])
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f32::total_cmp);
        Some(v[(v.len() - 1) / 2])
    }
}

/// Depth of the topmost mesh with positive alpha at each pixel, restricted
/// to meshes labeled `class` when given. Uses the same bilinear coverage as
/// [`crate::raster::render_composite`].
pub fn render_depth_map(
    model: &CharacterModel,
    class: Option<ClassId>,
) -> Result<PseudoDepthMap, DepthError> {
    if let Some(c) = class {
        if !model.taxonomy.contains(c) {
            return Err(DepthError::UnknownClass(c));
        }
    }
    let d = pseudo_depth(model);
    let mut out = PseudoDepthMap::invalid(model.canvas_width, model.canvas_height);
    for i in model.draw_sequence() {
        let mesh = &model.meshes[i];
        if class.is_some_and(|c| mesh.label != Some(c)) {
            continue;
        }
        let r = rasterize_mesh(model, mesh.id, Sampling::Bilinear).expect("mesh from model");
        let dm = d[&mesh.id] as f32;
        for (p, &a) in r.alpha.alpha.iter().enumerate() {
            if a > 0.0 {
                out.depth[p] = dm;
            }
        }
    }
    Ok(out)
}

/// Result of a two-cluster 1-D k-means.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeans2 {
    /// Ascending: `centroids[0]` is the back cluster.
    pub centroids: [f64; 2],
    /// Cluster index (0 or 1) per input value.
    pub assignments: Vec<u8>,
    /// Within-cluster sum of squared deviations.
    pub objective: f64,
    pub iterations: usize,
}

fn partition_stats(values: &[f64], assignments: &[u8]) -> ([f64; 2], f64) {
    let mut sum = [0.0f64; 2];
    let mut cnt = [0usize; 2];
    for (&v, &a) in values.iter().zip(assignments) {
        sum[a as usize] += v;
        cnt[a as usize] += 1;
    }
    let means = [sum[0] / cnt[0] as f64, sum[1] / cnt[1] as f64];
    let sse = values
        .iter()
        .zip(assignments)
        .map(|(&v, &a)| (v - means[a as usize]).powi(2))
        .sum();
    (means, sse)
}

/// K = 2 Lloyd iterations from `(min, max)` until the assignment stops
/// changing (at most 100 rounds), followed by an exact sorted-threshold
/// scan; the lower-objective partition is returned. Values equidistant
/// from both centroids go to the back cluster.
pub fn kmeans2_1d(values: &[f64]) -> Result<KMeans2, DepthError> {
    if values.len() < 2 {
        return Err(DepthError::DegenerateInput("fewer than two values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DepthError::DegenerateInput("non-finite value".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(DepthError::DegenerateInput("all values are equal".into()));
    }

    let mut c = [lo, hi];
    let mut assign: Vec<u8> = vec![0; values.len()];
    let mut iterations = 0;
    loop {
        let mut changed = iterations == 0;
        for (a, &v) in assign.iter_mut().zip(values) {
            let k = ((v - c[1]).abs() < (v - c[0]).abs()) as u8;
            if *a != k {
                *a = k;
                changed = true;
            }
        }
        iterations += 1;
        if !changed || iterations >= LLOYD_MAX_ITERS {
            break;
        }
        let (means, _) = partition_stats(values, &assign);
        c = means;
    }
    let (lloyd_c, lloyd_sse) = partition_stats(values, &assign);

    let threshold = best_threshold(values);
    let exact: Vec<u8> = values.iter().map(|&v| (v > threshold) as u8).collect();
    let (exact_c, exact_sse) = partition_stats(values, &exact);

    let (centroids, assignments, objective) = if exact_sse < lloyd_sse || lloyd_sse.is_nan() {
        (exact_c, exact, exact_sse)
    } else {
        (lloyd_c, assign, lloyd_sse)
    };
    Ok(KMeans2 {
        centroids,
        assignments,
        objective,
        iterations,
    })
}

/// Largest back-cluster value of the optimal two-way split of the sorted
/// values, found with prefix sums over the distinct split points.
fn best_threshold(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let (mut pre, mut pre2) = (vec![0.0f64; n + 1], vec![0.0f64; n + 1]);
    for i in 0..n {
        pre[i + 1] = pre[i] + s[i];
        pre2[i + 1] = pre2[i] + s[i] * s[i];
    }
    let sse = |a: usize, b: usize| {
        let (m, sum) = ((b - a) as f64, pre[b] - pre[a]);
        (pre2[b] - pre2[a]) - sum * sum / m
    };
    let mut best = (f64::INFINITY, s[0]);
    for i in 1..n {
        if s[i - 1] == s[i] {
            continue;
        }
        let cost = sse(0, i) + sse(i, n);
        if cost < best.0 {
            best = (cost, s[i - 1]);
        }
    }
    best.1
}

/// Globally optimal 1-D k-means by dynamic programming over the weighted
/// distinct values (divide-and-conquer row optimization). Returns ascending
/// centroids and a cluster index per value.
pub fn kmeans_1d(values: &[f64], k: usize) -> Result<(Vec<f64>, Vec<u8>), DepthError> {
    if k == 0 || k > 255 {
        return Err(DepthError::InvalidK(k));
    }
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k || k < 2 && distinct.is_empty() {
        return Err(DepthError::DegenerateInput(format!(
            "{} distinct values for {k} clusters",
            distinct.len()
        )));
    }
    let u = distinct.len();
    let mut weight = vec![0.0f64; u];
    for v in values {
        let i = distinct.partition_point(|d| d < v);
        weight[i] += 1.0;
    }
    let (mut pw, mut px, mut pxx) = (vec![0.0; u + 1], vec![0.0; u + 1], vec![0.0; u + 1]);
    for i in 0..u {
        pw[i + 1] = pw[i] + weight[i];
        px[i + 1] = px[i] + weight[i] * distinct[i];
        pxx[i + 1] = pxx[i] + weight[i] * distinct[i] * distinct[i];
    }
    // cost of one cluster spanning distinct[a..b]
    let cost = |a: usize, b: usize| -> f64 {
        let w = pw[b] - pw[a];
        let s = px[b] - px[a];
        ((pxx[b] - pxx[a]) - s * s / w).max(0.0)
    };
    // prev[j]: best cost of clustering distinct[..j] into m clusters
    let mut prev: Vec<f64> = (0..=u)
        .map(|j| if j == 0 { 0.0 } else { cost(0, j) })
        .collect();
    let mut splits: Vec<Vec<usize>> = vec![vec![0; u + 1]];
    for m in 2..=k {
        let mut cur = vec![f64::INFINITY; u + 1];
        let mut arg = vec![0usize; u + 1];
        fill_row(m, u, m - 1, u - 1, &prev, &cost, &mut cur, &mut arg);
        prev = cur;
        splits.push(arg);
    }
    let mut bounds = vec![u];
    let mut j = u;
    for m in (1..k).rev() {
        j = splits[m][j];
        bounds.push(j);
    }
    bounds.push(0);
    bounds.reverse();
    let centroids: Vec<f64> = bounds
        .windows(2)
        .map(|w| (px[w[1]] - px[w[0]]) / (pw[w[1]] - pw[w[0]]))
        .collect();
    let assignments = values
        .iter()
        .map(|v| {
            let i = distinct.partition_point(|d| d < v);
            (bounds.partition_point(|&b| b <= i) - 1) as u8
        })
        .collect();
    Ok((centroids, assignments))
}

/// Computes `cur[j]` for `j` in `lo..=hi` (j = number of leading values
/// covered) knowing optimal split points are monotone in `j`.
#[allow(clippy::too_many_arguments)]
fn fill_row(
    m: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
    prev: &[f64],
    cost: &dyn Fn(usize, usize) -> f64,
    cur: &mut [f64],
    arg: &mut [usize],
) {
    fn rec(
        lo: usize,
        hi: usize,
        opt_lo: usize,
        opt_hi: usize,
        prev: &[f64],
        cost: &dyn Fn(usize, usize) -> f64,
        cur: &mut [f64],
        arg: &mut [usize],
    ) {
        if lo > hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let mut best = (f64::INFINITY, opt_lo);
        let last = opt_hi.min(mid - 1);
        for (s, &p) in prev.iter().enumerate().take(last + 1).skip(opt_lo) {
            let c = p + cost(s, mid);
            if c < best.0 {
                best = (c, s);
            }
        }
        cur[mid] = best.0;
        arg[mid] = best.1;
        if mid > lo {
            rec(lo, mid - 1, opt_lo, best.1, prev, cost, cur, arg);
        }
        rec(mid + 1, hi, best.1, opt_hi, prev, cost, cur, arg);
    }
    rec(m, hi, opt_lo, opt_hi, prev, cost, cur, arg);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StratifyMode {
    /// Cluster the depth of every in-mask pixel.
    #[default]
    Pixel,
    /// Cluster one depth value per mesh so each mesh stays in one stratum.
    Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StratifyOptions {
    pub k: usize,
    pub mode: StratifyMode,
}

impl Default for StratifyOptions {
    fn default() -> Self {
        StratifyOptions {
            k: 2,
            mode: StratifyMode::Pixel,
        }
    }
}

/// Depth strata of one class layer. Stratum 0 is the back, the last
/// stratum is the front.
#[derive(Debug, Clone, PartialEq)]
pub struct Strata {
    pub class: ClassId,
    pub centroids: Vec<f64>,
    /// Stratum per pixel; `None` outside the alpha mask.
    pub assignments: Vec<Option<u8>>,
    /// Stratum per class mesh, by nearest centroid of its pseudo-depth.
    pub mesh_strata: BTreeMap<MeshId, u8>,
    /// `holes[s]`: pixels where stratum `s` has content hidden under a
    /// higher stratum, i.e. what becomes exposed once the strata above are
    /// lifted off. The front stratum's entry is always empty.
    pub holes: Vec<Mask>,
}

impl Strata {
    pub fn count(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_split(&self) -> bool {
        self.centroids.len() > 1
    }

    /// Hole mask of the back stratum.
    pub fn hole_mask(&self) -> &Mask {
        &self.holes[0]
    }

    pub fn stratum_mask(&self, s: u8) -> Mask {
        let (w, h) = (self.holes[0].width, self.holes[0].height);
        Mask {
            width: w,
            height: h,
            bits: self.assignments.iter().map(|a| *a == Some(s)).collect(),
        }
    }
}

fn nearest(centroids: &[f64], v: f64) -> u8 {
    let mut best = 0;
    for (i, &c) in centroids.iter().enumerate().skip(1) {
        if (v - c).abs() < (v - centroids[best]).abs() {
            best = i;
        }
    }
    best as u8
}

/// Splits a class layer into depth strata by clustering pseudo-depth inside
/// its alpha mask. Constant depth yields a single stratum with no holes.
pub fn stratify_layer(
    model: &CharacterModel,
    class: ClassId,
    depth_map: &PseudoDepthMap,
    alpha: &[f32],
    opts: StratifyOptions,
) -> Result<Strata, DepthError> {
    if !model.taxonomy.contains(class) {
        return Err(DepthError::UnknownClass(class));
    }
    if !model.taxonomy.stratify_set().contains(&class) {
        return Err(DepthError::NotStratifiable(class));
    }
    let n = model.pixel_count();
    if depth_map.depth.len() != n || alpha.len() != n {
        return Err(DepthError::DimensionMismatch(
            "depth map and alpha must match the canvas".into(),
        ));
    }
    if opts.k == 0 {
        return Err(DepthError::InvalidK(0));
    }
    let pixels: Vec<usize> = (0..n)
        .filter(|&p| alpha[p] > 0.0 && depth_map.is_valid(p))
        .collect();
    if pixels.is_empty() {
        return Err(DepthError::EmptyMask);
    }
    let pixel_depths: Vec<f64> = pixels.iter().map(|&p| depth_map.depth[p] as f64).collect();
    let d = pseudo_depth(model);
    let class_meshes: Vec<MeshId> = model.meshes_of_class(class).into_iter().collect();

    let sample: Vec<f64> = match opts.mode {
        StratifyMode::Pixel => pixel_depths.clone(),
        StratifyMode::Mesh => class_meshes.iter().map(|id| d[id] as f32 as f64).collect(),
    };
    let mut distinct = sample.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let k = opts.k.min(distinct.len());
    let clustered = match k {
        1 => Err(DepthError::DegenerateInput("constant depth".into())),
        2 => kmeans2_1d(&sample).map(|r| r.centroids.to_vec()),
        _ => kmeans_1d(&sample, k).map(|r| r.0),
    };
    let centroids = match clustered {
        Ok(c) => c,
        Err(DepthError::DegenerateInput(why)) => {
            let name = model.taxonomy.name(class).unwrap_or("?");
            log::info!("class {name} not split: {why}");
            vec![pixel_depths.iter().sum::<f64>() / pixel_depths.len() as f64]
        }
        Err(e) => return Err(e),
    };

    let mut assignments = vec![None; n];
    for (&p, &v) in pixels.iter().zip(&pixel_depths) {
        assignments[p] = Some(nearest(&centroids, v));
    }
    let mesh_strata: BTreeMap<MeshId, u8> = class_meshes
        .iter()
        .map(|&id| (id, nearest(&centroids, d[&id] as f32 as f64)))
        .collect();

    let (w, h) = (model.canvas_width, model.canvas_height);
    let mut holes = vec![Mask::empty(w, h); centroids.len()];
    for (&id, &s) in &mesh_strata {
        if s as usize + 1 == centroids.len() {
            continue;
        }
        let r = rasterize_mesh(model, id, Sampling::Bilinear).expect("mesh from model");
        for (p, &a) in r.alpha.alpha.iter().enumerate() {
            if a > 0.0 && assignments[p].is_some_and(|top| top > s) {
                holes[s as usize].bits[p] = true;
            }
        }
    }
    Ok(Strata {
        class,
        centroids,
        assignments,
        mesh_strata,
        holes,
    })
}

/// Cuts a layer into one image per stratum. With `fill`, each stratum's
/// hole pixels are inpainted by [`fill_holes`].
pub fn split_layer(layer: &RgbaImage, strata: &Strata, fill: bool) -> Vec<RgbaImage> {
    (0..strata.count() as u8)
        .map(|s| {
            let mut img = RgbaImage::transparent(layer.width, layer.height);
            for (p, a) in strata.assignments.iter().enumerate() {
                if *a == Some(s) {
                    img.pixels[p] = layer.pixels[p];
                }
            }
            let hole = &strata.holes[s as usize];
            if fill && !hole.is_empty() {
                // Only pixels of this stratum seed the fill.
                let mut unknown = hole.clone();
                for (p, u) in unknown.bits.iter_mut().enumerate() {
                    *u |= strata.assignments[p] != Some(s);
                }
                let filled = fill_holes(&img, &unknown);
                for (p, &b) in hole.bits.iter().enumerate() {
                    if b {
                        img.pixels[p] = filled.pixels[p];
                    }
                }
            }
            img
        })
        .collect()
}

#[derive(Clone, Copy, Default)]
struct Cell {
    sum_c: [f64; 3],
    sum_a: f64,
    count: u32,
    min: [f32; 4],
    max: [f32; 4],
}

impl Cell {
    fn known(px: [f32; 4]) -> Self {
        let a = px[3] as f64;
        Cell {
            sum_c: [px[0] as f64 * a, px[1] as f64 * a, px[2] as f64 * a],
            sum_a: a,
            count: 1,
            min: px,
            max: px,
        }
    }

    fn merge(&mut self, o: &Cell) {
        if o.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *o;
            return;
        }
        for k in 0..3 {
            self.sum_c[k] += o.sum_c[k];
        }
        self.sum_a += o.sum_a;
        self.count += o.count;
        for k in 0..4 {
            self.min[k] = self.min[k].min(o.min[k]);
            self.max[k] = self.max[k].max(o.max[k]);
        }
    }

    /// Alpha-weighted mean color and mean alpha of the known pixels. Channels
    /// that are constant across them are returned exactly.
    fn value(&self) -> [f32; 4] {
        let mut out = [0.0f32; 4];
        for (k, o) in out.iter_mut().enumerate().take(3) {
            *o = if self.min[k] == self.max[k] {
                self.min[k]
            } else if self.sum_a > 0.0 {
                ((self.sum_c[k] / self.sum_a) as f32).clamp(self.min[k], self.max[k])
            } else {
                0.0
            };
        }
        out[3] = if self.min[3] == self.max[3] {
            self.min[3]
        } else {
            ((self.sum_a / self.count as f64) as f32).clamp(self.min[3], self.max[3])
        };
        out
    }
}

/// Push-pull fill: known pixels are averaged down a 2x pyramid, then each
/// hole pixel takes the value of its nearest ancestor cell that saw any known
/// pixel. Pixels outside `hole` are returned bit-exactly.
pub fn fill_holes(layer: &RgbaImage, hole: &Mask) -> RgbaImage {
    assert!(
        hole.width == layer.width && hole.height == layer.height,
        "hole mask must match the layer"
    );
    let mut out = layer.clone();
    if hole.is_empty() || hole.bits.iter().all(|&b| b) {
        return out;
    }
    let mut levels: Vec<(u32, u32, Vec<Cell>)> = Vec::new();
    let base: Vec<Cell> = layer
        .pixels
        .iter()
        .zip(&hole.bits)
        .map(|(&px, &h)| if h { Cell::default() } else { Cell::known(px) })
        .collect();
    levels.push((layer.width, layer.height, base));
    while {
        let (w, h, _) = levels.last().unwrap();
        *w > 1 || *h > 1
    } {
        let (w, h, cells) = levels.last().unwrap();
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut next = vec![Cell::default(); (nw * nh) as usize];
        for y in 0..*h {
            for x in 0..*w {
                next[((y / 2) * nw + x / 2) as usize].merge(&cells[(y * w + x) as usize]);
            }
        }
        levels.push((nw, nh, next));
    }
    // Push: resolve every cell top-down.
    let mut resolved: Vec<[f32; 4]> = {
        let (_, _, top) = levels.last().unwrap();
        vec![top[0].value()]
    };
    for l in (0..levels.len() - 1).rev() {
        let (w, h, cells) = &levels[l];
        let pw = levels[l + 1].0;
        let mut cur = Vec::with_capacity((w * h) as usize);
        for y in 0..*h {
            for x in 0..*w {
                let c = &cells[(y * w + x) as usize];
                cur.push(if c.count > 0 {
                    c.value()
                } else {
                    resolved[((y / 2) * pw + x / 2) as usize]
                });
            }
        }
        resolved = cur;
    }
    for (p, &h) in hole.bits.iter().enumerate() {
        if h {
            out.pixels[p] = resolved[p];
        }
    }
    out
}
