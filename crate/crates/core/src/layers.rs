//! Complete per-class RGBA layers, padded color fill, depth-ordered
//! reconstruction and the ordered layer stack written to PSD.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::depth::{self, DepthError, PseudoDepthMap, Strata, StratifyOptions};
use crate::image::{over, RgbaImage};
use crate::model::{CharacterModel, ClassId};
use crate::raster::render_composite;

/// Coverage a blurred pixel needs before it is written by [`pad_gaussian`].
pub const PAD_COVERAGE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("unknown class {0:?}")]
    UnknownClass(ClassId),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Depth(#[from] DepthError),
}

/// One semantic class rendered on its own, including parts hidden in the
/// full composite.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticLayer {
    pub class: ClassId,
    /// Color and alpha of the class's meshes alone.
    pub image: RgbaImage,
    /// Color extended into transparent regions; equals `image` color
    /// wherever alpha is positive.
    pub padded_rgb: Vec<[f32; 3]>,
    /// Set when the layer had no opaque pixel and the padding fell back to
    /// mid-gray.
    pub padding_fallback: bool,
}

impl SemanticLayer {
    pub fn is_empty(&self) -> bool {
        self.image.pixels.iter().all(|p| p[3] <= 0.0)
    }
}

/// Renders only the meshes labeled `class`, back-to-front.
pub fn extract_layer(model: &CharacterModel, class: ClassId) -> Result<SemanticLayer, LayerError> {
    if !model.taxonomy.contains(class) {
        return Err(LayerError::UnknownClass(class));
    }
    let meshes: BTreeSet<_> = model.meshes_of_class(class);
    let image = if meshes.is_empty() {
        RgbaImage::transparent(model.canvas_width, model.canvas_height)
    } else {
        render_composite(model, Some(&meshes))
    };
    let (padded_rgb, padding_fallback) = pad_gaussian(&image);
    Ok(SemanticLayer {
        class,
        image,
        padded_rgb,
        padding_fallback,
    })
}

fn gaussian_kernel(sigma: f64, max_radius: usize) -> Vec<f64> {
    let radius = ((3.0 * sigma).ceil() as usize).min(max_radius).max(1);
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur of `channels`-interleaved data with zero outside the image.
fn blur(data: &[f64], w: usize, h: usize, channels: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            for sx in lo..=hi {
                let k = kernel[sx + r - x];
                let (dst, src) = ((y * w + x) * channels, (y * w + sx) * channels);
                for c in 0..channels {
                    tmp[dst + c] += k * data[src + c];
                }
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for sy in lo..=hi {
            let k = kernel[sy + r - y];
            for x in 0..w {
                let (dst, src) = ((y * w + x) * channels, (sy * w + x) * channels);
                for c in 0..channels {
                    out[dst + c] += k * tmp[src + c];
                }
            }
        }
    }
    out
}

/// Extends layer color into transparent pixels. For sigma = 1, 2, 4, ... up
/// to the canvas size, premultiplied color and alpha are blurred and every
/// still-unfilled pixel whose blurred alpha reaches [`PAD_COVERAGE`] takes the
/// normalized color. Pixels left after the largest sigma take the global
/// alpha-weighted mean. Pixels with alpha > 0 keep their color exactly.
/// Returns the padded color and whether the layer was fully transparent, in
/// which case everything is mid-gray.
pub fn pad_gaussian(image: &RgbaImage) -> (Vec<[f32; 3]>, bool) {
    let (w, h) = (image.width as usize, image.height as usize);
    let n = w * h;
    let mut out = vec![[0.5f32; 3]; n];
    let mut filled = vec![false; n];
    let mut premul = vec![0.0f64; n * 4];
    let mut total = [0.0f64; 4];
    for (p, px) in image.pixels.iter().enumerate() {
        if px[3] > 0.0 {
            out[p] = [px[0], px[1], px[2]];
            filled[p] = true;
            let a = px[3] as f64;
            for c in 0..3 {
                premul[p * 4 + c] = px[c] as f64 * a;
                total[c] += px[c] as f64 * a;
            }
            premul[p * 4 + 3] = a;
            total[3] += a;
        }
    }
    if total[3] <= 0.0 {
        return (out, true);
    }
    let mut remaining = filled.iter().filter(|&&f| !f).count();
    let max_dim = w.max(h);
    let mut sigma = 1.0f64;
    while remaining > 0 && sigma <= max_dim as f64 {
        let blurred = blur(&premul, w, h, 4, &gaussian_kernel(sigma, max_dim));
        for p in 0..n {
            let a = blurred[p * 4 + 3];
            if !filled[p] && a >= PAD_COVERAGE {
                out[p] = [0, 1, 2].map(|c| ((blurred[p * 4 + c] / a) as f32).clamp(0.0, 1.0));
                filled[p] = true;
                remaining -= 1;
            }
        }
        sigma *= 2.0;
    }
    if remaining > 0 {
        let mean = [0, 1, 2].map(|c| ((total[c] / total[3]) as f32).clamp(0.0, 1.0));
        for p in 0..n {
            if !filled[p] {
                out[p] = mean;
            }
        }
    }
    (out, false)
}

/// Composites layers per pixel in ascending order of their depth at that
/// pixel (ties keep input order); layers with invalid depth at a pixel are
/// skipped there.
pub fn reconstruct(
    layers: &[&RgbaImage],
    depth_maps: &[&PseudoDepthMap],
) -> Result<RgbaImage, LayerError> {
    if layers.len() != depth_maps.len() {
        return Err(LayerError::DimensionMismatch(format!(
            "{} layers but {} depth maps",
            layers.len(),
            depth_maps.len()
        )));
    }
    let Some(first) = layers.first() else {
        return Err(LayerError::DimensionMismatch("no layers".into()));
    };
    let (w, h) = (first.width, first.height);
    for (l, d) in layers.iter().zip(depth_maps) {
        if l.width != w || l.height != h || d.width != w || d.height != h {
            return Err(LayerError::DimensionMismatch(
                "layers and depth maps must share one canvas".into(),
            ));
        }
    }
    let mut out = RgbaImage::transparent(w, h);
    let mut stack: Vec<(f32, usize)> = Vec::with_capacity(layers.len());
    for (p, dst) in out.pixels.iter_mut().enumerate() {
        stack.clear();
        stack.extend(
            depth_maps
                .iter()
                .enumerate()
                .filter_map(|(i, d)| d.get(p).map(|z| (z, i))),
        );
        stack.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &stack {
            let src = layers[i].pixels[p];
            if src[3] > 0.0 {
                *dst = over(src, *dst);
            }
        }
    }
    Ok(out)
}

/// One named layer of an export stack.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub image: RgbaImage,
    /// Median in-mask depth used for ordering.
    pub depth: f32,
}

/// Orders layers bottom-to-top by representative (median in-mask) depth.
/// Stratified classes contribute one layer per stratum, named
/// `<class>_back` / `<class>_front` (or `<class>_s<i>` beyond two strata).
/// Empty layers are dropped.
pub fn build_layer_stack(
    model: &CharacterModel,
    layers: &[SemanticLayer],
    depth_maps: &[PseudoDepthMap],
    strata: &[Strata],
    fill_holes: bool,
) -> Result<Vec<NamedLayer>, LayerError> {
    if layers.len() != depth_maps.len() {
        return Err(LayerError::DimensionMismatch(
            "one depth map per layer is required".into(),
        ));
    }
    let mut stack = Vec::new();
    for (layer, dm) in layers.iter().zip(depth_maps) {
        if layer.is_empty() {
            continue;
        }
        let name = model
            .taxonomy
            .name(layer.class)
            .ok_or(LayerError::UnknownClass(layer.class))?;
        match strata
            .iter()
            .find(|s| s.class == layer.class && s.is_split())
        {
            Some(st) => {
                let parts = depth::split_layer(&layer.image, st, fill_holes);
                let k = parts.len();
                for (s, image) in parts.into_iter().enumerate() {
                    let support: Vec<f32> = st
                        .assignments
                        .iter()
                        .map(|a| if *a == Some(s as u8) { 1.0 } else { 0.0 })
                        .collect();
                    let Some(depth) = dm.median(Some(&support)) else {
                        continue;
                    };
                    let suffix = match (k, s) {
                        (2, 0) => "back".to_string(),
                        (2, _) => "front".to_string(),
                        _ => format!("s{s}"),
                    };
                    stack.push(NamedLayer {
                        name: format!("{name}_{suffix}"),
                        image,
                        depth,
                    });
                }
            }
            None => {
                let alpha = layer.image.alpha();
                let depth = dm.median(Some(&alpha)).unwrap_or(0.0);
                stack.push(NamedLayer {
                    name: name.to_string(),
                    image: layer.image.clone(),
                    depth,
                });
            }
        }
    }
    stack.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    Ok(stack)
}

/// The whole export path for a labeled model: one layer per class, classes
/// of the stratify set split into depth strata.
pub fn export_stack(
    model: &CharacterModel,
    opts: StratifyOptions,
    fill_holes: bool,
) -> Result<Vec<NamedLayer>, LayerError> {
    let mut layers = Vec::new();
    let mut depths = Vec::new();
    let mut strata = Vec::new();
    for class in model.taxonomy.ids() {
        let layer = extract_layer(model, class)?;
        let dm = depth::render_depth_map(model, Some(class))?;
        if !layer.is_empty() && model.taxonomy.stratify_set().contains(&class) {
            strata.push(depth::stratify_layer(
                model,
                class,
                &dm,
                &layer.image.alpha(),
                opts,
            )?);
        }
        layers.push(layer);
        depths.push(dm);
    }
    build_layer_stack(model, &layers, &depths, &strata, fill_holes)
}

/// Plain back-to-front composite of an ordered stack.
pub fn flatten(stack: &[NamedLayer], width: u32, height: u32) -> RgbaImage {
    let mut out = RgbaImage::transparent(width, height);
    for l in stack {
        for (dst, &src) in out.pixels.iter_mut().zip(&l.image.pixels) {
            if src[3] > 0.0 {
                *dst = over(src, *dst);
            }
        }
    }
    out
}
