//! WebAssembly demo on the bundled toy character: see-through class
//! toggles, a visibility/depth inspector and depth stratification of one
//! class layer. Images cross the boundary as RGBA8 byte buffers.

use std::collections::BTreeSet;

use lcm_core::depth::{
    render_depth_map, split_layer, stratify_layer, StratifyMode, StratifyOptions,
};
use lcm_core::fixtures;
use lcm_core::image::RgbaImage;
use lcm_core::labeler::{class_color, owner_map};
use lcm_core::layers::extract_layer;
use lcm_core::model::{CharacterModel, ClassId, MeshId};
use lcm_core::raster::{render_composite, visibility_masks};
use wasm_bindgen::prelude::*;

fn bytes(img: &RgbaImage) -> Vec<u8> {
    img.to_rgba8().into_iter().flatten().collect()
}

#[wasm_bindgen]
pub struct Demo {
    model: CharacterModel,
    hidden: BTreeSet<ClassId>,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo {
            model: fixtures::demo_character(),
            hidden: BTreeSet::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.model.canvas_width
    }

    pub fn height(&self) -> u32 {
        self.model.canvas_height
    }

    /// Classes that label at least one mesh, in taxonomy order.
    pub fn classes(&self) -> Vec<String> {
        let used: BTreeSet<ClassId> = self.model.meshes.iter().filter_map(|m| m.label).collect();
        used.iter()
            .filter_map(|&c| self.model.taxonomy.name(c).map(str::to_string))
            .collect()
    }

    /// CSS color of a class, matching the label map palette.
    pub fn class_color(&self, name: &str) -> Result<String, String> {
        let [r, g, b] = class_color(self.class_id(name)?);
        Ok(format!("rgb({r}, {g}, {b})"))
    }

    /// Flips a class between shown and hidden; returns whether it is shown.
    pub fn toggle(&mut self, name: &str) -> Result<bool, String> {
        let c = self.class_id(name)?;
        if !self.hidden.remove(&c) {
            self.hidden.insert(c);
        }
        Ok(!self.hidden.contains(&c))
    }

    /// Composite of every mesh whose class is shown.
    pub fn render(&self) -> Vec<u8> {
        let shown: BTreeSet<MeshId> = self
            .model
            .meshes
            .iter()
            .filter(|m| m.label.is_none_or(|c| !self.hidden.contains(&c)))
            .map(|m| m.id)
            .collect();
        bytes(&render_composite(&self.model, Some(&shown)))
    }

    /// Each pixel in the color of the class whose mesh owns it at the
    /// given visibility threshold; transparent where nothing is visible.
    pub fn visibility(&self, tau_vis: f64) -> Result<Vec<u8>, String> {
        let masks = visibility_masks(&self.model, tau_vis).map_err(|e| e.to_string())?;
        let owners = owner_map(&self.model, &masks);
        Ok(owners
            .iter()
            .flat_map(|o| match o.and_then(|i| self.model.meshes[i].label) {
                Some(c) => {
                    let [r, g, b] = class_color(c);
                    [r, g, b, 255]
                }
                None => [0, 0, 0, 0],
            })
            .collect())
    }

    /// Pseudo-depth of the topmost mesh as gray (white is front).
    pub fn depth(&self) -> Vec<u8> {
        let dm = render_depth_map(&self.model, None).expect("no class filter");
        dm.depth
            .iter()
            .flat_map(|&d| {
                if d < 0.0 {
                    [0, 0, 0, 0]
                } else {
                    let g = (d * 255.0).round() as u8;
                    [g, g, g, 255]
                }
            })
            .collect()
    }

    /// Splits one class layer into `k` depth strata and lays them out left
    /// to right, back first. Hole pixels are inpainted when `fill` is set,
    /// otherwise tinted so the exposed region is visible.
    pub fn stratify(
        &self,
        name: &str,
        k: usize,
        fill: bool,
        per_mesh: bool,
    ) -> Result<Strata, String> {
        let class = self.class_id(name)?;
        if !self.model.taxonomy.stratify_set().contains(&class) {
            return Err(format!("{name} is not a stratified class"));
        }
        let layer = extract_layer(&self.model, class).map_err(|e| e.to_string())?;
        let dm = render_depth_map(&self.model, Some(class)).map_err(|e| e.to_string())?;
        let opts = StratifyOptions {
            k,
            mode: if per_mesh {
                StratifyMode::Mesh
            } else {
                StratifyMode::Pixel
            },
        };
        let st = stratify_layer(&self.model, class, &dm, &layer.image.alpha(), opts)
            .map_err(|e| e.to_string())?;
        let parts = split_layer(&layer.image, &st, fill);
        let (w, h) = (self.width() as usize, self.height() as usize);
        let mut pixels = vec![0u8; parts.len() * w * h * 4];
        for (s, part) in parts.iter().enumerate() {
            let holes = &st.holes[s];
            for (p, px) in part.to_rgba8().into_iter().enumerate() {
                let (x, y) = (p % w, p / w);
                let px = if !fill && holes.bits[p] {
                    [255, 0, 96, 160]
                } else {
                    px
                };
                let at = ((y * parts.len() * w) + s * w + x) * 4;
                pixels[at..at + 4].copy_from_slice(&px);
            }
        }
        Ok(Strata {
            width: (parts.len() * w) as u32,
            height: h as u32,
            pixels,
            centroids: st.centroids.clone(),
            hole_pixels: st.holes.iter().map(|m| m.count() as u32).collect(),
        })
    }

    /// Classes that can be split by depth.
    pub fn stratifiable(&self) -> Vec<String> {
        self.model
            .taxonomy
            .stratify_names()
            .into_iter()
            .map(str::to_string)
            .collect()
    }
}

impl Default for Demo {
    fn default() -> Self {
        Demo::new()
    }
}

impl Demo {
    fn class_id(&self, name: &str) -> Result<ClassId, String> {
        self.model
            .taxonomy
            .class_id(name)
            .ok_or_else(|| format!("unknown class {name:?}"))
    }
}

#[wasm_bindgen(getter_with_clone)]
pub struct Strata {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub centroids: Vec<f64>,
    pub hole_pixels: Vec<u32>,
}
