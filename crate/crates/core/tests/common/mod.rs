//! Random model generators and brute-force oracles shared by the
//! integration tests. Oracles use integer geometry and direct per-pixel
//! formulas, never the library's scan or compositing code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;

use lcm_core::depth::StratifyOptions;
use lcm_core::fixtures;
use lcm_core::image::{Mask, RgbaImage};
use lcm_core::labeler::ScoreStack;
use lcm_core::layers::{export_stack, NamedLayer};
use lcm_core::model::{
    ArtMesh, CharacterModel, ClassId, DeformParameter, MeshId, MeshKeyframes, Taxonomy,
    TextureAtlas,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Vertex coordinates are multiples of 1/4 so every edge function is exact.
pub const GRID: i64 = 4;

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub width: u32,
    pub height: u32,
    pub max_meshes: usize,
    /// Every mesh gets opacity 1 and an opaque atlas.
    pub binary_alpha: bool,
    /// Every mesh gets a label.
    pub total_labels: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            width: 64,
            height: 64,
            max_meshes: 10,
            binary_alpha: false,
            total_labels: false,
        }
    }
}

const GROUPS: [&[&str]; 6] = [
    &[],
    &["Head"],
    &["Head", "Hair"],
    &["Body"],
    &["Body", "Clothes"],
    &["Body", "Clothes", "Sleeve"],
];

fn grid_coord(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> f64 {
    rng.random_range(lo * GRID..=hi * GRID) as f64 / GRID as f64
}

/// Random model: each mesh samples its own solid-color 2x2 atlas, has 1-3
/// random triangles on the quarter-pixel grid and a unique random draw order.
pub fn random_model(rng: &mut ChaCha8Rng, opts: GenOptions) -> CharacterModel {
    let taxonomy = Taxonomy::default();
    let n = rng.random_range(1..=opts.max_meshes);
    let mut orders: Vec<i64> = (0..(n as i64 * 3)).collect();
    orders.shuffle(rng);
    let (w, h) = (opts.width as i64, opts.height as i64);
    let mut atlases = Vec::new();
    let mut meshes = Vec::new();
    for (i, &draw_order) in orders.iter().enumerate().take(n) {
        let alpha = if opts.binary_alpha {
            255
        } else {
            *[255u8, 255, 200, 128, 64, 1].choose(rng).unwrap()
        };
        let rgb: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        atlases.push(TextureAtlas::solid(2, 2, [rgb[0], rgb[1], rgb[2], alpha]));
        let nt = rng.random_range(1..=3);
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for t in 0..nt {
            for _ in 0..3 {
                vertices.push([grid_coord(rng, -4, w + 4), grid_coord(rng, -4, h + 4)]);
            }
            let b = 3 * t as u32;
            triangles.push([b, b + 1, b + 2]);
        }
        let opacity = if opts.binary_alpha {
            1.0
        } else {
            *[1.0, 1.0, 0.75, 0.5, 0.3].choose(rng).unwrap()
        };
        let label = if opts.total_labels || rng.random_bool(0.7) {
            Some(ClassId(rng.random_range(0..taxonomy.len()) as u8))
        } else {
            None
        };
        let group = GROUPS[rng.random_range(0..GROUPS.len())];
        meshes.push(ArtMesh {
            id: MeshId(i as u32 * 2 + 1),
            name: format!("ArtMesh{i}"),
            hierarchy_path: group.iter().map(|s| s.to_string()).collect(),
            uvs: vec![[0.5, 0.5]; vertices.len()],
            vertices,
            triangles,
            texture_index: i,
            draw_order,
            opacity,
            label,
        });
    }
    let model = CharacterModel {
        canvas_width: opts.width,
        canvas_height: opts.height,
        atlases,
        meshes,
        parameters: vec![],
        taxonomy,
        metadata: BTreeMap::new(),
    };
    model.validate().expect("generated model is valid");
    model
}

/// Adds AngleX / AngleY keyframes with random per-vertex offsets.
pub fn with_angle_parameters(rng: &mut ChaCha8Rng, mut model: CharacterModel) -> CharacterModel {
    for name in ["AngleX", "AngleY"] {
        let keyframes = model
            .meshes
            .iter()
            .map(|m| {
                let mut off = || [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                MeshKeyframes {
                    mesh: m.id,
                    minus: (0..m.vertices.len()).map(|_| off()).collect(),
                    plus: (0..m.vertices.len()).map(|_| off()).collect(),
                }
            })
            .collect();
        model.parameters.push(DeformParameter {
            name: name.into(),
            keyframes,
        });
    }
    model.validate().expect("posable model is valid");
    model
}

/// Pixel-center coverage of one triangle in exact integer arithmetic.
/// Centers on an edge belong to the triangle when, in counter-clockwise
/// (positive-area) orientation, the edge's normal `(-dy, dx)` points to
/// +x, or is vertical in x and points to +y.
pub fn oracle_coverage(width: u32, height: u32, tri: [[f64; 2]; 3]) -> Vec<bool> {
    let q = |v: [f64; 2]| {
        let (x, y) = (v[0] * GRID as f64, v[1] * GRID as f64);
        assert!(x.fract() == 0.0 && y.fract() == 0.0, "vertex off grid");
        [x as i64, y as i64]
    };
    let mut t = tri.map(q);
    let orient = |a: [i64; 2], b: [i64; 2], c: [i64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let area = orient(t[0], t[1], t[2]);
    let mut cov = vec![false; (width * height) as usize];
    if area == 0 {
        return cov;
    }
    if area < 0 {
        t.swap(1, 2);
    }
    let edges = [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let p = [x * GRID + GRID / 2, y * GRID + GRID / 2];
            let inside = edges.iter().all(|&(a, b)| {
                let w = orient(a, b, p);
                let (nx, ny) = (-(b[1] - a[1]), b[0] - a[0]);
                w > 0 || (w == 0 && (nx > 0 || (nx == 0 && ny > 0)))
            });
            cov[(y * width as i64 + x) as usize] = inside;
        }
    }
    cov
}

/// Same coverage rule in plain f64 for vertices off the quarter grid.
pub fn oracle_coverage_f64(width: u32, height: u32, tri: [[f64; 2]; 3]) -> Vec<bool> {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let mut t = tri;
    let area = orient(t[0], t[1], t[2]);
    let mut cov = vec![false; (width * height) as usize];
    if area == 0.0 {
        return cov;
    }
    if area < 0.0 {
        t.swap(1, 2);
    }
    for y in 0..height {
        for x in 0..width {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            cov[(y * width + x) as usize] = (0..3).all(|e| {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                let w = orient(a, b, p);
                let (nx, ny) = (-(b[1] - a[1]), b[0] - a[0]);
                w > 0.0 || (w == 0.0 && (nx > 0.0 || (nx == 0.0 && ny > 0.0)))
            });
        }
    }
    cov
}

/// Coverage of a whole mesh (union over its triangles).
pub fn oracle_mesh_coverage(model: &CharacterModel, mesh: &ArtMesh) -> Vec<bool> {
    let mut cov = vec![false; model.pixel_count()];
    for tri in &mesh.triangles {
        let c = oracle_coverage(
            model.canvas_width,
            model.canvas_height,
            tri.map(|i| mesh.vertices[i as usize]),
        );
        for (dst, src) in cov.iter_mut().zip(c) {
            *dst |= src;
        }
    }
    cov
}

/// Alpha of a solid-atlas mesh: texel alpha times opacity inside coverage.
pub fn oracle_alpha(model: &CharacterModel, mesh: &ArtMesh) -> Vec<f32> {
    let a = model.atlases[mesh.texture_index].pixels[0][3] as f32 / 255.0;
    let alpha = a * mesh.opacity as f32;
    oracle_mesh_coverage(model, mesh)
        .into_iter()
        .map(|c| if c { alpha } else { 0.0 })
        .collect()
}

/// Meshes sorted back to front.
pub fn back_to_front(model: &CharacterModel) -> Vec<&ArtMesh> {
    let mut v: Vec<&ArtMesh> = model.meshes.iter().collect();
    v.sort_by_key(|m| m.draw_order);
    v
}

/// Visibility straight from the definition: for every mesh and pixel,
/// `alpha_m * prod over meshes above (1 - alpha_k)` with the product taken
/// from the topmost mesh down, compared against `tau`.
pub fn oracle_visibility(model: &CharacterModel, tau: f64) -> BTreeMap<MeshId, Vec<bool>> {
    let order = back_to_front(model);
    let alphas: Vec<Vec<f32>> = order.iter().map(|m| oracle_alpha(model, m)).collect();
    let mut out = BTreeMap::new();
    for (i, m) in order.iter().enumerate() {
        let vis = (0..model.pixel_count())
            .map(|p| {
                if alphas[i][p] <= 0.0 {
                    return false;
                }
                let mut t = 1.0f32;
                for above in alphas[i + 1..].iter().rev() {
                    t *= 1.0 - above[p];
                }
                alphas[i][p] * t >= tau as f32
            })
            .collect();
        out.insert(m.id, vis);
    }
    out
}

/// Painter's composite of opaque solid-color meshes: the topmost covering
/// mesh's color.
pub fn oracle_opaque_composite(
    model: &CharacterModel,
    only: Option<&BTreeSet<MeshId>>,
) -> RgbaImage {
    let mut img = RgbaImage::transparent(model.canvas_width, model.canvas_height);
    for m in back_to_front(model) {
        if only.is_some_and(|s| !s.contains(&m.id)) {
            continue;
        }
        let t = model.atlases[m.texture_index].pixels[0];
        assert_eq!(t[3], 255);
        let c = [t[0], t[1], t[2]].map(|v| v as f32 / 255.0);
        for (p, covered) in oracle_mesh_coverage(model, m).into_iter().enumerate() {
            if covered {
                img.pixels[p] = [c[0], c[1], c[2], 1.0];
            }
        }
    }
    img
}

/// Random score stack; with `ties`, some pixels repeat their maximum so
/// argmax ties are exercised.
pub fn random_stack(rng: &mut ChaCha8Rng, model: &CharacterModel, ties: bool) -> ScoreStack {
    let n = model.taxonomy.len();
    let px = model.pixel_count();
    let mut scores = Vec::with_capacity(px * n);
    for _ in 0..px {
        // Coarse values make equal per-mesh means likely.
        let mut row: Vec<f32> = (0..n)
            .map(|_| rng.random_range(0..=4) as f32 / 4.0)
            .collect();
        if ties && rng.random_bool(0.5) {
            row = vec![0.5; n];
        }
        scores.extend(row);
    }
    ScoreStack::new(model.canvas_width, model.canvas_height, n, scores).unwrap()
}

/// Mean score per class over `mask`, then argmax with ties to the lowest
/// class index.
pub fn oracle_vote(stack: &ScoreStack, mask: &[bool]) -> Option<(u8, f64)> {
    let n = stack.n_classes;
    let count = mask.iter().filter(|&&b| b).count();
    if count == 0 {
        return None;
    }
    let mut best: Option<(u8, f64)> = None;
    for c in 0..n {
        let mut s = 0.0f64;
        for (p, &b) in mask.iter().enumerate() {
            if b {
                s += stack.scores[p * n + c] as f64;
            }
        }
        let mean = s / count as f64;
        if best.is_none_or(|(_, bm)| mean > bm) {
            best = Some((c as u8, mean));
        }
    }
    best
}

/// Minimum within-cluster SSE over all two-way splits of the sorted values.
pub fn exhaustive_two_means(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let sse = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    (1..s.len())
        .map(|i| sse(&s[..i]) + sse(&s[i..]))
        .fold(f64::INFINITY, f64::min)
}

pub fn mask_from(width: u32, height: u32, bits: Vec<bool>) -> Mask {
    Mask {
        width,
        height,
        bits,
    }
}

/// Line printed by the acceptance suite.
pub fn report(name: &str, pass: bool, detail: impl std::fmt::Display) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

/// Export stack of the demo character: every class layer, stratify-set
/// classes split by depth with holes filled.
pub fn demo_stack() -> (Vec<NamedLayer>, u32, u32) {
    let m = fixtures::demo_character();
    let stack = export_stack(&m, StratifyOptions::default(), true).unwrap();
    (stack, m.canvas_width, m.canvas_height)
}

/// Re-reads the file with Pillow, an independent PSD implementation; prints
/// layer names and the hex digest of every layer's RGBA bytes.
pub fn pillow_layers(path: &std::path::Path) -> Option<Vec<(String, Vec<u8>)>> {
    let script = r#"
import sys
from PIL import Image
im = Image.open(sys.argv[1])
# Some Pillow versions parse the layer section from an in-memory copy, so
# tile offsets come out relative to that section while loading seeks the
# whole file; rebase them there.
import inspect
from PIL import PsdImagePlugin
layers = im.layers
if "BytesIO" in inspect.getsource(PsdImagePlugin.PsdImageFile):
    base = im._layers_position
    for _, _, _, tiles in layers:
        tiles[:] = [t._replace(offset=t.offset + base) for t in tiles]
rows = []
# The file opens on frame 1 holding the merged image, and seeking to the
# current frame is a no-op, so load that layer's tiles by hand.
for i in range(len(im.layers), 0, -1):
    if im.tell() == i:
        im._mode, im.tile = layers[i - 1][1], layers[i - 1][3]
    else:
        im.seek(i)
    name, _, bbox, _ = im.layers[i - 1]
    rows.append(name + "\t" + str(bbox) + "\t" + im.convert("RGBA").tobytes().hex())
sys.stdout.write("\n".join(reversed(rows)) + "\n")
"#;
    let out = Command::new("python3")
        .arg("-c")
        .arg(script)
        .arg(path)
        .output()
        .ok()?;
    if !out.status.success() {
        let err = String::from_utf8_lossy(&out.stderr);
        if err.contains("No module named") {
            return None;
        }
        panic!("Pillow failed to read the PSD: {err}");
    }
    let text = String::from_utf8(out.stdout).unwrap();
    Some(
        text.lines()
            .map(|l| {
                let mut parts = l.split('\t');
                let name = parts.next().unwrap().to_string();
                let _bbox = parts.next().unwrap();
                let hex = parts.next().unwrap();
                let bytes = (0..hex.len())
                    .step_by(2)
                    .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap())
                    .collect();
                (name, bytes)
            })
            .collect(),
    )
}
