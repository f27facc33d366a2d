//! Small hand-built models used by tests, the CLI `demo` command and the
//! browser demo.

use std::collections::BTreeMap;

use crate::model::{
    ArtMesh, CharacterModel, ClassId, DeformParameter, MeshId, MeshKeyframes, Taxonomy,
    TextureAtlas,
};

/// Axis-aligned quad made of two triangles.
#[allow(clippy::too_many_arguments)]
pub fn quad(
    id: u32,
    name: &str,
    path: &[&str],
    rect: [f64; 4],
    uv: [f64; 4],
    texture: usize,
    draw_order: i64,
    opacity: f64,
    label: Option<ClassId>,
) -> ArtMesh {
    let [x0, y0, x1, y1] = rect;
    let [u0, v0, u1, v1] = uv;
    ArtMesh {
        id: MeshId(id),
        name: name.to_string(),
        hierarchy_path: path.iter().map(|s| s.to_string()).collect(),
        vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        uvs: vec![[u0, v0], [u1, v0], [u1, v1], [u0, v1]],
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        texture_index: texture,
        draw_order,
        opacity,
        label,
    }
}

/// 8x8 atlas with four opaque 4x4 quadrants: red, green / blue, yellow.
pub fn quadrant_atlas() -> TextureAtlas {
    let mut pixels = Vec::with_capacity(64);
    for y in 0..8 {
        for x in 0..8 {
            pixels.push(match (x < 4, y < 4) {
                (true, true) => [255, 0, 0, 255],
                (false, true) => [0, 255, 0, 255],
                (true, false) => [0, 0, 255, 255],
                (false, false) => [255, 255, 0, 255],
            });
        }
    }
    TextureAtlas {
        width: 8,
        height: 8,
        pixels,
    }
}

/// UV rectangles strictly inside each quadrant of [`quadrant_atlas`], so
/// bilinear sampling never bleeds across quadrants.
pub const UV_RED: [f64; 4] = [0.0625, 0.0625, 0.4375, 0.4375];
pub const UV_GREEN: [f64; 4] = [0.5625, 0.0625, 0.9375, 0.4375];
pub const UV_BLUE: [f64; 4] = [0.0625, 0.5625, 0.4375, 0.9375];
pub const UV_YELLOW: [f64; 4] = [0.5625, 0.5625, 0.9375, 0.9375];

/// Smallest valid model: one 4x4 atlas, one two-triangle mesh.
pub fn minimal() -> CharacterModel {
    CharacterModel {
        canvas_width: 4,
        canvas_height: 4,
        atlases: vec![TextureAtlas::solid(4, 4, [255, 0, 0, 255])],
        meshes: vec![quad(
            0,
            "ArtMesh0",
            &[],
            [0.0, 0.0, 4.0, 4.0],
            [0.0, 0.0, 1.0, 1.0],
            0,
            0,
            1.0,
            None,
        )],
        parameters: Vec::new(),
        taxonomy: Taxonomy::default(),
        metadata: BTreeMap::new(),
    }
}

/// Three overlapping opaque meshes on a 16x16 canvas with draw orders
/// {3, 7, 11}: back hair (red), face (green), front hair (blue triangle).
/// Carries AngleX/AngleY keyframes.
pub fn tri3() -> CharacterModel {
    let tax = Taxonomy::default();
    let hair = tax.class_id("Hair");
    let face = tax.class_id("Face");
    let mut front = quad(
        2,
        "PartHairFront",
        &["Head", "Hair"],
        [0.0; 4],
        UV_BLUE,
        0,
        11,
        1.0,
        hair,
    );
    front.vertices = vec![[2.3, 1.2], [14.6, 2.1], [6.2, 9.7]];
    front.uvs = vec![[0.1, 0.6], [0.4, 0.6], [0.2, 0.9]];
    front.triangles = vec![[0, 1, 2]];
    let meshes = vec![
        quad(
            0,
            "PartHairBack",
            &["Head", "Hair"],
            [1.0, 1.0, 11.0, 13.0],
            UV_RED,
            0,
            3,
            1.0,
            hair,
        ),
        quad(
            1,
            "PartFace",
            &["Head"],
            [4.0, 3.0, 12.0, 11.0],
            UV_GREEN,
            0,
            7,
            1.0,
            face,
        ),
        front,
    ];
    let keyframes = |dx: f64, dy: f64| -> Vec<MeshKeyframes> {
        meshes
            .iter()
            .map(|m| MeshKeyframes {
                mesh: m.id,
                minus: vec![[-dx, -dy]; m.vertices.len()],
                plus: vec![[dx, dy]; m.vertices.len()],
            })
            .collect()
    };
    let parameters = vec![
        DeformParameter {
            name: "AngleX".into(),
            keyframes: keyframes(1.0, 0.0),
        },
        DeformParameter {
            name: "AngleY".into(),
            keyframes: keyframes(0.0, 0.5),
        },
    ];
    CharacterModel {
        canvas_width: 16,
        canvas_height: 16,
        atlases: vec![quadrant_atlas()],
        meshes,
        parameters,
        taxonomy: tax,
        metadata: BTreeMap::new(),
    }
}

/// A 96x128 toy character: back hair, face, eyes, mouth, torso, arms and
/// front hair strands that wrap over the face, with head-turn keyframes.
/// Used by the demos; its hair layer splits cleanly into two depth strata.
pub fn demo_character() -> CharacterModel {
    let tax = Taxonomy::default();
    let c = |n: &str| tax.class_id(n);
    let w = 96.0;
    // Palette atlas: 4x4 texels, one solid color per texel.
    let palette: [[u8; 4]; 16] = [
        [92, 64, 140, 255],   // hair dark
        [128, 96, 190, 255],  // hair light
        [250, 222, 200, 255], // skin
        [40, 40, 70, 255],    // eyes
        [200, 80, 90, 255],   // mouth
        [70, 110, 180, 255],  // top
        [50, 60, 90, 255],    // bottom
        [240, 240, 240, 255], // collar
        [230, 200, 180, 255], // skin shade
        [110, 70, 50, 255],   // brows
        [255, 255, 255, 255],
        [0, 0, 0, 255],
        [255, 200, 60, 255], // ribbon
        [255, 255, 255, 255],
        [255, 255, 255, 255],
        [255, 255, 255, 255],
    ];
    let atlas = TextureAtlas {
        width: 4,
        height: 4,
        pixels: palette.to_vec(),
    };
    let texel = |i: usize| -> [f64; 4] {
        let (tx, ty) = ((i % 4) as f64, (i / 4) as f64);
        let (u, v) = ((tx + 0.5) / 4.0, (ty + 0.5) / 4.0);
        [u, v, u, v]
    };
    let mut meshes = vec![
        quad(
            1,
            "PartHairBack",
            &["Head", "Hair"],
            [14.0, 10.0, 82.0, 92.0],
            texel(0),
            0,
            0,
            1.0,
            c("Hair"),
        ),
        quad(
            2,
            "PartNeck",
            &["Body"],
            [40.0, 54.0, 56.0, 68.0],
            texel(8),
            0,
            1,
            1.0,
            c("Neck"),
        ),
        quad(
            3,
            "PartBottom",
            &["Body", "Clothes"],
            [28.0, 96.0, 68.0, 124.0],
            texel(6),
            0,
            2,
            1.0,
            c("Bottomwear"),
        ),
        quad(
            4,
            "PartArmL",
            &["Body", "Arms"],
            [14.0, 66.0, 26.0, 108.0],
            texel(8),
            0,
            3,
            1.0,
            c("Arms"),
        ),
        quad(
            5,
            "PartArmR",
            &["Body", "Arms"],
            [70.0, 66.0, 82.0, 108.0],
            texel(8),
            0,
            4,
            1.0,
            c("Arms"),
        ),
        quad(
            6,
            "PartTop",
            &["Body", "Clothes"],
            [24.0, 64.0, 72.0, 100.0],
            texel(5),
            0,
            5,
            1.0,
            c("Topwear"),
        ),
        quad(
            7,
            "PartCollar",
            &["Body", "Clothes"],
            [36.0, 62.0, 60.0, 70.0],
            texel(7),
            0,
            6,
            1.0,
            c("Topwear"),
        ),
        quad(
            8,
            "PartFace",
            &["Head"],
            [26.0, 18.0, 70.0, 60.0],
            texel(2),
            0,
            7,
            1.0,
            c("Face"),
        ),
        quad(
            9,
            "PartEyeL",
            &["Head", "Eyes"],
            [34.0, 34.0, 42.0, 42.0],
            texel(3),
            0,
            8,
            1.0,
            c("Eyes"),
        ),
        quad(
            10,
            "PartEyeR",
            &["Head", "Eyes"],
            [54.0, 34.0, 62.0, 42.0],
            texel(3),
            0,
            9,
            1.0,
            c("Eyes"),
        ),
        quad(
            11,
            "PartBrowL",
            &["Head", "Eyes"],
            [33.0, 29.0, 43.0, 31.0],
            texel(9),
            0,
            10,
            1.0,
            c("Eyebrows"),
        ),
        quad(
            12,
            "PartBrowR",
            &["Head", "Eyes"],
            [53.0, 29.0, 63.0, 31.0],
            texel(9),
            0,
            11,
            1.0,
            c("Eyebrows"),
        ),
        quad(
            13,
            "PartMouth",
            &["Head"],
            [44.0, 49.0, 52.0, 52.0],
            texel(4),
            0,
            12,
            1.0,
            c("Mouth"),
        ),
        quad(
            14,
            "PartHairFrontL",
            &["Head", "Hair"],
            [22.0, 12.0, 38.0, 46.0],
            texel(1),
            0,
            13,
            1.0,
            c("Hair"),
        ),
        quad(
            15,
            "PartHairFrontR",
            &["Head", "Hair"],
            [58.0, 12.0, 74.0, 46.0],
            texel(1),
            0,
            14,
            1.0,
            c("Hair"),
        ),
        quad(
            16,
            "PartHairBang",
            &["Head", "Hair"],
            [30.0, 10.0, 66.0, 24.0],
            texel(1),
            0,
            15,
            1.0,
            c("Hair"),
        ),
        quad(
            17,
            "PartRibbon",
            &["Head", "Accessory"],
            [60.0, 6.0, 74.0, 16.0],
            texel(12),
            0,
            16,
            1.0,
            c("Accessories"),
        ),
    ];
    // Slanted bang tips so the hair silhouette is not purely rectangular.
    for m in meshes
        .iter_mut()
        .filter(|m| m.name.starts_with("PartHairFront"))
    {
        let v = &mut m.vertices;
        v[3][0] += 3.0;
        v[2][0] -= 3.0;
    }
    let head = |m: &ArtMesh| m.hierarchy_path.first().map(String::as_str) == Some("Head");
    let turn = |sx: f64, sy: f64| -> Vec<MeshKeyframes> {
        meshes
            .iter()
            .map(|m| {
                // Parts nearer the front move further for a parallax head turn.
                let k = if head(m) {
                    1.0 + m.draw_order as f64 / 16.0
                } else {
                    0.35
                };
                let off = [sx * k * w / 96.0, sy * k];
                MeshKeyframes {
                    mesh: m.id,
                    minus: vec![[-off[0], -off[1]]; m.vertices.len()],
                    plus: vec![off; m.vertices.len()],
                }
            })
            .collect()
    };
    let parameters = vec![
        DeformParameter {
            name: "AngleX".into(),
            keyframes: turn(3.0, 0.0),
        },
        DeformParameter {
            name: "AngleY".into(),
            keyframes: turn(0.0, 2.5),
        },
    ];
    let mut metadata = BTreeMap::new();
    metadata.insert("title".into(), "demo character".into());
    CharacterModel {
        canvas_width: 96,
        canvas_height: 128,
        atlases: vec![atlas],
        meshes,
        parameters,
        taxonomy: tax,
        metadata,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        minimal().validate().unwrap();
        tri3().validate().unwrap();
        demo_character().validate().unwrap();
    }
}
