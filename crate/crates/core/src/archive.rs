//! The LCM archive: a zip holding `model.json` plus `atlas_<i>.png` files.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::model::{
    ArtMesh, CharacterModel, ClassId, DeformParameter, MeshId, MeshKeyframes, ModelError, Taxonomy,
    TextureAtlas,
};
use crate::pngio;

pub const MODEL_ENTRY: &str = "model.json";

pub fn atlas_entry(i: usize) -> String {
    format!("atlas_{i}.png")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Break draw-order ties by ascending mesh id instead of rejecting them.
    pub retie: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    canvas: CanvasDoc,
    atlases: Vec<AtlasDoc>,
    meshes: Vec<MeshDoc>,
    #[serde(default)]
    parameters: Vec<ParameterDoc>,
    taxonomy: Vec<String>,
    #[serde(default)]
    stratify: Vec<String>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanvasDoc {
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtlasDoc {
    file: String,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct MeshDoc {
    id: u32,
    name: String,
    #[serde(default)]
    path: Vec<String>,
    vertices: Vec<[f64; 2]>,
    uvs: Vec<[f64; 2]>,
    triangles: Vec<[u32; 3]>,
    texture: usize,
    draw_order: i64,
    opacity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParameterDoc {
    name: String,
    keyframes: Vec<KeyframeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyframeDoc {
    mesh: u32,
    minus: Vec<[f64; 2]>,
    plus: Vec<[f64; 2]>,
}

/// Parses and validates an LCM archive.
pub fn parse_model(bytes: &[u8], opts: ParseOptions) -> Result<CharacterModel, ModelError> {
    let mut zip = ZipArchive::new(Cursor::new(bytes))
        .map_err(|e| ModelError::MalformedArchive(format!("not a zip container: {e}")))?;
    let json = read_entry(&mut zip, MODEL_ENTRY)?;
    let doc = parse_doc(&json)?;

    let mut atlases = Vec::with_capacity(doc.atlases.len());
    for (i, a) in doc.atlases.iter().enumerate() {
        let png = read_entry(&mut zip, &a.file)?;
        let (w, h, pixels) = pngio::decode_rgba8(&png)
            .map_err(|e| ModelError::MalformedArchive(format!("{}: {e}", a.file)))?;
        if (w, h) != (a.width, a.height) {
            return Err(ModelError::schema(
                format!("atlases[{i}]"),
                format!(
                    "declared {}x{} but {} is {w}x{h}",
                    a.width, a.height, a.file
                ),
            ));
        }
        atlases.push(TextureAtlas::new(w, h, pixels).map_err(|e| match e {
            ModelError::SchemaViolation { message, .. } => {
                ModelError::schema(format!("atlases[{i}]"), message)
            }
            other => other,
        })?);
    }
    let mut model = model_from_doc(doc, atlases)?;
    if opts.retie {
        model.retie_draw_orders();
    }
    model.validate()?;
    Ok(model)
}

fn read_entry(zip: &mut ZipArchive<Cursor<&[u8]>>, name: &str) -> Result<Vec<u8>, ModelError> {
    let mut file = zip
        .by_name(name)
        .map_err(|_| ModelError::MalformedArchive(format!("missing entry {name}")))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| ModelError::MalformedArchive(format!("reading {name}: {e}")))?;
    Ok(buf)
}

fn parse_doc(json: &[u8]) -> Result<ModelDoc, ModelError> {
    let text = std::str::from_utf8(json)
        .map_err(|e| ModelError::MalformedArchive(format!("{MODEL_ENTRY} is not UTF-8: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ModelError::MalformedArchive(format!("{MODEL_ENTRY}: {e}")))?;
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ModelError::schema(path, e.into_inner().to_string())
    })
}

fn model_from_doc(doc: ModelDoc, atlases: Vec<TextureAtlas>) -> Result<CharacterModel, ModelError> {
    let taxonomy = Taxonomy::new(&doc.taxonomy, &doc.stratify)?;
    let meshes = doc
        .meshes
        .into_iter()
        .map(|m| ArtMesh {
            id: MeshId(m.id),
            name: m.name,
            hierarchy_path: m.path,
            vertices: m.vertices,
            uvs: m.uvs,
            triangles: m.triangles,
            texture_index: m.texture,
            draw_order: m.draw_order,
            opacity: m.opacity,
            label: m.label.map(ClassId),
        })
        .collect();
    let parameters = doc
        .parameters
        .into_iter()
        .map(|p| DeformParameter {
            name: p.name,
            keyframes: p
                .keyframes
                .into_iter()
                .map(|k| MeshKeyframes {
                    mesh: MeshId(k.mesh),
                    minus: k.minus,
                    plus: k.plus,
                })
                .collect(),
        })
        .collect();
    Ok(CharacterModel {
        canvas_width: doc.canvas.width,
        canvas_height: doc.canvas.height,
        atlases,
        meshes,
        parameters,
        taxonomy,
        metadata: doc.metadata,
    })
}

fn doc_from_model(model: &CharacterModel) -> ModelDoc {
    ModelDoc {
        canvas: CanvasDoc {
            width: model.canvas_width,
            height: model.canvas_height,
        },
        atlases: model
            .atlases
            .iter()
            .enumerate()
            .map(|(i, a)| AtlasDoc {
                file: atlas_entry(i),
                width: a.width,
                height: a.height,
            })
            .collect(),
        meshes: model
            .meshes
            .iter()
            .map(|m| MeshDoc {
                id: m.id.0,
                name: m.name.clone(),
                path: m.hierarchy_path.clone(),
                vertices: m.vertices.clone(),
                uvs: m.uvs.clone(),
                triangles: m.triangles.clone(),
                texture: m.texture_index,
                draw_order: m.draw_order,
                opacity: m.opacity,
                label: m.label.map(|c| c.0),
            })
            .collect(),
        parameters: model
            .parameters
            .iter()
            .map(|p| ParameterDoc {
                name: p.name.clone(),
                keyframes: p
                    .keyframes
                    .iter()
                    .map(|k| KeyframeDoc {
                        mesh: k.mesh.0,
                        minus: k.minus.clone(),
                        plus: k.plus.clone(),
                    })
                    .collect(),
            })
            .collect(),
        taxonomy: model.taxonomy.names().to_vec(),
        stratify: model
            .taxonomy
            .stratify_names()
            .into_iter()
            .map(String::from)
            .collect(),
        metadata: model.metadata.clone(),
    }
}

/// Canonical `model.json` text: fixed key order, two-space indentation and
/// shortest round-trip float formatting.
pub fn model_json(model: &CharacterModel) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&doc_from_model(model)).expect("model doc serializes");
    out.push(b'\n');
    out
}

/// Serializes a valid model to a deterministic LCM archive.
pub fn serialize_model(model: &CharacterModel) -> Vec<u8> {
    let opts = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(DateTime::default());
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let write = |zip: &mut ZipWriter<Cursor<Vec<u8>>>, name: &str, data: &[u8]| {
        zip.start_file(name, opts).expect("in-memory zip entry");
        zip.write_all(data).expect("in-memory zip write");
    };
    write(&mut zip, MODEL_ENTRY, &model_json(model));
    for (i, atlas) in model.atlases.iter().enumerate() {
        let png = pngio::encode_rgba8(atlas.width, atlas.height, &atlas.pixels)
            .expect("atlas dimensions are valid");
        write(&mut zip, &atlas_entry(i), &png);
    }
    zip.finish().expect("in-memory zip finish").into_inner()
}
