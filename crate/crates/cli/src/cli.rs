//! The `lcm` command line.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lcm_core::archive::{parse_model, serialize_model, ParseOptions};
use lcm_core::depth::{
    render_depth_map, split_layer, stratify_layer, PseudoDepthMap, StratifyMode, StratifyOptions,
};
use lcm_core::image::{Mask, RgbaImage};
use lcm_core::labeler::{
    decode_label_map, encode_label_map, max_pool_labels, propagate_labels, render_label_map,
    snap_labels, visible_areas, vote_seed_labels, LabelAssignment, ScoreStack, DEFAULT_TAU_BG,
};
use lcm_core::layers::{export_stack, extract_layer, reconstruct};
use lcm_core::manifest::{validate_manifest, DatasetManifest, ManifestEntry, Split};
use lcm_core::metrics::{dice_loss, mask_mse, metric_depth, psnr_ssim, MetricsReport};
use lcm_core::model::{CharacterModel, MeshId, Taxonomy, DEFAULT_STRATIFY};
use lcm_core::pngio;
use lcm_core::psd::export_psd;
use lcm_core::raster::{
    generate_orientation_grid, render_composite, visibility_masks, VisibilityMask, DEFAULT_TAU_VIS,
};
use lcm_core::tensor::{self, Tensor, DEPTH_MAGIC, SCORE_MAGIC};
use serde::Deserialize;

use crate::service;

/// A problem with the invocation rather than the data; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "lcm", version, about = "Tools for layered 2D character models")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Model archive; every subcommand also takes it as its first argument
    #[arg(long, global = true, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Replacement taxonomy: a JSON array of class names, or
    /// {"classes": [...], "stratify": [...]}
    #[arg(long, global = true, value_name = "JSON")]
    pub taxonomy: Option<PathBuf>,
    /// Accepted for reproducible scripts. Clustering is exact, so the
    /// output never depends on it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Visibility threshold on effective alpha, in (0, 1)
    #[arg(long, global = true, default_value_t = DEFAULT_TAU_VIS, value_parser = open_unit)]
    pub tau_vis: f64,
    /// Background threshold for max-pooled score maps, in [0, 1)
    #[arg(long, global = true, default_value_t = DEFAULT_TAU_BG, value_parser = half_open_unit)]
    pub tau_bg: f64,
    /// Depth strata per stratified class
    #[arg(long, global = true, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=16))]
    pub k: u32,
    /// Break draw-order ties by mesh id instead of rejecting the model
    #[arg(long, global = true)]
    pub retie: bool,
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn half_open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1)"))
    }
}

#[derive(Args, Debug, Clone)]
pub struct Target {
    /// Model archive (.lcm)
    #[arg(value_name = "MODEL")]
    pub archive: Option<PathBuf>,
    /// Label assignment JSON; defaults to the labels stored in the model
    #[arg(long, value_name = "JSON")]
    pub assignment: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Scores {
    /// Score stack tensor (SSTK)
    #[arg(long, value_name = "PATH")]
    pub scores: Option<PathBuf>,
    /// JSON array naming the class of each tensor channel
    #[arg(long, value_name = "JSON", requires = "scores")]
    pub channels: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    Pixel,
    Mesh,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and check a model archive, or a dataset manifest
    Validate {
        #[arg(value_name = "MODEL")]
        archive: Option<PathBuf>,
        /// Check a JSON-lines dataset manifest instead
        #[arg(long, value_name = "JSONL")]
        manifest: Option<PathBuf>,
        /// Directory the manifest paths are relative to; enables existence checks
        #[arg(long, requires = "manifest")]
        root: Option<PathBuf>,
    },
    /// Composite the model to PNG
    Render {
        #[command(flatten)]
        target: Target,
        #[arg(short, long)]
        out: PathBuf,
        /// Comma-separated mesh ids to draw
        #[arg(long, value_delimiter = ',')]
        visible: Option<Vec<u32>>,
        /// Comma-separated class names to draw; prefix with ! to exclude
        #[arg(long, allow_hyphen_values = true)]
        classes: Option<String>,
    },
    /// Write one visibility mask PNG per mesh
    Masks {
        #[arg(value_name = "MODEL")]
        archive: Option<PathBuf>,
        /// Output directory
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Vote mesh labels from a score stack
    Seed {
        #[arg(value_name = "MODEL")]
        archive: Option<PathBuf>,
        #[command(flatten)]
        scores: Scores,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Snap a pixel label map to mesh boundaries
    Snap {
        #[command(flatten)]
        target: Target,
        /// Indexed PNG label map (palette in taxonomy order, 255 = background)
        #[arg(long, value_name = "PNG")]
        labels: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write the snapped label map
        #[arg(long, value_name = "PNG")]
        map_out: Option<PathBuf>,
    },
    /// Fill unlabeled meshes from names and hierarchy
    Propagate {
        #[command(flatten)]
        target: Target,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a pixel label map from mesh labels, or max-pool a score stack
    LabelMap {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        scores: Scores,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write one complete RGBA layer per non-empty class
    Layers {
        #[command(flatten)]
        target: Target,
        /// Output directory
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a 16-bit pseudo-depth PNG
    Depth {
        #[command(flatten)]
        target: Target,
        /// Restrict to one class
        #[arg(long)]
        class: Option<String>,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write the validity mask
        #[arg(long, value_name = "PNG")]
        validity: Option<PathBuf>,
        /// Also write the float depth tensor (DPTH)
        #[arg(long, value_name = "PATH")]
        tensor: Option<PathBuf>,
    },
    /// Split one class layer into depth strata
    Stratify {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        class: String,
        /// Output directory
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "pixel")]
        mode: ModeArg,
        /// Leave hole pixels transparent instead of inpainting them
        #[arg(long)]
        no_fill: bool,
    },
    /// Recomposite the class layers by per-pixel depth
    Reconstruct {
        #[command(flatten)]
        target: Target,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Export the depth-ordered layer stack as PSD
    Psd {
        #[command(flatten)]
        target: Target,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        no_fill: bool,
    },
    /// Compare predictions against ground truth; prints a JSON report
    Metrics {
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        gt: Option<PathBuf>,
        #[arg(long, requires = "gt_mask")]
        pred_mask: Option<PathBuf>,
        #[arg(long, requires = "pred_mask")]
        gt_mask: Option<PathBuf>,
        /// Depth tensors (DPTH)
        #[arg(long, requires = "gt_depth")]
        pred_depth: Option<PathBuf>,
        #[arg(long, requires = "pred_depth")]
        gt_depth: Option<PathBuf>,
        /// Write the report here as well as to stdout
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the 3x3 head-orientation grid as archives plus a manifest
    Augment {
        #[arg(value_name = "MODEL")]
        archive: Option<PathBuf>,
        /// Output directory
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Run the annotation service
    Serve {
        #[arg(value_name = "MODEL")]
        archive: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Directory of static UI assets served at /
        #[arg(long = "static", value_name = "DIR")]
        static_dir: Option<PathBuf>,
        /// Assignment file loaded at start and rewritten after every edit
        #[arg(long, value_name = "JSON")]
        session: Option<PathBuf>,
    },
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 domain error, 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TaxonomyDoc {
    Names(Vec<String>),
    Full {
        classes: Vec<String>,
        stratify: Option<Vec<String>>,
    },
}

fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: TaxonomyDoc =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let (classes, stratify) = match doc {
        TaxonomyDoc::Full {
            classes,
            stratify: Some(s),
        } => (classes, s),
        TaxonomyDoc::Names(classes) | TaxonomyDoc::Full { classes, .. } => {
            let s = DEFAULT_STRATIFY
                .iter()
                .filter(|n| classes.iter().any(|c| c == *n))
                .map(|n| n.to_string())
                .collect();
            (classes, s)
        }
    };
    Ok(Taxonomy::new(&classes, &stratify)?)
}

pub fn load_model(g: &Global, archive: Option<&Path>) -> Result<CharacterModel> {
    let path = archive
        .or(g.model.as_deref())
        .ok_or_else(|| usage("a model archive is required (argument or --model)"))?;
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut model = parse_model(&bytes, ParseOptions { retie: g.retie })
        .with_context(|| format!("loading {}", path.display()))?;
    if let Some(t) = &g.taxonomy {
        model.taxonomy = load_taxonomy(t)?;
        model
            .validate()
            .context("model labels against --taxonomy")?;
    }
    Ok(model)
}

fn load_assignment(model: &CharacterModel, path: Option<&Path>) -> Result<LabelAssignment> {
    let Some(path) = path else {
        return Ok(LabelAssignment::from_model(model));
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let a =
        LabelAssignment::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    a.check(model)
        .with_context(|| format!("{} does not fit the model", path.display()))?;
    Ok(a)
}

/// The model with the target's assignment applied, plus that assignment.
fn labeled(g: &Global, t: &Target) -> Result<(CharacterModel, LabelAssignment)> {
    let model = load_model(g, t.archive.as_deref())?;
    let a = load_assignment(&model, t.assignment.as_deref())?;
    Ok((a.apply(&model), a))
}

fn load_scores(model: &CharacterModel, s: &Scores) -> Result<ScoreStack> {
    let path = s
        .scores
        .as_deref()
        .ok_or_else(|| usage("--scores is required"))?;
    let channels_path = s
        .channels
        .as_deref()
        .ok_or_else(|| usage("--channels is required with --scores"))?;
    let t = tensor::decode(
        SCORE_MAGIC,
        &fs::read(path).with_context(|| format!("reading {}", path.display()))?,
    )?;
    let channels: Vec<String> = serde_json::from_str(&fs::read_to_string(channels_path)?)
        .with_context(|| format!("parsing {}", channels_path.display()))?;
    Ok(ScoreStack::from_tensor(&t, &channels, &model.taxonomy)?)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn png_rgba(image: &RgbaImage) -> Result<Vec<u8>> {
    Ok(pngio::encode_rgba8(
        image.width,
        image.height,
        &image.to_rgba8(),
    )?)
}

fn masks(model: &CharacterModel, g: &Global) -> Result<Vec<VisibilityMask>> {
    Ok(visibility_masks(model, g.tau_vis)?)
}

/// Mesh ids drawn for a `visible` id list and a `classes` filter. Class
/// filters are either all inclusions or all `!` exclusions.
pub fn select_meshes(
    model: &CharacterModel,
    assignment: &LabelAssignment,
    visible: Option<&[u32]>,
    classes: Option<&str>,
) -> Result<BTreeSet<MeshId>, SelectError> {
    let mut set: BTreeSet<MeshId> = match visible {
        Some(ids) => ids
            .iter()
            .map(|&i| {
                model
                    .mesh(MeshId(i))
                    .map(|m| m.id)
                    .ok_or(SelectError::UnknownMesh(i))
            })
            .collect::<Result<_, _>>()?,
        None => model.mesh_ids().into_iter().collect(),
    };
    if let Some(spec) = classes.filter(|s| !s.is_empty()) {
        let names: Vec<&str> = spec.split(',').map(str::trim).collect();
        let excluded = names.iter().filter(|n| n.starts_with('!')).count();
        if excluded != 0 && excluded != names.len() {
            return Err(SelectError::Malformed(
                "classes mixes inclusions and ! exclusions".into(),
            ));
        }
        let ids = names
            .iter()
            .map(|n| {
                let n = n.trim_start_matches('!');
                model
                    .taxonomy
                    .class_id(n)
                    .ok_or_else(|| SelectError::UnknownClass(n.to_string()))
            })
            .collect::<Result<BTreeSet<_>, _>>()?;
        set.retain(|&id| {
            let hit = assignment.class_of(id).is_some_and(|c| ids.contains(&c));
            hit != (excluded != 0)
        });
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectError {
    UnknownMesh(u32),
    UnknownClass(String),
    Malformed(String),
}

impl fmt::Display for SelectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectError::UnknownMesh(i) => write!(f, "unknown mesh {i}"),
            SelectError::UnknownClass(n) => write!(f, "unknown class {n:?}"),
            SelectError::Malformed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for SelectError {}

fn read_rgba(path: &Path) -> Result<RgbaImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (w, h, px) = pngio::decode_rgba8(&bytes)?;
    Ok(RgbaImage::from_rgba8(w, h, &px))
}

fn read_depth(path: &Path) -> Result<PseudoDepthMap> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let t = tensor::decode(DEPTH_MAGIC, &bytes)?;
    if t.channels != 1 {
        return Err(anyhow!(
            "{}: depth tensors have one channel",
            path.display()
        ));
    }
    Ok(PseudoDepthMap {
        width: t.width,
        height: t.height,
        depth: t.data,
    })
}

fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(seed) = g.seed {
        log::debug!("--seed {seed} has no effect: clustering is deterministic");
    }
    let opts = StratifyOptions {
        k: g.k as usize,
        mode: StratifyMode::Pixel,
    };
    match cli.command {
        Command::Validate {
            archive,
            manifest,
            root,
        } => {
            if let Some(path) = manifest {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let counts = validate_manifest(&DatasetManifest::parse(&text)?, root.as_deref())?;
                println!(
                    "train {} val {} test {}",
                    counts.train, counts.val, counts.test
                );
                return Ok(());
            }
            let m = load_model(g, archive.as_deref())?;
            let classes: BTreeSet<_> = m.meshes.iter().filter_map(|x| x.label).collect();
            println!(
                "{} meshes, {} labeled, {} classes in use of {}, canvas {}x{}, {} atlases",
                m.meshes.len(),
                m.meshes.iter().filter(|x| x.label.is_some()).count(),
                classes.len(),
                m.taxonomy.len(),
                m.canvas_width,
                m.canvas_height,
                m.atlases.len()
            );
        }
        Command::Render {
            target,
            out,
            visible,
            classes,
        } => {
            let (m, a) = labeled(g, &target)?;
            let set = select_meshes(&m, &a, visible.as_deref(), classes.as_deref())?;
            write(&out, &png_rgba(&render_composite(&m, Some(&set)))?)?;
        }
        Command::Masks { archive, out } => {
            let m = load_model(g, archive.as_deref())?;
            let masks = masks(&m, g)?;
            fs::create_dir_all(&out)?;
            for v in &masks {
                let png = pngio::encode_gray8(m.canvas_width, m.canvas_height, &v.mask.to_gray8())?;
                write(&out.join(format!("mesh_{}.png", v.mesh_id.0)), &png)?;
            }
            println!("{} masks", masks.len());
        }
        Command::Seed {
            archive,
            scores,
            out,
        } => {
            let m = load_model(g, archive.as_deref())?;
            let stack = load_scores(&m, &scores)?;
            let a = vote_seed_labels(&m, &stack, &masks(&m, g)?)?;
            write(&out, a.to_json().as_bytes())?;
            println!("{} of {} meshes labeled", a.labeled_count(), m.meshes.len());
        }
        Command::Snap {
            target,
            labels,
            out,
            map_out,
        } => {
            let (m, prev) = labeled(g, &target)?;
            let bytes =
                fs::read(&labels).with_context(|| format!("reading {}", labels.display()))?;
            let map = decode_label_map(&bytes)?;
            let (snapped, a) = snap_labels(&m, &map, &masks(&m, g)?, &prev)?;
            write(&out, a.to_json().as_bytes())?;
            if let Some(p) = map_out {
                write(&p, &encode_label_map(&snapped)?)?;
            }
        }
        Command::Propagate { target, out } => {
            let (m, a) = labeled(g, &target)?;
            let before = a.labeled_count();
            let a = propagate_labels(&m, &a, &visible_areas(&masks(&m, g)?))?;
            write(&out, a.to_json().as_bytes())?;
            println!(
                "{} meshes labeled by propagation",
                a.labeled_count() - before
            );
        }
        Command::LabelMap {
            target,
            scores,
            out,
        } => {
            let (m, a) = labeled(g, &target)?;
            let map = if scores.scores.is_some() {
                max_pool_labels(&load_scores(&m, &scores)?, g.tau_bg)?
            } else {
                render_label_map(&m, &a, &masks(&m, g)?)?
            };
            write(&out, &encode_label_map(&map)?)?;
        }
        Command::Layers { target, out } => {
            let (m, _) = labeled(g, &target)?;
            let mut n = 0;
            for class in m.taxonomy.ids() {
                let layer = extract_layer(&m, class)?;
                if layer.is_empty() {
                    continue;
                }
                let name = m.taxonomy.name(class).expect("taxonomy class");
                write(&out.join(format!("{name}.png")), &png_rgba(&layer.image)?)?;
                n += 1;
            }
            println!("{n} layers");
        }
        Command::Depth {
            target,
            class,
            out,
            validity,
            tensor: tensor_out,
        } => {
            let (m, _) = labeled(g, &target)?;
            let class = class
                .map(|n| {
                    m.taxonomy
                        .class_id(&n)
                        .ok_or_else(|| anyhow!("unknown class {n:?}"))
                })
                .transpose()?;
            let dm = render_depth_map(&m, class)?;
            write(
                &out,
                &pngio::encode_gray16(dm.width, dm.height, &dm.to_gray16())?,
            )?;
            if let Some(p) = validity {
                write(
                    &p,
                    &pngio::encode_gray8(dm.width, dm.height, &dm.valid_mask().to_gray8())?,
                )?;
            }
            if let Some(p) = tensor_out {
                let t = Tensor {
                    height: dm.height,
                    width: dm.width,
                    channels: 1,
                    data: dm.depth.clone(),
                };
                write(&p, &tensor::encode(DEPTH_MAGIC, &t))?;
            }
        }
        Command::Stratify {
            target,
            class,
            out,
            mode,
            no_fill,
        } => {
            let (m, _) = labeled(g, &target)?;
            let id = m
                .taxonomy
                .class_id(&class)
                .ok_or_else(|| anyhow!("unknown class {class:?}"))?;
            let layer = extract_layer(&m, id)?;
            let dm = render_depth_map(&m, Some(id))?;
            let opts = StratifyOptions {
                mode: match mode {
                    ModeArg::Pixel => StratifyMode::Pixel,
                    ModeArg::Mesh => StratifyMode::Mesh,
                },
                ..opts
            };
            let st = stratify_layer(&m, id, &dm, &layer.image.alpha(), opts)?;
            let parts = split_layer(&layer.image, &st, !no_fill);
            let k = parts.len();
            for (s, image) in parts.iter().enumerate() {
                let suffix = match (k, s) {
                    (1, _) => "all".to_string(),
                    (2, 0) => "back".to_string(),
                    (2, _) => "front".to_string(),
                    _ => format!("s{s}"),
                };
                write(
                    &out.join(format!("{class}_{suffix}.png")),
                    &png_rgba(image)?,
                )?;
                let hole = &st.holes[s];
                write(
                    &out.join(format!("{class}_{suffix}_holes.png")),
                    &pngio::encode_gray8(hole.width, hole.height, &hole.to_gray8())?,
                )?;
            }
            let meshes: std::collections::BTreeMap<String, u8> = st
                .mesh_strata
                .iter()
                .map(|(id, s)| (id.0.to_string(), *s))
                .collect();
            println!(
                "{}",
                serde_json::json!({
                    "class": class,
                    "centroids": st.centroids,
                    "meshes": meshes,
                    "hole_pixels": st.holes.iter().map(Mask::count).collect::<Vec<_>>(),
                })
            );
        }
        Command::Reconstruct { target, out } => {
            let (m, _) = labeled(g, &target)?;
            let mut layers = Vec::new();
            let mut depths = Vec::new();
            for class in m.taxonomy.ids() {
                layers.push(extract_layer(&m, class)?.image);
                depths.push(render_depth_map(&m, Some(class))?);
            }
            let rec = reconstruct(
                &layers.iter().collect::<Vec<_>>(),
                &depths.iter().collect::<Vec<_>>(),
            )?;
            let (p, s) = psnr_ssim(&rec, &render_composite(&m, None))?;
            write(&out, &png_rgba(&rec)?)?;
            println!("PSNR {p:.2} dB, SSIM {s:.4} against the direct composite");
        }
        Command::Psd {
            target,
            out,
            no_fill,
        } => {
            let (m, _) = labeled(g, &target)?;
            let stack = export_stack(&m, opts, !no_fill)?;
            let mut bytes = Vec::new();
            export_psd(&stack, m.canvas_width, m.canvas_height, &mut bytes)?;
            write(&out, &bytes)?;
            let names: Vec<&str> = stack.iter().map(|l| l.name.as_str()).collect();
            println!(
                "{} layers, bottom to top: {}",
                stack.len(),
                names.join(", ")
            );
        }
        Command::Metrics {
            pred,
            gt,
            pred_mask,
            gt_mask,
            pred_depth,
            gt_depth,
            out,
        } => {
            if pred.is_none() && pred_mask.is_none() && pred_depth.is_none() {
                return Err(usage(
                    "give --pred/--gt, --pred-mask/--gt-mask or --pred-depth/--gt-depth",
                ));
            }
            let mut report = MetricsReport::default();
            if let (Some(p), Some(t)) = (pred, gt) {
                let (a, b) = psnr_ssim(&read_rgba(&p)?, &read_rgba(&t)?)?;
                report.psnr = Some(a);
                report.ssim = Some(b);
            }
            if let (Some(p), Some(t)) = (pred_mask, gt_mask) {
                let (p, t) = (read_rgba(&p)?, read_rgba(&t)?);
                let soft = |i: &RgbaImage| i.pixels.iter().map(|px| px[0]).collect::<Vec<f32>>();
                let hard =
                    |i: &RgbaImage| Mask::from_fn(i.width, i.height, |x, y| i.get(x, y)[0] >= 0.5);
                report.mask_dice_loss = Some(dice_loss(&hard(&p), &hard(&t))?);
                report.mask_mse = Some(mask_mse(&soft(&p), &soft(&t))?);
            }
            if let (Some(p), Some(t)) = (pred_depth, gt_depth) {
                let (rel, d1) = metric_depth(&read_depth(&p)?, &read_depth(&t)?)?;
                report.absrel = Some(rel);
                report.delta1 = Some(d1);
            }
            let json = serde_json::to_string_pretty(&report)?;
            println!("{json}");
            if let Some(o) = out {
                write(&o, json.as_bytes())?;
            }
        }
        Command::Augment {
            archive,
            out,
            split,
        } => {
            let m = load_model(g, archive.as_deref())?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let mut manifest = DatasetManifest::default();
            for posed in generate_orientation_grid(&m)? {
                let name = format!("pose_{}.lcm", posed.pose_id);
                write(&out.join(&name), &serialize_model(&posed.model))?;
                manifest.entries.push(ManifestEntry {
                    path: name,
                    split,
                    pose: posed.pose_id,
                });
            }
            write(&out.join("manifest.jsonl"), manifest.to_jsonl().as_bytes())?;
            println!("{} poses", manifest.entries.len());
        }
        Command::Serve {
            archive,
            port,
            static_dir,
            session,
        } => {
            let m = load_model(g, archive.as_deref())?;
            let state = service::AppState::new(m, g.tau_vis, opts, session)?;
            tokio::runtime::Runtime::new()?.block_on(service::serve(state, port, static_dir))?;
        }
    }
    Ok(())
}
