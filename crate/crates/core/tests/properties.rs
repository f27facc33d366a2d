mod common;

use std::collections::BTreeSet;

use common::*;
use lcm_core::archive::{parse_model, serialize_model, ParseOptions};
use lcm_core::depth::{
    fill_holes, kmeans2_1d, pseudo_depth, render_depth_map, stratify_layer, PseudoDepthMap,
    StratifyOptions,
};
use lcm_core::image::{over, Mask, RgbaImage};
use lcm_core::labeler::{
    owner_map, propagate_labels, snap_labels, visible_areas, vote_seed_labels, LabelAssignment,
    LabelEntry, LabelMap, ScoreStack, BACKGROUND,
};
use lcm_core::layers::{extract_layer, pad_gaussian, reconstruct};
use lcm_core::metrics::{dice_loss, metric_depth};
use lcm_core::model::{ClassId, MeshId};
use lcm_core::raster::visibility_masks;
use proptest::prelude::*;
use rand::Rng;

fn small() -> GenOptions {
    GenOptions {
        width: 24,
        height: 24,
        max_meshes: 6,
        ..Default::default()
    }
}

fn pixel() -> impl Strategy<Value = [f32; 4]> {
    prop::array::uniform4(0u8..=255).prop_map(|p| p.map(|c| c as f32 / 255.0))
}

fn image(max: u32) -> impl Strategy<Value = RgbaImage> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        prop::collection::vec(pixel(), (w * h) as usize).prop_map(move |pixels| RgbaImage {
            width: w,
            height: h,
            pixels,
        })
    })
}

fn noisy_label_map(seed: u64, w: u32, h: u32, n_classes: usize) -> LabelMap {
    let mut r = rng(seed);
    LabelMap {
        width: w,
        height: h,
        labels: (0..w * h)
            .map(|_| {
                if r.random_bool(0.2) {
                    BACKGROUND
                } else {
                    r.random_range(0..n_classes as u8)
                }
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn over_is_associative(a in pixel(), b in pixel(), c in pixel()) {
        let left = over(a, over(b, c));
        let right = over(over(a, b), c);
        prop_assert!((left[3] - right[3]).abs() <= 1e-6);
        if left[3] > 0.0 {
            for k in 0..3 {
                prop_assert!((left[k] - right[k]).abs() <= 1e-6, "{left:?} vs {right:?}");
            }
        }
    }

    #[test]
    fn raising_tau_never_grows_a_mask(seed: u64, t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let m = random_model(&mut rng(seed), small());
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = visibility_masks(&m, lo).unwrap();
        let b = visibility_masks(&m, hi).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(y.mask.is_subset_of(&x.mask));
        }
    }

    #[test]
    fn disjoint_opaque_meshes_partition_their_footprints(seed: u64, tau in 0.01f64..0.99) {
        let mut r = rng(seed);
        let mut m = random_model(&mut r, GenOptions { width: 32, height: 32, max_meshes: 8, binary_alpha: true, ..Default::default() });
        // One triangle per mesh, each inside its own 8x8 cell.
        let mut cells: Vec<u32> = (0..16).collect();
        rand::seq::SliceRandom::shuffle(cells.as_mut_slice(), &mut r);
        for (mesh, cell) in m.meshes.iter_mut().zip(cells) {
            let (cx, cy) = ((cell % 4 * 8) as f64, (cell / 4 * 8) as f64);
            let mut v = || [cx + r.random_range(0..=32) as f64 / 4.0, cy + r.random_range(0..=32) as f64 / 4.0];
            mesh.vertices = vec![v(), v(), v()];
            mesh.uvs = vec![[0.5, 0.5]; 3];
            mesh.triangles = vec![[0, 1, 2]];
        }
        m.validate().unwrap();
        let masks = visibility_masks(&m, tau).unwrap();
        let mut union = vec![false; m.pixel_count()];
        for (i, a) in masks.iter().enumerate() {
            for b in &masks[i + 1..] {
                prop_assert!(!a.mask.intersects(&b.mask));
            }
            for (u, &bit) in union.iter_mut().zip(&a.mask.bits) {
                *u |= bit;
            }
        }
        let mut footprint = vec![false; m.pixel_count()];
        for mesh in &m.meshes {
            for (f, c) in footprint.iter_mut().zip(oracle_mesh_coverage(&m, mesh)) {
                *f |= c;
            }
        }
        prop_assert_eq!(union, footprint);
    }

    #[test]
    fn archive_roundtrip(seed: u64) {
        let mut r = rng(seed);
        let m = with_angle_parameters(&mut r, random_model(&mut rng(seed ^ 0x5eed), small()));
        let bytes = serialize_model(&m);
        let back = parse_model(&bytes, ParseOptions::default()).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serialize_model(&back), bytes);
    }

    #[test]
    fn pseudo_depth_preserves_order(seed: u64) {
        let m = random_model(&mut rng(seed), small());
        let d = pseudo_depth(&m);
        for a in &m.meshes {
            for b in &m.meshes {
                prop_assert_eq!(a.draw_order < b.draw_order, d[&a.id] < d[&b.id]);
            }
        }
    }

    #[test]
    fn snapping_is_idempotent_and_covers(seed: u64) {
        let m = random_model(&mut rng(seed), small());
        let masks = visibility_masks(&m, 0.5).unwrap();
        let noisy = noisy_label_map(seed, m.canvas_width, m.canvas_height, m.taxonomy.len());
        let start = LabelAssignment::unlabeled(&m);
        let (once, asg) = snap_labels(&m, &noisy, &masks, &start).unwrap();
        let (twice, asg2) = snap_labels(&m, &once, &masks, &asg).unwrap();
        prop_assert_eq!(&twice, &once);
        for id in m.mesh_ids() {
            prop_assert_eq!(asg2.class_of(id), asg.class_of(id));
        }
        // Every labeled pixel lies in exactly one mask: its owner's.
        let owners = owner_map(&m, &masks);
        for (p, &l) in once.labels.iter().enumerate() {
            if l == BACKGROUND {
                continue;
            }
            let Some(i) = owners[p] else {
                prop_assert!(false, "labeled pixel {} has no owner", p);
                unreachable!()
            };
            prop_assert_eq!(asg.class_of(m.meshes[i].id), Some(ClassId(l)));
            let containing = masks.iter().filter(|v| v.mask.bits[p]).count();
            prop_assert!(containing >= 1);
        }
    }

    #[test]
    fn propagation_is_monotone(seed: u64) {
        let mut r = rng(seed);
        let m = random_model(&mut r, small());
        let mut asg = LabelAssignment::unlabeled(&m);
        let n = m.taxonomy.len() as u8;
        for id in m.mesh_ids() {
            if r.random_bool(0.4) {
                asg.entries.insert(id, LabelEntry { class: Some(ClassId(r.random_range(0..n))), confidence: 0.7, source: None });
            }
        }
        let areas = visible_areas(&visibility_masks(&m, 0.5).unwrap());
        match propagate_labels(&m, &asg, &areas) {
            Ok(out) => {
                prop_assert!(out.labeled_count() >= asg.labeled_count());
                for (id, e) in &asg.entries {
                    if e.class.is_some() {
                        prop_assert_eq!(out.get(*id), Some(e));
                    }
                }
            }
            Err(_) => prop_assert_eq!(asg.labeled_count(), 0),
        }
    }

    #[test]
    fn vote_choice_is_scale_invariant(seed: u64, k in 0i32..10, s in 0.01f32..=1.0) {
        let mut r = rng(seed);
        let m = random_model(&mut r, small());
        let masks = visibility_masks(&m, 0.5).unwrap();
        let classes = |stack: &ScoreStack| {
            let a = vote_seed_labels(&m, stack, &masks).unwrap();
            m.mesh_ids().into_iter().map(|id| a.class_of(id)).collect::<Vec<_>>()
        };
        // Tie-heavy stacks scaled by powers of two, where scaling is exact.
        let tied = random_stack(&mut r, &m, true);
        let p = 2f32.powi(-k);
        let scaled = ScoreStack { scores: tied.scores.iter().map(|v| v * p).collect(), ..tied.clone() };
        prop_assert_eq!(classes(&tied), classes(&scaled));
        // Continuous stacks (ties have probability zero) under arbitrary s.
        let n = m.taxonomy.len();
        let cont = ScoreStack::new(m.canvas_width, m.canvas_height, n, (0..m.pixel_count() * n).map(|_| r.random::<f32>()).collect()).unwrap();
        let scaled = ScoreStack { scores: cont.scores.iter().map(|v| v * s).collect(), ..cont.clone() };
        prop_assert_eq!(classes(&cont), classes(&scaled));
    }

    #[test]
    fn two_means_beats_every_threshold(values in prop::collection::vec(-1e3f64..1e3, 2..200)) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let got = kmeans2_1d(&values).unwrap();
        prop_assert!(got.objective <= exhaustive_two_means(&values) + 1e-9 * (1.0 + got.objective.abs()));
        prop_assert!(got.centroids[0] <= got.centroids[1]);
    }

    #[test]
    fn strata_survive_affine_draw_orders(seed: u64, a in 1i64..50, b in -1000i64..1000) {
        let mut m = random_model(&mut rng(seed), small());
        let hair = m.taxonomy.class_id("Hair").unwrap();
        for mesh in &mut m.meshes {
            mesh.label = Some(hair);
        }
        let strata = |m: &lcm_core::model::CharacterModel| {
            let layer = extract_layer(m, hair).unwrap();
            let dm = render_depth_map(m, Some(hair)).unwrap();
            stratify_layer(m, hair, &dm, &layer.image.alpha(), StratifyOptions::default())
                .map(|s| (s.assignments, s.holes))
                .map_err(|e| e.to_string())
        };
        let before = strata(&m);
        for mesh in &mut m.meshes {
            mesh.draw_order = a * mesh.draw_order + b;
        }
        prop_assert_eq!(strata(&m), before);
    }

    #[test]
    fn hole_masks_are_sound(seed: u64) {
        let mut m = random_model(&mut rng(seed), small());
        let hair = m.taxonomy.class_id("Hair").unwrap();
        for mesh in &mut m.meshes {
            mesh.label = Some(hair);
        }
        let layer = extract_layer(&m, hair).unwrap();
        let dm = render_depth_map(&m, Some(hair)).unwrap();
        if let Ok(st) = stratify_layer(&m, hair, &dm, &layer.image.alpha(), StratifyOptions::default()) {
            // Hole pixels carry back-stratum mesh content hidden under a
            // higher stratum: inside the back meshes' support, never where
            // the back stratum is already the visible one.
            let mut back_support = vec![false; m.pixel_count()];
            for (id, &s) in &st.mesh_strata {
                if s == 0 {
                    let mesh = m.mesh(*id).unwrap();
                    for (b, a) in back_support.iter_mut().zip(oracle_alpha(&m, mesh)) {
                        *b |= a > 0.0;
                    }
                }
            }
            for (p, &hole) in st.hole_mask().bits.iter().enumerate() {
                if hole {
                    prop_assert!(back_support[p]);
                    prop_assert!(st.assignments[p].is_some_and(|s| s > 0));
                }
            }
            prop_assert!(st.holes.last().unwrap().is_empty());
        }
    }

    #[test]
    fn dice_is_symmetric(bits in prop::collection::vec((any::<bool>(), any::<bool>()), 1..300)) {
        let n = bits.len() as u32;
        let a = mask_from(n, 1, bits.iter().map(|x| x.0).collect());
        let b = mask_from(n, 1, bits.iter().map(|x| x.1).collect());
        prop_assert_eq!(dice_loss(&a, &b).unwrap(), dice_loss(&b, &a).unwrap());
        prop_assert_eq!(dice_loss(&a, &a).unwrap(), 0.0);
        let d = dice_loss(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn padding_keeps_known_pixels_and_range(img in image(24)) {
        let (padded, _) = pad_gaussian(&img);
        for (p, q) in img.pixels.iter().zip(&padded) {
            prop_assert!(q.iter().all(|c| (0.0..=1.0).contains(c)));
            if p[3] > 0.0 {
                prop_assert_eq!(&p[..3], &q[..]);
            }
        }
    }

    #[test]
    fn fill_is_identity_outside_holes(img in image(24), seed: u64) {
        let mut r = rng(seed);
        let hole = Mask::from_fn(img.width, img.height, |_, _| r.random_bool(0.3));
        let out = fill_holes(&img, &hole);
        for (p, (a, b)) in img.pixels.iter().zip(&out.pixels).enumerate() {
            if !hole.bits[p] {
                prop_assert_eq!(a.map(f32::to_bits), b.map(f32::to_bits));
            }
        }
    }

    #[test]
    fn depth_metric_of_identical_maps(depth in prop::collection::vec(prop_oneof![Just(-1.0f32), 0.0f32..=1.0], 1..200)) {
        prop_assume!(depth.iter().any(|&d| d >= 0.0));
        let x = PseudoDepthMap { width: depth.len() as u32, height: 1, depth };
        prop_assert_eq!(metric_depth(&x, &x).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn swapping_depths_of_disjoint_layers_keeps_reconstruction(seed: u64) {
        let mut r = rng(seed);
        let (w, h) = (12u32, 10u32);
        // Each pixel belongs to at most one of the two layers.
        let owner: Vec<u8> = (0..w * h).map(|_| r.random_range(0..3)).collect();
        let (d0, d1) = (r.random_range(0..=8) as f32 / 8.0, r.random_range(0..=8) as f32 / 8.0);
        let mut layers = [RgbaImage::transparent(w, h), RgbaImage::transparent(w, h)];
        for (p, &o) in owner.iter().enumerate() {
            if o < 2 {
                layers[o as usize].pixels[p] = [r.random(), r.random(), r.random(), r.random_range(1..=255) as f32 / 255.0];
            }
        }
        let depth = |i: usize, d: f32| PseudoDepthMap {
            width: w,
            height: h,
            depth: owner.iter().map(|&o| if o as usize == i { d } else { -1.0 }).collect(),
        };
        let run = |a: f32, b: f32| {
            let (x, y) = (depth(0, a), depth(1, b));
            reconstruct(&[&layers[0], &layers[1]], &[&x, &y]).unwrap()
        };
        prop_assert_eq!(run(d0, d1).pixels, run(d1, d0).pixels);
    }
}

#[test]
fn manual_labels_survive_propagation_and_snap() {
    let mut r = rng(99);
    for _ in 0..20 {
        let m = random_model(&mut r, small());
        let masks = visibility_masks(&m, 0.5).unwrap();
        let mut asg = LabelAssignment::unlabeled(&m);
        let manual: BTreeSet<MeshId> = m
            .mesh_ids()
            .into_iter()
            .filter(|_| r.random_bool(0.5))
            .collect();
        for &id in &manual {
            asg.entries.insert(
                id,
                LabelEntry {
                    class: Some(ClassId(3)),
                    confidence: 1.0,
                    source: Some(lcm_core::labeler::LabelSource::Manual),
                },
            );
        }
        let noisy = noisy_label_map(
            r.random(),
            m.canvas_width,
            m.canvas_height,
            m.taxonomy.len(),
        );
        let (_, snapped) = snap_labels(&m, &noisy, &masks, &asg).unwrap();
        if manual.is_empty() {
            continue;
        }
        let out = propagate_labels(&m, &snapped, &visible_areas(&masks)).unwrap();
        for id in &manual {
            assert_eq!(out.get(*id), asg.get(*id));
        }
    }
}
