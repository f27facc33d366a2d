use lcm_web::Demo;

#[test]
fn hiding_hair_changes_the_render_and_showing_restores_it() {
    let mut d = Demo::new();
    let full = d.render();
    assert_eq!(full.len(), (d.width() * d.height() * 4) as usize);
    assert!(!d.toggle("Hair").unwrap());
    let bald = d.render();
    assert_ne!(full, bald);
    assert!(d.toggle("Hair").unwrap());
    assert_eq!(d.render(), full);
    assert!(d.toggle("Nope").is_err());
}

#[test]
fn visibility_view_covers_exactly_the_drawn_pixels() {
    let d = Demo::new();
    let vis = d.visibility(0.5).unwrap();
    let full = d.render();
    for (v, f) in vis.chunks(4).zip(full.chunks(4)) {
        assert_eq!(v[3] == 255, f[3] == 255);
    }
    assert!(d.visibility(1.5).is_err());
    assert_eq!(d.depth().len(), vis.len());
}

#[test]
fn hair_splits_into_two_strata() {
    let d = Demo::new();
    let s = d.stratify("Hair", 2, false, false).unwrap();
    assert_eq!(s.centroids.len(), 2);
    assert_eq!(s.width, 2 * d.width());
    assert_eq!(s.pixels.len(), (s.width * s.height * 4) as usize);
    assert!(s.hole_pixels[0] > 0);
    assert_eq!(s.hole_pixels[1], 0);
    assert!(d.stratify("Face", 2, true, false).is_err());
    assert_eq!(
        d.stratify("Hair", 3, true, true).unwrap().centroids.len(),
        3
    );
}
