use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::http::{header, HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lcm_cli::service::{router, AppState};
use lcm_core::depth::StratifyOptions;
use lcm_core::fixtures;
use lcm_core::labeler::{
    encode_label_map, propagate_labels, render_label_map, set_manual_label, snap_labels,
    visible_areas, LabelAssignment, LabelMap, LabelSource,
};
use lcm_core::model::{CharacterModel, ClassId, MeshId};
use lcm_core::pngio;
use lcm_core::raster::{render_composite, visibility_masks};
use proptest::prelude::*;
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

impl Reply {
    fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap()
    }

    fn text(&self) -> String {
        String::from_utf8(self.body.to_vec()).unwrap()
    }
}

async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    headers: &[(&str, &str)],
    body: impl Into<Body>,
) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let resp = app
        .clone()
        .oneshot(req.body(body.into()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        headers,
        body,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, &[], Body::empty()).await
}

async fn post(app: &Router, uri: &str, body: impl Into<Body>) -> Reply {
    call(app, Method::POST, uri, &[], body).await
}

fn unlabeled(mut m: CharacterModel) -> CharacterModel {
    for mesh in &mut m.meshes {
        mesh.label = None;
    }
    m
}

fn app_for(m: CharacterModel) -> (Arc<AppState>, Router) {
    let st = AppState::new(m, 0.5, StratifyOptions::default(), None).unwrap();
    (st.clone(), router(st, None))
}

fn png_of(m: &CharacterModel, ids: &BTreeSet<MeshId>) -> Vec<u8> {
    let img = render_composite(m, Some(ids));
    pngio::encode_rgba8(img.width, img.height, &img.to_rgba8()).unwrap()
}

#[tokio::test]
async fn model_endpoint_lists_meshes_hierarchy_and_taxonomy() {
    let (_, app) = app_for(fixtures::demo_character());
    let r = get(&app, "/model").await;
    assert_eq!(r.status, StatusCode::OK);
    let v = r.json();
    assert_eq!(v["meshes"].as_array().unwrap().len(), 17);
    assert_eq!(v["meshes"][0]["name"], "PartHairBack");
    assert_eq!(v["meshes"][0]["path"], serde_json::json!(["Head", "Hair"]));
    assert_eq!(v["meshes"][0]["label"], "Hair");
    assert_eq!(v["taxonomy"]["classes"].as_array().unwrap().len(), 19);
    assert!(v["hierarchy"]
        .as_array()
        .unwrap()
        .contains(&serde_json::json!(["Head", "Eyes"])));
}

#[tokio::test]
async fn manual_label_shows_up_in_labels() {
    let (_, app) = app_for(unlabeled(fixtures::demo_character()));
    let r = post(&app, "/labels/4", r#"{"class":"Eyes"}"#).await;
    assert_eq!(r.status, StatusCode::OK);
    let a = LabelAssignment::from_json(&get(&app, "/labels").await.text()).unwrap();
    let e = a.get(MeshId(4)).unwrap();
    assert_eq!(
        e.class,
        fixtures::demo_character().taxonomy.class_id("Eyes")
    );
    assert_eq!(e.source, Some(LabelSource::Manual));
    // A null class clears the label but keeps it manual.
    post(&app, "/labels/4", r#"{"class":null}"#).await;
    let a = LabelAssignment::from_json(&get(&app, "/labels").await.text()).unwrap();
    assert_eq!(a.class_of(MeshId(4)), None);
    assert!(a.get(MeshId(4)).unwrap().is_manual());
}

#[tokio::test]
async fn render_honors_visibility_and_class_exclusion() {
    let m = fixtures::demo_character();
    let (_, app) = app_for(m.clone());
    let hair = m.taxonomy.class_id("Hair").unwrap();
    let no_hair: BTreeSet<MeshId> = m
        .meshes
        .iter()
        .filter(|x| x.label != Some(hair))
        .map(|x| x.id)
        .collect();
    let r = get(&app, "/render?classes=!Hair").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.headers[header::CONTENT_TYPE], "image/png");
    assert_eq!(r.body, png_of(&m, &no_hair));
    // A second request is served from the cache and is identical.
    assert_eq!(get(&app, "/render?classes=%21Hair").await.body, r.body);
    let all: BTreeSet<MeshId> = m.mesh_ids().into_iter().collect();
    assert_eq!(get(&app, "/render").await.body, png_of(&m, &all));
    let r = get(&app, "/render?visible=8,9&classes=Eyes").await;
    assert_eq!(r.body, png_of(&m, &BTreeSet::from([MeshId(9)])));
    assert_eq!(
        get(&app, "/render?visible=").await.body,
        png_of(&m, &BTreeSet::new())
    );
    assert_eq!(
        get(&app, "/render?visible=999").await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, "/render?visible=x").await.status,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        get(&app, "/render?classes=Nope").await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, "/render?classes=Hair,!Face").await.status,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn render_follows_the_session_labels() {
    let m = fixtures::demo_character();
    let (_, app) = app_for(m.clone());
    // Relabel the ribbon as hair; hiding hair now hides it too.
    post(&app, "/labels/17", r#"{"class":"Hair"}"#).await;
    let hair = m.taxonomy.class_id("Hair").unwrap();
    let keep: BTreeSet<MeshId> = m
        .meshes
        .iter()
        .filter(|x| x.label != Some(hair) && x.id != MeshId(17))
        .map(|x| x.id)
        .collect();
    assert_eq!(
        get(&app, "/render?classes=!Hair").await.body,
        png_of(&m, &keep)
    );
}

#[tokio::test]
async fn mask_and_preview_match_the_library() {
    let m = fixtures::demo_character();
    let (_, app) = app_for(m.clone());
    let masks = visibility_masks(&m, 0.5).unwrap();
    for v in &masks {
        let r = get(&app, &format!("/mesh/{}/mask", v.mesh_id.0)).await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(
            r.body,
            pngio::encode_gray8(m.canvas_width, m.canvas_height, &v.mask.to_gray8()).unwrap()
        );
    }
    assert_eq!(
        get(&app, "/mesh/999/mask").await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(&app, "/mesh/abc/mask").await.status,
        StatusCode::BAD_REQUEST
    );
    let eyes = m.taxonomy.class_id("Eyes").unwrap();
    let r = get(&app, "/class/Eyes/preview").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.body, png_of(&m, &m.meshes_of_class(eyes)));
    assert_eq!(
        get(&app, "/class/Nope/preview").await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn undo_and_redo_restore_identical_json() {
    let (_, app) = app_for(fixtures::demo_character());
    let before = get(&app, "/labels").await.body;
    post(&app, "/labels/4", r#"{"class":"Eyes"}"#).await;
    let edited = get(&app, "/labels").await.body;
    assert_ne!(before, edited);
    assert_eq!(
        post(&app, "/undo", Body::empty()).await.status,
        StatusCode::OK
    );
    assert_eq!(get(&app, "/labels").await.body, before);
    assert_eq!(
        post(&app, "/redo", Body::empty()).await.status,
        StatusCode::OK
    );
    assert_eq!(get(&app, "/labels").await.body, edited);
    post(&app, "/undo", Body::empty()).await;
    assert_eq!(
        post(&app, "/undo", Body::empty()).await.status,
        StatusCode::CONFLICT
    );
    assert_eq!(get(&app, "/labels").await.body, before);
}

#[tokio::test]
async fn stale_revisions_conflict() {
    let (_, app) = app_for(fixtures::demo_character());
    let etag = get(&app, "/labels").await.headers[header::ETAG]
        .to_str()
        .unwrap()
        .to_string();
    let r = call(
        &app,
        Method::POST,
        "/labels/4",
        &[("if-match", &etag)],
        r#"{"class":"Eyes"}"#,
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    // A second writer still holding the old revision loses.
    let r = call(
        &app,
        Method::POST,
        "/labels/5",
        &[("if-match", &etag)],
        r#"{"class":"Eyes"}"#,
    )
    .await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let a = LabelAssignment::from_json(&get(&app, "/labels").await.text()).unwrap();
    assert_ne!(
        a.class_of(MeshId(5)),
        fixtures::demo_character().taxonomy.class_id("Eyes")
    );
    let fresh = r#""1""#;
    let r = call(
        &app,
        Method::POST,
        "/undo",
        &[("if-match", fresh)],
        Body::empty(),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
}

#[tokio::test]
async fn malformed_requests() {
    let (_, app) = app_for(unlabeled(fixtures::demo_character()));
    for body in [
        "",
        "{",
        r#"{"class":3}"#,
        r#"{"klass":"Eyes"}"#,
        r#"{"class":"Nope"}"#,
    ] {
        assert_eq!(
            post(&app, "/labels/4", body).await.status,
            StatusCode::BAD_REQUEST,
            "{body}"
        );
    }
    assert_eq!(
        post(&app, "/labels/999", r#"{"class":"Eyes"}"#)
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        post(&app, "/labels/x", r#"{"class":"Eyes"}"#).await.status,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        post(&app, "/snap", "not a png").await.status,
        StatusCode::BAD_REQUEST
    );
    let wrong_size = encode_label_map(&LabelMap::background(3, 3)).unwrap();
    assert_eq!(
        post(&app, "/snap", wrong_size).await.status,
        StatusCode::BAD_REQUEST
    );
    let r = post(&app, "/propagate", Body::empty()).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert!(r.json()["error"]
        .as_str()
        .unwrap()
        .contains("no labeled mesh"));
    let r = get(&app, "/export/psd").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert!(r.json()["error"].as_str().unwrap().contains("no layers"));
    // Failed requests leave nothing to undo.
    assert_eq!(
        post(&app, "/undo", Body::empty()).await.status,
        StatusCode::CONFLICT
    );
}

#[tokio::test]
async fn exports() {
    let (_, app) = app_for(fixtures::demo_character());
    let a = get(&app, "/export/assignment").await;
    assert_eq!(a.body, get(&app, "/labels").await.body);
    assert!(a.headers[header::CONTENT_DISPOSITION]
        .to_str()
        .unwrap()
        .contains("assignment.json"));
    let p = get(&app, "/export/psd").await;
    assert_eq!(p.status, StatusCode::OK);
    assert_eq!(&p.body[..4], b"8BPS");
}

#[tokio::test]
async fn session_persists_across_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("session.json");
    let m = unlabeled(fixtures::demo_character());
    let st = AppState::new(
        m.clone(),
        0.5,
        StratifyOptions::default(),
        Some(file.clone()),
    )
    .unwrap();
    let app = router(st, None);
    post(&app, "/labels/9", r#"{"class":"Eyes"}"#).await;
    let saved = get(&app, "/labels").await.body;
    assert_eq!(std::fs::read(&file).unwrap(), saved);
    let st = AppState::new(m, 0.5, StratifyOptions::default(), Some(file)).unwrap();
    assert_eq!(get(&router(st, None), "/labels").await.body, saved);
}

#[tokio::test]
async fn static_assets_are_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>ui</p>").unwrap();
    let st = AppState::new(fixtures::tri3(), 0.5, StratifyOptions::default(), None).unwrap();
    let app = router(st, Some(dir.path().to_path_buf()));
    assert_eq!(get(&app, "/index.html").await.text(), "<p>ui</p>");
    assert_eq!(get(&app, "/model").await.status, StatusCode::OK);
}

#[derive(Debug, Clone)]
enum Op {
    Label(usize, Option<u8>),
    Propagate,
    /// Snap a label map painted from a random per-mesh class choice.
    Snap(Vec<Option<u8>>),
    Undo,
    Redo,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..17usize, proptest::option::of(0..19u8)).prop_map(|(i, c)| Op::Label(i, c)),
        1 => Just(Op::Propagate),
        1 => proptest::collection::vec(proptest::option::of(0..19u8), 17).prop_map(Op::Snap),
        1 => Just(Op::Undo),
        1 => Just(Op::Redo),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The service is a thin shell: every mutation, replayed through the
    /// library on a local copy, gives byte-identical assignment JSON, and
    /// the model itself never changes.
    #[test]
    fn service_matches_library(ops in proptest::collection::vec(op(), 1..12)) {
        let m = unlabeled(fixtures::demo_character());
        let masks = visibility_masks(&m, 0.5).unwrap();
        let areas = visible_areas(&masks);
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let (st, app) = app_for(m.clone());
        let mut current = LabelAssignment::from_model(&m);
        let (mut undo, mut redo): (Vec<LabelAssignment>, Vec<LabelAssignment>) = (Vec::new(), Vec::new());
        for op in ops {
            let (uri, body): (String, Vec<u8>) = match &op {
                Op::Label(i, c) => {
                    let class = c.map(|c| m.taxonomy.name(ClassId(c)).unwrap().to_string());
                    (format!("/labels/{}", m.meshes[*i].id.0), serde_json::to_vec(&serde_json::json!({ "class": class })).unwrap())
                }
                Op::Propagate => ("/propagate".into(), Vec::new()),
                Op::Snap(classes) => {
                    let painted = LabelAssignment {
                        entries: m.meshes.iter().zip(classes).map(|(x, c)| {
                            (x.id, lcm_core::labeler::LabelEntry { class: c.map(ClassId), confidence: 1.0, source: Some(LabelSource::Vote) })
                        }).collect(),
                    };
                    let map = render_label_map(&m, &painted, &masks).unwrap();
                    ("/snap".into(), encode_label_map(&map).unwrap())
                }
                Op::Undo => ("/undo".into(), Vec::new()),
                Op::Redo => ("/redo".into(), Vec::new()),
            };
            let expected = match &op {
                Op::Label(i, c) => set_manual_label(&m, &current, m.meshes[*i].id, c.map(ClassId)).ok(),
                Op::Propagate => propagate_labels(&m, &current, &areas).ok(),
                Op::Snap(_) => {
                    let map = lcm_core::labeler::decode_label_map(&body).unwrap();
                    snap_labels(&m, &map, &masks, &current).ok().map(|(_, a)| a)
                }
                Op::Undo => undo.pop().inspect(|_| redo.push(current.clone())),
                Op::Redo => redo.pop().inspect(|_| undo.push(current.clone())),
            };
            let r = rt.block_on(post(&app, &uri, body));
            match expected {
                Some(next) => {
                    prop_assert_eq!(r.status, StatusCode::OK, "{:?}", op);
                    if matches!(op, Op::Label(..) | Op::Propagate | Op::Snap(_)) {
                        undo.push(std::mem::replace(&mut current, next));
                        redo.clear();
                    } else {
                        current = next;
                    }
                }
                None => prop_assert_ne!(r.status, StatusCode::OK, "{:?}", op),
            }
            prop_assert_eq!(rt.block_on(get(&app, "/labels")).text(), current.to_json());
        }
        prop_assert_eq!(st.model(), &m);
        let model_json = rt.block_on(get(&app, "/model")).json();
        prop_assert!(model_json["meshes"].as_array().unwrap().iter().all(|x| x["label"].is_null()));
    }
}
