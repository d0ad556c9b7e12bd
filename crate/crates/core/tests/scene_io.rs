use std::fs;
use std::path::Path;

use nalgebra::Vector2;
use nsr_core::consistency::pixel_similarity;
use nsr_core::scene::{analytic_normal, generate_scene, load_scene, GenerateConfig, ImageFormat, Scene, SceneError, ShapeSpec};

fn config(shape: &str, format: ImageFormat) -> GenerateConfig {
    GenerateConfig {
        shape: ShapeSpec::preset(shape).unwrap(),
        n_views: 6,
        width: 48,
        height: 48,
        seed: 21,
        image_format: format,
        ..Default::default()
    }
}

fn generate(shape: &str, format: ImageFormat) -> (tempfile::TempDir, Scene) {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&config(shape, format), dir.path()).unwrap();
    (dir, scene)
}

fn max_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn assert_scenes_close(a: &Scene, b: &Scene) {
    assert_eq!(a.n_views(), b.n_views());
    for (ca, cb) in a.cameras.iter().zip(&b.cameras) {
        assert!(max_diff(ca.k().iter(), cb.k().iter()) < 1e-7);
        assert!(max_diff(ca.r().iter(), cb.r().iter()) < 1e-7);
        assert!(max_diff(ca.t().iter(), cb.t().iter()) < 1e-7);
    }
    for (ia, ib) in a.images.iter().zip(&b.images) {
        assert_eq!((ia.width, ia.height), (ib.width, ib.height));
        assert!(ia.data.iter().zip(&ib.data).all(|(x, y)| (x - y).abs() < 1e-7));
    }
    for (fa, fb) in a.features.iter().zip(&b.features) {
        assert_eq!(fa.grid_size(), fb.grid_size());
        assert!(fa.data().iter().zip(fb.data()).all(|(x, y)| (x - y).abs() < 1e-7));
    }
    assert!((a.background - b.background).norm() < 1e-7);
    assert_eq!(a.shape, b.shape);
    let (pa, pb) = (a.gt_points.as_ref().unwrap(), b.gt_points.as_ref().unwrap());
    assert_eq!(pa.len(), 100_000);
    assert!(pa.iter().zip(pb).all(|(x, y)| (x - y).norm() < 1e-7));
}

#[test]
fn generate_then_load_round_trips() {
    for format in [ImageFormat::Raw, ImageFormat::Png] {
        let (dir, scene) = generate("torus", format);
        assert_scenes_close(&scene, &load_scene(dir.path()).unwrap());
    }
}

#[test]
fn writes_expected_files() {
    let (dir, _) = generate("sphere", ImageFormat::Png);
    for v in 0..6 {
        assert!(dir.path().join(format!("image_{v:04}.png")).exists());
        assert!(dir.path().join(format!("feat_{v:04}.nsrf")).exists());
    }
    assert!(dir.path().join("scene.json").exists());
    assert!(dir.path().join("gt_points.xyz").exists());
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_gives_identical_directory() {
    for format in [ImageFormat::Raw, ImageFormat::Png] {
        let (a, _) = generate("union", format);
        let (b, _) = generate("union", format);
        assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    }
}

#[test]
fn wrong_feature_magic_is_a_parse_error_naming_the_file() {
    let (dir, _) = generate("sphere", ImageFormat::Raw);
    let path = dir.path().join("feat_0002.nsrf");
    let mut bytes = fs::read(&path).unwrap();
    bytes[..4].copy_from_slice(b"JUNK");
    fs::write(&path, bytes).unwrap();
    match load_scene(dir.path()) {
        Err(e @ SceneError::Parse { .. }) => assert!(e.to_string().contains("feat_0002.nsrf"), "{e}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

fn edit_json(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join("scene.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    edit(&mut json);
    fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
}

#[test]
fn reflected_rotation_is_a_validation_error() {
    let (dir, _) = generate("sphere", ImageFormat::Raw);
    edit_json(dir.path(), |json| {
        let r = json["views"][1]["R"].as_array_mut().unwrap();
        for v in r.iter_mut() {
            *v = serde_json::json!(-v.as_f64().unwrap());
        }
    });
    match load_scene(dir.path()) {
        Err(e @ SceneError::Validation { .. }) => assert!(e.to_string().contains("views[1]"), "{e}"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn malformed_json_and_missing_assets() {
    let (dir, _) = generate("sphere", ImageFormat::Raw);
    edit_json(dir.path(), |json| json["views"][0]["image"] = serde_json::json!("missing.raw"));
    assert!(load_scene(dir.path()).is_err());
    fs::write(dir.path().join("scene.json"), "{ not json").unwrap();
    assert!(matches!(load_scene(dir.path()), Err(SceneError::Parse { .. })));
}

#[test]
fn too_few_views_or_too_large_shape_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("sphere", ImageFormat::Raw);
    cfg.n_views = 3;
    assert!(matches!(generate_scene(&cfg, dir.path()), Err(SceneError::InvalidSettings(_))));
    let mut cfg = config("sphere", ImageFormat::Raw);
    cfg.shape = ShapeSpec::sphere(0.95);
    assert!(matches!(generate_scene(&cfg, dir.path()), Err(SceneError::ShapeTooLarge(_))));
}

/// Feature loss between the projections of one surface point into two views.
fn cross_view_errors(scene: &Scene) -> Vec<f64> {
    let (w, h) = (scene.images[0].width, scene.images[0].height);
    let mut errors = Vec::new();
    for a in 0..scene.n_views() {
        for b in 0..scene.n_views() {
            if a == b {
                continue;
            }
            for y in 2..h - 2 {
                for x in 2..w - 2 {
                    let px = Vector2::new(x as f64, y as f64);
                    let Some(t) = scene.gt_depth(a, &px) else { continue };
                    let p = scene.cameras[a].pixel_to_ray(&px).unwrap().at(t);
                    let Ok(q) = scene.cameras[b].project(&p) else { continue };
                    // the point must be the first hit from view b, all four bilinear
                    // taps must land on the surface and neither view may be grazing
                    let expected = (p - scene.cameras[b].center()).norm();
                    let visible = scene.gt_depth(b, &q).is_some_and(|tb| (tb - expected).abs() < 1e-6);
                    let taps_on_surface = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
                        .iter()
                        .all(|(dx, dy)| scene.gt_depth(b, &Vector2::new(q.x.floor() + dx, q.y.floor() + dy)).is_some());
                    let n = analytic_normal(scene.shape.as_ref().unwrap(), &p);
                    let facing = |v: usize| n.dot(&(scene.cameras[v].center() - p).normalize());
                    if !(visible && taps_on_surface && facing(a) >= 0.5 && facing(b) >= 0.5) {
                        continue;
                    }
                    let fa = scene.features[a].sample(&px).unwrap();
                    let fb = scene.features[b].sample(&q).unwrap();
                    errors.push(1.0 - pixel_similarity(&fa, &fb));
                }
            }
        }
    }
    errors
}

#[test]
fn surface_features_agree_across_views() {
    let (_dir, scene) = generate("sphere", ImageFormat::Raw);
    let mut errors = cross_view_errors(&scene);
    assert!(errors.len() > 500, "{} visible pairs", errors.len());
    errors.sort_by(f64::total_cmp);
    let median = errors[errors.len() / 2];
    let p95 = errors[errors.len() * 95 / 100];
    let max = *errors.last().unwrap();
    eprintln!("cross-view feature loss: median {median:.2e}, p95 {p95:.2e}, max {max:.2e}");
    assert!(max < 1e-3, "max {max}");
}
