mod common;

use common::{mean_distance, random_pose, rng};
use ertalign::heatmap::{BlobMaps, LandmarkMaps, ProbabilityMaps};
use ertalign::linalg::rotation_angle_between;
use ertalign::pose::{fit_pose, project_points, robust_init, score_shape, Camera, Model3D, RansacConfig, RigidPose};
use ertalign::{Error, Point2};
use rand::Rng;

fn camera() -> Camera<f64> {
    Camera::for_crop((160, 160))
}

fn correspondences(model: &Model3D<f64>, pose: &RigidPose<f64>, ids: &[usize]) -> Vec<(Point2<f64>, [f64; 3])> {
    let pts = pose.project(&model.points);
    ids.iter().map(|&l| (pts[l], model.points[l])).collect()
}

#[test]
fn principal_point_and_depth_scaling() {
    let model = Model3D::new(
        vec!["a".into()],
        vec![[0.0, 0.0, 0.0]],
        vec![[0.0, 0.0, -1.0]],
        vec![0],
    );
    // A one-point model is not a valid Model3D, so project by hand.
    assert!(model.is_err());
    let pose = RigidPose::from_euler(0.0, 0.0, 0.0, [0.0, 0.0, 1000.0], camera());
    assert_eq!(pose.project(&[[0.0, 0.0, 0.0]]), vec![Point2::new(80.0, 80.0)]);
    let near = pose.project(&[[10.0, -4.0, 0.0]])[0];
    let far = RigidPose::from_euler(0.0, 0.0, 0.0, [0.0, 0.0, 2000.0], camera()).project(&[[10.0, -4.0, 0.0]])[0];
    // Hand projection: centre + f/z * X.
    assert_eq!(near, Point2::new(80.0 + 10.0, 80.0 - 4.0));
    assert!((far.x - 80.0 - (near.x - 80.0) / 2.0).abs() < 1e-12);
    assert!((far.y - 80.0 - (near.y - 80.0) / 2.0).abs() < 1e-12);
}

#[test]
fn averted_side_loses_visibility() {
    let model = Model3D::<f64>::builtin();
    let pose = RigidPose::from_euler(90f64.to_radians(), 0.0, 0.0, [0.0, 0.0, 1500.0], camera());
    let (_, vis) = project_points(&model, &pose).unwrap();
    let left = model.names.iter().position(|n| n == "left_ear_top").unwrap();
    let right = model.names.iter().position(|n| n == "right_ear_top").unwrap();
    assert_ne!(vis[left], vis[right]);
    assert!(vis.iter().filter(|v| **v == 0.0).count() >= 2);
}

#[test]
fn too_few_correspondences() {
    let model = Model3D::<f64>::builtin();
    let pose = RigidPose::from_euler(0.1, 0.2, 0.0, [0.0, 0.0, 1500.0], camera());
    let corr = correspondences(&model, &pose, &[0, 4, 10]);
    assert!(matches!(fit_pose(&corr, &camera()), Err(Error::Arity { needed: 4, got: 3 })));
}

#[test]
fn identity_pose_recovered() {
    let model = Model3D::<f64>::builtin();
    let pose = RigidPose::from_euler(0.0, 0.0, 0.0, [0.0, 0.0, 1500.0], camera());
    let fit = fit_pose(&correspondences(&model, &pose, &model.distinct_ids), &camera()).unwrap();
    assert!(rotation_angle_between(&fit.rotation, &pose.rotation) < 1e-3);
    assert!((fit.translation[2] - 1500.0).abs() / 1500.0 < 1e-3);
}

#[test]
fn random_poses_recovered_from_six_points() {
    let model = Model3D::<f64>::builtin();
    let mut r = rng(11);
    for _ in 0..200 {
        let pose = random_pose(&mut r, 60.0, 45.0, 45.0, camera());
        let ids = rand::seq::index::sample(&mut r, model.distinct_ids.len(), 6).into_vec();
        let fit = fit_pose(&correspondences(&model, &pose, &ids), &camera()).unwrap();
        assert!(rotation_angle_between(&fit.rotation, &pose.rotation) < 1e-3);
    }
}

#[test]
fn rotation_invariant_to_common_rescaling() {
    let model = Model3D::<f64>::builtin();
    let mut r = rng(5);
    for _ in 0..50 {
        let pose = random_pose(&mut r, 45.0, 30.0, 30.0, camera());
        let corr = correspondences(&model, &pose, &model.distinct_ids);
        let base = fit_pose(&corr, &camera()).unwrap();
        let a = r.random_range(0.5..3.0);
        let cam = Camera { focal: camera().focal * a, center: camera().center * a };
        let scaled: Vec<_> = corr.iter().map(|(p, x)| (*p * a, *x)).collect();
        let fit = fit_pose(&scaled, &cam).unwrap();
        assert!(rotation_angle_between(&fit.rotation, &base.rotation) < 1e-6);
    }
}

fn blob_maps(model: &Model3D<f64>, pose: &RigidPose<f64>, outliers: &[usize], r: &mut impl Rng) -> BlobMaps<f64> {
    let pts = pose.project(&model.points);
    let centres = pts
        .iter()
        .enumerate()
        .map(|(l, p)| {
            if outliers.contains(&l) {
                Some(Point2::new(r.random_range(0.0..160.0), r.random_range(0.0..160.0)))
            } else {
                Some(*p)
            }
        })
        .collect();
    BlobMaps::new((160, 160), centres, 5.0, 0.0)
}

#[test]
fn noiseless_maps_recover_the_pose() {
    let model = Model3D::<f64>::builtin();
    let mut r = rng(3);
    for trial in 0..20 {
        let pose = random_pose(&mut r, 40.0, 20.0, 20.0, camera());
        let maps = blob_maps(&model, &pose, &[], &mut r);
        let cfg = RansacConfig { seed: trial, ..Default::default() };
        let init = robust_init(&maps, &model, &camera(), &cfg).unwrap();
        let truth = pose.project(&model.points);
        assert!(mean_distance(&init.shape.coords, &truth) < 0.01 * 160.0);
        assert_eq!(init.score, score_shape(&maps, &init.shape.coords));
        let peaks_sum: f64 = init.shape.coords.iter().enumerate().map(|(l, p)| maps.sample(l, *p)).sum();
        assert_eq!(init.score, peaks_sum);
    }
}

#[test]
fn score_examples() {
    let model = Model3D::<f64>::builtin();
    let l = model.len();
    let flat = ProbabilityMaps::from_fn(l, 20, 20, |_, _, _| 0.25f64);
    let inside = vec![Point2::new(3.0, 4.0); l];
    assert_eq!(score_shape(&flat, &inside), 0.25 * l as f64);
    let outside = vec![Point2::new(-3.0, 40.0); l];
    assert_eq!(score_shape(&flat, &outside), 0.0);
    let deltas = ProbabilityMaps::from_fn(l, 20, 20, |_, x, y| if (x, y) == (3, 4) { 1.0 } else { 0.0 });
    assert_eq!(score_shape(&deltas, &inside), l as f64);
}

#[test]
fn visibility_ignores_the_maps() {
    let model = Model3D::<f64>::builtin();
    let mut r = rng(8);
    let pose = random_pose(&mut r, 50.0, 20.0, 20.0, camera());
    let a = blob_maps(&model, &pose, &[], &mut r);
    let b = blob_maps(&model, &pose, &[1, 2, 3], &mut r);
    let cfg = RansacConfig::default();
    let ia = robust_init(&a, &model, &camera(), &cfg).unwrap();
    let ib = robust_init(&b, &model, &camera(), &cfg).unwrap();
    assert_eq!(ia.shape.visibility, ia.pose.visibility(&model.normals));
    assert_eq!(ib.shape.visibility, ib.pose.visibility(&model.normals));
}
