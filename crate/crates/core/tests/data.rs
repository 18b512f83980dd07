mod common;

use std::sync::Arc;

use ertalign::pose::{mean_shape_init, Model3D, RigidPose};
use ertalign::shape::{augment, split_train_val, AugmentConfig, SourceInit};
use ertalign::synth::{generate_corpus, CorpusConfig};
use ertalign::{BBox, Dataset, LandmarkSchema, Point2, Sample, Shape};
use rand::Rng;

fn schema() -> Arc<LandmarkSchema> {
    Arc::new(LandmarkSchema::builtin())
}

#[test]
fn mean_shape_matches_direct_average() {
    let s = schema();
    let l = s.len();
    let mut r = common::rng(4);
    let samples: Vec<Sample<f64>> = (0..10)
        .map(|i| {
            let bbox = BBox::new(r.random_range(0.0..50.0), r.random_range(0.0..50.0), r.random_range(80.0..200.0), r.random_range(80.0..200.0)).unwrap();
            let mut gt = Shape::from_coords((0..l).map(|_| Point2::new(r.random_range(0.0..300.0), r.random_range(0.0..300.0))).collect());
            for (j, a) in gt.annotated.iter_mut().enumerate() {
                *a = (i + j) % 4 != 0;
            }
            Sample { image: format!("f{i}"), bbox, ground_truth: gt, initial: None }
        })
        .collect();
    let data = Dataset::new(s, samples.clone()).unwrap();
    let mean = mean_shape_init(&data).unwrap();
    for j in 0..l {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for smp in &samples {
            if smp.ground_truth.annotated[j] {
                sx += (smp.ground_truth.coords[j].x - smp.bbox.x) / smp.bbox.width;
                sy += (smp.ground_truth.coords[j].y - smp.bbox.y) / smp.bbox.height;
                n += 1.0;
            }
        }
        assert!((mean.coords[j].x - sx / n).abs() < 1e-12 && (mean.coords[j].y - sy / n).abs() < 1e-12);
        assert_eq!(mean.visibility[j], 1.0);
    }
}

#[test]
fn different_seeds_give_different_splits() {
    let corpus = generate_corpus(&CorpusConfig { count: 100, ..Default::default() }, schema(), &Model3D::builtin()).unwrap();
    let (a, _) = split_train_val(&corpus.dataset, 0.1, 1).unwrap();
    let (b, _) = split_train_val(&corpus.dataset, 0.1, 2).unwrap();
    let names = |d: &Dataset<f64>| d.samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>();
    assert_ne!(names(&a), names(&b));
}

#[test]
fn default_augmentation_reaches_sixty_thousand() {
    let corpus = generate_corpus(&CorpusConfig { count: 50, ..Default::default() }, schema(), &Model3D::builtin()).unwrap();
    let inits: Vec<SourceInit<f64>> = corpus.poses.iter().map(|p: &RigidPose<f64>| SourceInit::Pose(*p)).collect();
    let cfg = AugmentConfig::default();
    assert_eq!((cfg.rotation_deg, cfg.scale, cfg.translation), (45.0, 0.15, 0.05));
    let out = augment(&corpus.dataset, &inits, &Model3D::builtin(), (160, 160), 60_000, &cfg, 3).unwrap();
    assert!(out.len() >= 60_000);
    for a in out.iter().step_by(997) {
        let src = &corpus.dataset.samples[a.source].ground_truth;
        let mirror = corpus.dataset.schema.mirror_table();
        for l in 0..src.len() {
            let from = a.transform.source_landmark(l, &mirror);
            assert_eq!(a.target.annotated[l], src.annotated[from]);
        }
    }
}

#[test]
fn deformation_creates_non_rigid_variance() {
    let model = Model3D::<f64>::builtin();
    let variance = |deformation: f64| -> Vec<f64> {
        let c = generate_corpus(&CorpusConfig { count: 200, deformation, ..Default::default() }, schema(), &model).unwrap();
        (0..model.len())
            .map(|l| {
                let res: Vec<(f64, f64)> = c
                    .dataset
                    .samples
                    .iter()
                    .zip(&c.rigid)
                    .map(|(s, r)| {
                        let p = s.crop_ground_truth((160, 160)).coords[l];
                        (p.x - r[l].x, p.y - r[l].y)
                    })
                    .collect();
                let n = res.len() as f64;
                let (mx, my) = res.iter().fold((0.0, 0.0), |a, r| (a.0 + r.0 / n, a.1 + r.1 / n));
                res.iter().map(|r| (r.0 - mx).powi(2) + (r.1 - my).powi(2)).sum::<f64>() / n
            })
            .collect()
    };
    let still = variance(0.0);
    let moving = variance(4.0);
    assert!(still.iter().all(|v| *v < 1e-18));
    let pupil = model.names.iter().position(|n| n == "left_pupil").unwrap();
    let nose = model.names.iter().position(|n| n == "nose_tip").unwrap();
    assert!(moving[pupil] > 0.1);
    assert!(moving[nose] < 1e-18);
}
