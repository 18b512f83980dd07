//! Rigid 3D face-model fitting to probability-map peaks.
//!
//! The camera is weak-perspective: a model point `X` under pose `(R, t)` lands
//! at `c + (f / t_z) · ((R X)_xy + t_xy)` in crop coordinates.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::heatmap::{peak_coords, LandmarkMaps};
use crate::linalg::{self, Mat3, Vec3};
use crate::real::{derive_seed, Real};
use crate::shape::{Dataset, Point2, Shape, FACE_SIZE};

const BUILTIN_MODEL: &str = include_str!("../data/model24.txt");

/// Focal length (pixels) of the default crop camera.
pub const DEFAULT_FOCAL: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<T> {
    pub focal: T,
    pub center: Point2<T>,
}

impl<T: Real> Camera<T> {
    /// Default camera centred on a `height × width` crop.
    pub fn for_crop(size: (usize, usize)) -> Self {
        Camera {
            focal: T::lit(DEFAULT_FOCAL),
            center: Point2::new(
                T::from_usize_lossy(size.1) / T::lit(2.0),
                T::from_usize_lossy(size.0) / T::lit(2.0),
            ),
        }
    }
}

impl<T: Real> Default for Camera<T> {
    fn default() -> Self {
        Self::for_crop((FACE_SIZE, FACE_SIZE))
    }
}

/// Rigid 3D face model with per-landmark outward normals.
#[derive(Clone, Debug, PartialEq)]
pub struct Model3D<T> {
    pub names: Vec<String>,
    pub points: Vec<Vec3<T>>,
    pub normals: Vec<Vec3<T>>,
    /// Landmarks usable as RANSAC correspondences.
    pub distinct_ids: Vec<usize>,
}

impl<T: Real> Model3D<T> {
    pub fn new(names: Vec<String>, points: Vec<Vec3<T>>, normals: Vec<Vec3<T>>, distinct_ids: Vec<usize>) -> Result<Self> {
        let l = points.len();
        if names.len() != l || normals.len() != l {
            return Err(Error::Schema("model names, points and normals disagree in length".into()));
        }
        if distinct_ids.len() < 4 {
            return Err(Error::Schema(format!("model needs >= 4 distinct landmarks, has {}", distinct_ids.len())));
        }
        if let Some(bad) = distinct_ids.iter().find(|&&i| i >= l) {
            return Err(Error::Schema(format!("distinct id {bad} out of range")));
        }
        let model = Model3D { names, points, normals, distinct_ids };
        let sub: Vec<Vec3<T>> = model.distinct_ids.iter().map(|&i| model.points[i]).collect();
        if is_coplanar(&sub) {
            return Err(Error::Rank("distinct model points are coplanar".into()));
        }
        Ok(model)
    }

    /// The shipped 24-point mean face.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_MODEL).expect("builtin model parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `<name> X Y Z nx ny nz <distinct>` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut points = Vec::new();
        let mut normals = Vec::new();
        let mut distinct = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: n + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 {
                return Err(bad("expected `<name> X Y Z nx ny nz <distinct>`"));
            }
            let mut v = [0.0f64; 6];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = f[k + 1].parse().map_err(|_| bad("bad number"))?;
            }
            let nn = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5]).sqrt();
            if nn == 0.0 {
                return Err(bad("zero normal"));
            }
            if f[7] == "1" {
                distinct.push(names.len());
            } else if f[7] != "0" {
                return Err(bad("distinct flag must be 0 or 1"));
            }
            names.push(f[0].to_string());
            points.push([T::lit(v[0]), T::lit(v[1]), T::lit(v[2])]);
            normals.push([T::lit(v[3] / nn), T::lit(v[4] / nn), T::lit(v[5] / nn)]);
        }
        Self::new(names, points, normals, distinct)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let p = self.points[i];
            let n = self.normals[i];
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {}\n",
                self.names[i],
                p[0].as_f64(),
                p[1].as_f64(),
                p[2].as_f64(),
                n[0].as_f64(),
                n[1].as_f64(),
                n[2].as_f64(),
                u8::from(self.distinct_ids.contains(&i))
            ));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn is_coplanar<T: Real>(points: &[Vec3<T>]) -> bool {
    if points.len() < 4 {
        return true;
    }
    let (_, cov) = centered_scatter(points);
    let (vals, _) = linalg::symmetric_eigen(&cov);
    vals[2] <= vals[0] * T::lit(1e-10)
}

fn centered_scatter<T: Real>(points: &[Vec3<T>]) -> (Vec3<T>, Mat3<T>) {
    let n = T::from_usize_lossy(points.len());
    let mut c = [T::zero(); 3];
    for p in points {
        for k in 0..3 {
            c[k] = c[k] + p[k];
        }
    }
    let c = linalg::scale(&c, T::one() / n);
    let mut m = linalg::zero3();
    for p in points {
        let a = linalg::sub(p, &c);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = m[i][j] + a[i] * a[j];
            }
        }
    }
    (c, m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub camera: Camera<T>,
}

/// Rotation `Rz(roll) · Rx(pitch) · Ry(yaw)`, angles in radians.
pub fn rotation_from_euler<T: Real>(yaw: T, pitch: T, roll: T) -> Mat3<T> {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let z = T::zero();
    let o = T::one();
    let ry = [[cy, z, sy], [z, o, z], [-sy, z, cy]];
    let rx = [[o, z, z], [z, cp, -sp], [z, sp, cp]];
    let rz = [[cr, -sr, z], [sr, cr, z], [z, z, o]];
    linalg::mat_mul(&rz, &linalg::mat_mul(&rx, &ry))
}

/// Inverse of [`rotation_from_euler`]: `(yaw, pitch, roll)`.
pub fn euler_from_rotation<T: Real>(r: &Mat3<T>) -> (T, T, T) {
    let pitch = r[2][1].max(-T::one()).min(T::one()).asin();
    let yaw = (-r[2][0]).atan2(r[2][2]);
    let roll = (-r[0][1]).atan2(r[1][1]);
    (yaw, pitch, roll)
}

impl<T: Real> RigidPose<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>, camera: Camera<T>) -> Self {
        RigidPose { rotation, translation, camera }
    }

    pub fn from_euler(yaw: T, pitch: T, roll: T, translation: Vec3<T>, camera: Camera<T>) -> Self {
        Self::new(rotation_from_euler(yaw, pitch, roll), translation, camera)
    }

    pub fn euler(&self) -> (T, T, T) {
        euler_from_rotation(&self.rotation)
    }

    /// Image pixels per model unit.
    pub fn scale(&self) -> T {
        self.camera.focal / self.translation[2]
    }

    pub fn validate(&self) -> Result<()> {
        let tol = T::lit(1e-6);
        let rrt = linalg::mat_mul(&self.rotation, &linalg::transpose(&self.rotation));
        if linalg::max_abs_diff(&rrt, &linalg::identity3()) > tol
            || (linalg::det(&self.rotation) - T::one()).abs() > tol
        {
            return Err(Error::InvalidArgument("rotation is not orthonormal".into()));
        }
        if !(self.translation[2] > T::zero()) || !(self.camera.focal > T::zero()) {
            return Err(Error::InvalidArgument("pose needs positive depth and focal".into()));
        }
        Ok(())
    }

    /// Projects arbitrary 3D points (model units).
    pub fn project(&self, points: &[Vec3<T>]) -> Vec<Point2<T>> {
        let s = self.scale();
        let t = self.translation;
        let c = self.camera.center;
        points
            .iter()
            .map(|p| {
                let q = linalg::mat_vec(&self.rotation, p);
                Point2::new(c.x + s * (q[0] + t[0]), c.y + s * (q[1] + t[1]))
            })
            .collect()
    }

    /// 1 where the rotated normal faces the camera (non-positive z), else 0.
    pub fn visibility(&self, normals: &[Vec3<T>]) -> Vec<T> {
        let r = &self.rotation[2];
        normals
            .iter()
            .map(|n| if -linalg::dot(r, n) >= T::zero() { T::one() } else { T::zero() })
            .collect()
    }
}

/// Weak-perspective projection of every model point plus pose visibility.
pub fn project_points<T: Real>(model: &Model3D<T>, pose: &RigidPose<T>) -> Result<(Vec<Point2<T>>, Vec<T>)> {
    pose.validate()?;
    Ok((pose.project(&model.points), pose.visibility(&model.normals)))
}

/// Sum over landmarks of the map value at the rounded coordinate.
pub fn score_shape<T: Real, M: LandmarkMaps<T> + ?Sized>(maps: &M, coords: &[Point2<T>]) -> T {
    coords
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (l, p)| acc + maps.sample(l, *p))
}

const POSE_MAX_ITERS: usize = 100;
const POSE_TOL: f64 = 1e-6;

/// Scaled-orthographic pose from known 2D–3D correspondences.
///
/// Starts from the linear POS solution and refines it by alternating a
/// depth estimate for every point with a 3D similarity Procrustes solve;
/// each round cannot increase the 2D reprojection residual.
pub fn fit_pose<T: Real>(correspondences: &[(Point2<T>, Vec3<T>)], camera: &Camera<T>) -> Result<RigidPose<T>> {
    let n = correspondences.len();
    if n < 4 {
        return Err(Error::Arity { needed: 4, got: n });
    }
    let model: Vec<Vec3<T>> = correspondences.iter().map(|c| c.1).collect();
    let (centroid, scatter) = centered_scatter(&model);
    let (vals, _) = linalg::symmetric_eigen(&scatter);
    if !(vals[2] > vals[0] * T::lit(1e-10)) {
        return Err(Error::Rank("model points are coplanar or coincident".into()));
    }
    let inv = linalg::inverse(&scatter).ok_or_else(|| Error::Rank("singular model scatter".into()))?;

    let nf = T::from_usize_lossy(n);
    let img_c = correspondences
        .iter()
        .fold(Point2::zero(), |acc, c| acc + c.0)
        * (T::one() / nf);
    let centered: Vec<Vec3<T>> = model.iter().map(|p| linalg::sub(p, &centroid)).collect();
    let uv: Vec<Point2<T>> = correspondences.iter().map(|c| c.0 - img_c).collect();

    // Linear POS step: I = s·r1, J = s·r2 in the least-squares sense.
    let mut bu = [T::zero(); 3];
    let mut bv = [T::zero(); 3];
    for (a, q) in centered.iter().zip(&uv) {
        for k in 0..3 {
            bu[k] = bu[k] + a[k] * q.x;
            bv[k] = bv[k] + a[k] * q.y;
        }
    }
    let i_vec = linalg::mat_vec(&inv, &bu);
    let j_vec = linalg::mat_vec(&inv, &bv);
    let (ni, nj) = (linalg::norm(&i_vec), linalg::norm(&j_vec));
    if !(ni > T::zero() && nj > T::zero()) {
        return Err(Error::Rank("image points collapse to a single location".into()));
    }
    let r1 = linalg::scale(&i_vec, T::one() / ni);
    let r2 = linalg::scale(&j_vec, T::one() / nj);
    let r3 = linalg::cross(&r1, &r2);
    if !(linalg::norm(&r3) > T::lit(1e-12)) {
        return Err(Error::Rank("degenerate image configuration".into()));
    }
    let mut rot = linalg::nearest_rotation(&[r1, r2, r3]);
    let mut s = (ni + nj) / T::lit(2.0);

    let residual = |rot: &Mat3<T>, s: T| -> T {
        centered
            .iter()
            .zip(&uv)
            .map(|(a, q)| {
                let dx = s * linalg::dot(&rot[0], a) - q.x;
                let dy = s * linalg::dot(&rot[1], a) - q.y;
                dx * dx + dy * dy
            })
            .sum::<T>()
    };
    let mut best = (residual(&rot, s), rot, s);
    let sum_sq: T = centered.iter().map(|a| linalg::dot(a, a)).sum();

    for _ in 0..POSE_MAX_ITERS {
        let mut h = linalg::zero3::<T>();
        for (a, q) in centered.iter().zip(&uv) {
            let z = s * linalg::dot(&rot[2], a);
            let y = [q.x, q.y, z];
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] = h[i][j] + y[i] * a[j];
                }
            }
        }
        let (u, sing, v) = linalg::svd3(&h);
        let d = if linalg::det(&u) * linalg::det(&v) < T::zero() { -T::one() } else { T::one() };
        let mut ud = u;
        for row in ud.iter_mut() {
            row[2] = row[2] * d;
        }
        let new_rot = linalg::mat_mul(&ud, &linalg::transpose(&v));
        let new_s = (sing[0] + sing[1] + sing[2] * d) / sum_sq;
        if !new_s.is_finite() || !(new_s > T::zero()) {
            return Err(Error::Numeric("scale diverged".into()));
        }
        let change = linalg::max_abs_diff(&new_rot, &rot).max(((new_s - s) / s).abs());
        rot = new_rot;
        s = new_s;
        let res = residual(&rot, s);
        if res < best.0 {
            best = (res, rot, s);
        }
        if change < T::lit(POSE_TOL) {
            break;
        }
    }

    let (_, rot, s) = best;
    let tx = (img_c.x - camera.center.x) / s - linalg::dot(&rot[0], &centroid);
    let ty = (img_c.y - camera.center.y) / s - linalg::dot(&rot[1], &centroid);
    let tz = camera.focal / s;
    let pose = RigidPose::new(rot, [tx, ty, tz], *camera);
    if !(tx.is_finite() && ty.is_finite() && tz.is_finite()) {
        return Err(Error::Numeric("non-finite translation".into()));
    }
    Ok(pose)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    /// Number of hypotheses `Z`.
    pub iterations: usize,
    /// Distinct landmarks sampled per hypothesis.
    pub subset_size: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig { iterations: 25, subset_size: 6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitResult<T> {
    /// Projected model in crop coordinates with pose visibilities.
    pub shape: Shape<T>,
    pub pose: RigidPose<T>,
    /// Sum of map values at the projected coordinates.
    pub score: T,
}

/// Hypothesize-and-score rigid initialization.
///
/// Every iteration samples `subset_size` distinct landmarks (without
/// replacement) from its own seed stream, fits a pose to their map peaks,
/// projects the whole model and scores it on the maps. The best score wins,
/// with the lowest iteration index breaking ties.
pub fn robust_init<T: Real, M: LandmarkMaps<T> + ?Sized>(
    maps: &M,
    model: &Model3D<T>,
    camera: &Camera<T>,
    cfg: &RansacConfig,
) -> Result<InitResult<T>> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidArgument("need at least one RANSAC iteration".into()));
    }
    if cfg.subset_size < 4 || cfg.subset_size > model.distinct_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "subset size {} must lie in [4, {}]",
            cfg.subset_size,
            model.distinct_ids.len()
        )));
    }
    if maps.landmark_count() != model.len() {
        return Err(Error::Schema(format!(
            "{} maps for a {}-point model",
            maps.landmark_count(),
            model.len()
        )));
    }
    let peaks = peak_coords(maps);
    let hypothesis = |z: usize| -> Option<(T, RigidPose<T>, Vec<Point2<T>>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[z as u64]));
        let picks = rand::seq::index::sample(&mut rng, model.distinct_ids.len(), cfg.subset_size);
        let corr: Vec<(Point2<T>, Vec3<T>)> = picks
            .iter()
            .map(|k| {
                let l = model.distinct_ids[k];
                (peaks[l], model.points[l])
            })
            .collect();
        let pose = fit_pose(&corr, camera).ok()?;
        let coords = pose.project(&model.points);
        Some((score_shape(maps, &coords), pose, coords))
    };
    let hypotheses: Vec<_> = (0..cfg.iterations).into_par_iter().map(hypothesis).collect();

    let mut best: Option<(T, RigidPose<T>, Vec<Point2<T>>)> = None;
    for h in hypotheses.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| h.0 > b.0) {
            best = Some(h);
        }
    }
    let (score, pose, coords) = best.ok_or_else(|| Error::Init("every hypothesis failed to fit".into()))?;
    let visibility = pose.visibility(&model.normals);
    let n = coords.len();
    Ok(InitResult { shape: Shape { coords, visibility, annotated: vec![true; n] }, pose, score })
}

/// Mean of the annotated ground-truth landmarks in bbox-normalized
/// coordinates. Re-anchor with [`crate::shape::BBox::denormalize`].
pub fn mean_shape_init<T: Real>(train: &Dataset<T>) -> Result<Shape<T>> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("mean shape of an empty dataset".into()));
    }
    let (coords, counts) = accumulate_normalized(train);
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Undefined(format!(
            "landmark {} is annotated in no training sample",
            train.schema.landmarks()[l].name
        )));
    }
    Ok(Shape::from_coords(coords))
}

/// Like [`mean_shape_init`] but never-annotated landmarks fall back to the
/// bbox centre instead of failing.
pub fn mean_shape_lenient<T: Real>(train: &Dataset<T>) -> Result<Shape<T>> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("mean shape of an empty dataset".into()));
    }
    let (mut coords, counts) = accumulate_normalized(train);
    let half = T::lit(0.5);
    for (c, n) in coords.iter_mut().zip(&counts) {
        if *n == 0 {
            *c = Point2::new(half, half);
        }
    }
    Ok(Shape::from_coords(coords))
}

fn accumulate_normalized<T: Real>(train: &Dataset<T>) -> (Vec<Point2<T>>, Vec<usize>) {
    let l = train.landmark_count();
    let mut sums = vec![Point2::zero(); l];
    let mut counts = vec![0usize; l];
    for s in &train.samples {
        for i in 0..l {
            if s.ground_truth.annotated[i] {
                sums[i] = sums[i] + s.bbox.normalize(s.ground_truth.coords[i]);
                counts[i] += 1;
            }
        }
    }
    let coords = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { *s * (T::one() / T::from_usize_lossy(c)) } else { Point2::zero() })
        .collect();
    (coords, counts)
}
