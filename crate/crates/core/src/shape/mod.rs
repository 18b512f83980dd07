//! Landmark shapes, samples and datasets.

mod augment;
mod io;
mod schema;

use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::Real;

pub use augment::{augment, AugmentConfig, AugmentedSample, CropTransform, OcclusionRect, SourceInit};
pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset};
pub use schema::{Landmark, LandmarkSchema, NormalizationLandmarks};

/// Side length (pixels) of the square face crop every map and shape-indexed
/// feature lives in.
pub const FACE_SIZE: usize = 160;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Point2 { x, y }
    }

    pub fn zero() -> Self {
        Point2::new(T::zero(), T::zero())
    }

    pub fn norm(&self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Self) -> T {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl<T: Real> Add for Point2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Axis-aligned face rectangle in image pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub width: T,
    pub height: T,
}

impl<T: Real> BBox<T> {
    pub fn new(x: T, y: T, width: T, height: T) -> Result<Self> {
        if !(width > T::zero() && height > T::zero()) || !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bbox needs positive finite size, got {width}x{height}"
            )));
        }
        Ok(BBox { x, y, width, height })
    }

    /// Geometric mean of width and height.
    pub fn size(&self) -> T {
        (self.width * self.height).sqrt()
    }

    /// Image point to bbox-normalized coordinates (`[0,1]²` inside the box).
    pub fn normalize(&self, p: Point2<T>) -> Point2<T> {
        Point2::new((p.x - self.x) / self.width, (p.y - self.y) / self.height)
    }

    pub fn denormalize(&self, p: Point2<T>) -> Point2<T> {
        Point2::new(self.x + p.x * self.width, self.y + p.y * self.height)
    }

    /// Image point to crop coordinates of a `height × width` map grid.
    pub fn to_crop(&self, p: Point2<T>, size: (usize, usize)) -> Point2<T> {
        let n = self.normalize(p);
        Point2::new(n.x * T::from_usize_lossy(size.1), n.y * T::from_usize_lossy(size.0))
    }

    pub fn from_crop(&self, p: Point2<T>, size: (usize, usize)) -> Point2<T> {
        let n = Point2::new(p.x / T::from_usize_lossy(size.1), p.y / T::from_usize_lossy(size.0));
        self.denormalize(n)
    }
}

/// Landmark coordinates with per-landmark visibility and annotation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape<T> {
    pub coords: Vec<Point2<T>>,
    pub visibility: Vec<T>,
    pub annotated: Vec<bool>,
}

impl<T: Real> Shape<T> {
    pub fn new(coords: Vec<Point2<T>>, visibility: Vec<T>, annotated: Vec<bool>) -> Result<Self> {
        let shape = Shape { coords, visibility, annotated };
        shape.validate()?;
        Ok(shape)
    }

    /// All landmarks annotated and visible.
    pub fn from_coords(coords: Vec<Point2<T>>) -> Self {
        let n = coords.len();
        Shape { coords, visibility: vec![T::one(); n], annotated: vec![true; n] }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.coords.len();
        if self.visibility.len() != l || self.annotated.len() != l {
            return Err(Error::Schema(format!(
                "shape vectors disagree: {} coords, {} visibilities, {} flags",
                l,
                self.visibility.len(),
                self.annotated.len()
            )));
        }
        if let Some(v) = self.visibility.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidArgument(format!("visibility {v} outside [0,1]")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn annotated_count(&self) -> usize {
        self.annotated.iter().filter(|a| **a).count()
    }

    /// Applies `f` to every coordinate, keeping masks.
    pub fn map_coords(&self, f: impl Fn(Point2<T>) -> Point2<T>) -> Self {
        Shape {
            coords: self.coords.iter().map(|p| f(*p)).collect(),
            visibility: self.visibility.clone(),
            annotated: self.annotated.clone(),
        }
    }

    pub fn to_crop(&self, bbox: &BBox<T>, size: (usize, usize)) -> Self {
        self.map_coords(|p| bbox.to_crop(p, size))
    }

    pub fn from_crop(&self, bbox: &BBox<T>, size: (usize, usize)) -> Self {
        self.map_coords(|p| bbox.from_crop(p, size))
    }

    /// Restricts the shape to the given landmark indices, in order.
    pub fn select(&self, ids: &[usize]) -> Self {
        Shape {
            coords: ids.iter().map(|&i| self.coords[i]).collect(),
            visibility: ids.iter().map(|&i| self.visibility[i]).collect(),
            annotated: ids.iter().map(|&i| self.annotated[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: String,
    pub bbox: BBox<T>,
    pub ground_truth: Shape<T>,
    pub initial: Option<Shape<T>>,
}

impl<T: Real> Sample<T> {
    pub fn landmark_count(&self) -> usize {
        self.ground_truth.len()
    }

    /// Ground truth expressed in the `FACE_SIZE` crop frame.
    pub fn crop_ground_truth(&self, size: (usize, usize)) -> Shape<T> {
        self.ground_truth.to_crop(&self.bbox, size)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub schema: Arc<LandmarkSchema>,
    pub samples: Vec<Sample<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(schema: Arc<LandmarkSchema>, samples: Vec<Sample<T>>) -> Result<Self> {
        let l = schema.len();
        for (i, s) in samples.iter().enumerate() {
            s.ground_truth.validate()?;
            if s.landmark_count() != l {
                return Err(Error::Schema(format!(
                    "sample {i} has {} landmarks, schema has {l}",
                    s.landmark_count()
                )));
            }
            if let Some(init) = &s.initial {
                if init.len() != l {
                    return Err(Error::Schema(format!("sample {i} initial shape has wrong length")));
                }
            }
        }
        Ok(Dataset { schema, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn landmark_count(&self) -> usize {
        self.schema.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            schema: self.schema.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Concatenates datasets sharing a schema.
    pub fn concat(parts: &[&Dataset<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut samples = Vec::new();
        for p in parts {
            if p.schema.names() != first.schema.names() {
                return Err(Error::Schema("cannot pool datasets with different schemas".into()));
            }
            samples.extend(p.samples.iter().cloned());
        }
        Ok(Dataset { schema: first.schema.clone(), samples })
    }
}

/// Seeded shuffle followed by a `⌊N·val_fraction⌋` / remainder partition.
///
/// The validation part is clamped to `[1, N-1]` so both sides are usable.
pub fn split_train_val<T: Real>(
    dataset: &Dataset<T>,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("val_fraction {val_fraction} not in (0,1)")));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split a dataset of {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * val_fraction).floor() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    Ok((dataset.subset(train_idx), dataset.subset(val_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize) -> Dataset<f64> {
        let schema = Arc::new(LandmarkSchema::builtin());
        let l = schema.len();
        let samples = (0..n)
            .map(|i| Sample {
                image: format!("img{i}"),
                bbox: BBox::new(0.0, 0.0, 100.0, 100.0).unwrap(),
                ground_truth: Shape::from_coords(vec![Point2::new(i as f64, 1.0); l]),
                initial: None,
            })
            .collect();
        Dataset::new(schema, samples).unwrap()
    }

    #[test]
    fn split_ninety_ten() {
        let ds = toy_dataset(10);
        let (train, val) = split_train_val(&ds, 0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (9, 1));
        let mut all: Vec<String> =
            train.samples.iter().chain(val.samples.iter()).map(|s| s.image.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let ds = toy_dataset(100);
        let names = |d: &Dataset<f64>| d.samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>();
        let (a1, v1) = split_train_val(&ds, 0.1, 11).unwrap();
        let (a2, v2) = split_train_val(&ds, 0.1, 11).unwrap();
        assert_eq!(names(&a1), names(&a2));
        assert_eq!(names(&v1), names(&v2));
        let (_, v3) = split_train_val(&ds, 0.1, 12).unwrap();
        assert_ne!(names(&v1), names(&v3));
    }

    #[test]
    fn split_rejects_tiny_and_bad_fraction() {
        assert!(split_train_val(&toy_dataset(1), 0.1, 0).is_err());
        assert!(split_train_val(&toy_dataset(10), 1.0, 0).is_err());
        assert!(split_train_val(&toy_dataset(10), 0.0, 0).is_err());
    }

    #[test]
    fn shape_validation() {
        let bad = Shape::new(vec![Point2::new(0.0, 0.0)], vec![1.5], vec![true]);
        assert!(bad.is_err());
        let bad = Shape::new(vec![Point2::new(0.0, 0.0)], vec![], vec![true]);
        assert!(bad.is_err());
    }

    #[test]
    fn bbox_crop_roundtrip() {
        let b = BBox::new(10.0, 20.0, 200.0, 100.0).unwrap();
        let p = Point2::new(110.0, 70.0);
        let c = b.to_crop(p, (160, 160));
        assert_eq!(c, Point2::new(80.0, 80.0));
        assert_eq!(b.from_crop(c, (160, 160)), p);
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }
}
