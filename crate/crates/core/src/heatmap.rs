//! Per-landmark probability maps: storage, smoothing, peaks, file I/O and a
//! synthetic generator standing in for a heatmap-regression network.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{pixel_index, Real};
use crate::shape::{CropTransform, OcclusionRect, Point2, Sample};

/// Read access to a stack of per-landmark grids in crop coordinates.
///
/// `x` indexes columns and `y` rows. Reads outside the grid return zero.
pub trait LandmarkMaps<T: Real>: Sync {
    fn landmark_count(&self) -> usize;

    /// `(height, width)`.
    fn size(&self) -> (usize, usize);

    fn value_at(&self, landmark: usize, x: i64, y: i64) -> T;

    /// Value at the pixel nearest to `p`.
    fn sample(&self, landmark: usize, p: Point2<T>) -> T {
        self.value_at(landmark, pixel_index(p.x), pixel_index(p.y))
    }

    /// Arg-max pixel of one map; ties go to the first in row-major order.
    fn peak(&self, landmark: usize) -> (usize, usize) {
        let (h, w) = self.size();
        let mut best = (0usize, 0usize);
        let mut best_v = T::neg_infinity();
        for y in 0..h {
            for x in 0..w {
                let v = self.value_at(landmark, x as i64, y as i64);
                if v > best_v {
                    best_v = v;
                    best = (x, y);
                }
            }
        }
        best
    }
}

impl<T: Real, M: LandmarkMaps<T> + ?Sized> LandmarkMaps<T> for &M {
    fn landmark_count(&self) -> usize {
        (**self).landmark_count()
    }
    fn size(&self) -> (usize, usize) {
        (**self).size()
    }
    fn value_at(&self, landmark: usize, x: i64, y: i64) -> T {
        (**self).value_at(landmark, x, y)
    }
    fn peak(&self, landmark: usize) -> (usize, usize) {
        (**self).peak(landmark)
    }
}

/// Per-landmark arg-max coordinates.
pub fn peak_coords<T: Real, M: LandmarkMaps<T> + ?Sized>(maps: &M) -> Vec<Point2<T>> {
    (0..maps.landmark_count())
        .map(|l| {
            let (x, y) = maps.peak(l);
            Point2::new(T::from_usize_lossy(x), T::from_usize_lossy(y))
        })
        .collect()
}

/// Dense `L × H × W` grids, landmark-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMaps<T> {
    landmarks: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> ProbabilityMaps<T> {
    pub fn new(landmarks: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != landmarks * height * width {
            return Err(Error::InvalidArgument(format!(
                "{} values for {landmarks}x{height}x{width} maps",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < T::zero()) {
            return Err(Error::InvalidArgument(format!("map value {v} is negative or non-finite")));
        }
        Ok(ProbabilityMaps { landmarks, height, width, data })
    }

    /// Builds maps from `f(landmark, x, y)`.
    pub fn from_fn(landmarks: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(landmarks * height * width);
        for l in 0..landmarks {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(l, x, y));
                }
            }
        }
        ProbabilityMaps { landmarks, height, width, data }
    }

    /// Renders any map source into dense storage.
    pub fn render<M: LandmarkMaps<T> + ?Sized>(src: &M) -> Self {
        let (h, w) = src.size();
        Self::from_fn(src.landmark_count(), h, w, |l, x, y| src.value_at(l, x as i64, y as i64))
    }

    pub fn grid(&self, landmark: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[landmark * n..(landmark + 1) * n]
    }

    pub fn grid_mut(&mut self, landmark: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[landmark * n..(landmark + 1) * n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Multiplies every value by `a > 0`.
    pub fn scaled(&self, a: T) -> Self {
        ProbabilityMaps { data: self.data.iter().map(|v| *v * a).collect(), ..self.clone() }
    }
}

impl<T: Real> LandmarkMaps<T> for ProbabilityMaps<T> {
    fn landmark_count(&self) -> usize {
        self.landmarks
    }

    fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    fn value_at(&self, landmark: usize, x: i64, y: i64) -> T {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return T::zero();
        }
        self.data[(landmark * self.height + y as usize) * self.width + x as usize]
    }

    fn peak(&self, landmark: usize) -> (usize, usize) {
        let g = self.grid(landmark);
        let mut best = 0usize;
        for (i, v) in g.iter().enumerate() {
            if *v > g[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Mirror-reflect an index into `[0, n)` (edge sample repeated).
fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Normalized 1D Gaussian over the offsets `|d| <= 3σ`.
pub fn gaussian_kernel<T: Real>(sigma: T) -> Vec<T> {
    let radius = (sigma * T::lit(3.0)).floor().to_usize().unwrap_or(0);
    let two_s2 = T::lit(2.0) * sigma * sigma;
    let mut k: Vec<T> = (0..=2 * radius)
        .map(|i| {
            let d = T::from_usize_lossy(i) - T::from_usize_lossy(radius);
            (-(d * d) / two_s2).exp()
        })
        .collect();
    let total: T = k.iter().copied().sum();
    for v in k.iter_mut() {
        *v = *v / total;
    }
    k
}

/// Separable Gaussian smoothing of every grid with reflective borders.
pub fn smooth<T: Real>(maps: &ProbabilityMaps<T>, sigma: T) -> Result<ProbabilityMaps<T>> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("smoothing sigma {sigma} must be positive")));
    }
    if maps.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite map value".into()));
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w) = (maps.height, maps.width);
    let mut out = maps.clone();
    let mut tmp = vec![T::zero(); h * w];
    for l in 0..maps.landmarks {
        let src = maps.grid(l);
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (j, kv) in k.iter().enumerate() {
                    acc = acc + *kv * src[y * w + reflect(x as i64 + j as i64 - r, w)];
                }
                tmp[y * w + x] = acc;
            }
        }
        let dst = out.grid_mut(l);
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (j, kv) in k.iter().enumerate() {
                    acc = acc + *kv * tmp[reflect(y as i64 + j as i64 - r, h) * w + x];
                }
                dst[y * w + x] = acc.max(T::zero());
            }
        }
    }
    Ok(out)
}

/// Synthetic map generator settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Blob standard deviation (pixels).
    pub peak_sigma: f64,
    /// Standard deviation of the blob centre around the truth (pixels).
    pub coordinate_noise_sigma: f64,
    /// Probability that a blob is relocated uniformly over the crop.
    pub outlier_rate: f64,
    /// Probability that an occluded landmark's map is flattened.
    pub occluded_dropout: f64,
    pub floor: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            peak_sigma: 5.0,
            coordinate_noise_sigma: 1.0,
            outlier_rate: 0.1,
            occluded_dropout: 0.5,
            floor: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn noiseless() -> Self {
        SynthConfig { coordinate_noise_sigma: 0.0, outlier_rate: 0.0, occluded_dropout: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.peak_sigma > 0.0) || !(self.coordinate_noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("synthetic map sigmas must be positive".into()));
        }
        if !rate(self.outlier_rate) || !rate(self.occluded_dropout) {
            return Err(Error::InvalidArgument("synthetic map rates must lie in [0,1]".into()));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::InvalidArgument("floor must be non-negative".into()));
        }
        Ok(())
    }
}

/// Analytic Gaussian-blob maps evaluated lazily.
///
/// `value_at` reproduces the dense rendering exactly, so both forms can be
/// mixed freely.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobMaps<T> {
    height: usize,
    width: usize,
    /// `None` marks a flat map at `floor`.
    centres: Vec<Option<Point2<T>>>,
    two_sigma_sq: T,
    floor: T,
}

impl<T: Real> BlobMaps<T> {
    pub fn new(size: (usize, usize), centres: Vec<Option<Point2<T>>>, sigma: T, floor: T) -> Self {
        BlobMaps { height: size.0, width: size.1, centres, two_sigma_sq: T::lit(2.0) * sigma * sigma, floor }
    }

    pub fn centres(&self) -> &[Option<Point2<T>>] {
        &self.centres
    }

    #[inline]
    fn axis_weight(&self, d: T) -> T {
        (-(d * d) / self.two_sigma_sq).exp()
    }
}

impl<T: Real> LandmarkMaps<T> for BlobMaps<T> {
    fn landmark_count(&self) -> usize {
        self.centres.len()
    }

    fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    fn value_at(&self, landmark: usize, x: i64, y: i64) -> T {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return T::zero();
        }
        match self.centres[landmark] {
            None => self.floor,
            Some(c) => {
                let gx = self.axis_weight(T::from_i64(x).unwrap() - c.x);
                let gy = self.axis_weight(T::from_i64(y).unwrap() - c.y);
                (gx * gy).max(self.floor)
            }
        }
    }

    fn peak(&self, landmark: usize) -> (usize, usize) {
        let Some(c) = self.centres[landmark] else {
            return (0, 0);
        };
        // Separable and positive: the first row-major maximum is the pair of
        // first per-axis maxima, unless everything sits at the floor.
        let first_max = |n: usize, centre: T| -> (usize, T) {
            let mut best = (0usize, T::neg_infinity());
            for i in 0..n {
                let g = self.axis_weight(T::from_usize_lossy(i) - centre);
                if g > best.1 {
                    best = (i, g);
                }
            }
            best
        };
        let (bx, gx) = first_max(self.width, c.x);
        let (by, gy) = first_max(self.height, c.y);
        if (gx * gy).max(self.floor) <= self.floor {
            return (0, 0);
        }
        (bx, by)
    }
}

/// Draws the blob centres for one sample; maps live in the `size` crop.
pub fn synthesize_blobs<T: Real>(sample: &Sample<T>, size: (usize, usize), cfg: &SynthConfig, seed: u64) -> BlobMaps<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.coordinate_noise_sigma.max(0.0)).expect("valid sigma");
    let gt = sample.crop_ground_truth(size);
    let (h, w) = (size.0 as f64, size.1 as f64);
    let centres = (0..gt.len())
        .map(|l| {
            // Draw every random number regardless of branch so streams stay
            // aligned across configurations.
            let dx: f64 = noise.sample(&mut rng);
            let dy: f64 = noise.sample(&mut rng);
            let outlier = rng.random::<f64>() < cfg.outlier_rate;
            let ux = rng.random::<f64>() * w;
            let uy = rng.random::<f64>() * h;
            let drop = rng.random::<f64>() < cfg.occluded_dropout;
            if !gt.annotated[l] {
                return None;
            }
            if gt.visibility[l] <= T::zero() && drop {
                return None;
            }
            if outlier {
                Some(Point2::new(T::lit(ux), T::lit(uy)))
            } else {
                Some(Point2::new(gt.coords[l].x + T::lit(dx), gt.coords[l].y + T::lit(dy)))
            }
        })
        .collect();
    BlobMaps::new(size, centres, T::lit(cfg.peak_sigma), T::lit(cfg.floor))
}

/// Dense synthetic maps for one sample.
pub fn synthesize<T: Real>(sample: &Sample<T>, size: (usize, usize), cfg: &SynthConfig, seed: u64) -> ProbabilityMaps<T> {
    ProbabilityMaps::render(&synthesize_blobs(sample, size, cfg, seed))
}

const MAP_MAGIC: &[u8; 4] = b"LMPM";
const MAP_VERSION: u32 = 1;

/// Writes the binary map format: magic, version, L, H, W (little-endian
/// u32) followed by `L·H·W` little-endian f32 values.
pub fn write_maps<T: Real>(maps: &ProbabilityMaps<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_maps(maps))?;
    w.flush()?;
    Ok(())
}

pub fn encode_maps<T: Real>(maps: &ProbabilityMaps<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 4 * maps.data.len());
    buf.extend_from_slice(MAP_MAGIC);
    for v in [MAP_VERSION, maps.landmarks as u32, maps.height as u32, maps.width as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &maps.data {
        buf.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    buf
}

pub fn read_maps<T: Real>(path: impl AsRef<Path>) -> Result<ProbabilityMaps<T>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_maps(&bytes)
}

pub fn decode_maps<T: Real>(bytes: &[u8]) -> Result<ProbabilityMaps<T>> {
    if bytes.len() < 20 {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[..4] != MAP_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != MAP_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (l, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let count = l
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let body = &bytes[20..];
    if body.len() != count * 4 {
        return Err(Error::Format(format!(
            "header declares {l}x{h}x{w} values but body holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap_or_else(T::nan))
        .collect();
    ProbabilityMaps::new(l, h, w, data).map_err(|e| Error::Format(e.to_string()))
}

/// Maps seen through an augmentation: reads are pulled back through the
/// crop transform (nearest pixel) and occluded pixels read zero.
#[derive(Clone, Debug)]
pub struct TransformedMaps<'a, T, M> {
    inner: M,
    transform: CropTransform<T>,
    mirror_table: &'a [usize],
    occlusions: &'a [OcclusionRect<T>],
}

impl<'a, T: Real, M: LandmarkMaps<T>> TransformedMaps<'a, T, M> {
    pub fn new(inner: M, transform: CropTransform<T>, mirror_table: &'a [usize], occlusions: &'a [OcclusionRect<T>]) -> Self {
        TransformedMaps { inner, transform, mirror_table, occlusions }
    }
}

impl<T: Real, M: LandmarkMaps<T>> LandmarkMaps<T> for TransformedMaps<'_, T, M> {
    fn landmark_count(&self) -> usize {
        self.inner.landmark_count()
    }

    fn size(&self) -> (usize, usize) {
        self.inner.size()
    }

    #[inline]
    fn value_at(&self, landmark: usize, x: i64, y: i64) -> T {
        let (h, w) = self.inner.size();
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            return T::zero();
        }
        let p = Point2::new(T::from_i64(x).unwrap(), T::from_i64(y).unwrap());
        if self.occlusions.iter().any(|r| r.contains(p)) {
            return T::zero();
        }
        if self.transform.is_identity() {
            return self.inner.value_at(landmark, x, y);
        }
        let q = self.transform.invert(p);
        let src = self.transform.source_landmark(landmark, self.mirror_table);
        self.inner.value_at(src, pixel_index(q.x), pixel_index(q.y))
    }

    fn peak(&self, landmark: usize) -> (usize, usize) {
        if self.transform.is_identity() && self.occlusions.is_empty() {
            return self.inner.peak(landmark);
        }
        let (h, w) = self.size();
        let mut best = (0usize, 0usize);
        let mut best_v = T::neg_infinity();
        for y in 0..h {
            for x in 0..w {
                let v = self.value_at(landmark, x as i64, y as i64);
                if v > best_v {
                    best_v = v;
                    best = (x, y);
                }
            }
        }
        best
    }
}

/// Single intensity image in `[0, 255]` standing in for the input picture:
/// the brightest landmark evidence at each pixel. Landmark identity is lost,
/// which is what the grayscale ablation needs.
#[derive(Clone, Debug)]
pub struct GrayView<M> {
    inner: M,
}

impl<M> GrayView<M> {
    pub fn new(inner: M) -> Self {
        GrayView { inner }
    }
}

impl<T: Real, M: LandmarkMaps<T>> LandmarkMaps<T> for GrayView<M> {
    fn landmark_count(&self) -> usize {
        self.inner.landmark_count()
    }

    fn size(&self) -> (usize, usize) {
        self.inner.size()
    }

    fn value_at(&self, _landmark: usize, x: i64, y: i64) -> T {
        let m = (0..self.inner.landmark_count())
            .map(|l| self.inner.value_at(l, x, y))
            .fold(T::zero(), T::max);
        m.min(T::one()) * T::lit(255.0)
    }
}

/// Feature source chosen by the cascade's feature mode.
#[derive(Clone, Debug)]
pub enum FeatureMaps<M> {
    Heatmap(M),
    Gray(GrayView<M>),
}

impl<T: Real, M: LandmarkMaps<T>> LandmarkMaps<T> for FeatureMaps<M> {
    fn landmark_count(&self) -> usize {
        match self {
            FeatureMaps::Heatmap(m) => m.landmark_count(),
            FeatureMaps::Gray(g) => g.landmark_count(),
        }
    }

    fn size(&self) -> (usize, usize) {
        match self {
            FeatureMaps::Heatmap(m) => m.size(),
            FeatureMaps::Gray(g) => g.size(),
        }
    }

    #[inline]
    fn value_at(&self, landmark: usize, x: i64, y: i64) -> T {
        match self {
            FeatureMaps::Heatmap(m) => m.value_at(landmark, x, y),
            FeatureMaps::Gray(g) => g.value_at(landmark, x, y),
        }
    }
}
