//! Landmark error metrics: NME, CED/AUC/FR and occlusion precision/recall.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::shape::{BBox, LandmarkSchema, NormalizationLandmarks, Point2, Shape};

/// Minimum number of shared distinct landmarks for cross-dataset NME.
pub const CROSS_MIN_SHARED: usize = 24;

/// Default visibility threshold below which a landmark counts as occluded.
pub const OCCLUSION_THRESHOLD: f64 = 0.5;

/// `100 / ‖w‖₁ · Σ_l w(l) · ‖pred(l) − gt(l)‖ / d`, with `w` the ground
/// truth annotation mask.
pub fn nme<T: Real>(pred: &Shape<T>, gt: &Shape<T>, d: T) -> Result<T> {
    if !(d > T::zero()) || !d.is_finite() {
        return Err(Error::InvalidArgument(format!("normalizer {d} must be positive")));
    }
    if pred.len() != gt.len() {
        return Err(Error::Schema(format!("{} predicted vs {} true landmarks", pred.len(), gt.len())));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for ((p, g), w) in pred.coords.iter().zip(&gt.coords).zip(&gt.annotated) {
        if *w {
            sum = sum + p.distance(g) / d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Undefined("no annotated landmark".into()));
    }
    Ok(T::lit(100.0) * sum / T::from_usize_lossy(count))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Distance between eye centres (mean of each eye's landmarks).
    Pupils,
    /// Distance between the outer eye corners.
    Corners,
    /// Geometric mean of bbox width and height.
    #[default]
    Height,
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pupils" => Ok(Normalization::Pupils),
            "corners" => Ok(Normalization::Corners),
            "height" => Ok(Normalization::Height),
            other => Err(Error::InvalidArgument(format!("unknown normalization {other}"))),
        }
    }
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::Pupils => "pupils",
            Normalization::Corners => "corners",
            Normalization::Height => "height",
        }
    }
}

fn eye_centre<T: Real>(gt: &Shape<T>, ids: &[usize], side: &str) -> Result<Point2<T>> {
    let pts: Vec<Point2<T>> = ids.iter().filter(|&&i| gt.annotated[i]).map(|&i| gt.coords[i]).collect();
    if pts.is_empty() {
        return Err(Error::Undefined(format!("no annotated {side} eye landmark")));
    }
    let sum = pts.iter().fold(Point2::zero(), |a, p| a + *p);
    Ok(sum * (T::one() / T::from_usize_lossy(pts.len())))
}

/// Per-face normalizer `d_i`.
pub fn normalizer<T: Real>(gt: &Shape<T>, bbox: &BBox<T>, mode: Normalization, ids: &NormalizationLandmarks) -> Result<T> {
    match mode {
        Normalization::Height => Ok(bbox.size()),
        Normalization::Pupils => {
            let l = eye_centre(gt, &ids.left_eye, "left")?;
            let r = eye_centre(gt, &ids.right_eye, "right")?;
            Ok(l.distance(&r))
        }
        Normalization::Corners => {
            let corner = |i: Option<usize>, side: &str| -> Result<Point2<T>> {
                match i {
                    Some(i) if gt.annotated[i] => Ok(gt.coords[i]),
                    _ => Err(Error::Undefined(format!("{side} outer eye corner missing"))),
                }
            };
            let l = corner(ids.left_outer_corner, "left")?;
            let r = corner(ids.right_outer_corner, "right")?;
            Ok(l.distance(&r))
        }
    }
}

/// `(AUC_ε, FR_ε)`: the normalized area under the empirical CED on
/// `[0, ε]` and the percentage of errors above `ε`.
pub fn auc_fr(errors: &[f64], epsilon: f64) -> Result<(f64, f64)> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no errors to summarize".into()));
    }
    let n = errors.len() as f64;
    let area: f64 = errors.iter().map(|e| (epsilon - e).max(0.0)).sum();
    let failures = errors.iter().filter(|e| **e > epsilon).count() as f64;
    Ok((area / (n * epsilon), 100.0 * failures / n))
}

/// CED step points `(e, fraction of errors <= e)` at every distinct error.
pub fn ced_curve(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *e => last.1 = frac,
            _ => out.push((*e, frac)),
        }
    }
    out
}

/// Occlusion detection precision and recall in percent. A landmark is
/// predicted occluded when its visibility is below `threshold`; `None`
/// marks a zero denominator.
pub fn occlusion_pr(pred_vis: &[f64], gt_vis: &[f64], threshold: f64) -> Result<(Option<f64>, Option<f64>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} not in (0,1)")));
    }
    if pred_vis.len() != gt_vis.len() {
        return Err(Error::InvalidArgument("visibility vectors differ in length".into()));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (p, g) in pred_vis.iter().zip(gt_vis) {
        let predicted = *p < threshold;
        let actual = *g < 0.5;
        match (predicted, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    Ok((pct(tp, tp + fp), pct(tp, tp + fneg)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub normalization: Normalization,
    pub epsilon: f64,
    pub per_image_nme: Vec<f64>,
    pub nme: f64,
    pub auc: f64,
    pub fr: f64,
    /// Mean error of each landmark over the faces where it is annotated;
    /// `None` when it never is.
    pub per_landmark_nme: Vec<Option<f64>>,
    pub occlusion_precision: Option<f64>,
    pub occlusion_recall: Option<f64>,
    /// Faces whose 3D initialization fell back to the mean shape.
    pub fallbacks: usize,
}

impl EvalReport {
    /// Builds a report from per-face predictions, truths and normalizers.
    /// Occlusion statistics use annotated landmarks only.
    pub fn from_predictions<T: Real>(
        preds: &[Shape<T>],
        gts: &[Shape<T>],
        norms: &[T],
        normalization: Normalization,
        epsilon: f64,
    ) -> Result<Self> {
        if preds.len() != gts.len() || preds.len() != norms.len() {
            return Err(Error::InvalidArgument("predictions, truths and normalizers differ in count".into()));
        }
        let l = gts.first().map_or(0, |g| g.len());
        let mut per_image = Vec::with_capacity(preds.len());
        let mut lm_sum = vec![0.0; l];
        let mut lm_count = vec![0usize; l];
        let (mut pv, mut gv) = (Vec::new(), Vec::new());
        for ((p, g), d) in preds.iter().zip(gts).zip(norms) {
            per_image.push(nme(p, g, *d)?.as_f64());
            for i in 0..l {
                if g.annotated[i] {
                    lm_sum[i] += 100.0 * (p.coords[i].distance(&g.coords[i]) / *d).as_f64();
                    lm_count[i] += 1;
                    pv.push(p.visibility[i].as_f64());
                    gv.push(g.visibility[i].as_f64());
                }
            }
        }
        let (auc, fr) = auc_fr(&per_image, epsilon)?;
        let (occlusion_precision, occlusion_recall) = occlusion_pr(&pv, &gv, OCCLUSION_THRESHOLD)?;
        Ok(EvalReport {
            normalization,
            epsilon,
            nme: per_image.iter().sum::<f64>() / per_image.len() as f64,
            per_image_nme: per_image,
            auc,
            fr,
            per_landmark_nme: lm_sum.iter().zip(&lm_count).map(|(s, c)| (*c > 0).then(|| s / *c as f64)).collect(),
            occlusion_precision,
            occlusion_recall,
            fallbacks: 0,
        })
    }

    /// Plain-text report; landmark names label the breakdown when given.
    pub fn to_text(&self, names: Option<&[&str]>) -> String {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "normalization {}", self.normalization.name());
        let _ = writeln!(out, "faces {}", self.per_image_nme.len());
        let _ = writeln!(out, "nme {:.6}", self.nme);
        let _ = writeln!(out, "auc_{} {:.6}", self.epsilon, self.auc);
        let _ = writeln!(out, "fr_{} {:.4}", self.epsilon, self.fr);
        let _ = writeln!(out, "occlusion_precision {}", opt(self.occlusion_precision));
        let _ = writeln!(out, "occlusion_recall {}", opt(self.occlusion_recall));
        let _ = writeln!(out, "init_fallbacks {}", self.fallbacks);
        let _ = writeln!(out, "per_landmark_nme");
        for (i, v) in self.per_landmark_nme.iter().enumerate() {
            let name = names.and_then(|n| n.get(i).copied()).map_or_else(|| i.to_string(), str::to_string);
            let _ = writeln!(out, "  {name} {}", opt(*v));
        }
        out
    }

    /// CED points as `e ced` lines.
    pub fn ced_text(&self) -> String {
        ced_curve(&self.per_image_nme).iter().map(|(e, c)| format!("{e:.6} {c:.6}\n")).collect()
    }
}

/// Index pairs `(in a, in b)` of distinct landmarks present in both schemas,
/// matched by name in `a`'s order.
pub fn shared_distinct(a: &LandmarkSchema, b: &LandmarkSchema) -> Result<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = a
        .distinct_ids()
        .into_iter()
        .filter_map(|i| {
            let name = &a.landmarks()[i].name;
            b.index_of(name).filter(|&j| b.landmarks()[j].distinct).map(|j| (i, j))
        })
        .collect();
    if pairs.len() < CROSS_MIN_SHARED {
        return Err(Error::Schema(format!(
            "only {} shared distinct landmarks, need {CROSS_MIN_SHARED}",
            pairs.len()
        )));
    }
    Ok(pairs)
}
