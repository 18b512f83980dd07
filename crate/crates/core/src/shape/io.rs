//! Canonical annotation format: one JSON object per line, one face per line.
//!
//! ```text
//! {"image":"a.png","bbox":[x,y,w,h],"landmarks":L,"points":[{"name":"nose_tip","x":1.0,"y":2.0,"visible":1.0,"annotated":1}, ...]}
//! ```
//!
//! Points are matched to the schema by name. A landmark absent from `points`
//! is unannotated with placeholder coordinates `(0,0)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BBox, Dataset, LandmarkSchema, Point2, Sample, Shape};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Serialize, Deserialize)]
struct PointRecord {
    name: String,
    x: f64,
    y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    visible: Option<f64>,
    #[serde(default = "default_annotated")]
    annotated: u8,
}

fn default_annotated() -> u8 {
    1
}

#[derive(Debug, Serialize, Deserialize)]
struct FaceRecord {
    image: String,
    bbox: [f64; 4],
    landmarks: usize,
    points: Vec<PointRecord>,
}

pub fn load_dataset<T: Real>(path: impl AsRef<Path>, schema: Arc<LandmarkSchema>) -> Result<Dataset<T>> {
    let file = File::open(path)?;
    parse_dataset(BufReader::new(file), schema)
}

pub fn parse_dataset<T: Real, R: BufRead>(reader: R, schema: Arc<LandmarkSchema>) -> Result<Dataset<T>> {
    let mut samples = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FaceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        samples.push(record_to_sample(rec, &schema, line_no)?);
    }
    Dataset::new(schema, samples)
}

fn record_to_sample<T: Real>(rec: FaceRecord, schema: &LandmarkSchema, line: usize) -> Result<Sample<T>> {
    let l = schema.len();
    if rec.landmarks != l {
        return Err(Error::Schema(format!(
            "line {line}: record declares {} landmarks, schema has {l}",
            rec.landmarks
        )));
    }
    let bad = |msg: String| Error::Parse { line, msg };
    let mut coords = vec![Point2::zero(); l];
    let mut visibility = vec![T::one(); l];
    let mut annotated = vec![false; l];
    let mut seen = vec![false; l];
    for p in rec.points {
        let idx = schema
            .index_of(&p.name)
            .ok_or_else(|| Error::Schema(format!("line {line}: unknown landmark {}", p.name)))?;
        if seen[idx] {
            return Err(bad(format!("landmark {} listed twice", p.name)));
        }
        seen[idx] = true;
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(bad(format!("landmark {} has non-finite coordinates", p.name)));
        }
        let flag = match p.annotated {
            0 => false,
            1 => true,
            v => return Err(bad(format!("annotated flag must be 0 or 1, got {v}"))),
        };
        let vis = p.visible.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&vis) {
            return Err(bad(format!("visibility {vis} outside [0,1]")));
        }
        coords[idx] = Point2::new(T::lit(p.x), T::lit(p.y));
        visibility[idx] = T::lit(vis);
        annotated[idx] = flag;
    }
    let [x, y, w, h] = rec.bbox;
    let bbox = BBox::new(T::lit(x), T::lit(y), T::lit(w), T::lit(h)).map_err(|e| bad(e.to_string()))?;
    Ok(Sample {
        image: rec.image,
        bbox,
        ground_truth: Shape::new(coords, visibility, annotated)?,
        initial: None,
    })
}

fn sample_to_record<T: Real>(s: &Sample<T>, schema: &LandmarkSchema) -> FaceRecord {
    let gt = &s.ground_truth;
    let points = schema
        .landmarks()
        .iter()
        .enumerate()
        .map(|(i, lm)| PointRecord {
            name: lm.name.clone(),
            x: gt.coords[i].x.as_f64(),
            y: gt.coords[i].y.as_f64(),
            visible: Some(gt.visibility[i].as_f64()),
            annotated: u8::from(gt.annotated[i]),
        })
        .collect();
    FaceRecord {
        image: s.image.clone(),
        bbox: [s.bbox.x.as_f64(), s.bbox.y.as_f64(), s.bbox.width.as_f64(), s.bbox.height.as_f64()],
        landmarks: schema.len(),
        points,
    }
}

pub fn write_dataset<T: Real, W: Write>(dataset: &Dataset<T>, mut out: W) -> Result<()> {
    for s in &dataset.samples {
        let rec = sample_to_record(s, &dataset.schema);
        let line = serde_json::to_string(&rec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_dataset<T: Real>(dataset: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}
