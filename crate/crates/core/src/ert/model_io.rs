//! Versioned, checksummed model container.
//!
//! Layout: magic `ERTCASC\0`, `u32` version, `u64` payload length, payload,
//! SHA-256 of the payload. The payload is a length-prefixed JSON header
//! followed by the stages in little-endian binary (leaf arrays as `f64`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cascade::{CascadeModel, InitMode, TrainConfig};
use super::parts::{PartRegressor, PartsStage};
use super::tree::{Leaf, Node, RegressionTree};
use crate::error::{Error, Result};
use crate::features::{FreakPattern, SplitParams};
use crate::pose::{Camera, Model3D, RansacConfig};
use crate::real::Real;
use crate::shape::{LandmarkSchema, Point2, Shape};

const MAGIC: &[u8; 8] = b"ERTCASC\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    scalar_bytes: usize,
    config: TrainConfig,
    init_mode: InitMode,
    schema: String,
    model3d: ModelRecord,
    pattern: PatternRecord,
    mean_shape: Vec<[f64; 2]>,
    camera: [f64; 3],
    ransac: [u64; 3],
    init_smoothing: Option<f64>,
    map_size: (usize, usize),
    stages: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    names: Vec<String>,
    points: Vec<[f64; 3]>,
    normals: Vec<[f64; 3]>,
    distinct: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PatternRecord {
    offsets: Vec<[f64; 2]>,
    rings: Vec<usize>,
    diameter: f64,
}

fn v3<T: Real>(v: &[T; 3]) -> [f64; 3] {
    [v[0].as_f64(), v[1].as_f64(), v[2].as_f64()]
}

fn t3<T: Real>(v: &[f64; 3]) -> [T; 3] {
    [T::lit(v[0]), T::lit(v[1]), T::lit(v[2])]
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64<T: Real>(&mut self, v: T) {
        self.0.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Model("truncated payload".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64<T: Real>(&mut self) -> Result<T> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        T::from_f64(v).ok_or_else(|| Error::Model("unrepresentable value".into()))
    }
}

fn write_tree<T: Real>(w: &mut Writer, tree: &RegressionTree<T>) {
    w.u32(tree.nodes.len());
    for node in &tree.nodes {
        match node {
            Node::Split { theta, left, right } => {
                w.0.push(0);
                w.u32(theta.landmark);
                w.u32(theta.p1);
                w.u32(theta.p2);
                w.f64(theta.tau);
                w.u32(*left as usize);
                w.u32(*right as usize);
            }
            Node::Leaf(leaf) => {
                w.0.push(1);
                w.u32(leaf.visibility.len());
                for v in leaf.residual.iter().chain(&leaf.visibility) {
                    w.f64(*v);
                }
            }
        }
    }
}

fn read_tree<T: Real>(r: &mut Reader<'_>) -> Result<RegressionTree<T>> {
    let n = r.u32()?;
    let mut nodes = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let tag = r.take(1)?[0];
        nodes.push(match tag {
            0 => {
                let landmark = r.u32()?;
                let p1 = r.u32()?;
                let p2 = r.u32()?;
                let tau = r.f64()?;
                let left = r.u32()? as u32;
                let right = r.u32()? as u32;
                Node::Split { theta: SplitParams { tau, p1, p2, landmark }, left, right }
            }
            1 => {
                let m = r.u32()?;
                let residual = (0..2 * m).map(|_| r.f64()).collect::<Result<Vec<T>>>()?;
                let visibility = (0..m).map(|_| r.f64()).collect::<Result<Vec<T>>>()?;
                Node::Leaf(Leaf { residual, visibility })
            }
            t => return Err(Error::Model(format!("unknown node tag {t}"))),
        });
    }
    for node in &nodes {
        if let Node::Split { left, right, .. } = node {
            if *left as usize >= n || *right as usize >= n {
                return Err(Error::Model("child index out of range".into()));
            }
        }
    }
    Ok(RegressionTree { nodes })
}

/// Serializes a model to bytes.
pub fn encode_model<T: Real>(model: &CascadeModel<T>) -> Result<Vec<u8>> {
    let header = Header {
        scalar_bytes: std::mem::size_of::<T>(),
        config: model.config,
        init_mode: model.init_mode,
        schema: model.schema.to_text(),
        model3d: ModelRecord {
            names: model.model3d.names.clone(),
            points: model.model3d.points.iter().map(v3).collect(),
            normals: model.model3d.normals.iter().map(v3).collect(),
            distinct: model.model3d.distinct_ids.clone(),
        },
        pattern: PatternRecord {
            offsets: model.pattern.offsets().iter().map(|p| [p.x.as_f64(), p.y.as_f64()]).collect(),
            rings: model.pattern.rings().to_vec(),
            diameter: model.pattern.base_diameter().as_f64(),
        },
        mean_shape: model.mean_shape.coords.iter().map(|p| [p.x.as_f64(), p.y.as_f64()]).collect(),
        camera: [model.camera.focal.as_f64(), model.camera.center.x.as_f64(), model.camera.center.y.as_f64()],
        ransac: [model.ransac.iterations as u64, model.ransac.subset_size as u64, model.ransac.seed],
        init_smoothing: model.init_smoothing,
        map_size: model.map_size,
        stages: model.stages.len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Model(e.to_string()))?;
    let mut w = Writer(Vec::new());
    w.u32(json.len());
    w.0.extend_from_slice(&json);
    for stage in &model.stages {
        w.f64(stage.shrinkage);
        w.f64(stage.stage_scale);
        w.u32(stage.parts.len());
        for part in &stage.parts {
            w.u32(part.landmarks.len());
            for l in &part.landmarks {
                w.u32(*l);
            }
            w.u32(part.trees.len());
            for tree in &part.trees {
                write_tree(&mut w, tree);
            }
        }
    }
    let payload = w.0;
    let mut out = Vec::with_capacity(payload.len() + 52);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    Ok(out)
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<CascadeModel<T>> {
    if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Model("not a cascade model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Model(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() != 20 + len + 32 {
        return Err(Error::Model("payload length does not match file size".into()));
    }
    let payload = &bytes[20..20 + len];
    if Sha256::digest(payload).as_slice() != &bytes[20 + len..] {
        return Err(Error::Model("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: payload, pos: 0 };
    let hlen = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Model(e.to_string()))?;

    let schema = LandmarkSchema::parse(&header.schema)?;
    let m = &header.model3d;
    let model3d = Model3D::new(
        m.names.clone(),
        m.points.iter().map(t3).collect(),
        m.normals.iter().map(t3).collect(),
        m.distinct.clone(),
    )?;
    let pattern = FreakPattern::new(
        header.pattern.offsets.iter().map(|o| Point2::new(T::lit(o[0]), T::lit(o[1]))).collect(),
        header.pattern.rings.clone(),
        T::lit(header.pattern.diameter),
    )?;
    let l = schema.len();
    if model3d.len() != l || header.mean_shape.len() != l {
        return Err(Error::Model("schema, 3D model and mean shape disagree".into()));
    }
    let mut stages = Vec::with_capacity(header.stages);
    for _ in 0..header.stages {
        let shrinkage = r.f64()?;
        let stage_scale = r.f64()?;
        let nparts = r.u32()?;
        let mut parts = Vec::with_capacity(nparts.min(1024));
        for _ in 0..nparts {
            let nl = r.u32()?;
            let landmarks = (0..nl).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if landmarks.iter().any(|&i| i >= l) {
                return Err(Error::Model("part landmark out of range".into()));
            }
            let nt = r.u32()?;
            let trees = (0..nt).map(|_| read_tree(&mut r)).collect::<Result<Vec<_>>>()?;
            parts.push(PartRegressor { landmarks, trees });
        }
        stages.push(PartsStage { parts, shrinkage, stage_scale });
    }
    if r.pos != payload.len() {
        return Err(Error::Model("trailing bytes after stages".into()));
    }
    Ok(CascadeModel {
        config: header.config,
        init_mode: header.init_mode,
        schema,
        model3d,
        pattern,
        mean_shape: Shape::from_coords(header.mean_shape.iter().map(|p| Point2::new(T::lit(p[0]), T::lit(p[1]))).collect()),
        camera: Camera {
            focal: T::lit(header.camera[0]),
            center: Point2::new(T::lit(header.camera[1]), T::lit(header.camera[2])),
        },
        ransac: RansacConfig {
            iterations: header.ransac[0] as usize,
            subset_size: header.ransac[1] as usize,
            seed: header.ransac[2],
        },
        init_smoothing: header.init_smoothing,
        map_size: header.map_size,
        stages,
    })
}

pub fn save_model<T: Real>(model: &CascadeModel<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<CascadeModel<T>> {
    decode_model(&fs::read(path)?)
}
