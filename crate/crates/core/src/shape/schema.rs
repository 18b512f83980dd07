use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const BUILTIN_SCHEMA: &str = include_str!("../../data/schema24.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Landmark {
    pub name: String,
    pub part: usize,
    pub distinct: bool,
    /// Index of the landmark this one maps to under a horizontal mirror.
    pub mirror: usize,
}

/// Ordered landmark list with part assignment, distinct flags and mirror pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LandmarkSchema {
    landmarks: Vec<Landmark>,
    part_names: Vec<String>,
}

/// Landmark indices needed by the eye-based NME normalizers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormalizationLandmarks {
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    pub left_outer_corner: Option<usize>,
    pub right_outer_corner: Option<usize>,
}

impl LandmarkSchema {
    pub fn new(landmarks: Vec<Landmark>, part_names: Vec<String>) -> Result<Self> {
        let l = landmarks.len();
        if l == 0 {
            return Err(Error::Schema("schema has no landmarks".into()));
        }
        let mut seen = HashMap::new();
        for (i, lm) in landmarks.iter().enumerate() {
            if seen.insert(lm.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate landmark name {}", lm.name)));
            }
            if lm.mirror >= l {
                return Err(Error::Schema(format!("{}: mirror index {} out of range", lm.name, lm.mirror)));
            }
            if landmarks[lm.mirror].mirror != i {
                return Err(Error::Schema(format!("{}: mirror pairing is not symmetric", lm.name)));
            }
        }
        let parts = landmarks.iter().map(|l| l.part).max().unwrap_or(0) + 1;
        let mut part_names = part_names;
        while part_names.len() < parts {
            part_names.push(format!("part{}", part_names.len()));
        }
        for p in 0..parts {
            if !landmarks.iter().any(|l| l.part == p) {
                return Err(Error::Schema(format!("part {p} has no landmarks")));
            }
        }
        part_names.truncate(parts);
        Ok(LandmarkSchema { landmarks, part_names })
    }

    /// The shipped 24-landmark schema.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_SCHEMA).expect("builtin schema parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut landmarks = Vec::new();
        let mut names: Vec<(usize, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::Parse { line: line_no, msg: msg.to_string() };
            if fields[0] == "@part" {
                if fields.len() != 3 {
                    return Err(bad("expected `@part <id> <name>`"));
                }
                let id = fields[1].parse().map_err(|_| bad("bad part id"))?;
                names.push((id, fields[2].to_string()));
                continue;
            }
            if fields.len() != 4 {
                return Err(bad("expected `<name> <part> <distinct> <mirror>`"));
            }
            let part = fields[1].parse().map_err(|_| bad("bad part id"))?;
            let distinct = match fields[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("distinct flag must be 0 or 1")),
            };
            let mirror = fields[3].parse().map_err(|_| bad("bad mirror index"))?;
            landmarks.push(Landmark { name: fields[0].to_string(), part, distinct, mirror });
        }
        let parts = landmarks.iter().map(|l| l.part).max().map_or(0, |m| m + 1);
        let mut part_names: Vec<String> = (0..parts).map(|p| format!("part{p}")).collect();
        for (id, name) in names {
            if id < parts {
                part_names[id] = name;
            }
        }
        Self::new(landmarks, part_names)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.part_names.iter().enumerate() {
            let _ = writeln!(out, "@part {i} {n}");
        }
        for lm in &self.landmarks {
            let _ = writeln!(out, "{} {} {} {}", lm.name, lm.part, u8::from(lm.distinct), lm.mirror);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn landmarks(&self) -> &[Landmark] {
        &self.landmarks
    }

    pub fn names(&self) -> Vec<&str> {
        self.landmarks.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.landmarks.iter().position(|l| l.name == name)
    }

    pub fn part_names(&self) -> &[String] {
        &self.part_names
    }

    /// Landmark indices of every part, in part-id order.
    pub fn parts(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.part_names.len()];
        for (i, l) in self.landmarks.iter().enumerate() {
            parts[l.part].push(i);
        }
        parts
    }

    pub fn distinct_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.landmarks[i].distinct).collect()
    }

    pub fn mirror_table(&self) -> Vec<usize> {
        self.landmarks.iter().map(|l| l.mirror).collect()
    }

    /// Resolves eye landmarks from parts named `left_eye` / `right_eye` and
    /// corners from landmarks named `left_eye_outer` / `right_eye_outer`.
    pub fn normalization_landmarks(&self) -> NormalizationLandmarks {
        let part_members = |name: &str| -> Vec<usize> {
            match self.part_names.iter().position(|p| p == name) {
                Some(p) => (0..self.len()).filter(|&i| self.landmarks[i].part == p).collect(),
                None => Vec::new(),
            }
        };
        NormalizationLandmarks {
            left_eye: part_members("left_eye"),
            right_eye: part_members("right_eye"),
            left_outer_corner: self.index_of("left_eye_outer"),
            right_outer_corner: self.index_of("right_eye_outer"),
        }
    }
}
