//! Deterministic synthetic datasets and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Side of the equilateral triangle holding the toy cluster centers.
pub const TOY_TRIANGLE_SIDE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Toy2d,
    Synthimg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Per-sample Gaussian noise (cluster spread for toy2d).
    pub spread: f64,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl DatasetSpec {
    pub fn toy2d(per_class: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Toy2d,
            classes: 3,
            per_class,
            dim: 2,
            spread: 0.5,
            seed,
            train_fraction: 0.8,
        }
    }

    pub fn synthimg(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Synthimg,
            classes,
            per_class,
            dim,
            spread,
            seed,
            train_fraction: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::validation("classes", "need at least 2"));
        }
        if self.per_class < 4 {
            return Err(Error::validation("per_class", "need at least 4 samples per class"));
        }
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return Err(Error::validation("spread", "must be finite and non-negative"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::validation("train_fraction", "must lie in (0, 1)"));
        }
        match self.kind {
            DatasetKind::Toy2d => {
                if self.classes != 3 {
                    return Err(Error::validation("classes", "toy2d has exactly 3 classes"));
                }
                if self.dim != 2 {
                    return Err(Error::validation("dim", "toy2d is two-dimensional"));
                }
                if self.spread <= 0.0 {
                    return Err(Error::validation("spread", "toy2d clusters need a positive spread"));
                }
            }
            DatasetKind::Synthimg => {
                let side = isqrt(self.dim);
                if side * side != self.dim || side == 0 {
                    return Err(Error::validation(
                        "dim",
                        format!("{} is not a perfect square", self.dim),
                    ));
                }
                if self.classes > 64 {
                    return Err(Error::validation("classes", "synthimg supports at most 64 classes"));
                }
            }
        }
        Ok(())
    }
}

fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Feature matrix plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub spec: Option<DatasetSpec>,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(features: Tensor<T>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::Shape {
                op: "dataset",
                left: features.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::validation(
                "label",
                format!("sample {i} has label {l} >= {classes}"),
            ));
        }
        if !features.is_finite() {
            return Err(Error::validation("features", "non-finite value"));
        }
        Ok(Self {
            features,
            labels,
            classes,
            split,
            spec: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
            spec: self.spec.clone(),
        }
    }

    /// Indices of samples with the given label.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Restricts to samples whose label is in `classes`.
    pub fn restrict(&self, classes: &[usize]) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.subset(&idx)
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            features: self.features.cast(),
            labels: self.labels.clone(),
            classes: self.classes,
            split: self.split,
            spec: self.spec.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: LabeledDataset<T>,
    pub test: LabeledDataset<T>,
}

/// Dispatches on `spec.kind`.
pub fn generate<T: Scalar>(spec: &DatasetSpec) -> Result<DatasetSplit<T>> {
    match spec.kind {
        DatasetKind::Toy2d => gen_toy2d(spec),
        DatasetKind::Synthimg => gen_synthimg(spec),
    }
}

/// Centers of the three toy clusters: an equilateral triangle around the origin.
pub fn toy_centers() -> [[f64; 2]; 3] {
    let r = TOY_TRIANGLE_SIDE / 3.0_f64.sqrt();
    let half = TOY_TRIANGLE_SIDE / 2.0;
    [[0.0, r], [-half, -r / 2.0], [half, -r / 2.0]]
}

pub fn gen_toy2d<T: Scalar>(spec: &DatasetSpec) -> Result<DatasetSplit<T>> {
    if spec.kind != DatasetKind::Toy2d {
        return Err(Error::validation("kind", "expected toy2d"));
    }
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let noise = Normal::new(0.0, spec.spread).expect("validated spread");
    let centers = toy_centers();
    let mut rows = Vec::with_capacity(spec.classes * spec.per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            let x = center[0] + noise.sample(&mut rng);
            let y = center[1] + noise.sample(&mut rng);
            rows.push((c, vec![x, y]));
        }
    }
    stratified_split(rows, spec, &mut rng)
}

/// Low-frequency cosine template of one class, values in `[0, 1]`.
fn cosine_template(rng: &mut impl Rng, side: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let amp = rng.random_range(0.5..1.0);
            let fx = rng.random_range(-2.0..2.0);
            let fy = rng.random_range(-2.0..2.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (amp, fx, fy, phase)
        })
        .collect();
    let mut out = Vec::with_capacity(side * side);
    for u in 0..side {
        for v in 0..side {
            let (uf, vf) = (u as f64 / side as f64, v as f64 / side as f64);
            let s: f64 = waves
                .iter()
                .map(|&(a, fx, fy, ph)| a * (std::f64::consts::TAU * (fx * uf + fy * vf) + ph).cos())
                .sum();
            out.push(0.5 + s / 6.0);
        }
    }
    out
}

/// Class templates for a synthimg spec, in class order.
pub fn synthimg_templates(spec: &DatasetSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let side = isqrt(spec.dim);
    let mut rng = seed::rng(seed::derive_seed(spec.seed, "synthimg-templates", 0));
    Ok((0..spec.classes).map(|_| cosine_template(&mut rng, side)).collect())
}

pub fn gen_synthimg<T: Scalar>(spec: &DatasetSpec) -> Result<DatasetSplit<T>> {
    if spec.kind != DatasetKind::Synthimg {
        return Err(Error::validation("kind", "expected synthimg"));
    }
    let templates = synthimg_templates(spec)?;
    let mut rng = seed::rng(spec.seed);
    let noise = Normal::new(0.0, spec.spread).expect("validated spread");
    let mut rows = Vec::with_capacity(spec.classes * spec.per_class);
    for (c, t) in templates.iter().enumerate() {
        for _ in 0..spec.per_class {
            let x = t
                .iter()
                .map(|&v| {
                    let n = if spec.spread > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (v + n).clamp(0.0, 1.0)
                })
                .collect();
            rows.push((c, x));
        }
    }
    stratified_split(rows, spec, &mut rng)
}

fn stratified_split<T: Scalar>(
    rows: Vec<(usize, Vec<f64>)>,
    spec: &DatasetSpec,
    rng: &mut impl Rng,
) -> Result<DatasetSplit<T>> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.classes {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].0 == c).collect();
        idx.shuffle(rng);
        let n_train = ((idx.len() as f64) * spec.train_fraction).round() as usize;
        let n_train = n_train.clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    let build = |idx: &[usize], split: Split| -> Result<LabeledDataset<T>> {
        let values = idx.iter().flat_map(|&i| rows[i].1.iter().map(|&v| T::lit(v))).collect();
        let features = Tensor::new(vec![idx.len(), spec.dim], values)?;
        let labels = idx.iter().map(|&i| rows[i].0).collect();
        let mut ds = LabeledDataset::new(features, labels, spec.classes, split)?;
        ds.spec = Some(spec.clone());
        Ok(ds)
    };
    Ok(DatasetSplit {
        train: build(&train, Split::Train)?,
        test: build(&test, Split::Test)?,
    })
}

/// Writes `label,f0,f1,...` with 17 significant digits per value.
pub fn save_csv<T: Scalar>(ds: &LabeledDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("label");
    for j in 0..ds.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for i in 0..ds.len() {
        let _ = write!(out, "{}", ds.labels[i]);
        for &v in ds.features.row(i) {
            let _ = write!(out, ",{:.16e}", v.as_f64());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses a dataset CSV; labels must be below `classes`.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, classes: usize, split: Split) -> Result<LabeledDataset<T>> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, classes, split)
}

pub fn parse_csv<T: Scalar>(text: &str, classes: usize, split: Split) -> Result<LabeledDataset<T>> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::Parse {
            line: 1,
            reason: "empty file".into(),
        });
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.first() != Some(&"label") {
        return Err(Error::Parse {
            line: 1,
            reason: "header must start with `label`".into(),
        });
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                reason: format!("unexpected column `{c}`"),
            });
        }
    }
    let dim = cols.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("expected {} fields, found {}", dim + 1, fields.len()),
            });
        }
        let label: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: lineno,
            reason: format!("bad label `{}`", fields[0]),
        })?;
        if label >= classes {
            return Err(Error::validation(
                "label",
                format!("line {lineno}: label {label} >= {classes}"),
            ));
        }
        labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                reason: format!("bad value `{f}`"),
            })?;
            values.push(T::lit(v));
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            reason: "no samples".into(),
        });
    }
    let features = Tensor::new(vec![labels.len(), dim], values)?;
    LabeledDataset::new(features, labels, classes, split)
}
