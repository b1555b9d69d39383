//! Datasets, synthetic domain-shift generators, and the CSV format.
//!
//! CSV layout: header `x0,...,x{d-1},label,domain`, one point per line,
//! `label` an integer (`-1` for unlabeled), `domain` either `source` or
//! `target`. Files are UTF-8 with LF line endings.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Matrix;
use crate::rng::{rng_for, Stream};

pub const UNLABELED: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(format!("unknown domain `{other}` (expected source or target)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    /// Class labels, `-1` for unlabeled points.
    pub y: Vec<i64>,
    pub domain: Vec<Domain>,
    pub name: String,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<i64>, domain: Vec<Domain>, name: impl Into<String>) -> Result<Self> {
        if y.len() != x.rows() || domain.len() != x.rows() {
            return Err(Error::Data(format!(
                "{} points but {} labels and {} domain tags",
                x.rows(),
                y.len(),
                domain.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&l| l < UNLABELED) {
            return Err(Error::Data(format!("invalid label {bad}")));
        }
        Ok(Self {
            x,
            y,
            domain,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn is_fully_labeled(&self) -> bool {
        !self.is_empty() && self.y.iter().all(|&l| l >= 0)
    }

    /// Labels as class indices; fails if any point is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.y
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                usize::try_from(l)
                    .map_err(|_| Error::Data(format!("dataset `{}`: point {i} is unlabeled", self.name)))
            })
            .collect()
    }

    /// Labels where present, `None` for unlabeled points.
    pub fn optional_labels(&self) -> Vec<Option<usize>> {
        self.y.iter().map(|&l| usize::try_from(l).ok()).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            domain: idx.iter().map(|&i| self.domain[i]).collect(),
            name: self.name.clone(),
        }
    }

    pub fn concat(&self, other: &Dataset, name: impl Into<String>) -> Result<Dataset> {
        let x = self.x.vstack(&other.x)?;
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        let mut domain = self.domain.clone();
        domain.extend_from_slice(&other.domain);
        Dataset::new(x, y, domain, name)
    }

    pub fn with_domain(mut self, d: Domain) -> Dataset {
        self.domain.iter_mut().for_each(|t| *t = d);
        self
    }

    pub fn without_labels(mut self) -> Dataset {
        self.y.iter_mut().for_each(|l| *l = UNLABELED);
        self
    }
}

/// Two interleaving half circles of radius 1: the upper arc centred at the
/// origin (class 0) and the lower arc centred at `(1, 0.5)` (class 1), with
/// isotropic Gaussian noise.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config(format!("two moons needs n >= 2, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and >= 0, got {noise}")));
    }
    let n_out = n / 2;
    let n_in = n - n_out;
    let spaced = |count: usize, i: usize| {
        if count > 1 {
            PI * i as f64 / (count - 1) as f64
        } else {
            0.0
        }
    };
    let mut rng = rng_for(seed, Stream::Data);
    let mut data = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n_out {
        let t = spaced(n_out, i);
        data.extend_from_slice(&[t.cos(), t.sin()]);
        y.push(0);
    }
    for i in 0..n_in {
        let t = spaced(n_in, i);
        data.extend_from_slice(&[1.0 - t.cos(), 1.0 - t.sin() - 0.5]);
        y.push(1);
    }
    if noise > 0.0 {
        for v in &mut data {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise * z;
        }
    }
    Dataset::new(Matrix::new(n, 2, data)?, y, vec![Domain::Source; n], "two-moons")
}

/// Rotation about the origin by `theta` radians, optionally retagging the
/// domain and erasing labels.
pub fn rotate(ds: &Dataset, theta: f64, retag: Option<Domain>, drop_labels: bool) -> Result<Dataset> {
    if ds.dim() != 2 {
        return Err(Error::Config(format!("rotate needs 2-D points, got d = {}", ds.dim())));
    }
    let mut out = ds.clone();
    if theta != 0.0 {
        let (s, c) = theta.sin_cos();
        for r in 0..out.x.rows() {
            let row = out.x.row_mut(r);
            let (a, b) = (row[0], row[1]);
            row[0] = c * a - s * b;
            row[1] = s * a + c * b;
        }
    }
    if let Some(d) = retag {
        out = out.with_domain(d);
    }
    if drop_labels {
        out = out.without_labels();
    }
    Ok(out)
}

/// `n` points equally spaced in angle on a circle centred at the origin,
/// starting from a seeded random phase. Unlabeled.
pub fn gen_circle(n: usize, radius: f64, seed: u64) -> Result<Dataset> {
    if n < 3 {
        return Err(Error::Config(format!("circle needs n >= 3, got {n}")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    let mut rng = rng_for(seed, Stream::Data);
    let step = 2.0 * PI / n as f64;
    let phase: f64 = rng.random_range(0.0..step);
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (s, c) = (phase + step * i as f64).sin_cos();
        data.extend_from_slice(&[radius * c, radius * s]);
    }
    Dataset::new(Matrix::new(n, 2, data)?, vec![UNLABELED; n], vec![Domain::Source; n], "circle")
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    for j in 0..ds.dim() {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("label,domain\n");
    for i in 0..ds.len() {
        for v in ds.x.row(i) {
            // Shortest representation that parses back to the same bits.
            out.push_str(&format!("{v:?},"));
        }
        out.push_str(&format!("{},{}\n", ds.y[i], ds.domain[i]));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "domain" {
        return Err(perr(1, format!("header must end with `label,domain`, got `{header}`")));
    }
    let d = cols.len() - 2;
    for (j, c) in cols[..d].iter().enumerate() {
        if *c != format!("x{j}") {
            return Err(perr(1, format!("expected column `x{j}`, found `{c}`")));
        }
    }

    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut domain = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != d + 2 {
            return Err(perr(line_no, format!("expected {} fields, found {}", d + 2, fields.len())));
        }
        for f in &fields[..d] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| perr(line_no, format!("invalid number `{f}`")))?;
            if !v.is_finite() {
                return Err(perr(line_no, format!("non-finite value `{f}`")));
            }
            data.push(v);
        }
        let label: i64 = fields[d]
            .trim()
            .parse()
            .map_err(|_| perr(line_no, format!("invalid label `{}`", fields[d])))?;
        if label < UNLABELED {
            return Err(perr(line_no, format!("invalid label {label}")));
        }
        y.push(label);
        domain.push(fields[d + 1].trim().parse::<Domain>().map_err(|m| perr(line_no, m))?);
    }
    let n = y.len();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(Matrix::new(n, d, data)?, y, domain, name)
}
