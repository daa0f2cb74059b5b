//! Uniform with-replacement index sampling and the `P_Ω` operator.
//!
//! `Ω` is a multiset: an index drawn twice appears twice, and every
//! instance contributes separately to `P_Ω` and to the loss.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::Family;
use crate::linalg::{self, Mat};

/// How repeated draws of the same cell receive observed values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateMode {
    /// Every instance gets its own independent draw.
    #[default]
    Independent,
    /// All instances of a cell share the first draw.
    Tied,
}

#[derive(Debug, Clone)]
pub struct ObservationSet {
    rows: usize,
    cols: usize,
    indices: Vec<(usize, usize)>,
    values: Option<Vec<f64>>,
    counts: Vec<u32>,
    mode: Option<DuplicateMode>,
}

impl ObservationSet {
    /// Index-only set from explicit zero-based indices.
    pub fn from_indices(rows: usize, cols: usize, indices: Vec<(usize, usize)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput("matrix dimensions must be positive".into()));
        }
        let mut counts = vec![0u32; rows * cols];
        for &(i, j) in &indices {
            if i >= rows || j >= cols {
                return Err(Error::InvalidInput(format!(
                    "index ({i}, {j}) outside {rows}x{cols}"
                )));
            }
            counts[i * cols + j] += 1;
        }
        Ok(Self {
            rows,
            cols,
            indices,
            values: None,
            counts,
            mode: None,
        })
    }

    /// Observed set from zero-based `(i, j, x)` triplets.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut set = Self::from_indices(rows, cols, triplets.iter().map(|t| (t.0, t.1)).collect())?;
        set.values = Some(triplets.iter().map(|t| t.2).collect());
        Ok(set)
    }

    /// Every cell exactly once, in row-major order.
    pub fn full(rows: usize, cols: usize) -> Result<Self> {
        let indices = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .collect();
        Self::from_indices(rows, cols, indices)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    pub fn duplicate_mode(&self) -> Option<DuplicateMode> {
        self.mode
    }

    pub fn multiplicity(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.cols + j]
    }

    pub fn max_multiplicity(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Dense `rows × cols` multiplicity matrix `c_ij`.
    pub fn multiplicity_matrix(&self) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| self.multiplicity(i, j) as f64)
    }

    pub fn distinct_cells(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0).count()
    }

    /// Iterates `(i, j, x)` for sets carrying values.
    pub fn triplets(&self) -> Result<impl Iterator<Item = (usize, usize, f64)> + '_> {
        let values = self.require_values()?;
        Ok(self
            .indices
            .iter()
            .zip(values)
            .map(|(&(i, j), &x)| (i, j, x)))
    }

    fn require_values(&self) -> Result<&[f64]> {
        self.values
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("observation set carries no values".into()))
    }

    /// Keeps the instances whose position in the list satisfies `keep`.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> Result<Self> {
        let picked: Vec<usize> = (0..self.len()).filter(|k| keep(*k)).collect();
        let indices = picked.iter().map(|&k| self.indices[k]).collect();
        let mut out = Self::from_indices(self.rows, self.cols, indices)?;
        out.values = self
            .values
            .as_ref()
            .map(|v| picked.iter().map(|&k| v[k]).collect());
        out.mode = self.mode;
        Ok(out)
    }
}

/// Deterministic child seed from a base seed and a path of indices (SplitMix64 mixing).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// `size` i.i.d. uniform index pairs, with replacement.
pub fn sample_omega(rows: usize, cols: usize, size: usize, seed: u64) -> Result<ObservationSet> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("matrix dimensions must be positive".into()));
    }
    if size == 0 {
        return Err(Error::InvalidInput("|Ω| must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = (0..size)
        .map(|_| (rng.gen_range(0..rows), rng.gen_range(0..cols)))
        .collect();
    ObservationSet::from_indices(rows, cols, indices)
}

/// Draws `X_ij ~ P(· | Θ*_ij)` for every instance of `omega`.
pub fn observe(
    omega: &ObservationSet,
    theta_star: &Mat,
    family: &Family,
    seed: u64,
    mode: DuplicateMode,
) -> Result<ObservationSet> {
    linalg::ensure_shape(theta_star, omega.shape())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(omega.len());
    for &(i, j) in &omega.indices {
        let theta = theta_star[(i, j)];
        let x = match mode {
            DuplicateMode::Independent => family.sample(theta, &mut rng)?,
            // Seeded by the cell so the draw does not depend on the order of Ω.
            DuplicateMode::Tied => family.sample_seeded(theta, derive_seed(seed, &[i as u64, j as u64]))?,
        };
        values.push(x);
    }
    let mut out = omega.clone();
    out.values = Some(values);
    out.mode = Some(mode);
    Ok(out)
}

/// `P_Ω(M) = Σ_{(i,j)∈Ω} M_ij e_i e_jᵀ`, i.e. `c_ij · M_ij` on sampled cells.
pub fn apply_p_omega(omega: &ObservationSet, m: &Mat) -> Result<Mat> {
    linalg::ensure_shape(m, omega.shape())?;
    Ok(Mat::from_fn(omega.rows, omega.cols, |i, j| {
        omega.multiplicity(i, j) as f64 * m[(i, j)]
    }))
}

/// `Σ_{(i,j)∈Ω} X_ij e_i e_jᵀ` built from the observed values themselves.
pub fn scatter_values(omega: &ObservationSet) -> Result<Mat> {
    let mut out = Mat::zeros(omega.rows, omega.cols);
    for (i, j, x) in omega.triplets()? {
        out[(i, j)] += x;
    }
    Ok(out)
}

/// `P_Ω(X − g(Θ*))` with each instance's own observed value.
pub fn residual_p_omega(omega: &ObservationSet, theta_star: &Mat, family: &Family) -> Result<Mat> {
    linalg::ensure_shape(theta_star, omega.shape())?;
    let mut out = Mat::zeros(omega.rows, omega.cols);
    for (i, j, x) in omega.triplets()? {
        out[(i, j)] += x - family.mean_map(theta_star[(i, j)])?;
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct TripletRecord {
    i: usize,
    j: usize,
    x: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRecord {
    i: usize,
    j: usize,
}

/// Writes `i,j,x` (one-based) when values are present, `i,j` otherwise.
pub fn write_omega_csv<W: Write>(omega: &ObservationSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    match omega.values() {
        Some(values) => {
            for (&(i, j), &x) in omega.indices.iter().zip(values) {
                w.serialize(TripletRecord { i: i + 1, j: j + 1, x })?;
            }
        }
        None => {
            for &(i, j) in &omega.indices {
                w.serialize(IndexRecord { i: i + 1, j: j + 1 })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a one-based `i,j,x` or `i,j` file into an observation set.
pub fn read_omega_csv<R: Read>(reader: R, rows: usize, cols: usize) -> Result<ObservationSet> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let has_values = headers.iter().any(|h| h.trim() == "x");
    let to_zero = |k: usize, what: &str| {
        k.checked_sub(1)
            .ok_or_else(|| Error::InvalidInput(format!("{what} index must be one-based, got 0")))
    };
    if has_values {
        let mut triplets = Vec::new();
        for rec in r.deserialize::<TripletRecord>() {
            let rec = rec?;
            triplets.push((to_zero(rec.i, "row")?, to_zero(rec.j, "column")?, rec.x));
        }
        ObservationSet::from_triplets(rows, cols, &triplets)
    } else {
        let mut indices = Vec::new();
        for rec in r.deserialize::<IndexRecord>() {
            let rec = rec?;
            indices.push((to_zero(rec.i, "row")?, to_zero(rec.j, "column")?));
        }
        ObservationSet::from_indices(rows, cols, indices)
    }
}

pub fn read_omega_file(path: &Path, rows: usize, cols: usize) -> Result<ObservationSet> {
    read_omega_csv(std::fs::File::open(path)?, rows, cols)
}

pub fn write_omega_file(omega: &ObservationSet, path: &Path) -> Result<()> {
    write_omega_csv(omega, std::fs::File::create(path)?)
}
