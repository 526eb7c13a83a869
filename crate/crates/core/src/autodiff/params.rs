use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Mat;
use crate::error::{Error, Result};

/// Named dense parameters. Shapes are fixed at insertion; every mutation bumps `version`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Mat>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        if !value.all_finite() {
            return Err(Error::numerical(format!("parameter `{name}` has non-finite values")));
        }
        self.entries.insert(name, value);
        self.version += 1;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Mat> {
        self.get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    /// Replaces a value; the shape must match the stored one.
    pub fn set(&mut self, name: &str, value: Mat) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::config(format!(
                "shape mismatch for `{name}`: stored {:?}, given {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        self.version += 1;
        Ok(())
    }

    pub(crate) fn get_mut_unversioned(&mut self, name: &str) -> Option<&mut Mat> {
        self.entries.get_mut(name)
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Mat::zeros(v.rows, v.cols)))
                .collect(),
            version: 0,
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Mat::len).sum()
    }

    /// Number of scalars in entries whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Accumulates `other` into `self`, entry by entry. Names must match.
    pub fn accumulate(&mut self, other: &ParamStore) -> Result<()> {
        for (name, g) in other.iter() {
            let slot = self
                .entries
                .get_mut(name)
                .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
            slot.add_assign(g);
        }
        Ok(())
    }

    pub fn global_sq_norm(&self) -> f64 {
        self.entries.values().map(Mat::sq_norm).sum()
    }

    pub fn scale_all(&mut self, s: f64) {
        for v in self.entries.values_mut() {
            v.scale_in_place(s);
        }
    }
}

/// Orthogonal initialization with the given gain: rows or columns (whichever are fewer)
/// are orthonormal, then scaled.
pub fn orthogonal_init<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Mat {
    let transpose = rows < cols;
    let (n, k) = if transpose { (cols, rows) } else { (rows, cols) };
    // k orthonormal vectors of length n via modified Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for x in &mut v {
            *x /= norm;
        }
        basis.push(v);
    }
    let mut m = Mat::zeros(rows, cols);
    for (j, b) in basis.iter().enumerate() {
        for (i, &x) in b.iter().enumerate() {
            if transpose {
                m.set(j, i, gain * x);
            } else {
                m.set(i, j, gain * x);
            }
        }
    }
    m
}
