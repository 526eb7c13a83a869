use crate::autodiff::{Mat, ParamStore};
use crate::error::{Error, Result};

const CLIP: f64 = 5.0;
const EPS: f64 = 1e-8;

/// Per-feature running mean and variance, merged batch by batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningNorm {
    pub fn new(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            var: vec![1.0; width],
            count: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Merges the statistics of `rows` (each of the normalizer's width).
    pub fn update<'a>(&mut self, rows: impl IntoIterator<Item = &'a [f64]>) {
        let w = self.width();
        let mut n = 0.0;
        let mut sum = vec![0.0; w];
        let mut rows_vec = Vec::new();
        for r in rows {
            debug_assert_eq!(r.len(), w);
            n += 1.0;
            for (s, x) in sum.iter_mut().zip(r) {
                *s += x;
            }
            rows_vec.push(r);
        }
        if n == 0.0 {
            return;
        }
        let batch_mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut m2 = vec![0.0; w];
        for r in &rows_vec {
            for ((acc, x), m) in m2.iter_mut().zip(r.iter()).zip(&batch_mean) {
                *acc += (x - m) * (x - m);
            }
        }
        let batch_var: Vec<f64> = m2.iter().map(|s| s / n).collect();
        if self.count == 0.0 {
            self.mean = batch_mean;
            self.var = batch_var;
            self.count = n;
            return;
        }
        let total = self.count + n;
        for i in 0..w {
            let delta = batch_mean[i] - self.mean[i];
            let m_a = self.var[i] * self.count;
            let m_b = batch_var[i] * n;
            self.mean[i] += delta * n / total;
            self.var[i] = (m_a + m_b + delta * delta * self.count * n / total) / total;
        }
        self.count = total;
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(
            x.iter()
                .zip(&self.mean)
                .zip(&self.var)
                .map(|((x, m), v)| ((x - m) / (v.sqrt() + EPS)).clamp(-CLIP, CLIP)),
        );
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }

    pub fn std(&self, i: usize) -> f64 {
        self.var[i].sqrt()
    }

    pub fn store(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        store.insert(format!("{prefix}.mean"), Mat::row(&self.mean))?;
        store.insert(format!("{prefix}.var"), Mat::row(&self.var))?;
        store.insert(format!("{prefix}.count"), Mat::scalar(self.count))?;
        Ok(())
    }

    pub fn load(store: &ParamStore, prefix: &str) -> Result<Self> {
        let mean = store.require(&format!("{prefix}.mean"))?.data.clone();
        let var = store.require(&format!("{prefix}.var"))?.data.clone();
        let count = store.require(&format!("{prefix}.count"))?.item();
        if mean.len() != var.len() {
            return Err(Error::config(format!("normalizer `{prefix}` has mismatched widths")));
        }
        Ok(Self { mean, var, count })
    }
}
