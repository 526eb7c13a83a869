//! Layers built from graph primitives: MLPs, a GRU cell and a diagonal Gaussian head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{orthogonal_init, Graph, Mat, ParamStore, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Relu => g.max_scalar(x, 0.0),
        }
    }
}

/// Layer widths including the input width, e.g. `[in, 256, 128, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl LayerSpec {
    pub fn new(widths: Vec<usize>, hidden_activation: Activation) -> Self {
        Self {
            widths,
            hidden_activation,
            output_activation: Activation::Identity,
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

fn weight_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l{layer}.w")
}

fn bias_name(prefix: &str, layer: usize) -> String {
    format!("{prefix}.l{layer}.b")
}

/// Orthogonal hidden layers with gain 1; the last layer uses `final_gain`.
pub fn init_mlp<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    spec: &LayerSpec,
    final_gain: f64,
    rng: &mut R,
) -> Result<()> {
    if spec.widths.len() < 2 {
        return Err(Error::config(format!("mlp `{prefix}` needs at least two widths")));
    }
    for l in 0..spec.num_layers() {
        let gain = if l + 1 == spec.num_layers() { final_gain } else { 1.0 };
        let (i, o) = (spec.widths[l], spec.widths[l + 1]);
        store.insert(weight_name(prefix, l), orthogonal_init(i, o, gain, rng))?;
        store.insert(bias_name(prefix, l), Mat::zeros(1, o))?;
    }
    Ok(())
}

/// MLP parameters bound into a graph once, reusable across several inputs.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(Var, Var)>,
    spec: LayerSpec,
}

impl Mlp {
    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str, spec: &LayerSpec) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.num_layers());
        for l in 0..spec.num_layers() {
            let w = g.param(store, &weight_name(prefix, l))?;
            let b = g.param(store, &bias_name(prefix, l))?;
            let expect = (spec.widths[l], spec.widths[l + 1]);
            if g.shape(w) != expect {
                return Err(Error::config(format!(
                    "`{}` has shape {:?}, layer spec wants {:?}",
                    weight_name(prefix, l),
                    g.shape(w),
                    expect
                )));
            }
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            spec: spec.clone(),
        })
    }

    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let width = g.shape(input).1;
        if width != self.spec.input_width() {
            return Err(Error::config(format!(
                "mlp input width {width} != first layer width {}",
                self.spec.input_width()
            )));
        }
        let mut x = input;
        let n = self.layers.len();
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let h = g.matmul(x, w)?;
            let h = g.add_row(h, b)?;
            x = if l + 1 == n {
                self.spec.output_activation.apply(g, h)
            } else {
                self.spec.hidden_activation.apply(g, h)
            };
        }
        Ok(x)
    }
}

/// One-shot MLP forward pass that binds parameters under `prefix`.
pub fn mlp_forward(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    input: Var,
    spec: &LayerSpec,
) -> Result<Var> {
    Mlp::bind(g, store, prefix, spec)?.forward(g, input)
}

/// GRU parameters: input weights `wi` (in x 3H), recurrent weights `wh` (H x 3H) and
/// biases, with gate blocks ordered reset, update, candidate.
pub fn init_gru<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    scale: f64,
    rng: &mut R,
) -> Result<()> {
    let mut wi = Mat::zeros(input, 3 * hidden);
    let mut wh = Mat::zeros(hidden, 3 * hidden);
    for gate in 0..3 {
        let bi = orthogonal_init(input, hidden, scale, rng);
        let bh = orthogonal_init(hidden, hidden, scale, rng);
        for r in 0..input {
            for c in 0..hidden {
                wi.set(r, gate * hidden + c, bi.get(r, c));
            }
        }
        for r in 0..hidden {
            for c in 0..hidden {
                wh.set(r, gate * hidden + c, bh.get(r, c));
            }
        }
    }
    store.insert(format!("{prefix}.wi"), wi)?;
    store.insert(format!("{prefix}.wh"), wh)?;
    store.insert(format!("{prefix}.bi"), Mat::zeros(1, 3 * hidden))?;
    store.insert(format!("{prefix}.bh"), Mat::zeros(1, 3 * hidden))?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    wi: Var,
    wh: Var,
    bi: Var,
    bh: Var,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        let wi = g.param(store, &format!("{prefix}.wi"))?;
        let wh = g.param(store, &format!("{prefix}.wh"))?;
        let bi = g.param(store, &format!("{prefix}.bi"))?;
        let bh = g.param(store, &format!("{prefix}.bh"))?;
        let (input, three_h) = g.shape(wi);
        let hidden = three_h / 3;
        if three_h % 3 != 0 || g.shape(wh) != (hidden, three_h) {
            return Err(Error::config(format!("malformed GRU parameters under `{prefix}`")));
        }
        Ok(Self {
            wi,
            wh,
            bi,
            bh,
            input,
            hidden,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    /// Input projection `x wi + bi`, shareable across many time steps at once.
    pub fn project_input(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.shape(x).1 != self.input {
            return Err(Error::config(format!(
                "GRU input width {} != {}",
                g.shape(x).1,
                self.input
            )));
        }
        let xi = g.matmul(x, self.wi)?;
        g.add_row(xi, self.bi)
    }

    /// Standard GRU update with reset gate `r`, update gate `z` and candidate `n`:
    /// `h' = (1 - z) * n + z * h`.
    pub fn step(&self, g: &mut Graph, hidden: Var, input: Var) -> Result<Var> {
        let xi = self.project_input(g, input)?;
        self.step_projected(g, hidden, xi)
    }

    pub fn step_projected(&self, g: &mut Graph, hidden: Var, xi: Var) -> Result<Var> {
        let hs = self.hidden;
        if g.shape(hidden).1 != hs || g.shape(xi).1 != 3 * hs || g.shape(xi).0 != g.shape(hidden).0 {
            return Err(Error::config(format!(
                "GRU step shapes: hidden {:?}, projected input {:?}, hidden size {hs}",
                g.shape(hidden),
                g.shape(xi)
            )));
        }
        let hh = g.matmul(hidden, self.wh)?;
        let hh = g.add_row(hh, self.bh)?;
        let xr = g.slice_cols(xi, 0, hs)?;
        let xz = g.slice_cols(xi, hs, hs)?;
        let xn = g.slice_cols(xi, 2 * hs, hs)?;
        let hr = g.slice_cols(hh, 0, hs)?;
        let hz = g.slice_cols(hh, hs, hs)?;
        let hn = g.slice_cols(hh, 2 * hs, hs)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(xn, rn)?;
        let n = g.tanh(n);
        let delta = g.sub(hidden, n)?;
        let zd = g.mul(z, delta)?;
        g.add(n, zd)
    }
}

/// `gru_step` over parameters stored under `prefix`.
pub fn gru_step(
    g: &mut Graph,
    store: &ParamStore,
    prefix: &str,
    hidden: Var,
    input: Var,
) -> Result<Var> {
    GruCell::bind(g, store, prefix)?.step(g, hidden, input)
}

/// Diagonal Gaussian with state-independent `log_std` clamped to `[-5, 2]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianHead {
    pub mean: Var,
    pub log_std: Var,
}

impl GaussianHead {
    /// `log_std_raw` is the `1 x d` parameter node; it is clamped here.
    pub fn new(g: &mut Graph, mean: Var, log_std_raw: Var) -> Result<Self> {
        let (_, d) = g.shape(mean);
        if g.shape(log_std_raw) != (1, d) {
            return Err(Error::config(format!(
                "log_std shape {:?} does not match action dim {d}",
                g.shape(log_std_raw)
            )));
        }
        let log_std = g.clamp(log_std_raw, LOG_STD_MIN, LOG_STD_MAX);
        Ok(Self { mean, log_std })
    }

    pub fn dim(&self, g: &Graph) -> usize {
        g.shape(self.mean).1
    }

    /// Entropy of the diagonal Gaussian, `1 x 1`.
    pub fn entropy(&self, g: &mut Graph) -> Var {
        let d = self.dim(g) as f64;
        let s = g.sum(self.log_std);
        g.add_scalar(s, d * (0.5 + HALF_LN_2PI))
    }
}

/// Per-row log density of `action` (`B x d`) under `head`, shape `B x 1`.
pub fn gaussian_logprob(g: &mut Graph, head: &GaussianHead, action: Var) -> Result<Var> {
    let d = head.dim(g);
    if g.shape(action) != g.shape(head.mean) {
        return Err(Error::config(format!(
            "action shape {:?} does not match mean {:?}",
            g.shape(action),
            g.shape(head.mean)
        )));
    }
    let diff = g.sub(action, head.mean)?;
    let neg_ls = g.neg(head.log_std);
    let inv_std = g.exp(neg_ls);
    let z = g.mul_row(diff, inv_std)?;
    let zz = g.mul(z, z)?;
    let quad = g.sum_cols(zz);
    let quad = g.scale(quad, -0.5);
    let ls_sum = g.sum(head.log_std);
    let ls_sum = g.neg(ls_sum);
    let lp = g.add_row(quad, ls_sum)?;
    Ok(g.add_scalar(lp, -(d as f64) * HALF_LN_2PI))
}

/// Plain-number log density, used where no graph is needed.
pub fn gaussian_logprob_value(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}
