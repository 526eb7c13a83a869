//! Actor and critic networks: a learned per-step scan projection feeding a GRU over the
//! observation history, concatenated with the proprioceptive history.

use rand::Rng;

use super::config::NetConfig;
use crate::autodiff::nn::init_gru;
use crate::autodiff::{nn::init_mlp, Activation, GaussianHead, Graph, GruCell, LayerSpec, Mat, Mlp, ParamStore, Var};
use crate::env::{ObsLayout, ACTION_DIM, CRITIC_EXTRA_WIDTH, N_COSTS};
use crate::error::{Error, Result};

pub const N_VALUE_HEADS: usize = 1 + N_COSTS;

/// Network inputs for a batch, already normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInput {
    pub batch: usize,
    /// `B x (history * RECORD_WIDTH)`.
    pub records: Mat,
    /// `(history * B) x n_rays`, step-major: row `t * B + b`.
    pub scans: Mat,
    /// `B x CRITIC_EXTRA_WIDTH` for the critics.
    pub extras: Option<Mat>,
}

impl NetInput {
    /// Splits flattened actor observations (and optional critic extras) into the
    /// record matrix and the step-major scan matrix.
    pub fn gather(layout: &ObsLayout, actor_rows: &[&[f64]], extras: Option<&[&[f64]]>) -> Self {
        let b = actor_rows.len();
        let rw = layout.records_width();
        let nr = layout.n_rays;
        let mut records = Vec::with_capacity(b * rw);
        for row in actor_rows {
            debug_assert_eq!(row.len(), layout.actor_width());
            records.extend_from_slice(&row[..rw]);
        }
        let mut scans = Vec::with_capacity(layout.history * b * nr);
        for t in 0..layout.history {
            for row in actor_rows {
                let start = rw + t * nr;
                scans.extend_from_slice(&row[start..start + nr]);
            }
        }
        let extras = extras.map(|rows| {
            let mut e = Vec::with_capacity(b * CRITIC_EXTRA_WIDTH);
            for r in rows {
                e.extend_from_slice(r);
            }
            Mat::from_vec(b, CRITIC_EXTRA_WIDTH, e)
        });
        Self {
            batch: b,
            records: Mat::from_vec(b, rw, records),
            scans: Mat::from_vec(layout.history * b, nr, scans),
            extras,
        }
    }
}

fn scan_spec(layout: &ObsLayout, net: &NetConfig) -> LayerSpec {
    LayerSpec::new(vec![layout.n_rays, net.embed_dim], Activation::Identity)
}

fn actor_spec(layout: &ObsLayout, net: &NetConfig) -> LayerSpec {
    let mut w = vec![net.gru_hidden + layout.records_width()];
    w.extend(&net.actor_hidden);
    w.push(ACTION_DIM);
    LayerSpec::new(w, Activation::Tanh)
}

fn critic_spec(layout: &ObsLayout, net: &NetConfig) -> LayerSpec {
    let mut w = vec![net.gru_hidden + layout.records_width() + CRITIC_EXTRA_WIDTH];
    w.extend(&net.critic_hidden);
    w.push(1);
    LayerSpec::new(w, Activation::Tanh)
}

fn init_encoder<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    layout: &ObsLayout,
    net: &NetConfig,
    rng: &mut R,
) -> Result<()> {
    init_mlp(store, &format!("{prefix}.scan"), &scan_spec(layout, net), 1.0, rng)?;
    init_gru(store, &format!("{prefix}.gru"), net.embed_dim, net.gru_hidden, 1.0, rng)
}

pub fn init_policy<R: Rng + ?Sized>(store: &mut ParamStore, layout: &ObsLayout, net: &NetConfig, rng: &mut R) -> Result<()> {
    init_encoder(store, "pi", layout, net, rng)?;
    init_mlp(store, "pi.mlp", &actor_spec(layout, net), 0.01, rng)?;
    store.insert("pi.log_std", Mat::filled(1, ACTION_DIM, net.init_log_std))
}

pub fn init_critic<R: Rng + ?Sized>(store: &mut ParamStore, layout: &ObsLayout, net: &NetConfig, rng: &mut R) -> Result<()> {
    init_encoder(store, "vf", layout, net, rng)?;
    for k in 0..N_VALUE_HEADS {
        init_mlp(store, &format!("vf.head{k}"), &critic_spec(layout, net), 1.0, rng)?;
    }
    Ok(())
}

/// Scan projection and GRU over the history; returns the final hidden state `B x H`.
fn encode(g: &mut Graph, store: &ParamStore, prefix: &str, layout: &ObsLayout, net: &NetConfig, input: &NetInput) -> Result<Var> {
    let b = input.batch;
    if input.scans.shape() != (layout.history * b, layout.n_rays) {
        return Err(Error::usage(format!(
            "scan input {:?} does not match layout {}x{}",
            input.scans.shape(),
            layout.history * b,
            layout.n_rays
        )));
    }
    let scans = g.constant(input.scans.clone());
    let emb = Mlp::bind(g, store, &format!("{prefix}.scan"), &scan_spec(layout, net))?.forward(g, scans)?;
    let cell = GruCell::bind(g, store, &format!("{prefix}.gru"))?;
    let xi = cell.project_input(g, emb)?;
    let mut h = g.constant(Mat::zeros(b, cell.hidden_size()));
    for t in 0..layout.history {
        let x_t = g.slice_rows(xi, t * b, b)?;
        h = cell.step_projected(g, h, x_t)?;
    }
    Ok(h)
}

pub fn policy_forward(
    g: &mut Graph,
    store: &ParamStore,
    layout: &ObsLayout,
    net: &NetConfig,
    input: &NetInput,
) -> Result<GaussianHead> {
    let h = encode(g, store, "pi", layout, net, input)?;
    let records = g.constant(input.records.clone());
    let x = g.concat(&[h, records])?;
    let mean = Mlp::bind(g, store, "pi.mlp", &actor_spec(layout, net))?.forward(g, x)?;
    let log_std = g.param(store, "pi.log_std")?;
    GaussianHead::new(g, mean, log_std)
}

/// Normalized value predictions, one `B x 1` node per head (reward, then costs).
pub fn critic_forward(
    g: &mut Graph,
    store: &ParamStore,
    layout: &ObsLayout,
    net: &NetConfig,
    input: &NetInput,
) -> Result<Vec<Var>> {
    let extras = input
        .extras
        .as_ref()
        .ok_or_else(|| Error::usage("critic input needs privileged extras"))?;
    let h = encode(g, store, "vf", layout, net, input)?;
    let records = g.constant(input.records.clone());
    let extras = g.constant(extras.clone());
    let x = g.concat(&[h, records, extras])?;
    (0..N_VALUE_HEADS)
        .map(|k| Mlp::bind(g, store, &format!("vf.head{k}"), &critic_spec(layout, net))?.forward(g, x))
        .collect()
}

/// Infers the network widths stored in a parameter set.
pub fn infer_net_config(store: &ParamStore, layout: &ObsLayout) -> Result<NetConfig> {
    let scan_w = store.require("pi.scan.l0.w")?;
    if scan_w.rows != layout.n_rays {
        return Err(Error::config(format!(
            "checkpoint scan projection expects {} rays, environment has {}",
            scan_w.rows, layout.n_rays
        )));
    }
    let embed_dim = scan_w.cols;
    let gru_hidden = store.require("pi.gru.wh")?.rows;
    let widths = |prefix: &str| -> Vec<usize> {
        let mut out = Vec::new();
        let mut l = 0;
        while let Some(w) = store.get(&format!("{prefix}.l{l}.w")) {
            out.push(w.cols);
            l += 1;
        }
        out.pop();
        out
    };
    let log_std = store.require("pi.log_std")?;
    Ok(NetConfig {
        embed_dim,
        gru_hidden,
        actor_hidden: widths("pi.mlp"),
        critic_hidden: widths("vf.head0"),
        init_log_std: log_std.data[0],
    })
}
