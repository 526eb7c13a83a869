use std::path::Path;

use rand::Rng;

use super::config::NetConfig;
use super::nets::{critic_forward, infer_net_config, init_critic, init_policy, policy_forward, NetInput, N_VALUE_HEADS};
use super::normalizer::RunningNorm;
use crate::autodiff::checkpoint::{load_arrays, save_arrays, Manifest};
use crate::autodiff::{Graph, ParamStore};
use crate::env::{ObsLayout, ACTION_DIM, CRITIC_EXTRA_WIDTH};
use crate::error::{Error, Result};

/// Everything a checkpoint holds: both networks and the running normalizers.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub layout: ObsLayout,
    pub net: NetConfig,
    pub policy: ParamStore,
    pub critic: ParamStore,
    pub actor_norm: RunningNorm,
    pub extra_norm: RunningNorm,
    /// Running statistics of the returns of each value head.
    pub value_norm: RunningNorm,
}

/// Mean action, log standard deviation and (when sampled) log density per row.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<[f64; ACTION_DIM]>,
    pub log_std: [f64; ACTION_DIM],
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(layout: ObsLayout, net: NetConfig, rng: &mut R) -> Result<Self> {
        let mut policy = ParamStore::new();
        init_policy(&mut policy, &layout, &net, rng)?;
        let mut critic = ParamStore::new();
        init_critic(&mut critic, &layout, &net, rng)?;
        log::info!(
            "policy parameters: {}, critic parameters: {}",
            policy.num_scalars(),
            critic.num_scalars()
        );
        Ok(Self {
            layout,
            actor_norm: RunningNorm::new(layout.actor_width()),
            extra_norm: RunningNorm::new(CRITIC_EXTRA_WIDTH),
            value_norm: RunningNorm::new(N_VALUE_HEADS),
            net,
            policy,
            critic,
        })
    }

    pub fn normalize_actor(&self, raw: &[f64]) -> Vec<f64> {
        self.actor_norm.normalize(raw)
    }

    pub fn normalize_extras(&self, raw: &[f64]) -> Vec<f64> {
        self.extra_norm.normalize(raw)
    }

    /// Policy output for already-normalized observations.
    pub fn act_normalized(&self, rows: &[&[f64]]) -> Result<PolicyOutput> {
        let input = NetInput::gather(&self.layout, rows, None);
        let mut g = Graph::new();
        let head = policy_forward(&mut g, &self.policy, &self.layout, &self.net, &input)?;
        let m = g.value(head.mean);
        let ls = g.value(head.log_std);
        let mean = (0..m.rows)
            .map(|r| {
                let mut a = [0.0; ACTION_DIM];
                a.copy_from_slice(m.row_slice(r));
                a
            })
            .collect();
        let mut log_std = [0.0; ACTION_DIM];
        log_std.copy_from_slice(&ls.data);
        Ok(PolicyOutput { mean, log_std })
    }

    /// Mean (deterministic) actions for raw observations.
    pub fn mean_actions(&self, raw_rows: &[&[f64]]) -> Result<Vec<[f64; ACTION_DIM]>> {
        let normed: Vec<Vec<f64>> = raw_rows.iter().map(|r| self.normalize_actor(r)).collect();
        let refs: Vec<&[f64]> = normed.iter().map(|r| r.as_slice()).collect();
        Ok(self.act_normalized(&refs)?.mean)
    }

    /// Denormalized values `(reward, costs...)` for normalized inputs.
    pub fn values_normalized(&self, actor_rows: &[&[f64]], extra_rows: &[&[f64]]) -> Result<Vec<[f64; N_VALUE_HEADS]>> {
        let input = NetInput::gather(&self.layout, actor_rows, Some(extra_rows));
        let mut g = Graph::new();
        let heads = critic_forward(&mut g, &self.critic, &self.layout, &self.net, &input)?;
        let mut out = vec![[0.0; N_VALUE_HEADS]; input.batch];
        for (k, h) in heads.iter().enumerate() {
            let v = g.value(*h);
            for (b, row) in out.iter_mut().enumerate() {
                row[k] = self.denormalize_value(k, v.data[b]);
            }
        }
        Ok(out)
    }

    pub fn denormalize_value(&self, head: usize, v: f64) -> f64 {
        v * (self.value_norm.std(head) + 1e-8) + self.value_norm.mean[head]
    }

    pub fn normalize_target(&self, head: usize, v: f64) -> f64 {
        (v - self.value_norm.mean[head]) / (self.value_norm.std(head) + 1e-8)
    }

    fn to_store(&self) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        for (name, v) in self.policy.iter().chain(self.critic.iter()) {
            s.insert(name.clone(), v.clone())?;
        }
        self.actor_norm.store(&mut s, "norm.actor")?;
        self.extra_norm.store(&mut s, "norm.extra")?;
        self.value_norm.store(&mut s, "norm.value")?;
        Ok(s)
    }

    /// Writes `<base>.json` and `<base>.bin`.
    pub fn save(&self, base: &Path, step: u64, config_hash: &str) -> Result<Manifest> {
        save_arrays(base, &self.to_store()?, step, config_hash)
    }

    /// Loads a checkpoint; a config hash other than `expected_hash` only logs a warning.
    pub fn load(base: &Path, layout: ObsLayout, expected_hash: Option<&str>) -> Result<(Self, Manifest)> {
        let (store, manifest) = load_arrays(base)?;
        if let Some(h) = expected_hash {
            if h != manifest.config_hash {
                log::warn!(
                    "checkpoint {} was written under config {}, current config is {h}",
                    base.display(),
                    manifest.config_hash
                );
            }
        }
        let net = infer_net_config(&store, &layout)?;
        let mut policy = ParamStore::new();
        let mut critic = ParamStore::new();
        for (name, v) in store.iter() {
            if name.starts_with("pi.") {
                policy.insert(name.clone(), v.clone())?;
            } else if name.starts_with("vf.") {
                critic.insert(name.clone(), v.clone())?;
            }
        }
        let agent = Self {
            layout,
            net,
            policy,
            critic,
            actor_norm: RunningNorm::load(&store, "norm.actor")?,
            extra_norm: RunningNorm::load(&store, "norm.extra")?,
            value_norm: RunningNorm::load(&store, "norm.value")?,
        };
        if agent.actor_norm.width() != layout.actor_width() {
            return Err(Error::config(format!(
                "checkpoint observation width {} != environment width {}",
                agent.actor_norm.width(),
                layout.actor_width()
            )));
        }
        Ok((agent, manifest))
    }
}
