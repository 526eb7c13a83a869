//! Scenario evaluation: deterministic trials, safety/comfort timing, reports and plots.

mod ablation;
mod svg;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ablation::{evaluate_checkpoints, run_ablation, AblationOutcome, AblationPlan, TABLE2_HEADER};
pub use svg::{emit_trajectory_svg, mode_color, render_svg};

use crate::cbf::CbfConfig;
use crate::env::{Env, EnvConfig, EpisodeSummary, StepResult, ACTION_DIM, N_COSTS, TERM_NAMES};
use crate::error::{Error, Result};
use crate::trainer::Agent;
use crate::world::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Trials per scenario for success rates.
    pub trials: usize,
    /// Trials for the violation-time study.
    pub ablation_trials: usize,
    /// Curriculum level used for evaluation worlds.
    pub level: u8,
    /// Trial `i` uses environment seed `seed + i`.
    pub seed: u64,
    pub table2_scenario: String,
    pub table3_scenarios: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: 30,
            ablation_trials: 10,
            level: 2,
            seed: 1_000_000,
            table2_scenario: "cluttered_static".into(),
            table3_scenarios: vec![
                "cluttered_static".into(),
                "narrow_passage".into(),
                "dynamic_agents".into(),
                "suspended_obstacle".into(),
            ],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.ablation_trials == 0 {
            return Err(Error::config_at("eval.trials", "trial counts must be positive"));
        }
        if self.level > crate::env::MAX_LEVEL {
            return Err(Error::config_at("eval.level", "above the last curriculum level"));
        }
        Ok(())
    }
}

/// Seconds spent below `unsafe_d` and in `[unsafe_d, comfort_d)`, one `dt` per sample.
pub fn comfort_metrics(distances: &[f64], dt: f64, unsafe_d: f64, comfort_d: f64) -> (f64, f64) {
    let mut unsafe_n = 0usize;
    let mut uncomf_n = 0usize;
    for &d in distances {
        if d < unsafe_d {
            unsafe_n += 1;
        } else if d < comfort_d {
            uncomf_n += 1;
        }
    }
    (dt * unsafe_n as f64, dt * uncomf_n as f64)
}

/// State and outcome of one control period; row 0 is the reset state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajStep {
    pub step: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub height: f64,
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub terms: Vec<f64>,
    pub costs: [f64; N_COSTS],
    pub h_d: f64,
    pub d_obs: f64,
    pub collision: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub scenario: String,
    pub seed: u64,
    pub dt: f64,
    pub steps: Vec<TrajStep>,
    pub summary: Option<EpisodeSummary>,
}

fn trajectory_header() -> String {
    let mut h = String::from("step,t,x,y,yaw,vx,vy,height,a0,a1,a2,a3,reward");
    for n in TERM_NAMES {
        h.push(',');
        h.push_str(n);
    }
    h.push_str(",c_safe,c_limit,c_d,h_d,d_obs,collision");
    h
}

impl Trajectory {
    /// Comfort metrics over the post-step distances (row 0 excluded).
    pub fn comfort_metrics(&self, unsafe_d: f64, comfort_d: f64) -> (f64, f64) {
        let d: Vec<f64> = self.steps.iter().skip(1).map(|s| s.d_obs).collect();
        comfort_metrics(&d, self.dt, unsafe_d, comfort_d)
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.steps.iter().map(|s| [s.x, s.y]).collect()
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "{}", trajectory_header())?;
        for s in &self.steps {
            let mut line = format!(
                "{},{:.2},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.step, s.t, s.x, s.y, s.yaw, s.vx, s.vy, s.height
            );
            for a in s.action {
                line.push_str(&format!(",{a:.6}"));
            }
            line.push_str(&format!(",{:.6}", s.reward));
            for t in &s.terms {
                line.push_str(&format!(",{t:.6}"));
            }
            for c in s.costs {
                line.push_str(&format!(",{c:.6}"));
            }
            line.push_str(&format!(",{:.6},{:.6},{}", s.h_d, s.d_obs, u8::from(s.collision)));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Reads the positions and distances back from a trajectory CSV.
    pub fn load_csv(path: &Path, scenario: &str, dt: f64) -> Result<Trajectory> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::MissingArtifact(format!("trajectory {}: {e}", path.display())))?;
        let headers = rdr.headers().map_err(|e| Error::config(e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::config(format!("trajectory CSV lacks column `{name}`")))
        };
        let (ci, cx, cy, cd) = (col("step")?, col("x")?, col("y")?, col("d_obs")?);
        let num = |rec: &csv::StringRecord, i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::config(format!("bad number `{}`: {e}", &rec[i])))
        };
        let mut steps = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::config(e.to_string()))?;
            steps.push(TrajStep {
                step: num(&rec, ci)? as usize,
                t: 0.0,
                x: num(&rec, cx)?,
                y: num(&rec, cy)?,
                yaw: 0.0,
                vx: 0.0,
                vy: 0.0,
                height: 0.0,
                action: [0.0; ACTION_DIM],
                reward: 0.0,
                terms: Vec::new(),
                costs: [0.0; N_COSTS],
                h_d: 0.0,
                d_obs: num(&rec, cd)?,
                collision: false,
            });
        }
        Ok(Trajectory {
            scenario: scenario.to_string(),
            seed: 0,
            dt,
            steps,
            summary: None,
        })
    }
}

/// Anything that maps the current observation to an action.
pub trait Controller {
    fn act(&mut self, obs: &StepResult, env: &Env) -> Result<[f64; ACTION_DIM]>;
}

/// Mean action of a trained policy.
pub struct MeanPolicy<'a>(pub &'a Agent);

impl Controller for MeanPolicy<'_> {
    fn act(&mut self, obs: &StepResult, _env: &Env) -> Result<[f64; ACTION_DIM]> {
        Ok(self.0.mean_actions(&[&obs.actor_obs.0])?[0])
    }
}

/// Evaluation environment settings shared by every trial.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSetup {
    pub env: EnvConfig,
    pub cbf: CbfConfig,
    pub level: u8,
    /// LiDAR rings replaced by max range.
    pub masked_rings: Vec<usize>,
}

impl EvalSetup {
    pub fn new(env: EnvConfig, cbf: CbfConfig, level: u8) -> Self {
        Self {
            env,
            cbf,
            level,
            masked_rings: Vec::new(),
        }
    }
}

fn traj_step(env: &Env, res: &StepResult, action: [f64; ACTION_DIM], step: usize, dt: f64) -> TrajStep {
    let r = env.robot();
    let terms = TERM_NAMES
        .iter()
        .map(|n| res.reward_terms.get(n).unwrap_or(0.0))
        .collect();
    TrajStep {
        step,
        t: step as f64 * dt,
        x: r.p[0],
        y: r.p[1],
        yaw: r.yaw,
        vx: r.v[0],
        vy: r.v[1],
        height: r.height,
        action,
        reward: res.reward,
        terms,
        costs: res.costs,
        h_d: res.info.h_d,
        d_obs: res.info.d_obs,
        collision: res.info.collision,
    }
}

/// Runs one episode to completion under `controller`.
pub fn run_episode(setup: &EvalSetup, scenario: &Scenario, seed: u64, controller: &mut dyn Controller) -> Result<Trajectory> {
    let mut env = Env::new(setup.env.clone(), setup.cbf)?;
    env.set_masked_rings(&setup.masked_rings);
    let dt = setup.env.dt;
    let mut res = env.reset(scenario, seed, setup.level)?;
    let initial_d = env.world().clearance(env.robot()).distance;
    let mut first = traj_step(&env, &res, [0.0; ACTION_DIM], 0, dt);
    first.d_obs = initial_d;
    let mut steps = vec![first];
    loop {
        let a = controller.act(&res, &env)?;
        res = env.step(&a)?;
        steps.push(traj_step(&env, &res, a, steps.len(), dt));
        if let Some(summary) = res.episode {
            return Ok(Trajectory {
                scenario: scenario.name.clone(),
                seed,
                dt,
                steps,
                summary: Some(summary),
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub collided: bool,
    pub length: usize,
    pub t_unsafe: f64,
    pub t_uncomfortable: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub mode: String,
    pub n_trials: usize,
    pub success_rate: f64,
    pub mean_t_unsafe: f64,
    pub mean_t_uncomfortable: f64,
    pub mean_length: f64,
    pub trials: Vec<TrialRecord>,
}

pub const TRIALS_HEADER: &str = "trial,seed,success,collided,length,t_unsafe_s,t_uncomfortable_s,reward";

impl EvalReport {
    pub fn from_trials(scenario: &str, mode: &str, trials: Vec<TrialRecord>) -> Self {
        let n = trials.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TrialRecord) -> f64| trials.iter().map(f).sum::<f64>() / n;
        Self {
            scenario: scenario.to_string(),
            mode: mode.to_string(),
            n_trials: trials.len(),
            success_rate: mean(&|t| f64::from(u8::from(t.success))),
            mean_t_unsafe: mean(&|t| t.t_unsafe),
            mean_t_uncomfortable: mean(&|t| t.t_uncomfortable),
            mean_length: mean(&|t| t.length as f64),
            trials,
        }
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from(TRIALS_HEADER);
        s.push('\n');
        for t in &self.trials {
            s.push_str(&format!(
                "{},{},{},{},{},{:.2},{:.2},{:.6}\n",
                t.trial,
                t.seed,
                u8::from(t.success),
                u8::from(t.collided),
                t.length,
                t.t_unsafe,
                t.t_uncomfortable,
                t.reward
            ));
        }
        s
    }

    /// Writes `eval_<scenario>_<mode>.csv` (per trial) and `.json` (summary) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let stem = format!("eval_{}_{}", self.scenario, self.mode);
        std::fs::write(dir.join(format!("{stem}.csv")), self.trials_csv())?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }
}

fn record(trial: usize, traj: &Trajectory, setup: &EvalSetup) -> TrialRecord {
    let s = traj.summary.unwrap_or_default();
    let (t_unsafe, t_uncomfortable) = traj.comfort_metrics(setup.env.unsafe_distance, setup.env.comfort_distance);
    TrialRecord {
        trial,
        seed: traj.seed,
        success: s.success,
        collided: s.collided,
        length: s.length,
        t_unsafe,
        t_uncomfortable,
        reward: s.reward,
    }
}

/// `n` independent trials with seeds `base_seed + i`; trials may run concurrently but the
/// report is assembled in trial order.
pub fn run_trials<C, F>(
    make_controller: F,
    setup: &EvalSetup,
    scenario: &Scenario,
    mode: &str,
    n: usize,
    base_seed: u64,
) -> Result<(EvalReport, Vec<Trajectory>)>
where
    C: Controller,
    F: Fn() -> C + Sync,
{
    let trajs: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| run_episode(setup, scenario, base_seed + i as u64, &mut make_controller()))
        .collect::<Result<_>>()?;
    let trials = trajs.iter().enumerate().map(|(i, t)| record(i, t, setup)).collect();
    Ok((EvalReport::from_trials(&scenario.name, mode, trials), trajs))
}

/// Mean-action trials of a trained policy.
pub fn evaluate_agent(
    agent: &Agent,
    setup: &EvalSetup,
    scenario: &Scenario,
    mode: &str,
    n: usize,
    base_seed: u64,
) -> Result<(EvalReport, Vec<Trajectory>)> {
    run_trials(|| MeanPolicy(agent), setup, scenario, mode, n, base_seed)
}
