use std::path::{Path, PathBuf};

use super::{emit_trajectory_svg, evaluate_agent, EvalReport, EvalSetup, Trajectory};
use crate::config::RunConfig;
use crate::env::Env;
use crate::error::Result;
use crate::trainer::{run_training, Agent, Mode};
use crate::world::Scenario;

pub const TABLE2_HEADER: &str = "mode,scenario,n_trials,success_rate,t_unsafe_s,t_uncomfortable_s,mean_length_steps";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub modes: Vec<Mode>,
    /// Environment steps per mode.
    pub budget: u64,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            budget: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationOutcome {
    pub checkpoints: Vec<(Mode, PathBuf)>,
    pub table2: Vec<EvalReport>,
    pub table3: Vec<EvalReport>,
}

impl AblationOutcome {
    pub fn table2_csv(&self) -> String {
        let mut s = format!("{TABLE2_HEADER}\n");
        for r in &self.table2 {
            s.push_str(&format!(
                "{},{},{},{:.4},{:.2},{:.2},{:.1}\n",
                r.mode, r.scenario, r.n_trials, r.success_rate, r.mean_t_unsafe, r.mean_t_uncomfortable, r.mean_length
            ));
        }
        s
    }

    /// Success rates in percent, one row per scenario and one column per mode.
    pub fn table3_csv(&self) -> String {
        let modes: Vec<Mode> = self.checkpoints.iter().map(|(m, _)| *m).collect();
        let mut scenarios: Vec<&str> = Vec::new();
        for r in &self.table3 {
            if !scenarios.contains(&r.scenario.as_str()) {
                scenarios.push(&r.scenario);
            }
        }
        let mut s = String::from("scenario,n_trials");
        for m in &modes {
            s.push(',');
            s.push_str(m.as_str());
        }
        s.push('\n');
        for sc in scenarios {
            let rows: Vec<&EvalReport> = self.table3.iter().filter(|r| r.scenario == sc).collect();
            s.push_str(&format!("{sc},{}", rows.first().map_or(0, |r| r.n_trials)));
            for m in &modes {
                let rate = rows.iter().find(|r| r.mode == m.as_str()).map_or(f64::NAN, |r| r.success_rate);
                s.push_str(&format!(",{:.1}", 100.0 * rate));
            }
            s.push('\n');
        }
        s
    }
}

/// Trains every mode of `plan` with the same seed and budget, then evaluates the final
/// checkpoints and writes `table2.csv`, `table3.csv` and the trajectory plots into
/// `reports_dir`.
pub fn run_ablation(
    base: &RunConfig,
    plan: &AblationPlan,
    runs_dir: &Path,
    reports_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<AblationOutcome> {
    let mut checkpoints = Vec::new();
    for &mode in &plan.modes {
        let mut cfg = base.clone();
        cfg.run_name = format!("{}_{}", base.run_name, mode);
        cfg.train.mode = mode;
        cfg.train.total_steps = plan.budget;
        let dir = runs_dir.join(&cfg.run_name);
        progress(&format!("training {mode} into {}", dir.display()));
        let outcome = run_training(&cfg, &dir, &mut |m| {
            progress(&format!(
                "{mode} step {} reward {:.3} success {:.2} level {}",
                m.step, m.reward, m.success_rate, m.level
            ))
        })?;
        checkpoints.push((mode, outcome.checkpoint));
    }
    evaluate_checkpoints(base, &checkpoints, reports_dir, progress)
}

/// Evaluation half of the ablation for already-trained checkpoints.
pub fn evaluate_checkpoints(
    base: &RunConfig,
    checkpoints: &[(Mode, PathBuf)],
    reports_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<AblationOutcome> {
    std::fs::create_dir_all(reports_dir)?;
    let layout = base.env.layout();
    let mut agents = Vec::new();
    for (mode, path) in checkpoints {
        let (agent, _) = Agent::load(path, layout, None)?;
        agents.push((*mode, agent));
    }
    let setup = EvalSetup::new(base.env.clone(), base.cbf, base.eval.level);

    let mut table2 = Vec::new();
    let mut table3 = Vec::new();
    let mut scenarios = vec![base.eval.table2_scenario.clone()];
    for s in &base.eval.table3_scenarios {
        if !scenarios.contains(s) {
            scenarios.push(s.clone());
        }
    }
    for name in &scenarios {
        let scenario = Scenario::load(name)?;
        let mut first: Vec<(Mode, Trajectory)> = Vec::new();
        for (mode, agent) in &agents {
            if *name == base.eval.table2_scenario {
                let (report, _) = evaluate_agent(
                    agent,
                    &setup,
                    &scenario,
                    mode.as_str(),
                    base.eval.ablation_trials,
                    base.eval.seed,
                )?;
                progress(&format!(
                    "{mode} on {name}: t_unsafe {:.2}s t_uncomfortable {:.2}s",
                    report.mean_t_unsafe, report.mean_t_uncomfortable
                ));
                report.save(&reports_dir.join("ablation"))?;
                table2.push(report);
            }
            if base.eval.table3_scenarios.contains(name) {
                let (report, trajs) =
                    evaluate_agent(agent, &setup, &scenario, mode.as_str(), base.eval.trials, base.eval.seed)?;
                progress(&format!("{mode} on {name}: success {:.2}", report.success_rate));
                report.save(reports_dir)?;
                table3.push(report);
                if let Some(t) = trajs.into_iter().next() {
                    first.push((*mode, t));
                }
            }
        }
        if !first.is_empty() {
            let mut env = Env::new(base.env.clone(), base.cbf)?;
            env.reset(&scenario, base.eval.seed, base.eval.level)?;
            let goal = scenario.goal_region().copied();
            for (mode, t) in &first {
                emit_trajectory_svg(
                    &reports_dir.join(format!("traj_{name}_{mode}.svg")),
                    env.world(),
                    goal.as_ref(),
                    &[(mode.as_str(), t)],
                    base.env.unsafe_distance,
                    base.env.comfort_distance,
                )?;
            }
            let all: Vec<(&str, &Trajectory)> = first.iter().map(|(m, t)| (m.as_str(), t)).collect();
            emit_trajectory_svg(
                &reports_dir.join(format!("traj_{name}_all.svg")),
                env.world(),
                goal.as_ref(),
                &all,
                base.env.unsafe_distance,
                base.env.comfort_distance,
            )?;
        }
    }
    let outcome = AblationOutcome {
        checkpoints: checkpoints.to_vec(),
        table2,
        table3,
    };
    std::fs::write(reports_dir.join("table2.csv"), outcome.table2_csv())?;
    std::fs::write(reports_dir.join("table3.csv"), outcome.table3_csv())?;
    Ok(outcome)
}
