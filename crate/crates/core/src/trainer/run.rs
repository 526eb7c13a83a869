use std::io::Write;
use std::path::{Path, PathBuf};

use super::{IterationMetrics, Trainer, METRICS_HEADER};
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Base path of the final checkpoint (without extension).
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub history: Vec<IterationMetrics>,
}

pub fn checkpoint_base(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(format!("ckpt_{step}"))
}

/// Trains until the step budget is spent. Writes `config.json`, appends a row to
/// `metrics.csv` after every iteration and saves `ckpt_<step>` checkpoints.
pub fn run_training(cfg: &RunConfig, run_dir: &Path, on_iteration: &mut dyn FnMut(&IterationMetrics)) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join("config.json"), cfg.to_json())?;
    let hash = cfg.hash();
    let mut metrics = std::fs::File::create(run_dir.join("metrics.csv"))?;
    writeln!(metrics, "{METRICS_HEADER}")?;

    let mut trainer = Trainer::new(&cfg.env, &cfg.cbf, cfg.train.clone(), cfg.seed)?;
    let every = cfg.train.checkpoint_every;
    let mut next_ckpt = every;
    let mut history = Vec::new();
    while !trainer.done() {
        let m = trainer.iterate()?;
        writeln!(metrics, "{}", m.csv_row())?;
        metrics.flush()?;
        on_iteration(&m);
        if every > 0 && trainer.steps >= next_ckpt && !trainer.done() {
            trainer.agent.save(&checkpoint_base(run_dir, trainer.steps), trainer.steps, &hash)?;
            while next_ckpt <= trainer.steps {
                next_ckpt += every;
            }
        }
        history.push(m);
    }
    let checkpoint = checkpoint_base(run_dir, trainer.steps);
    trainer.agent.save(&checkpoint, trainer.steps, &hash)?;
    log::info!("saved {}", checkpoint.display());
    Ok(TrainOutcome {
        checkpoint,
        steps: trainer.steps,
        history,
    })
}
