use safeloco_core::eval::{run_ablation, AblationPlan, TABLE2_HEADER};
use safeloco_core::trainer::{run_training, Agent, Mode, METRICS_HEADER};
use safeloco_core::{Error, RunConfig};

const TINY: &str = r#"{
  "run_name": "tiny",
  "seed": 3,
  "env": { "history": 2, "lidar": { "n_azimuth": 12 } },
  "train": {
    "n_envs": 2, "horizon": 24, "minibatches": 2, "epochs": 1, "total_steps": 96,
    "checkpoint_every": 48,
    "net": { "embed_dim": 4, "gru_hidden": 6, "actor_hidden": [8], "critic_hidden": [8], "init_log_std": -0.7 }
  },
  "eval": {
    "trials": 2, "ablation_trials": 1,
    "table3_scenarios": ["cluttered_static", "open_field"]
  }
}"#;

fn tiny() -> RunConfig {
    RunConfig::from_json(TINY).unwrap()
}

#[test]
fn config_round_trips_through_json() {
    let cfg = tiny();
    let back = RunConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn bad_values_name_their_path() {
    let err = RunConfig::from_json(r#"{"cbf": {"gamma_cbf": 1.5}}"#).unwrap_err();
    assert!(matches!(&err, Error::Config { .. }));
    assert!(err.to_string().contains("cbf.gamma_cbf"), "{err}");
    let err = RunConfig::from_json(r#"{"env": {"lidar": {"n_azimut": 3}}}"#).unwrap_err();
    assert!(err.to_string().contains("env.lidar"), "{err}");
}

#[test]
fn training_writes_metrics_and_loadable_checkpoints() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let mut seen = 0;
    let out = run_training(&cfg, dir.path(), &mut |_| seen += 1).unwrap();
    assert_eq!(out.steps, 96);
    assert_eq!(seen, 2);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let steps: Vec<u64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, vec![48, 96]);
    // The periodic checkpoint at 48 and the final one both load.
    for step in [48, 96] {
        let base = dir.path().join(format!("ckpt_{step}"));
        let (_, manifest) = Agent::load(&base, cfg.env.layout(), Some(&cfg.hash())).unwrap();
        assert_eq!(manifest.training_step, step);
        assert_eq!(manifest.config_hash, cfg.hash());
    }
    assert_eq!(out.checkpoint, dir.path().join("ckpt_96"));
}

#[test]
fn ablation_emits_tables_and_plots() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let plan = AblationPlan {
        modes: Mode::ALL.to_vec(),
        budget: 48,
    };
    let mut log = Vec::new();
    let out = run_ablation(&cfg, &plan, &dir.path().join("runs"), &dir.path().join("rep"), &mut |m| {
        log.push(m.to_string())
    })
    .unwrap();
    assert_eq!(out.checkpoints.len(), 3);
    assert_eq!(out.table2.len(), 3);
    assert_eq!(out.table3.len(), 6);
    assert!(!log.is_empty());

    let rep = dir.path().join("rep");
    let t2 = std::fs::read_to_string(rep.join("table2.csv")).unwrap();
    assert_eq!(t2.lines().next(), Some(TABLE2_HEADER));
    assert_eq!(t2.lines().count(), 4);
    let t3 = std::fs::read_to_string(rep.join("table3.csv")).unwrap();
    assert_eq!(
        t3.lines().next(),
        Some("scenario,n_trials,ppo_reward_shaping,p3o,p3o_cbf")
    );
    assert!(t3.lines().nth(1).unwrap().starts_with("cluttered_static,2,"));
    for mode in ["ppo_reward_shaping", "p3o", "p3o_cbf", "all"] {
        let svg = std::fs::read_to_string(rep.join(format!("traj_open_field_{mode}.svg"))).unwrap();
        assert!(svg.starts_with("<svg"));
    }
    assert!(rep.join("ablation/eval_cluttered_static_p3o_cbf.csv").exists());
    assert!(rep.join("eval_open_field_p3o.json").exists());
}
