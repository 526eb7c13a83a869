//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6 to 8 need trained policies. The three modes are trained once with
//! `configs/desk.json` and cached under `target/acceptance/<config hash>/`; set
//! `SAFELOCO_ACCEPTANCE_DIR` to use another cache, or `SAFELOCO_ACCEPTANCE_NO_TRAIN=1`
//! to report them as failed instead of training. Pass `--strict` (or set
//! `SAFELOCO_ACCEPTANCE_STRICT=1`) to make those criteria affect the exit status.

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safeloco_core::autodiff::nn::{init_gru, init_mlp};
use safeloco_core::autodiff::{
    gaussian_logprob, Activation, GaussianHead, Graph, GruCell, LayerSpec, Mat, Mlp, ParamStore, Var,
};
use safeloco_core::cbf::{safe_projection, BarrierEval, CbfConfig, Control, LinearModel, State};
use safeloco_core::env::{compute_costs, compute_reward, CostInputs, EnvConfig, RewardInputs, TERM_NAMES};
use safeloco_core::eval::{evaluate_agent, evaluate_checkpoints, run_episode, EvalSetup, MeanPolicy};
use safeloco_core::trainer::losses::{clip_surrogate, cost_violation_term, gae, p3o_objective};
use safeloco_core::trainer::{run_training, Agent, Mode};
use safeloco_core::world::{Scenario, Vec2};
use safeloco_core::RunConfig;

const DESK: &str = include_str!("../../../configs/desk.json");

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // libtest flags such as `--nocapture` are accepted and ignored.
    let strict = args.iter().any(|a| a == "--strict")
        || std::env::var("SAFELOCO_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let quiet = args.iter().any(|a| a == "--list");
    if quiet {
        return;
    }

    let trained = RefCell::new(Trained::default());
    let checks: Vec<(u8, &str, bool, Box<dyn FnMut() -> Verdict + '_>)> = vec![
        (1, "barrier invariance under safe projection", true, Box::new(dcbf_invariance)),
        (2, "analytic gradients match finite differences", true, Box::new(gradient_check)),
        (3, "GAE equals brute-force advantages", true, Box::new(gae_oracle)),
        (4, "violation fixture and inactive-hinge gradient", true, Box::new(violation_fixture)),
        (5, "reward and cost terms match oracle", true, Box::new(reward_cost_oracle)),
        (6, "violation-time ordering on cluttered_static", false, Box::new(|| trained.borrow_mut().timing())),
        (7, "success rates of trained policies", false, Box::new(|| trained.borrow_mut().success())),
        (8, "overhead slab needs the top LiDAR ring", false, Box::new(|| trained.borrow_mut().slab())),
        (9, "training and replay are byte-identical", true, Box::new(determinism)),
    ];

    let mut failed_required = 0;
    let mut failed = 0;
    for (id, name, required, mut check) in checks {
        let start = Instant::now();
        let v = match catch_unwind(AssertUnwindSafe(&mut check)) {
            Ok(v) => v,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                verdict(false, format!("panicked: {msg}"))
            }
        };
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{} criterion {id}: {name} ({}) [{secs:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed += 1;
            if required {
                failed_required += 1;
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed_required > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}

// 1 ------------------------------------------------------------------------------

/// Distance from `p` to a disc, minus the margin.
fn disc_h(p: Vec2, c: Vec2, r: f64, d_min: f64) -> f64 {
    (p - c).norm() - r - d_min
}

fn dcbf_invariance() -> Verdict {
    let start = Instant::now();
    let model = LinearModel::double_integrator(0.05);
    let mut worst = f64::INFINITY;
    let mut rollouts = 0;
    for (gi, gamma) in [0.3, 0.6, 1.0].into_iter().enumerate() {
        let cfg = CbfConfig {
            gamma_cbf: gamma,
            ..CbfConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(100 + gi as u64);
        for _ in 0..100 {
            // A disc obstacle at the origin; the barrier is re-linearized at the exact
            // nearest surface point every step.
            let radius = rng.random_range(0.2..1.5);
            let centre = Vec2::zeros();
            let (mut s, mut h);
            loop {
                let p = Vec2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
                let v = Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                s = State::new(p.x, p.y, v.x, v.y);
                h = disc_h(p, centre, radius, cfg.d_min);
                if h > 0.0 {
                    break;
                }
            }
            for _ in 0..1000 {
                let p = model.position(&s);
                let dir = (p - centre).normalize();
                let o = centre + dir * radius;
                let barrier = BarrierEval::from_point(p, o, -dir, cfg.d_min);
                // Desired acceleration pulls towards the obstacle half the time.
                let desired = if rng.random_bool(0.5) {
                    -dir * rng.random_range(0.0..6.0)
                } else {
                    Control::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))
                };
                let proj = safe_projection(&model, &cfg, &barrier, &s, &desired);
                s = model.predict(&s, &proj.control);
                h = disc_h(model.position(&s), centre, radius, cfg.d_min);
                worst = worst.min(h);
            }
            rollouts += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst >= -1e-9 && secs < 5.0,
        format!("{rollouts} rollouts, min h {worst:.3e}, {secs:.2}s"),
    )
}

// 2 ------------------------------------------------------------------------------

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
}

fn value_of(build: &dyn Fn(&mut Graph, &ParamStore) -> Var, store: &ParamStore) -> f64 {
    let mut g = Graph::new();
    let out = build(&mut g, store);
    g.value(out).item()
}

/// Largest relative error between the tape gradient and central differences.
fn max_rel_error(store: &ParamStore, build: &dyn Fn(&mut Graph, &ParamStore) -> Var) -> f64 {
    let eps = 1e-5;
    let mut g = Graph::new();
    let out = build(&mut g, store);
    let analytic = g.backward(out, store).unwrap();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let base = store.get(&name).unwrap().clone();
        for k in 0..base.len() {
            let shifted = |delta: f64| {
                let mut s = store.clone();
                let mut m = base.clone();
                m.data[k] += delta;
                s.set(&name, m).unwrap();
                value_of(build, &s)
            };
            let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let a = analytic.get(&name).unwrap().data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

type Build = Box<dyn Fn(&mut Graph, &ParamStore) -> Var>;

/// One random case per call, cycling through the op families.
fn gradient_case(kind: usize, rng: &mut ChaCha8Rng) -> (ParamStore, Build) {
    let mut store = ParamStore::new();
    match kind % 5 {
        0 => {
            let (i, h, o) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..4));
            let act = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Sigmoid };
            let spec = LayerSpec::new(vec![i, h, o], act);
            init_mlp(&mut store, "m", &spec, 1.0, rng).unwrap();
            for name in ["m.l0.b", "m.l1.b"] {
                let (r, c) = store.get(name).unwrap().shape();
                store.set(name, random_mat(rng, r, c, 0.5)).unwrap();
            }
            let rows = rng.random_range(1..4);
            let x = random_mat(rng, rows, i, 1.0);
            (
                store,
                Box::new(move |g, s| {
                    let xv = g.constant(x.clone());
                    let y = Mlp::bind(g, s, "m", &spec).unwrap().forward(g, xv).unwrap();
                    let y2 = g.mul(y, y).unwrap();
                    g.sum(y2)
                }),
            )
        }
        1 => {
            let (i, h) = (rng.random_range(1..4), rng.random_range(1..5));
            init_gru(&mut store, "g", i, h, 1.0, rng).unwrap();
            for name in ["g.bi", "g.bh"] {
                store.set(name, random_mat(rng, 1, 3 * h, 0.3)).unwrap();
            }
            let b = rng.random_range(1..3);
            store.insert("h0", random_mat(rng, b, h, 0.8)).unwrap();
            let xs: Vec<Mat> = (0..rng.random_range(1..4)).map(|_| random_mat(rng, b, i, 1.0)).collect();
            let w = random_mat(rng, b, h, 1.0);
            (
                store,
                Box::new(move |g, s| {
                    let cell = GruCell::bind(g, s, "g").unwrap();
                    let mut hv = g.param(s, "h0").unwrap();
                    for x in &xs {
                        let xv = g.constant(x.clone());
                        hv = cell.step(g, hv, xv).unwrap();
                    }
                    let wv = g.constant(w.clone());
                    let p = g.mul(hv, wv).unwrap();
                    g.sum(p)
                }),
            )
        }
        2 => {
            let (b, d) = (rng.random_range(1..5), rng.random_range(1..5));
            store.insert("mean", random_mat(rng, b, d, 1.0)).unwrap();
            store.insert("log_std", random_mat(rng, 1, d, 1.0)).unwrap();
            let a = random_mat(rng, b, d, 1.5);
            (
                store,
                Box::new(move |g, s| {
                    let m = g.param(s, "mean").unwrap();
                    let ls = g.param(s, "log_std").unwrap();
                    let head = GaussianHead::new(g, m, ls).unwrap();
                    let av = g.constant(a.clone());
                    let lp = gaussian_logprob(g, &head, av).unwrap();
                    let ent = head.entropy(g);
                    let s = g.sum(lp);
                    let e = g.scale(ent, 0.3);
                    g.add(s, e).unwrap()
                }),
            )
        }
        3 => {
            let (r, c) = (rng.random_range(1..4), rng.random_range(1..5));
            store.insert("a", random_mat(rng, r, c, 1.0)).unwrap();
            store.insert("b", random_mat(rng, r, c, 1.0)).unwrap();
            store.insert("row", random_mat(rng, 1, c, 1.0)).unwrap();
            store.insert("w", random_mat(rng, c, 2, 1.0)).unwrap();
            (
                store,
                Box::new(move |g, s| {
                    let a = g.param(s, "a").unwrap();
                    let b = g.param(s, "b").unwrap();
                    let row = g.param(s, "row").unwrap();
                    let w = g.param(s, "w").unwrap();
                    let t = g.tanh(a);
                    let sg = g.sigmoid(b);
                    let m = g.mul(t, sg).unwrap();
                    let mr = g.mul_row(m, row).unwrap();
                    let ar = g.add_row(mr, row).unwrap();
                    let e = g.exp(ar);
                    let l = g.add_scalar(e, 1.0);
                    let l = g.log(l);
                    let mx = g.max(l, b).unwrap();
                    let mn = g.min(mx, a).unwrap();
                    let sub = g.sub(mn, t).unwrap();
                    let mm = g.matmul(sub, w).unwrap();
                    let sc = g.sum_cols(mm);
                    let sr = g.sum_rows(mm);
                    let cat = g.concat(&[sc, a]).unwrap();
                    let x = g.mean(cat);
                    let y = g.sum(sr);
                    let xy = g.mul(x, y).unwrap();
                    g.scale(xy, 0.5)
                }),
            )
        }
        _ => {
            // Clipped surrogate on a Gaussian policy, both the optimistic and the
            // pessimistic form.
            let b = rng.random_range(2..6);
            store.insert("mean", random_mat(rng, b, 2, 0.5)).unwrap();
            store.insert("log_std", random_mat(rng, 1, 2, 0.5)).unwrap();
            let a = random_mat(rng, b, 2, 1.0);
            let adv = random_mat(rng, b, 1, 2.0);
            let pessimistic = rng.random_bool(0.5);
            let logprob = move |g: &mut Graph, s: &ParamStore, a: &Mat| {
                let m = g.param(s, "mean").unwrap();
                let ls = g.param(s, "log_std").unwrap();
                let head = GaussianHead::new(g, m, ls).unwrap();
                let av = g.constant(a.clone());
                gaussian_logprob(g, &head, av).unwrap()
            };
            // Old log-probs sit near the current ones so that most ratios stay inside
            // the clip range and the rest fall outside it.
            let mut g = Graph::new();
            let lp0 = logprob(&mut g, &store, &a);
            let shift = random_mat(rng, b, 1, 0.4);
            let old = g.value(lp0).zip_map(&shift, |x, o| x + o);
            (
                store,
                Box::new(move |g, s| {
                    let lp = logprob(g, s, &a);
                    let old_v = g.constant(old.clone());
                    let adv_v = g.constant(adv.clone());
                    clip_surrogate(g, lp, old_v, adv_v, 0.2, pessimistic).unwrap()
                }),
            )
        }
    }
}

fn gradient_check() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let cases = 120;
    for k in 0..cases {
        let (store, build) = gradient_case(k, &mut rng);
        worst = worst.max(max_rel_error(&store, build.as_ref()));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 60.0,
        format!("{cases} cases, max rel err {worst:.2e}, {secs:.2}s"),
    )
}

// 3 ------------------------------------------------------------------------------

fn brute_force_advantages(r: &[f64], v: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    // A_t = sum_n (1 - lambda) lambda^(n-1) (G_t^(n) - V_t), with the final n-step
    // return carrying the remaining weight lambda^(T-t-1).
    let n = r.len();
    let mut out = vec![0.0; n];
    for t in 0..n {
        let end = (t..n).find(|&k| dones[k]).map_or(n, |k| k + 1);
        let horizon = end - t;
        let nstep = |m: usize| {
            let mut g = 0.0;
            for j in 0..m {
                g += gamma.powi(j as i32) * r[t + j];
            }
            let last = t + m;
            let terminal = last == end && dones[end - 1];
            if !terminal {
                g += gamma.powi(m as i32) * v[last];
            }
            g
        };
        let mut acc = 0.0;
        for m in 1..horizon {
            acc += (1.0 - lambda) * lambda.powi(m as i32 - 1) * nstep(m);
        }
        acc += lambda.powi(horizon as i32 - 1) * nstep(horizon);
        out[t] = acc - v[t];
    }
    out
}

fn gae_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=32);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let gamma = rng.random_range(0.0..1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, _) = gae(&r, &v, &dones, gamma, lambda).unwrap();
        let oracle = brute_force_advantages(&r, &v, &dones, gamma, lambda);
        for (a, b) in adv.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst < 1e-10, format!("1000 episodes, max abs err {worst:.2e}"))
}

// 4 ------------------------------------------------------------------------------

fn violation_fixture() -> Verdict {
    let term = cost_violation_term(0.0, 1.0, 0.0, 0.99, 0.0, 1.0);
    // 1 - 0.99 is not exactly 0.01 in binary floating point; allow a few ulps.
    let exact = (term - 0.01).abs() < 1e-15;

    // Small Gaussian policy; the penalized objective with every hinge inactive must
    // reproduce the plain clipped objective bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = LayerSpec::new(vec![3, 8, 2], Activation::Tanh);
    let mut store = ParamStore::new();
    init_mlp(&mut store, "p", &spec, 1.0, &mut rng).unwrap();
    store.insert("log_std", Mat::row(&[-0.4, 0.2])).unwrap();
    let x = random_mat(&mut rng, 16, 3, 1.0);
    let actions = random_mat(&mut rng, 16, 2, 1.0);
    let old = random_mat(&mut rng, 16, 1, 1.0).zip_map(&Mat::from_vec(16, 1, vec![-2.0; 16]), |a, b| a + b);
    let adv_r = random_mat(&mut rng, 16, 1, 1.0);
    let adv_c: Vec<Mat> = (0..3).map(|_| random_mat(&mut rng, 16, 1, 1.0)).collect();

    let grad = |penalized: bool| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mean = Mlp::bind(&mut g, &store, "p", &spec).unwrap().forward(&mut g, xv).unwrap();
        let ls = g.param(&store, "log_std").unwrap();
        let head = GaussianHead::new(&mut g, mean, ls).unwrap();
        let av = g.constant(actions.clone());
        let lp = gaussian_logprob(&mut g, &head, av).unwrap();
        let ov = g.constant(old.clone());
        let ar = g.constant(adv_r.clone());
        let mut obj = clip_surrogate(&mut g, lp, ov, ar, 0.2, false).unwrap();
        if penalized {
            let costs: Vec<Var> = adv_c
                .iter()
                .map(|c| {
                    let cv = g.constant(c.clone());
                    clip_surrogate(&mut g, lp, ov, cv, 0.2, true).unwrap()
                })
                .collect();
            obj = p3o_objective(&mut g, obj, &costs, &[-30.0, -45.0, -60.0], &[1.0, 2.0, 0.5]);
        }
        let loss = g.neg(obj);
        g.backward(loss, &store).unwrap()
    };
    let plain = grad(false);
    let pen = grad(true);
    let mut identical = true;
    for (name, m) in plain.iter() {
        let other = pen.get(name).unwrap();
        identical &= m.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    verdict(
        exact && identical,
        format!("violation term {term}, gradients bit-identical: {identical}"),
    )
}

// 5 ------------------------------------------------------------------------------

fn reward_oracle(cfg: &EnvConfig, i: &RewardInputs) -> [f64; 11] {
    let w = &cfg.weights;
    let (ex, ey) = (i.v_body.x - i.command[0], i.v_body.y - i.command[1]);
    let ew = i.omega_z - i.command[2];
    let mut rate = 0.0;
    let mut jerk = 0.0;
    let mut mag = 0.0;
    for k in 0..4 {
        rate += (i.action[k] - i.prev_action[k]).powi(2);
        jerk += (i.action[k] - 2.0 * i.prev_action[k] + i.prev_prev_action[k]).powi(2);
        mag += i.action[k] * i.action[k];
    }
    let prox = match i.d_human {
        Some(d) => w.proxemic * (-cfg.alpha_p * (d - cfg.social_distance) * (d - cfg.social_distance)).exp(),
        None => 0.0,
    };
    let (app_v, app_a, tan) = match i.obstacle_normal {
        None => (0.0, 0.0, w.tangential_avoidance),
        Some(n) => {
            let vn = i.velocity.x * n.x + i.velocity.y * n.y;
            let an = i.accel.x * n.x + i.accel.y * n.y;
            let speed = (i.velocity.x * i.velocity.x + i.velocity.y * i.velocity.y).sqrt();
            let cos_in = if speed > 1e-9 { f64::max(-vn / speed, 0.0) } else { 0.0 };
            (
                w.approach_velocity * f64::max(-vn, 0.0),
                w.approach_acceleration * f64::max(-an, 0.0),
                w.tangential_avoidance * (1.0 - cos_in),
            )
        }
    };
    let (prox, app_v, app_a, tan) = if cfg.comfort_rewards {
        (prox, app_v, app_a, tan)
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    [
        w.tracking_lin_vel * (-cfg.alpha_v * (ex * ex + ey * ey)).exp(),
        w.tracking_ang_vel * (-cfg.alpha_omega * ew * ew).exp(),
        w.lin_vel_z * i.height_rate * i.height_rate,
        w.action_rate * rate,
        w.action_smoothness * jerk,
        w.action_magnitude * mag,
        w.base_height * (i.height - cfg.nominal_height).powi(2),
        prox,
        app_v,
        app_a,
        tan,
    ]
}

fn random_inputs(rng: &mut ChaCha8Rng) -> RewardInputs {
    let mut v = || rng.random_range(-1.5..1.5);
    let action = [v(), v(), v(), v()];
    let prev_action = [v(), v(), v(), v()];
    let prev_prev_action = [v(), v(), v(), v()];
    let inputs = RewardInputs {
        v_body: Vec2::new(v(), v()),
        command: [v(), v(), v()],
        omega_z: v(),
        height: 0.75 + 0.2 * v(),
        height_rate: v(),
        action,
        prev_action,
        prev_prev_action,
        velocity: Vec2::new(v(), v()),
        accel: Vec2::new(v(), v()),
        obstacle_normal: None,
        d_human: None,
    };
    let angle: f64 = rng.random_range(-3.2..3.2);
    RewardInputs {
        obstacle_normal: rng.random_bool(0.7).then(|| Vec2::new(angle.cos(), angle.sin())),
        d_human: rng.random_bool(0.5).then(|| rng.random_range(0.0..4.0)),
        ..inputs
    }
}

fn reward_cost_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut fixtures = 0;
    for comfort in [true, false] {
        let cfg = EnvConfig {
            comfort_rewards: comfort,
            ..EnvConfig::default()
        };
        for _ in 0..250 {
            let inp = random_inputs(&mut rng);
            let got = compute_reward(&cfg, &inp);
            let want = reward_oracle(&cfg, &inp);
            for (k, name) in TERM_NAMES.iter().enumerate() {
                worst = worst.max((got.get(name).unwrap() - want[k]).abs());
            }
            worst = worst.max((got.total - want.iter().sum::<f64>()).abs());
            fixtures += 1;
        }
    }

    // Costs: indicator, limit count and barrier term against direct evaluation.
    let cfg = EnvConfig::default();
    let cbf = CbfConfig::default();
    let model = LinearModel::double_integrator(cfg.dt);
    for _ in 0..200 {
        let raw = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
        let state = State::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let o = Vec2::new(rng.random_range(1.0..3.0), rng.random_range(-1.0..1.0));
        let p = model.position(&state);
        let barrier = BarrierEval::from_point(p, o, Vec2::new(1.0, 0.0), cbf.d_min);
        let control = Control::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let d_obs = rng.random_range(0.0..2.0);
        let c = compute_costs(&cfg, &cbf, &model, &CostInputs { d_obs, raw_action: raw, state, barrier, control });
        let eta = (p - o) / (p - o).norm();
        let h = |q: Vec2| eta.dot(&(q - o)) - cbf.d_min;
        let next = Vec2::new(
            state[0] + cfg.dt * (state[2] + control.x * cfg.dt),
            state[1] + cfg.dt * (state[3] + control.y * cfg.dt),
        );
        let c_d = f64::max(0.0, -(h(next) - (1.0 - cbf.gamma_cbf) * h(p)));
        let want = [
            if d_obs < 0.8 { 1.0 } else { 0.0 },
            raw.iter().filter(|a| a.abs() > 1.0).count() as f64,
            c_d,
        ];
        for k in 0..3 {
            worst = worst.max((c[k] - want[k]).abs());
        }
        fixtures += 1;
    }

    let c_safe = |d: f64| {
        let inp = CostInputs {
            d_obs: d,
            raw_action: [0.0; 4],
            state: State::zeros(),
            barrier: BarrierEval::with_normal(Vec2::zeros(), Vec2::new(3.0, 0.0), Vec2::new(-1.0, 0.0), cbf.d_min),
            control: Control::zeros(),
        };
        compute_costs(&cfg, &cbf, &model, &inp)[0]
    };
    let below = f64::from_bits(0.8f64.to_bits() - 1);
    let flips = c_safe(0.8) == 0.0 && c_safe(below) == 1.0 && c_safe(0.81) == 0.0 && c_safe(0.79) == 1.0;
    verdict(
        worst <= 1e-12 && flips,
        format!("{fixtures} fixtures, max abs err {worst:.2e}, C_safe flips at 0.8: {flips}"),
    )
}

// 6 to 8 ---------------------------------------------------------------------------

fn cache_root(cfg: &RunConfig) -> PathBuf {
    let base = match std::env::var_os("SAFELOCO_ACCEPTANCE_DIR") {
        Some(d) => PathBuf::from(d),
        None => {
            let target = std::env::var_os("CARGO_TARGET_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target"));
            target.join("acceptance")
        }
    };
    base.join(&cfg.hash()[..12])
}

/// Trains (or reuses) one checkpoint per mode.
fn train_modes(base: &RunConfig, runs: &Path) -> Vec<(Mode, PathBuf)> {
    let per_iter = (base.train.n_envs * base.train.horizon) as u64;
    let mut out = Vec::new();
    for mode in Mode::ALL {
        let mut cfg = base.clone();
        cfg.run_name = format!("{}_{}", base.run_name, mode);
        cfg.train.mode = mode;
        let dir = runs.join(&cfg.run_name);
        let final_step = base.train.total_steps.div_ceil(per_iter) * per_iter;
        let ckpt = dir.join(format!("ckpt_{final_step}"));
        let layout = cfg.env.layout();
        let cached = Agent::load(&ckpt, layout, Some(&cfg.hash())).is_ok();
        if !cached {
            if std::env::var("SAFELOCO_ACCEPTANCE_NO_TRAIN").is_ok_and(|v| v == "1") {
                panic!("no cached checkpoint at {}", ckpt.display());
            }
            eprintln!("training {mode} for {} steps into {}", base.train.total_steps, dir.display());
            let started = Instant::now();
            let outcome = run_training(&cfg, &dir, &mut |m| {
                if m.step % (per_iter * 25) == 0 {
                    eprintln!("  {mode} step {} success {:.2} level {}", m.step, m.success_rate, m.level);
                }
            })
            .expect("training succeeds");
            assert_eq!(outcome.checkpoint, ckpt);
            eprintln!("  {mode} trained in {:.0}s", started.elapsed().as_secs_f64());
        }
        out.push((mode, ckpt));
    }
    out
}

#[derive(Default)]
struct Trained {
    outcome: Option<Result<Results, String>>,
}

struct Results {
    t_unsafe: Vec<(Mode, f64)>,
    success: Vec<(Mode, String, f64)>,
    slab_full: f64,
    slab_masked_collisions: f64,
}

impl Trained {
    fn results(&mut self) -> Result<&Results, String> {
        if self.outcome.is_none() {
            let r = catch_unwind(compute_results).map_err(|e| {
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "training failed".into())
            });
            self.outcome = Some(r);
        }
        self.outcome.as_ref().unwrap().as_ref().map_err(|e| e.clone())
    }

    fn timing(&mut self) -> Verdict {
        let r = match self.results() {
            Ok(r) => r,
            Err(e) => return verdict(false, e),
        };
        let t = |m: Mode| r.t_unsafe.iter().find(|(k, _)| *k == m).unwrap().1;
        let (cbf, p3o, ppo) = (t(Mode::P3oCbf), t(Mode::P3o), t(Mode::PpoRewardShaping));
        verdict(
            cbf <= p3o && p3o <= ppo && cbf <= 0.6 * ppo,
            format!("t_unsafe p3o_cbf {cbf:.2}s, p3o {p3o:.2}s, ppo_reward_shaping {ppo:.2}s"),
        )
    }

    fn success(&mut self) -> Verdict {
        let r = match self.results() {
            Ok(r) => r,
            Err(e) => return verdict(false, e),
        };
        let s = |m: Mode, sc: &str| {
            r.success
                .iter()
                .find(|(k, name, _)| *k == m && name == sc)
                .map_or(f64::NAN, |x| x.2)
        };
        let clutter = s(Mode::P3oCbf, "cluttered_static");
        let narrow = (s(Mode::P3oCbf, "narrow_passage"), s(Mode::PpoRewardShaping, "narrow_passage"));
        let dynamic = (s(Mode::P3oCbf, "dynamic_agents"), s(Mode::PpoRewardShaping, "dynamic_agents"));
        verdict(
            clutter >= 0.8 && narrow.0 > narrow.1 && dynamic.0 > dynamic.1,
            format!(
                "p3o_cbf cluttered_static {:.0}%, narrow_passage {:.0}% vs {:.0}%, dynamic_agents {:.0}% vs {:.0}%",
                100.0 * clutter,
                100.0 * narrow.0,
                100.0 * narrow.1,
                100.0 * dynamic.0,
                100.0 * dynamic.1
            ),
        )
    }

    fn slab(&mut self) -> Verdict {
        let r = match self.results() {
            Ok(r) => r,
            Err(e) => return verdict(false, e),
        };
        verdict(
            r.slab_full >= 0.5 && r.slab_masked_collisions >= 0.5,
            format!(
                "success {:.0}% with all rings, collisions {:.0}% with the top ring masked",
                100.0 * r.slab_full,
                100.0 * r.slab_masked_collisions
            ),
        )
    }
}

fn compute_results() -> Results {
    let cfg = RunConfig::from_json(DESK).expect("desk config parses");
    let root = cache_root(&cfg);
    let ckpts = train_modes(&cfg, &root.join("runs"));
    let outcome = evaluate_checkpoints(&cfg, &ckpts, &root.join("reports"), &mut |_| {}).expect("evaluation runs");
    let t_unsafe = outcome
        .table2
        .iter()
        .map(|r| (Mode::parse(&r.mode).unwrap(), r.mean_t_unsafe))
        .collect();
    let success = outcome
        .table3
        .iter()
        .map(|r| (Mode::parse(&r.mode).unwrap(), r.scenario.clone(), r.success_rate))
        .collect();

    let cbf_ckpt = &ckpts.iter().find(|(m, _)| *m == Mode::P3oCbf).unwrap().1;
    let (agent, _) = Agent::load(cbf_ckpt, cfg.env.layout(), None).expect("checkpoint loads");
    let slab = Scenario::load("suspended_obstacle").unwrap();
    let mut setup = EvalSetup::new(cfg.env.clone(), cfg.cbf, cfg.eval.level);
    let (full, _) = evaluate_agent(&agent, &setup, &slab, "p3o_cbf", cfg.eval.trials, cfg.eval.seed).unwrap();
    setup.masked_rings = vec![cfg.env.lidar.n_rings() - 1];
    let (masked, _) = evaluate_agent(&agent, &setup, &slab, "p3o_cbf", cfg.eval.trials, cfg.eval.seed).unwrap();
    let collisions = masked.trials.iter().filter(|t| t.collided).count() as f64 / masked.n_trials as f64;
    Results {
        t_unsafe,
        success,
        slab_full: full.success_rate,
        slab_masked_collisions: collisions,
    }
}

// 9 ------------------------------------------------------------------------------

fn determinism() -> Verdict {
    let mut cfg = RunConfig::from_json(DESK).expect("desk config parses");
    cfg.run_name = "determinism".into();
    cfg.train.n_envs = 4;
    cfg.train.horizon = 250;
    cfg.train.total_steps = 1000;
    cfg.train.checkpoint_every = 0;
    let dir = tempfile::tempdir().unwrap();
    let mut metrics = Vec::new();
    let mut ckpts = Vec::new();
    for run in ["a", "b"] {
        let out = run_training(&cfg, &dir.path().join(run), &mut |_| {}).unwrap();
        assert_eq!(out.steps, 1000);
        metrics.push(std::fs::read(dir.path().join(run).join("metrics.csv")).unwrap());
        ckpts.push(out.checkpoint);
    }
    let same_metrics = metrics[0] == metrics[1];
    let same_weights = std::fs::read(ckpts[0].with_extension("bin")).unwrap()
        == std::fs::read(ckpts[1].with_extension("bin")).unwrap();

    let (agent, _) = Agent::load(&ckpts[0], cfg.env.layout(), None).unwrap();
    let setup = EvalSetup::new(cfg.env.clone(), cfg.cbf, cfg.eval.level);
    let mut replays = Vec::new();
    for name in ["cluttered_static", "dynamic_agents"] {
        let sc = Scenario::load(name).unwrap();
        for _ in 0..2 {
            let t = run_episode(&setup, &sc, 17, &mut MeanPolicy(&agent)).unwrap();
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            replays.push(buf);
        }
    }
    let same_replays = replays[0] == replays[1] && replays[2] == replays[3];
    verdict(
        same_metrics && same_weights && same_replays,
        format!("metrics identical: {same_metrics}, weights identical: {same_weights}, replays identical: {same_replays}"),
    )
}
