//! Acceptance checks. Every criterion prints one line,
//! `[PASS] name: measurement (threshold)` or `[FAIL] ...`, and the process
//! exits non-zero if any fails. Name fragments given as arguments select a
//! subset, e.g. `cargo test --test acceptance -- gae metrics`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Result};
use imitate_cli::args::parse_args;
use imitate_cli::run::{run_test, run_train, worker_seed, Setup};
use imitate_core::envs::{reference_transitions, DoneFlag, TaskKind, VecEnv};
use imitate_core::eval::{e_pos, e_vel, pose_errors};
use imitate_core::kinematics::{
    body_positions, exp_map_to_quat, forward_kinematics, quat_to_exp_map, CharacterModel, ExpMap, JointKind, JointValue,
    Pose, PoseVelocity, Quat,
};
use imitate_core::learning::agent::merge_normalizer;
use imitate_core::learning::{
    allreduce_mean, awr_loss, awr_weight, compute_returns_advantages, disc_loss, ppo_loss, Activation, Agent, Checkpoint,
    LocalReducer, Mlp, ModelConfig, PolicyBatch, PolicyModel, Reducer, TerminalValues, ThreadReducer, Trainer,
};
use imitate_core::SimRng;
use nalgebra::{DMatrix, Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TRACK_ITERATIONS: u64 = 300;
const TRACK_BUDGET_S: f64 = 900.0;
const DEEPMIMIC_E_POS: f64 = 0.05;
const ADD_E_POS: f64 = 0.08;
const PENDULUM_ITERATIONS: usize = 200;
const PENDULUM_BUDGET_S: f64 = 300.0;
const PENDULUM_FRACTION: f64 = 0.9;
const DISC_UPDATES: usize = 500;
const DISC_BATCH: usize = 256;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn data(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel).display().to_string()
}

fn tokens(pairs: &[(&str, String)]) -> Vec<String> {
    pairs.iter().flat_map(|(k, v)| [format!("--{k}"), v.clone()]).collect()
}

fn random_quat(rng: &mut SimRng) -> Quat {
    let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    Quat::new(v[0], v[1], v[2], v[3]).normalize()
}

fn quat_gap(a: &Quat, b: &Quat) -> f64 {
    let d = |s: f64| ((a.w - s * b.w).powi(2) + (a.x - s * b.x).powi(2) + (a.y - s * b.y).powi(2) + (a.z - s * b.z).powi(2)).sqrt();
    d(1.0).min(d(-1.0))
}

// ---------------------------------------------------------------- returns

/// Advantage from the λ-weighted mixture of n-step returns.
fn lambda_return_oracle(
    r: &[f64],
    v: &[f64],
    d: &[DoneFlag],
    boot: &[Option<f64>],
    gamma: f64,
    lambda: f64,
    term: TerminalValues,
) -> Vec<f64> {
    let n = r.len();
    let after = |u: usize| match d[u] {
        DoneFlag::Fail => term.fail,
        DoneFlag::Succ => term.succ,
        DoneFlag::Time => boot[u].unwrap(),
        DoneFlag::Null if u + 1 == n => boot[u].unwrap(),
        DoneFlag::Null => v[u + 1],
    };
    (0..n)
        .map(|t| {
            let end = (t..n).find(|&u| d[u] != DoneFlag::Null || u + 1 == n).unwrap();
            let len = end - t + 1;
            let g = |k: usize| (0..k).map(|i| gamma.powi(i as i32) * r[t + i]).sum::<f64>() + gamma.powi(k as i32) * after(t + k - 1);
            let mut ret: f64 = (1..len).map(|k| (1.0 - lambda) * lambda.powi(k as i32 - 1) * g(k)).sum();
            ret += lambda.powi(len as i32 - 1) * g(len);
            ret - v[t]
        })
        .collect()
}

fn gae_oracle() -> Result<Verdict> {
    let start = Instant::now();
    let flags = [DoneFlag::Null, DoneFlag::Fail, DoneFlag::Succ, DoneFlag::Time];
    let mut rng = SimRng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut seen = [false; 4];
    for _ in 0..200 {
        let n = rng.random_range(8..64);
        let mut d: Vec<DoneFlag> = (0..n).map(|_| if rng.random_bool(0.7) { DoneFlag::Null } else { flags[rng.random_range(1..4)] }).collect();
        let k = rng.random_range(0..n - 4);
        d[k..k + 4].copy_from_slice(&flags);
        let boot: Vec<Option<f64>> = (0..n)
            .map(|t| (d[t] == DoneFlag::Time || (d[t] == DoneFlag::Null && t + 1 == n)).then(|| rng.random_range(-2.0..2.0)))
            .collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (gamma, lambda) = (rng.random_range(0.8..0.999), rng.random_range(0.0..1.0));
        let term = TerminalValues { fail: rng.random_range(-1.0..0.0), succ: rng.random_range(0.0..1.0) };
        d.iter().for_each(|f| seen[*f as usize] = true);
        let (_, adv) = compute_returns_advantages(&r, &v, &d, &boot, gamma, lambda, term)?;
        let want = lambda_return_oracle(&r, &v, &d, &boot, gamma, lambda, term);
        worst = adv.iter().zip(&want).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-6 && secs < 5.0 && seen.iter().all(|&s| s),
        format!("200 sequences, flags {seen:?}, max abs err {worst:.2e} (<= 1e-6), {secs:.3} s (< 5 s)"),
    )
}

// -------------------------------------------------------------- gradients

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let nd: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    nd / n(a).max(n(b)).max(1e-12)
}

fn central_differences(p: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    const H: f64 = 1e-6;
    (0..p.len())
        .map(|i| {
            let x = p[i];
            p[i] = x + H;
            let up = f(p);
            p[i] = x - H;
            let down = f(p);
            p[i] = x;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn gradient_checks() -> Result<Verdict> {
    let start = Instant::now();
    let mut rng = SimRng::seed_from_u64(2);
    let cfg = ModelConfig { actor_hidden: vec![4], critic_hidden: vec![4], activation: Activation::Tanh, actor_out_scale: 1.0, ..Default::default() };
    let mut m = PolicyModel::new(2, 2, &cfg, &mut rng);
    m.log_std = vec![-0.3, 0.2];
    let nb = 16;
    let x = DMatrix::from_fn(2, nb, |_, _| rng.random_range(-1.5..1.5));
    let mean = m.mean_actions(&x)?;
    let acts = DMatrix::from_fn(2, nb, |i, j| mean[(i, j)] + rng.random_range(-0.8..0.8));
    let old: Vec<f64> = m.log_prob(&mean, &acts).iter().map(|l| l + rng.random_range(-0.6..0.6)).collect();
    let adv: Vec<f64> = (0..nb).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ret: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = PolicyBatch { x: &x, actions: &acts, old_log_prob: &old, advantages: &adv, returns: &ret };
    let weights: Vec<f64> = adv.iter().map(|a| awr_weight(*a, 0.5, 3.0)).collect();

    let policy_err = |loss: &dyn Fn(&PolicyModel) -> (f64, Vec<f64>)| -> f64 {
        let (_, g) = loss(&m);
        let mut p = m.actor_group();
        p.extend(&m.critic.params);
        let na = m.actor_group_len();
        let fd = central_differences(&mut p, |q| {
            let mut mm = m.clone();
            mm.set_actor_group(&q[..na]);
            mm.critic.params = q[na..].to_vec();
            loss(&mm).0
        });
        rel_err(&g, &fd)
    };
    let ppo = policy_err(&|mm| {
        let (s, g) = ppo_loss(mm, &batch, 0.2, 0.01).unwrap();
        (s.total(), [g.actor, g.critic].concat())
    });
    let awr = policy_err(&|mm| {
        let (s, g) = awr_loss(mm, &batch, &weights, 0.01).unwrap();
        (s.total(), [g.actor, g.critic].concat())
    });

    let disc = Mlp::new(&[2, 4, 1], Activation::Tanh, 1.0, &mut rng);
    let disc_err = |real: &DMatrix<f64>, fake: &DMatrix<f64>| -> f64 {
        let (_, g) = disc_loss(&disc, real, fake, 5.0).unwrap();
        let mut p = disc.params.clone();
        let fd = central_differences(&mut p, |q| {
            let mut d = disc.clone();
            d.params = q.to_vec();
            disc_loss(&d, real, fake, 5.0).unwrap().0.loss
        });
        rel_err(&g, &fd)
    };
    let real = DMatrix::from_fn(2, nb, |_, _| rng.random_range(-1.0..1.0));
    let fake = DMatrix::from_fn(2, nb, |_, _| rng.random_range(-2.0..2.0));
    let amp = disc_err(&real, &fake);
    let zero = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    let add = disc_err(&DMatrix::from_fn(2, nb, |i, _| zero[i]), &fake);

    let secs = start.elapsed().as_secs_f64();
    let worst = ppo.max(awr).max(amp).max(add);
    verdict(
        worst <= 1e-4 && secs < 30.0,
        format!("rel err ppo {ppo:.1e}, awr {awr:.1e}, amp-disc {amp:.1e}, add-disc {add:.1e} (<= 1e-4), {secs:.3} s (< 30 s)"),
    )
}

// ------------------------------------------------------------- kinematics

fn rotation_round_trips() -> Result<Verdict> {
    let mut rng = SimRng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let q = random_quat(&mut rng);
        worst = worst.max(quat_gap(&q, &exp_map_to_quat(&quat_to_exp_map(&q)?)?));
        worst = worst.max(quat_gap(&q, &Quat::from_matrix(&q.to_matrix())));
        let dir: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
        let angle = if i % 10 == 0 { rng.random_range(0.0..1e-6) } else { rng.random_range(0.0..3.1) };
        let e = ExpMap(dir.normalize() * angle);
        worst = worst.max((quat_to_exp_map(&exp_map_to_quat(&e)?)?.0 - e.0).norm());
    }
    verdict(worst <= 1e-9, format!("10^4 quat/exp-map/matrix round trips, max err {worst:.2e} (<= 1e-9)"))
}

fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

fn na_matrix(q: &Quat) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q.w, q.x, q.y, q.z)).to_rotation_matrix().into_inner()
}

fn homogeneous(rot: Matrix3<f64>, pos: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos);
    m
}

fn random_pose(ch: &CharacterModel, rng: &mut SimRng) -> Pose {
    let mut p = Pose::zero(ch);
    p.root_pos = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
    p.root_rot = random_quat(rng);
    for (j, spec) in ch.joints.iter().enumerate() {
        p.joints[j] = match spec.kind {
            JointKind::Spherical => JointValue::Ball(random_quat(rng)),
            JointKind::Revolute => JointValue::Hinge(rng.random_range(-3.0..3.0)),
            JointKind::Fixed => JointValue::Fixed,
        };
    }
    p
}

fn fk_matrix_chain() -> Result<Verdict> {
    let mut rng = SimRng::seed_from_u64(4);
    let ch = CharacterModel::humanoid();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_pose(&ch, &mut rng);
        let mut frames = vec![homogeneous(na_matrix(&p.root_rot), p.root_pos)];
        for (j, spec) in ch.joints.iter().enumerate() {
            let local = match p.joints[j] {
                JointValue::Ball(q) => na_matrix(&q),
                JointValue::Hinge(a) => rodrigues(&spec.axis, a),
                JointValue::Fixed => Matrix3::identity(),
            };
            let parent = frames[spec.parent.map_or(0, |k| k + 1)];
            frames.push(parent * homogeneous(local, spec.offset));
        }
        for (t, m) in forward_kinematics(&ch, &p)?.iter().zip(&frames) {
            worst = worst.max((t.pos - m.fixed_view::<3, 1>(0, 3)).norm());
            worst = worst.max((t.rot.to_matrix() - m.fixed_view::<3, 3>(0, 0)).abs().max());
        }
    }
    verdict(worst <= 1e-9, format!("humanoid, 1000 poses, max err {worst:.2e} (<= 1e-9)"))
}

// ---------------------------------------------------------------- metrics

fn random_state(ch: &CharacterModel, rng: &mut SimRng) -> (Pose, PoseVelocity) {
    let p = random_pose(ch, rng);
    let mut v = PoseVelocity::zeros(ch.dof_count());
    v.dof.iter_mut().for_each(|x| *x = rng.random_range(-5.0..5.0));
    (p, v)
}

fn metrics_direct() -> Result<Verdict> {
    let mut rng = SimRng::seed_from_u64(5);
    let ch = CharacterModel::humanoid();
    let dofs: Vec<usize> = ch.joints.iter().map(|j| j.kind.dof()).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (ps, vs) = random_state(&ch, &mut rng);
        let (pr, vr) = random_state(&ch, &mut rng);
        let (xs, xr) = (body_positions(&ch, &ps), body_positions(&ch, &pr));
        let n1 = xs.len() as f64;
        let mut want_pos = 0.0;
        for j in 1..xs.len() {
            let mut sq = 0.0;
            for c in 0..3 {
                sq += ((xr[j][c] - xr[0][c]) - (xs[j][c] - xs[0][c])).powi(2);
            }
            want_pos += sq.sqrt();
        }
        want_pos = (want_pos + (0..3).map(|c| (xr[0][c] - xs[0][c]).powi(2)).sum::<f64>().sqrt()) / n1;
        let mut want_vel = 0.0;
        let mut k = 0;
        for &d in &dofs {
            want_vel += (k..k + d).map(|i| (vr.dof[i] - vs.dof[i]).powi(2)).sum::<f64>().sqrt();
            k += d;
        }
        want_vel /= dofs.len() as f64 + 1.0;
        let (ep, ev) = pose_errors(&ch, (&ps, &vs), (&pr, &vr));
        worst = worst.max((ep - want_pos).abs()).max((ev - want_vel).abs());
        worst = worst.max((e_pos(&xs, &xr)? - want_pos).abs()).max((e_vel(&vs.dof, &vr.dof, &dofs)? - want_vel).abs());
    }
    verdict(worst <= 1e-12, format!("1000 humanoid state pairs, max err {worst:.2e} (<= 1e-12)"))
}

fn metrics_identical() -> Result<Verdict> {
    let mut rng = SimRng::seed_from_u64(6);
    let ch = CharacterModel::humanoid();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (p, v) = random_state(&ch, &mut rng);
        let (ep, ev) = pose_errors(&ch, (&p, &v), (&p, &v));
        worst = worst.max(ep).max(ev);
    }
    verdict(worst == 0.0, format!("max e_pos/e_vel over 1000 identical pairs {worst:e} (== 0)"))
}

fn metrics_rigid_shift() -> Result<Verdict> {
    let mut rng = SimRng::seed_from_u64(7);
    let mut ok = true;
    let mut got = Vec::new();
    for n in [1usize, 3, 12] {
        let reference: Vec<Vector3<f64>> =
            (0..=n).map(|_| Vector3::from_fn(|_, _| rng.random_range(-64i32..64) as f64 / 16.0)).collect();
        let shifted: Vec<Vector3<f64>> = reference.iter().map(|p| p + Vector3::new(0.0, 0.0, 1.0)).collect();
        let e = e_pos(&shifted, &reference)?;
        ok &= e == 1.0 / (n as f64 + 1.0);
        got.push(format!("N={n}: {e}"));
    }
    verdict(ok, format!("1 m shift, {} (== 1/(N+1))", got.join(", ")))
}

// ------------------------------------------------------- tracking runs

struct TrackRun {
    e_pos: f64,
    train_secs: f64,
}

fn track_run(dir: &Path, env: &str, agent: &str, seed: u64) -> Result<TrackRun> {
    let run_dir = dir.join(format!("seed{seed}"));
    let model = run_dir.join("model.json").display().to_string();
    let base = [
        ("env_config", data(env)),
        ("num_envs", "64".to_string()),
        ("seed", seed.to_string()),
    ];
    let mut train = base.to_vec();
    train.extend([
        ("agent_config", data(agent)),
        ("max_iterations", TRACK_ITERATIONS.to_string()),
        ("log_file", run_dir.join("log.txt").display().to_string()),
        ("out_model_file", model.clone()),
    ]);
    let start = Instant::now();
    run_train(&parse_args(&tokens(&train))?)?;
    let train_secs = start.elapsed().as_secs_f64();
    let mut test = base.to_vec();
    test.extend([
        ("mode", "test".to_string()),
        ("model_file", model),
        ("seed", (1000 + seed).to_string()),
        ("log_file", run_dir.join("test.txt").display().to_string()),
    ]);
    let report = run_test(&parse_args(&tokens(&test))?)?;
    Ok(TrackRun { e_pos: report.e_pos_mean, train_secs })
}

fn zero_action_e_pos(dir: &Path, env: &str) -> Result<f64> {
    let args = parse_args(&tokens(&[("env_config", data(env)), ("agent_config", data("agents/ppo_small.yaml"))]))?;
    let setup = Setup::load(&args)?;
    let probe = setup.make_env(1, 0)?;
    let mut agent = setup.make_agent(setup.agent_cfg.clone(), &probe, 0, 0)?;
    agent.model.actor.params.iter_mut().for_each(|p| *p = 0.0);
    let path = dir.join("zero.json");
    Checkpoint::from_agent(&agent, vec![]).save(&path)?;
    let test = tokens(&[
        ("mode", "test".to_string()),
        ("env_config", data(env)),
        ("model_file", path.display().to_string()),
        ("num_envs", "64".to_string()),
        ("seed", "1000".to_string()),
        ("log_file", dir.join("zero.txt").display().to_string()),
    ]);
    Ok(run_test(&parse_args(&test)?)?.e_pos_mean)
}

fn tracking_criterion(env: &str, agent: &str, threshold: f64) -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let baseline = zero_action_e_pos(dir.path(), env)?;
    let mut good = 0;
    let mut cells = Vec::new();
    for seed in SEEDS {
        let r = track_run(dir.path(), env, agent, seed)?;
        let ok = r.e_pos <= threshold && r.train_secs <= TRACK_BUDGET_S;
        good += ok as usize;
        cells.push(format!("{:.4} m/{:.0} s", r.e_pos, r.train_secs));
    }
    verdict(
        good >= 4,
        format!(
            "{good}/5 seeds at e_pos <= {threshold} m within {TRACK_ITERATIONS} iterations and {TRACK_BUDGET_S} s (need 4); per seed [{}]; zero-action e_pos {baseline:.4} m",
            cells.join(", ")
        ),
    )
}

fn e2e_deepmimic() -> Result<Verdict> {
    tracking_criterion("envs/chain3_deepmimic.yaml", "agents/ppo_small.yaml", DEEPMIMIC_E_POS)
}

fn e2e_add() -> Result<Verdict> {
    tracking_criterion("envs/chain3_add.yaml", "agents/add_small.yaml", ADD_E_POS)
}

// -------------------------------------------------------------- pendulum

/// Mean undiscounted return over the first `episodes` finished episodes.
fn mean_return(env: &mut VecEnv, episodes: usize, mut act: impl FnMut(&VecEnv, &[Vec<f64>]) -> Result<Vec<Vec<f64>>>) -> Result<f64> {
    let mut obs = env.reset_all()?;
    let mut acc = vec![0.0; env.num_envs()];
    let mut done = Vec::new();
    while done.len() < episodes {
        let a = act(env, &obs)?;
        for (i, r) in env.step(&a)?.into_iter().enumerate() {
            acc[i] += r.reward;
            if r.done.is_done() {
                done.push(acc[i]);
                acc[i] = 0.0;
            }
            obs[i] = r.reset_obs.unwrap_or(r.obs);
        }
    }
    Ok(done[..episodes].iter().sum::<f64>() / episodes as f64)
}

fn e2e_pendulum() -> Result<Verdict> {
    const EVAL_SEED: u64 = 99;
    const EVAL_EPISODES: usize = 16;
    let args = parse_args(&tokens(&[
        ("env_config", data("envs/pendulum_swing_up.yaml")),
        ("agent_config", data("agents/ppo_pendulum.yaml")),
    ]))?;
    let setup = Setup::load(&args)?;
    let limit = setup.env_cfg.action_scale;
    let mut pd_best = (f64::MIN, 0.0, 0.0);
    for kp in [5.0, 10.0, 20.0, 40.0, 80.0] {
        for kd in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let mut env = setup.make_env(EVAL_EPISODES, EVAL_SEED)?;
            let ret = mean_return(&mut env, EVAL_EPISODES, |e, _| {
                Ok(e.slots()
                    .iter()
                    .map(|s| {
                        let (q, qd) = (s.state.pose.dof_values()[0], s.state.vel.dof[0]);
                        vec![(kp * (std::f64::consts::PI - q) - kd * qd) / limit]
                    })
                    .collect())
            })?;
            if ret > pd_best.0 {
                pd_best = (ret, kp, kd);
            }
        }
    }
    let start = Instant::now();
    let env = setup.make_env(64, 0)?;
    let agent = setup.make_agent(setup.agent_cfg.clone(), &env, 0, 0)?;
    let mut tr = Trainer::new(agent, env, Arc::new(LocalReducer))?;
    let mut best = (f64::MIN, 0);
    for it in 1..=PENDULUM_ITERATIONS {
        tr.iterate()?;
        if it % 10 == 0 {
            let mut env = setup.make_env(EVAL_EPISODES, EVAL_SEED)?;
            let ret = mean_return(&mut env, EVAL_EPISODES, |_, o| Ok(tr.agent.act_mean(o)?))?;
            if ret > best.0 {
                best = (ret, it);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let target = PENDULUM_FRACTION * pd_best.0;
    verdict(
        best.0 >= target && secs <= PENDULUM_BUDGET_S,
        format!(
            "best PPO return {:.2} at iteration {} vs PD {:.2} (kp {}, kd {}), need >= {target:.2}; {secs:.1} s (<= {PENDULUM_BUDGET_S} s)",
            best.0, best.1, pd_best.0, pd_best.1, pd_best.2
        ),
    )
}

// -------------------------------------------------------- discriminators

fn disc_setup(env: &str, agent: &str) -> Result<(Setup, VecEnv, Agent)> {
    let args = parse_args(&tokens(&[("env_config", data(env)), ("agent_config", data(agent))]))?;
    let setup = Setup::load(&args)?;
    let env = setup.make_env(64, 0)?;
    let agent = setup.make_agent(setup.agent_cfg.clone(), &env, 0, 0)?;
    Ok((setup, env, agent))
}

fn random_action_info(env: &mut VecEnv, steps: usize, key: &str, rng: &mut SimRng) -> Result<Vec<Vec<f64>>> {
    let noise = Normal::new(0.0, 0.5)?;
    let mut out = Vec::new();
    env.reset_all()?;
    for _ in 0..steps {
        let a: Vec<Vec<f64>> = (0..env.num_envs()).map(|_| (0..env.action_dim()).map(|_| noise.sample(rng)).collect()).collect();
        for r in env.step(&a)? {
            out.push(r.info.get(key).ok_or_else(|| anyhow!("missing {key}"))?.clone());
        }
    }
    Ok(out)
}

fn train_disc(agent: &mut Agent, real: &[Vec<f64>], fake: &[Vec<f64>], rng: &mut SimRng) -> Result<()> {
    for _ in 0..DISC_UPDATES {
        let r: Vec<&[f64]> = (0..DISC_BATCH).map(|_| real[rng.random_range(0..real.len())].as_slice()).collect();
        let f: Vec<&[f64]> = (0..DISC_BATCH).map(|_| fake[rng.random_range(0..fake.len())].as_slice()).collect();
        agent.disc_step(&r, &f, &LocalReducer)?;
    }
    Ok(())
}

fn as_rows(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|x| x.as_slice()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn amp_discriminator() -> Result<Verdict> {
    let (setup, mut env, mut agent) = disc_setup("envs/chain3_amp.yaml", "agents/amp_small.yaml")?;
    let mut rng = SimRng::seed_from_u64(8);
    let fake = random_action_info(&mut env, 32, "disc_obs", &mut rng)?;
    let lib = env.motions().ok_or_else(|| anyhow!("no motion"))?.clone();
    let real = reference_transitions(&lib, env.character(), env.dt(), fake.len(), &mut rng)?;
    let rows: Vec<&[f64]> = fake.iter().chain(&real).map(|v| v.as_slice()).collect();
    merge_normalizer(agent.disc_norm.as_mut().ok_or_else(|| anyhow!("no discriminator"))?, &rows, &LocalReducer)?;
    train_disc(&mut agent, &real, &fake, &mut rng)?;
    let gap = mean(&agent.disc_scores(&as_rows(&real))?) - mean(&agent.disc_scores(&as_rows(&fake))?);

    // Replay the reference through a playback env, one clip period.
    let mut cfg = setup.env_cfg.clone();
    cfg.task = TaskKind::ViewMotion;
    cfg.rsi = Some(false);
    let mut replay = VecEnv::from_config(cfg, &setup.env_dir, 1, 0)?;
    replay.reset_all()?;
    let steps = (lib.clip(0).duration() / replay.dt()).round() as usize;
    let mut pairs = Vec::new();
    for _ in 0..steps {
        let r = replay.step(&[vec![0.0; replay.action_dim()]])?;
        pairs.push(r[0].info["disc_obs"].clone());
    }
    let style = mean(&agent.disc_rewards(&as_rows(&pairs))?);
    verdict(
        gap > 1.0 && style >= 0.8,
        format!("after {DISC_UPDATES} updates mean D(real) - mean D(fake) {gap:.3} (> 1.0), replayed reference style reward {style:.3} (>= 0.8)"),
    )
}

fn add_discriminator() -> Result<Verdict> {
    let (_, mut env, mut agent) = disc_setup("envs/chain3_add.yaml", "agents/add_small.yaml")?;
    let mut rng = SimRng::seed_from_u64(9);
    let mut fake = random_action_info(&mut env, 64, "add_delta", &mut rng)?;
    let held = fake.split_off(fake.len() / 2);
    let rows: Vec<&[f64]> = fake.iter().map(|v| v.as_slice()).collect();
    merge_normalizer(agent.disc_norm.as_mut().ok_or_else(|| anyhow!("no discriminator"))?, &rows, &LocalReducer)?;
    let zero = vec![vec![0.0; fake[0].len()]];
    train_disc(&mut agent, &zero, &fake, &mut rng)?;
    let r0 = agent.disc_rewards(&[zero[0].as_slice()])?[0];
    let sampled: Vec<&[f64]> = fake.iter().chain(&held).filter(|v| v.iter().any(|x| *x != 0.0)).map(|v| v.as_slice()).collect();
    let best = agent.disc_rewards(&sampled)?.into_iter().fold(f64::MIN, f64::max);
    verdict(
        r0 > best,
        format!("after {DISC_UPDATES} updates reward(0) {r0:.4} > max over {} sampled nonzero deltas {best:.4}", sampled.len()),
    )
}

// -------------------------------------------- determinism and workers

fn small_train(dir: &Path, tag: &str, iterations: u64, extra: &[(&str, String)]) -> Vec<String> {
    let mut t = vec![
        ("env_config", data("envs/chain3_deepmimic.yaml")),
        ("agent_config", data("agents/ppo_small.yaml")),
        ("num_envs", "8".to_string()),
        ("seed", "11".to_string()),
        ("max_iterations", iterations.to_string()),
        ("log_file", dir.join(tag).join("log.txt").display().to_string()),
        ("out_model_file", dir.join(tag).join("model.json").display().to_string()),
    ];
    t.extend(extra.iter().cloned());
    tokens(&t)
}

/// Log text with the wall-time field removed from every row.
fn strip_wall_time(path: &Path, csv: bool) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(|l| {
            if csv {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(2);
                f.join(",")
            } else {
                format!("{}{}", &l[..40], &l[60..])
            }
        })
        .collect())
}

fn log_determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    for tag in ["a", "b"] {
        run_train(&parse_args(&small_train(dir.path(), tag, 10, &[]))?)?;
    }
    let mut same = true;
    for (file, csv) in [("log.txt", false), ("log.csv", true)] {
        same &= strip_wall_time(&dir.path().join("a").join(file), csv)? == strip_wall_time(&dir.path().join("b").join(file), csv)?;
    }
    let rows = std::fs::read_to_string(dir.path().join("a/log.csv"))?.lines().count() - 1;
    verdict(same && rows == 10, format!("two seeded 10-iteration runs, {rows} rows each, identical apart from wall_time: {same}"))
}

fn union_batch_gradient() -> Result<Verdict> {
    let mut rng = SimRng::seed_from_u64(10);
    let cfg = ModelConfig { actor_hidden: vec![8], critic_hidden: vec![8], ..Default::default() };
    let m = PolicyModel::new(3, 2, &cfg, &mut rng);
    let n = 64;
    let x = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
    let mu = m.mean_actions(&x)?;
    let acts = DMatrix::from_fn(2, n, |i, j| mu[(i, j)] + rng.random_range(-0.3..0.3));
    let old: Vec<f64> = m.log_prob(&mu, &acts).iter().map(|l| l + rng.random_range(-0.3..0.3)).collect();
    let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ret: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grad = |lo: usize, hi: usize| -> Vec<f64> {
        let (xs, a) = (x.columns(lo, hi - lo).into_owned(), acts.columns(lo, hi - lo).into_owned());
        let b = PolicyBatch { x: &xs, actions: &a, old_log_prob: &old[lo..hi], advantages: &adv[lo..hi], returns: &ret[lo..hi] };
        let (_, g) = ppo_loss(&m, &b, 0.2, 0.0).unwrap();
        [g.actor, g.critic].concat()
    };
    let union = grad(0, n);
    let parts: Vec<Vec<f64>> = std::thread::scope(|s| {
        let hs: Vec<_> = ThreadReducer::group(2)
            .into_iter()
            .map(|red| {
                let grad = &grad;
                s.spawn(move || {
                    let r = red.rank();
                    let mut g = grad(r * n / 2, (r + 1) * n / 2);
                    allreduce_mean(&red, &mut g).unwrap();
                    g
                })
            })
            .collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let worst = parts.iter().flat_map(|p| p.iter().zip(&union).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
    verdict(worst <= 1e-6, format!("2-worker average vs union batch, max abs diff {worst:.2e} (<= 1e-6)"))
}

fn replicas_identical() -> Result<Verdict> {
    let mut detail = Vec::new();
    let mut ok = true;
    for (env, agent) in [("envs/chain3_deepmimic.yaml", "agents/ppo_small.yaml"), ("envs/chain3_add.yaml", "agents/add_small.yaml")] {
        let args = parse_args(&tokens(&[("env_config", data(env)), ("agent_config", data(agent))]))?;
        let setup = Setup::load(&args)?;
        let fps: Vec<Vec<u64>> = std::thread::scope(|s| {
            let hs: Vec<_> = ThreadReducer::group(2)
                .into_iter()
                .map(|red| {
                    let setup = &setup;
                    s.spawn(move || -> Result<Vec<u64>> {
                        let rank = red.rank();
                        let env = setup.make_env(8, worker_seed(21, rank))?;
                        let agent = setup.make_agent(setup.agent_cfg.clone(), &env, 21, rank)?;
                        let mut tr = Trainer::new(agent, env, Arc::new(red))?;
                        for _ in 0..10 {
                            tr.iterate()?;
                        }
                        let a = &tr.agent;
                        let mut v = [a.model.actor.params.as_slice(), &a.model.log_std, &a.model.critic.params, &a.obs_norm.mean, &a.obs_norm.var]
                            .concat();
                        if let Some(d) = &a.disc {
                            v.extend(&d.params);
                        }
                        Ok(v.iter().map(|x| x.to_bits()).collect())
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().expect("worker")).collect::<Result<Vec<_>>>()
        })?;
        let same = fps[0] == fps[1];
        ok &= same;
        detail.push(format!("{}: {} params identical {same}", setup.agent_cfg.agent.as_str(), fps[0].len()));
    }
    verdict(ok, format!("2 workers after 10 updates; {}", detail.join("; ")))
}

// --------------------------------------------------------------------- cli

fn cli_arg_override() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let file = dir.path().join("args.txt");
    std::fs::write(&file, "--num_envs 4096\n")?;
    let f = file.display().to_string();
    let from_file = parse_args(&["--arg_file", f.as_str()])?.num_envs;
    let overridden = parse_args(&["--arg_file", f.as_str(), "--num_envs", "8"])?.num_envs;
    verdict(from_file == 4096 && overridden == 8, format!("file alone {from_file}, file plus --num_envs 8 gives {overridden}"))
}

fn cli_resume() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    run_train(&parse_args(&small_train(dir.path(), "full", 8, &[]))?)?;
    run_train(&parse_args(&small_train(dir.path(), "split", 4, &[]))?)?;
    let ck = dir.path().join("split/model.json").display().to_string();
    run_train(&parse_args(&small_train(dir.path(), "split", 8, &[("model_file", ck)]))?)?;
    let json = |p: PathBuf| -> Result<serde_json::Value> { Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?) };
    let same_model = json(dir.path().join("full/model.json"))? == json(dir.path().join("split/model.json"))?;
    let same_log = strip_wall_time(&dir.path().join("full/log.csv"), true)? == strip_wall_time(&dir.path().join("split/log.csv"), true)?;
    verdict(
        same_model && same_log,
        format!("8 iterations vs 4 + resumed 4: checkpoints equal {same_model}, logs equal apart from wall_time {same_log}"),
    )
}

fn cli_playback() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let e = zero_action_e_pos(dir.path(), "envs/chain3_playback.yaml")?;
    verdict(e <= 1e-6, format!("run_test on zero-residual playback policy, e_pos {e:.2e} m (<= 1e-6)"))
}

type Check = fn() -> Result<Verdict>;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 18] = [
        ("gae_oracle", gae_oracle),
        ("gradient_checks", gradient_checks),
        ("rotation_round_trips", rotation_round_trips),
        ("fk_matrix_chain", fk_matrix_chain),
        ("metrics_direct_evaluation", metrics_direct),
        ("metrics_identical_zero", metrics_identical),
        ("metrics_rigid_shift", metrics_rigid_shift),
        ("amp_discriminator", amp_discriminator),
        ("add_discriminator", add_discriminator),
        ("determinism_log", log_determinism),
        ("distributed_union_gradient", union_batch_gradient),
        ("distributed_replicas", replicas_identical),
        ("cli_arg_file_override", cli_arg_override),
        ("cli_resume", cli_resume),
        ("cli_playback_test", cli_playback),
        ("e2e_ppo_pendulum", e2e_pendulum),
        ("e2e_deepmimic", e2e_deepmimic),
        ("e2e_add", e2e_add),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in &checks {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = check().unwrap_or_else(|e| Verdict { pass: false, detail: format!("error: {e:#}") });
        failed += !v.pass as usize;
        println!("[{}] {name}: {} [{:.1} s]", if v.pass { "PASS" } else { "FAIL" }, v.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
