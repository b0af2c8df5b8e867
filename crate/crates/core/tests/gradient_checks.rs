//! Analytic loss gradients against central finite differences on a small
//! 2-4-2 policy and a 2-4-1 discriminator.

use imitate_core::learning::{awr_loss, awr_weight, disc_loss, ppo_loss, Activation, Mlp, ModelConfig, PolicyBatch, PolicyModel};
use imitate_core::SimRng;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;
const BATCH: usize = 16;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central differences of `f` with respect to each entry of `params`.
fn numeric(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let x = params[i];
            params[i] = x + H;
            let up = f(params);
            params[i] = x - H;
            let down = f(params);
            params[i] = x;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_matrix(rng: &mut SimRng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn model(rng: &mut SimRng, activation: Activation) -> PolicyModel {
    let cfg = ModelConfig {
        actor_hidden: vec![4],
        critic_hidden: vec![4],
        disc_hidden: vec![4],
        activation,
        init_log_std: -0.5,
        actor_out_scale: 1.0,
    };
    let mut m = PolicyModel::new(2, 2, &cfg, rng);
    m.log_std = vec![-0.3, 0.2];
    m
}

struct Data {
    x: DMatrix<f64>,
    actions: DMatrix<f64>,
    old_log_prob: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

fn data(rng: &mut SimRng, m: &PolicyModel) -> Data {
    let x = random_matrix(rng, 2, BATCH, 1.5);
    let mean = m.mean_actions(&x).unwrap();
    let actions = &mean + random_matrix(rng, 2, BATCH, 0.8);
    // Old log-probs offset so that some ratios sit well outside the clip range.
    let old_log_prob = m.log_prob(&mean, &actions).iter().map(|l| l + rng.random_range(-0.6..0.6)).collect();
    Data {
        x,
        actions,
        old_log_prob,
        advantages: (0..BATCH).map(|_| rng.random_range(-2.0..2.0)).collect(),
        returns: (0..BATCH).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

fn batch(d: &Data) -> PolicyBatch<'_> {
    PolicyBatch {
        x: &d.x,
        actions: &d.actions,
        old_log_prob: &d.old_log_prob,
        advantages: &d.advantages,
        returns: &d.returns,
    }
}

/// Checks actor (weights plus log-std) and critic gradients of `loss`.
fn check_policy_loss(
    m: &PolicyModel,
    loss: impl Fn(&PolicyModel) -> (f64, Vec<f64>, Vec<f64>),
) -> (f64, f64) {
    let (_, g_actor, g_critic) = loss(m);
    let mut actor = m.actor_group();
    let fd_actor = numeric(&mut actor, |p| {
        let mut mm = m.clone();
        mm.set_actor_group(p);
        loss(&mm).0
    });
    let mut critic = m.critic.params.clone();
    let fd_critic = numeric(&mut critic, |p| {
        let mut mm = m.clone();
        mm.critic.params = p.to_vec();
        loss(&mm).0
    });
    (rel_err(&g_actor, &fd_actor), rel_err(&g_critic, &fd_critic))
}

#[test]
fn ppo_gradients() {
    for (seed, act) in [(1, Activation::Tanh), (2, Activation::Relu)] {
        let mut rng = SimRng::seed_from_u64(seed);
        let m = model(&mut rng, act);
        let d = data(&mut rng, &m);
        let (ea, ec) = check_policy_loss(&m, |mm| {
            let (s, g) = ppo_loss(mm, &batch(&d), 0.2, 0.01).unwrap();
            (s.total(), g.actor, g.critic)
        });
        let (s, _) = ppo_loss(&m, &batch(&d), 0.2, 0.01).unwrap();
        assert!(s.clip_fraction > 0.0 && s.clip_fraction < 1.0, "both branches exercised");
        assert!(ea <= TOL && ec <= TOL, "{act:?}: actor {ea:e} critic {ec:e}");
    }
}

#[test]
fn awr_gradients() {
    let mut rng = SimRng::seed_from_u64(3);
    let m = model(&mut rng, Activation::Tanh);
    let d = data(&mut rng, &m);
    let w: Vec<f64> = d.advantages.iter().map(|a| awr_weight(*a, 0.5, 3.0)).collect();
    assert!(w.iter().any(|&x| x == 3.0), "weight cap exercised");
    let (ea, ec) = check_policy_loss(&m, |mm| {
        let (s, g) = awr_loss(mm, &batch(&d), &w, 0.01).unwrap();
        (s.total(), g.actor, g.critic)
    });
    assert!(ea <= TOL && ec <= TOL, "actor {ea:e} critic {ec:e}");
}

fn check_disc(disc: &Mlp, real: &DMatrix<f64>, fake: &DMatrix<f64>, gp: f64) -> f64 {
    let (_, g) = disc_loss(disc, real, fake, gp).unwrap();
    let mut p = disc.params.clone();
    let fd = numeric(&mut p, |q| {
        let mut d = disc.clone();
        d.params = q.to_vec();
        disc_loss(&d, real, fake, gp).unwrap().0.loss
    });
    rel_err(&g, &fd)
}

#[test]
fn motion_prior_discriminator_gradients() {
    for (seed, act) in [(4, Activation::Tanh), (5, Activation::Relu)] {
        let mut rng = SimRng::seed_from_u64(seed);
        let disc = Mlp::new(&[2, 4, 1], act, 1.0, &mut rng);
        let real = random_matrix(&mut rng, 2, BATCH, 1.0);
        let fake = random_matrix(&mut rng, 2, BATCH, 2.0);
        let e = check_disc(&disc, &real, &fake, 5.0);
        assert!(e <= TOL, "{act:?}: {e:e}");
    }
}

#[test]
fn difference_discriminator_gradients() {
    // Positives are the normalized zero difference, identical in every column.
    let mut rng = SimRng::seed_from_u64(6);
    let disc = Mlp::new(&[2, 4, 1], Activation::Tanh, 1.0, &mut rng);
    let zero = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
    let real = DMatrix::from_fn(2, BATCH, |i, _| zero[i]);
    let fake = random_matrix(&mut rng, 2, BATCH, 2.0);
    let e = check_disc(&disc, &real, &fake, 5.0);
    assert!(e <= TOL, "{e:e}");
}

#[test]
fn gradient_penalty_term_alone() {
    let mut rng = SimRng::seed_from_u64(7);
    let disc = Mlp::new(&[2, 4, 1], Activation::Tanh, 1.0, &mut rng);
    let real = random_matrix(&mut rng, 2, BATCH, 1.0);
    let fake = random_matrix(&mut rng, 2, BATCH, 1.0);
    let (_, g0) = disc_loss(&disc, &real, &fake, 0.0).unwrap();
    let (_, g1) = disc_loss(&disc, &real, &fake, 1.0).unwrap();
    let gp: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
    let mut p = disc.params.clone();
    let fd = numeric(&mut p, |q| {
        let mut d = disc.clone();
        d.params = q.to_vec();
        disc_loss(&d, &real, &fake, 1.0).unwrap().0.gradient_penalty
    });
    assert!(rel_err(&gp, &fd) <= TOL);
}
