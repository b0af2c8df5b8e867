//! Advantages checked against a brute-force λ-return built from n-step
//! returns, over random segments that mix every done flag.

use imitate_core::envs::DoneFlag;
use imitate_core::learning::{compute_returns_advantages, TerminalValues};
use imitate_core::SimRng;
use rand::{Rng, SeedableRng};

struct Segment {
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<DoneFlag>,
    bootstrap: Vec<Option<f64>>,
}

fn random_segment(rng: &mut SimRng, len: usize) -> Segment {
    let flags = [DoneFlag::Null, DoneFlag::Fail, DoneFlag::Succ, DoneFlag::Time];
    let mut dones: Vec<DoneFlag> = (0..len)
        .map(|_| if rng.random_bool(0.7) { DoneFlag::Null } else { flags[rng.random_range(1..4)] })
        .collect();
    // Guarantee every flag shows up somewhere in the first four steps.
    let k = rng.random_range(0..len - 4);
    dones[k..k + 4].copy_from_slice(&flags);
    let bootstrap = dones
        .iter()
        .enumerate()
        .map(|(t, d)| {
            let needed = *d == DoneFlag::Time || (*d == DoneFlag::Null && t + 1 == len);
            needed.then(|| rng.random_range(-2.0..2.0))
        })
        .collect();
    Segment {
        rewards: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        values: (0..len).map(|_| rng.random_range(-3.0..3.0)).collect(),
        dones,
        bootstrap,
    }
}

/// `A_t = R^λ_t − V_t` with `R^λ_t = (1−λ) Σ_{n<L} λ^{n−1} G^(n) + λ^{L−1} G^(L)`,
/// where `L` counts the steps left in the episode and `G^(n)` is the n-step
/// return bootstrapped from the value after step `t+n−1`.
fn lambda_return_advantages(s: &Segment, gamma: f64, lambda: f64, term: TerminalValues) -> Vec<f64> {
    let n = s.rewards.len();
    let value_after = |u: usize| -> f64 {
        match s.dones[u] {
            DoneFlag::Fail => term.fail,
            DoneFlag::Succ => term.succ,
            DoneFlag::Time => s.bootstrap[u].unwrap(),
            DoneFlag::Null if u + 1 == n => s.bootstrap[u].unwrap(),
            DoneFlag::Null => s.values[u + 1],
        }
    };
    (0..n)
        .map(|t| {
            let end = (t..n).find(|&u| s.dones[u] != DoneFlag::Null || u + 1 == n).unwrap();
            let len = end - t + 1;
            let g = |steps: usize| -> f64 {
                let mut acc = 0.0;
                for i in 0..steps {
                    acc += gamma.powi(i as i32) * s.rewards[t + i];
                }
                acc + gamma.powi(steps as i32) * value_after(t + steps - 1)
            };
            let mut r = 0.0;
            for k in 1..len {
                r += (1.0 - lambda) * lambda.powi(k as i32 - 1) * g(k);
            }
            r += lambda.powi(len as i32 - 1) * g(len);
            r - s.values[t]
        })
        .collect()
}

#[test]
fn advantages_match_lambda_return_oracle() {
    let mut rng = SimRng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut seen = [false; 4];
    for _ in 0..200 {
        let len = rng.random_range(8..64);
        let s = random_segment(&mut rng, len);
        for d in &s.dones {
            seen[*d as usize] = true;
        }
        let gamma = rng.random_range(0.8..0.999);
        let lambda = rng.random_range(0.0..1.0);
        let term = TerminalValues {
            fail: rng.random_range(-1.0..0.0),
            succ: rng.random_range(0.0..1.0),
        };
        let (ret, adv) = compute_returns_advantages(&s.rewards, &s.values, &s.dones, &s.bootstrap, gamma, lambda, term).unwrap();
        let oracle = lambda_return_advantages(&s, gamma, lambda, term);
        for t in 0..len {
            worst = worst.max((adv[t] - oracle[t]).abs());
            assert!((ret[t] - (oracle[t] + s.values[t])).abs() <= 1e-6);
        }
    }
    assert!(seen.iter().all(|&x| x), "flags covered: {seen:?}");
    assert!(worst <= 1e-6, "max abs error {worst:e}");
}

#[test]
fn missing_bootstrap_is_reported() {
    let err = compute_returns_advantages(
        &[1.0, 1.0],
        &[0.0, 0.0],
        &[DoneFlag::Time, DoneFlag::Fail],
        &[None, None],
        0.99,
        0.95,
        TerminalValues::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("step 0"), "{err}");
}

#[test]
fn lambda_one_is_discounted_return() {
    let s = Segment {
        rewards: vec![1.0, 2.0, 3.0],
        values: vec![0.5, -0.5, 0.25],
        dones: vec![DoneFlag::Null, DoneFlag::Null, DoneFlag::Fail],
        bootstrap: vec![None, None, None],
    };
    let (ret, _) = compute_returns_advantages(&s.rewards, &s.values, &s.dones, &s.bootstrap, 0.5, 1.0, TerminalValues::default()).unwrap();
    assert!((ret[0] - (1.0 + 0.5 * 2.0 + 0.25 * 3.0)).abs() < 1e-12);
    assert!((ret[2] - 3.0).abs() < 1e-12);
}
