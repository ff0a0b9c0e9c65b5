//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the library's GP code: the kernel, the posterior
//! and the log density are recomputed from scratch with explicit inverses.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matérn-5/2 written out term by term.
pub fn oracle_matern(x1: &[f64], x2: &[f64], sf2: f64, ls: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for k in 0..x1.len() {
        let d = (x1[k] - x2[k]) / ls[k];
        r2 += d * d;
    }
    let r = r2.sqrt();
    let a = 5.0f64.sqrt() * r;
    sf2 * (1.0 + a + 5.0 * r2 / 3.0) * (-a).exp()
}

pub fn oracle_gram(xs: &[Vec<f64>], sf2: f64, ls: &[f64]) -> DMatrix<f64> {
    let n = xs.len();
    DMatrix::from_fn(n, n, |i, j| oracle_matern(&xs[i], &xs[j], sf2, ls))
}

/// Posterior mean and latent variance via an explicit matrix inverse.
pub fn oracle_posterior(xs: &[Vec<f64>], ys: &[f64], noise: f64, sf2: f64, ls: &[f64], q: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mut k = oracle_gram(xs, sf2, ls);
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let kinv = k.try_inverse().expect("invertible");
    let kstar = DVector::from_fn(n, |i, _| oracle_matern(q, &xs[i], sf2, ls));
    let y = DVector::from_column_slice(ys);
    let mu = (kstar.transpose() * &kinv * y)[(0, 0)];
    let var = sf2 - (kstar.transpose() * &kinv * &kstar)[(0, 0)];
    (mu, var)
}

/// `log N(y; 0, K + σ²I)` via explicit inverse and determinant.
pub fn oracle_log_density(xs: &[Vec<f64>], ys: &[f64], noise: f64, sf2: f64, ls: &[f64]) -> f64 {
    let n = xs.len();
    let mut k = oracle_gram(xs, sf2, ls);
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let det = k.determinant();
    let kinv = k.try_inverse().expect("invertible");
    let y = DVector::from_column_slice(ys);
    let quad = (y.transpose() * kinv * &y)[(0, 0)];
    -0.5 * quad - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Draw `f ~ GP(0, k)` at `xs` through an oracle Cholesky factor.
pub fn sample_gp(xs: &[Vec<f64>], sf2: f64, ls: &[f64], r: &mut ChaCha8Rng) -> Vec<f64> {
    let n = xs.len();
    let mut k = oracle_gram(xs, sf2, ls);
    for i in 0..n {
        k[(i, i)] += 1e-8;
    }
    let l = k.cholesky().expect("psd").l();
    let z = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    (l * z).iter().copied().collect()
}

/// 1-D step-noise data: variance `left_var` for x < 0.5, `right_var` otherwise.
pub fn step_noise_data(n: usize, left_var: f64, right_var: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = r.random_range(0.0..1.0);
        let sd = if x < 0.5 { left_var.sqrt() } else { right_var.sqrt() };
        let e: f64 = r.sample(StandardNormal);
        xs.push(vec![x]);
        ys.push((3.0 * x).sin() + sd * e);
    }
    (xs, ys)
}

/// Left/right moves whose destination is an ice cell on the default map,
/// written out by hand: ice occupies x ∈ {5, 6}, y ∈ {3..=6}, with free
/// cells at x = 4 and x = 7 on those rows. Actions are `Move::index()`.
pub fn default_map_ice_triggers() -> std::collections::BTreeSet<(i32, i32, usize)> {
    use precond::env::Move;
    let mut s = std::collections::BTreeSet::new();
    for y in 3..=6 {
        s.insert((4, y, Move::Right.index()));
        s.insert((5, y, Move::Right.index()));
        s.insert((6, y, Move::Left.index()));
        s.insert((7, y, Move::Left.index()));
    }
    s
}

/// A gridworld estimator after `iterations` active-learning iterations.
pub fn trained_grid_mde(iterations: usize, seed: u64) -> (precond::env::GridWorld, precond::mde::Mde) {
    use precond::env::{GridWorld, GridWorldConfig};
    use precond::learning::{run_loop, LearningConfig};
    let w = GridWorld::from_config(&GridWorldConfig::default()).unwrap();
    let cfg = LearningConfig {
        iterations,
        seed,
        ..Default::default()
    };
    let out = run_loop(&w, &cfg).unwrap();
    let mde = out.snapshots.last().unwrap().clone();
    (w, mde)
}

/// Check a returned plan independently of the planner: it starts at the
/// problem's start, every predicted state follows from the model, every
/// step is admitted by `μ + βσ < d_max`, edges satisfy the environment's
/// constraints and the final state satisfies the goal.
pub fn audit_plan<E: precond::env::Environment>(
    env: &E,
    mde: Option<&precond::mde::Mde>,
    params: &precond::mde::PreconditionParams,
    problem: &precond::env::Problem<E>,
    t: &precond::planner::Trajectory<E::State, E::Action>,
) -> Result<(), String> {
    if t.states.len() != t.actions.len() + 1 {
        return Err(format!("{} states for {} actions", t.states.len(), t.actions.len()));
    }
    if t.states[0] != problem.start {
        return Err("plan does not start at the problem start".into());
    }
    for (k, a) in t.actions.iter().enumerate() {
        let (s, next) = (&t.states[k], &t.states[k + 1]);
        let predicted = env.model_step(s, a).map_err(|e| e.to_string())?;
        if &predicted != next {
            return Err(format!("step {k}: chain broken"));
        }
        if !env.transition_allowed(s, a, next) {
            return Err(format!("step {k}: edge violates constraints"));
        }
        if let Some(m) = mde {
            let (mu, sigma) = m.predict(env, s, a).map_err(|e| e.to_string())?;
            if !(mu + params.beta * sigma < params.d_max) {
                return Err(format!("step {k}: μ+βσ = {} ≥ d_max", mu + params.beta * sigma));
            }
        }
    }
    if !env.goal_reached(&problem.goal, t.states.last().unwrap()) {
        return Err("final predicted state misses the goal".into());
    }
    Ok(())
}
