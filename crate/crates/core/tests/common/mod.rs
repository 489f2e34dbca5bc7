#![allow(dead_code)]

use msr_core::td3::{Activation, AgentNets, Mlp};
use msr_core::SimRng;
use ndarray::{concatenate, Array2, Axis};
use rand::{Rng, SeedableRng};

pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement between analytic and central-difference
/// gradients, per network, and how many coordinates were skipped because
/// the perturbation crossed a ReLU kink.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub actor: f64,
    pub critic1: f64,
    pub critic2: f64,
    pub checked: usize,
    pub skipped: usize,
}

fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-6)
}

fn pattern(net: &Mlp, x: &Array2<f64>) -> Vec<bool> {
    net.forward_tape(x.view()).unwrap().sign_pattern()
}

/// `L = sum(w .* Q(x))` for a critic.
fn critic_loss(net: &Mlp, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (&net.forward(x.view()).unwrap() * w).sum()
}

fn check_critic(net: &Mlp, x: &Array2<f64>, w: &Array2<f64>, report: &mut FdReport) -> f64 {
    let tape = net.forward_tape(x.view()).unwrap();
    let (grads, grad_x) = net.backward(&tape, w.view()).unwrap();
    let analytic = grads.flatten();
    let theta = net.parameters();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut p = theta.clone();
        p[i] = theta[i] + FD_STEP;
        probe.set_parameters(&p).unwrap();
        let (lp, sp) = (critic_loss(&probe, x, w), pattern(&probe, x));
        p[i] = theta[i] - FD_STEP;
        probe.set_parameters(&p).unwrap();
        let (lm, sm) = (critic_loss(&probe, x, w), pattern(&probe, x));
        if sp != sm {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        worst = worst.max(rel_err(*a, (lp - lm) / (2.0 * FD_STEP)));
    }
    // input gradient, which the actor update relies on
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let mut xp = x.clone();
            xp[[r, c]] += FD_STEP;
            let mut xm = x.clone();
            xm[[r, c]] -= FD_STEP;
            if pattern(net, &xp) != pattern(net, &xm) {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let fd = (critic_loss(net, &xp, w) - critic_loss(net, &xm, w)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad_x[[r, c]], fd));
        }
    }
    worst
}

fn actor_loss(actor: &Mlp, critic: &Mlp, obs: &Array2<f64>) -> (f64, Vec<bool>) {
    let a = actor.forward(obs.view()).unwrap();
    let x = concatenate(Axis(1), &[obs.view(), a.view()]).unwrap();
    let q = critic.forward(x.view()).unwrap();
    let mut pat = pattern(actor, obs);
    pat.extend(pattern(critic, &x));
    (-q.mean().unwrap(), pat)
}

fn check_actor(nets: &AgentNets, obs: &Array2<f64>, report: &mut FdReport) -> f64 {
    let agent = msr_core::td3::Td3Agent::from_nets(nets.clone(), Default::default());
    let (_, grads) = agent.actor_gradient(obs.view()).unwrap();
    let analytic = grads.flatten();
    let theta = nets.actor.parameters();
    let mut probe = nets.actor.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut p = theta.clone();
        p[i] = theta[i] + FD_STEP;
        probe.set_parameters(&p).unwrap();
        let (lp, sp) = actor_loss(&probe, &nets.critic1, obs);
        p[i] = theta[i] - FD_STEP;
        probe.set_parameters(&p).unwrap();
        let (lm, sm) = actor_loss(&probe, &nets.critic1, obs);
        if sp != sm {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        worst = worst.max(rel_err(*a, (lp - lm) / (2.0 * FD_STEP)));
    }
    worst
}

/// One random parameterization: networks of the given widths, a random
/// batch, and random output weights for the critic losses.
pub fn finite_difference_check(seed: u64, obs_dim: usize, act_dim: usize, hidden: &[usize], batch: usize) -> FdReport {
    let mut rng = SimRng::seed_from_u64(seed);
    let nets = AgentNets::new(obs_dim, act_dim, hidden, &mut rng).unwrap();
    let obs = Array2::from_shape_simple_fn((batch, obs_dim), || rng.random_range(-1.5..1.5));
    let act = Array2::from_shape_simple_fn((batch, act_dim), || rng.random_range(-1.0..1.0));
    let x = concatenate(Axis(1), &[obs.view(), act.view()]).unwrap();
    let w = Array2::from_shape_simple_fn((batch, 1), || rng.random_range(-1.0..1.0));
    let mut report = FdReport { actor: 0.0, critic1: 0.0, critic2: 0.0, checked: 0, skipped: 0 };
    report.critic1 = check_critic(&nets.critic1, &x, &w, &mut report);
    report.critic2 = check_critic(&nets.critic2, &x, &w, &mut report);
    report.actor = check_actor(&nets, &obs, &mut report);
    report
}

pub fn tanh_net_check(seed: u64) -> f64 {
    // smooth everywhere, so no coordinate is skipped
    let mut rng = SimRng::seed_from_u64(seed);
    let net = Mlp::new(&[4, 6, 3], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
    let x = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
    let w = Array2::from_shape_simple_fn((3, 3), || rng.random_range(-1.0..1.0));
    let mut report = FdReport { actor: 0.0, critic1: 0.0, critic2: 0.0, checked: 0, skipped: 0 };
    let worst = check_critic(&net, &x, &w, &mut report);
    assert_eq!(report.skipped, 0);
    worst
}

/// Learner settings for the velocity task.
pub fn toy_settings(steps: u64) -> (msr_core::td3::Hyperparams, msr_core::trainer::TrainConfig) {
    let hp = msr_core::td3::Hyperparams {
        batch_size: 64,
        learning_rate: 1e-3,
        warmup_steps: 1000,
        hidden: vec![32, 32],
        ..Default::default()
    };
    let train = msr_core::trainer::TrainConfig {
        scaled_steps: steps,
        refine_steps: 0,
        eval_interval: 500,
        ..Default::default()
    };
    (hp, train)
}
