//! Twin-delayed deterministic policy gradient.
//!
//! The agent works in normalized action space: the actor's tanh output lies
//! in `[-1, 1]` per component and is multiplied by the environment's action
//! limit only when acting. Noise parameters are fractions of that limit.

mod adam;
mod checkpoint;
mod mlp;
mod replay;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use mlp::{Activation, Gradients, Layer, Mlp, Tape};
pub use replay::{Batch, ReplayBuffer, Transition};

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub discount: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Polyak rate for target networks.
    pub tau: f64,
    /// Critic updates per actor update.
    pub policy_delay: u64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub exploration_noise: f64,
    /// Uniform-random steps before learning starts.
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    /// Hidden layer widths shared by actor and critics.
    pub hidden: Vec<usize>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            discount: 0.99,
            learning_rate: 3e-4,
            batch_size: 256,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            exploration_noise: 0.1,
            warmup_steps: 1000,
            buffer_capacity: 1_000_000,
            hidden: vec![256, 256],
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!("discount must lie in (0, 1), got {}", self.discount)));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("need learning_rate > 0 and tau in [0, 1]".into()));
        }
        if self.policy_delay < 1 || self.batch_size < 1 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("need policy_delay >= 1 and 1 <= batch_size <= buffer_capacity".into()));
        }
        if !(self.target_noise >= 0.0 && self.target_noise_clip >= 0.0 && self.exploration_noise >= 0.0) {
            return Err(Error::Config("noise parameters must be non-negative".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid hidden layer widths {:?}", self.hidden)));
        }
        Ok(())
    }
}

/// Online and target networks.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub actor_target: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
}

impl AgentNets {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut SimRng) -> Result<Self> {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(act_dim);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Tanh, rng)?;
        let critic1 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        let critic2 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(Self {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn all(&self) -> [&Mlp; 6] {
        [&self.actor, &self.critic1, &self.critic2, &self.actor_target, &self.critic1_target, &self.critic2_target]
    }

    pub fn validate(&self) -> Result<()> {
        for net in self.all() {
            net.validate()?;
        }
        let (o, a) = (self.obs_dim(), self.act_dim());
        let pairs = [
            (&self.actor, &self.actor_target),
            (&self.critic1, &self.critic1_target),
            (&self.critic2, &self.critic2_target),
        ];
        if pairs.iter().any(|(x, y)| !x.same_shape(y)) || !self.critic1.same_shape(&self.critic2) {
            return Err(Error::Shape("target networks differ in shape from online networks".into()));
        }
        if self.critic1.input_dim() != o + a || self.critic1.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "critic takes {} inputs and gives {}; expected {} and 1",
                self.critic1.input_dim(),
                self.critic1.output_dim(),
                o + a
            )));
        }
        Ok(())
    }

    /// Moves every target toward its online network.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.actor_target, &self.actor, tau)?;
        polyak_update(&mut self.critic1_target, &self.critic1, tau)?;
        polyak_update(&mut self.critic2_target, &self.critic2, tau)
    }
}

/// `target <- tau * online + (1 - tau) * target`, per parameter.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::Shape("polyak update between networks of different shape".into()));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        t.weights.zip_mut_with(&o.weights, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        t.bias.zip_mut_with(&o.bias, |t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}

fn critic_input(obs: ArrayView2<f64>, act: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs, act]).expect("batch rows agree")
}

fn mean_square(q: &Array2<f64>, y: &Array1<f64>) -> f64 {
    q.column(0).iter().zip(y).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / y.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    /// Present on iterations that updated the actor.
    pub actor_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Td3Agent {
    pub nets: AgentNets,
    pub hp: Hyperparams,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    iterations: u64,
}

impl Td3Agent {
    pub fn new(obs_dim: usize, act_dim: usize, hp: Hyperparams, rng: &mut SimRng) -> Result<Self> {
        hp.validate()?;
        let nets = AgentNets::new(obs_dim, act_dim, &hp.hidden, rng)?;
        Ok(Self::from_nets(nets, hp))
    }

    /// Fresh optimizer state around existing networks.
    pub fn from_nets(nets: AgentNets, hp: Hyperparams) -> Self {
        let lr = hp.learning_rate;
        Self {
            actor_opt: Adam::for_net(&nets.actor, lr),
            critic1_opt: Adam::for_net(&nets.critic1, lr),
            critic2_opt: Adam::for_net(&nets.critic2, lr),
            nets,
            hp,
            iterations: 0,
        }
    }

    /// Training iterations performed so far.
    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Deterministic normalized action.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.nets.actor.forward_one(obs)
    }

    /// Normalized action with Gaussian exploration noise, clipped to `[-1, 1]`.
    /// `noise = 0` draws nothing from `rng`.
    pub fn select_action(&self, obs: &[f64], noise: f64, rng: &mut SimRng) -> Result<Vec<f64>> {
        let mut a = self.act(obs)?;
        if noise > 0.0 {
            for v in &mut a {
                let e: f64 = rng.sample(StandardNormal);
                *v += noise * e;
            }
        }
        a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
        Ok(a)
    }

    /// Clipped smoothing noise for a batch of target actions.
    pub fn smoothing_noise(&self, rows: usize, rng: &mut SimRng) -> Array2<f64> {
        let (sigma, clip) = (self.hp.target_noise, self.hp.target_noise_clip);
        Array2::from_shape_simple_fn((rows, self.nets.act_dim()), || {
            let e: f64 = rng.sample(StandardNormal);
            (sigma * e).clamp(-clip, clip)
        })
    }

    /// Smoothed target actions `clip(π'(s') + noise, -1, 1)`.
    pub fn target_actions(&self, next_obs: ArrayView2<f64>, noise: &Array2<f64>) -> Result<Array2<f64>> {
        let mut a = self.nets.actor_target.forward(next_obs)?;
        a += noise;
        a.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        Ok(a)
    }

    /// Both target-critic estimates at the smoothed target actions.
    pub fn target_values(&self, batch: &Batch, noise: &Array2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let a = self.target_actions(batch.next_observations.view(), noise)?;
        let x = critic_input(batch.next_observations.view(), a.view());
        let q1 = self.nets.critic1_target.forward(x.view())?.column(0).to_owned();
        let q2 = self.nets.critic2_target.forward(x.view())?.column(0).to_owned();
        Ok((q1, q2))
    }

    /// `y = r + γ min(Q1', Q2')` with the given smoothing noise.
    pub fn td_target_with_noise(&self, batch: &Batch, noise: &Array2<f64>) -> Result<Array1<f64>> {
        let (q1, q2) = self.target_values(batch, noise)?;
        let gamma = self.hp.discount;
        Ok(ndarray::Zip::from(&batch.rewards).and(&q1).and(&q2).map_collect(|r, a, b| r + gamma * a.min(*b)))
    }

    pub fn td_target(&self, batch: &Batch, rng: &mut SimRng) -> Result<Array1<f64>> {
        let noise = self.smoothing_noise(batch.len(), rng);
        self.td_target_with_noise(batch, &noise)
    }

    /// One optimizer step on each critic against the shared target `y`.
    /// Returns the losses measured before the step.
    pub fn critic_update(&mut self, batch: &Batch, y: &Array1<f64>) -> Result<(f64, f64)> {
        let x = critic_input(batch.observations.view(), batch.actions.view());
        let scale = 2.0 / y.len() as f64;
        let mut losses = [0.0; 2];
        let Self { nets, critic1_opt, critic2_opt, .. } = self;
        for (k, (net, opt)) in
            [(&mut nets.critic1, critic1_opt), (&mut nets.critic2, critic2_opt)].into_iter().enumerate()
        {
            let tape = net.forward_tape(x.view())?;
            let q = tape.output();
            let loss = mean_square(q, y);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("critic {} loss is {loss}", k + 1)));
            }
            let mut grad = q.clone();
            grad.column_mut(0).zip_mut_with(y, |g, y| *g = scale * (*g - y));
            let (grads, _) = net.backward(&tape, grad.view())?;
            opt.step_net(net, &grads)?;
            losses[k] = loss;
        }
        Ok((losses[0], losses[1]))
    }

    /// Gradient of `-mean Q1(s, π(s))` with respect to the actor's
    /// parameters, plus the loss value.
    pub fn actor_gradient(&self, obs: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        let actor_tape = self.nets.actor.forward_tape(obs)?;
        let x = critic_input(obs, actor_tape.output().view());
        let critic_tape = self.nets.critic1.forward_tape(x.view())?;
        let n = obs.nrows() as f64;
        let loss = -critic_tape.output().sum() / n;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("actor loss is {loss}")));
        }
        let grad_q = Array2::from_elem((obs.nrows(), 1), -1.0 / n);
        let (_, grad_x) = self.nets.critic1.backward(&critic_tape, grad_q.view())?;
        let grad_a = grad_x.slice(ndarray::s![.., obs.ncols()..]);
        let (grads, _) = self.nets.actor.backward(&actor_tape, grad_a)?;
        Ok((loss, grads))
    }

    /// One actor step; critics untouched.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let (loss, grads) = self.actor_gradient(batch.observations.view())?;
        self.actor_opt.step_net(&mut self.nets.actor, &grads)?;
        Ok(loss)
    }

    /// One full iteration: critic step every time, actor and target update
    /// every `policy_delay`-th time.
    pub fn train_iteration(&mut self, batch: &Batch, rng: &mut SimRng) -> Result<UpdateStats> {
        let y = self.td_target(batch, rng)?;
        let (critic1_loss, critic2_loss) = self.critic_update(batch, &y)?;
        self.iterations += 1;
        let mut actor_loss = None;
        if self.iterations.is_multiple_of(self.hp.policy_delay) {
            actor_loss = Some(self.actor_update(batch)?);
            self.nets.polyak_update(self.hp.tau)?;
        }
        Ok(UpdateStats { critic1_loss, critic2_loss, actor_loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn small_hp() -> Hyperparams {
        Hyperparams { hidden: vec![16, 16], batch_size: 8, ..Default::default() }
    }

    fn agent(seed: u64) -> Td3Agent {
        Td3Agent::new(3, 2, small_hp(), &mut SimRng::seed_from_u64(seed)).unwrap()
    }

    fn batch(n: usize, rng: &mut SimRng) -> Batch {
        Batch {
            observations: Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0)),
            actions: Array2::from_shape_simple_fn((n, 2), || rng.random_range(-1.0..1.0)),
            rewards: Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0)),
            next_observations: Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0)),
        }
    }

    fn constant_critic(net: &mut Mlp, value: f64) {
        for l in &mut net.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        net.layers.last_mut().unwrap().bias[0] = value;
    }

    #[test]
    fn deterministic_without_noise() {
        let a = agent(0);
        let mut rng = SimRng::seed_from_u64(1);
        let obs = [0.1, -0.4, 0.9];
        let x = a.select_action(&obs, 0.0, &mut rng).unwrap();
        let y = a.select_action(&obs, 0.0, &mut rng).unwrap();
        assert_eq!(x, y);
        assert_eq!(x, a.act(&obs).unwrap());
    }

    #[test]
    fn actions_within_bounds_under_noise() {
        let a = agent(0);
        let mut rng = SimRng::seed_from_u64(2);
        for _ in 0..1000 {
            let act = a.select_action(&[5.0, -5.0, 1.0], 3.0, &mut rng).unwrap();
            assert!(act.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn saturated_actor_gives_full_action() {
        let mut a = agent(0);
        let last = a.nets.actor.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(1e3);
        assert_eq!(a.act(&[0.0; 3]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn zero_discount_target_is_reward() {
        let mut a = agent(3);
        a.hp.discount = 0.0;
        let mut rng = SimRng::seed_from_u64(4);
        let b = batch(16, &mut rng);
        assert_eq!(a.td_target(&b, &mut rng).unwrap(), b.rewards);
    }

    #[test]
    fn twin_minimum_target() {
        let mut a = agent(3);
        constant_critic(&mut a.nets.critic1_target, 1.0);
        constant_critic(&mut a.nets.critic2_target, 0.8);
        let mut rng = SimRng::seed_from_u64(4);
        let mut b = batch(4, &mut rng);
        b.rewards.fill(0.0);
        let y = a.td_target(&b, &mut rng).unwrap();
        for v in y {
            assert_relative_eq!(v, 0.792, max_relative = 1e-12);
        }
    }

    #[test]
    fn target_is_below_each_single_critic_target() {
        let a = agent(5);
        let mut rng = SimRng::seed_from_u64(6);
        let b = batch(32, &mut rng);
        let noise = a.smoothing_noise(32, &mut rng);
        assert!(noise.iter().all(|e| e.abs() <= a.hp.target_noise_clip));
        let targets = a.target_actions(b.next_observations.view(), &noise).unwrap();
        assert!(targets.iter().all(|v| v.abs() <= 1.0));
        let (q1, q2) = a.target_values(&b, &noise).unwrap();
        let y = a.td_target_with_noise(&b, &noise).unwrap();
        for i in 0..32 {
            assert!(y[i] <= b.rewards[i] + a.hp.discount * q1[i]);
            assert!(y[i] <= b.rewards[i] + a.hp.discount * q2[i]);
        }
    }

    #[test]
    fn noiseless_identical_twins_reduce_to_single_critic() {
        let mut a = agent(7);
        a.hp.target_noise = 0.0;
        a.nets.critic2_target = a.nets.critic1_target.clone();
        let mut rng = SimRng::seed_from_u64(8);
        let b = batch(16, &mut rng);
        let y = a.td_target(&b, &mut rng).unwrap();
        let next_a = a.nets.actor_target.forward(b.next_observations.view()).unwrap();
        let q = a.nets.critic1_target.forward(critic_input(b.next_observations.view(), next_a.view()).view()).unwrap();
        for i in 0..16 {
            assert_eq!(y[i], b.rewards[i] + a.hp.discount * q[[i, 0]]);
        }
    }

    #[test]
    fn critic_at_fixed_point_does_not_move() {
        let mut a = agent(9);
        constant_critic(&mut a.nets.critic1, 0.25);
        constant_critic(&mut a.nets.critic2, 0.25);
        let before = (a.nets.critic1.clone(), a.nets.critic2.clone());
        let mut rng = SimRng::seed_from_u64(10);
        let b = batch(8, &mut rng);
        let y = Array1::from_elem(8, 0.25);
        let (l1, l2) = a.critic_update(&b, &y).unwrap();
        assert_eq!((l1, l2), (0.0, 0.0));
        assert_eq!((a.nets.critic1.clone(), a.nets.critic2.clone()), before);
    }

    #[test]
    fn critic_loss_decreases_on_frozen_batch() {
        let mut a = agent(11);
        let mut rng = SimRng::seed_from_u64(12);
        let b = batch(32, &mut rng);
        let y = Array1::from_shape_simple_fn(32, || rng.random_range(-2.0..2.0));
        let mut prev = f64::INFINITY;
        for _ in 0..20 {
            let (l1, _) = a.critic_update(&b, &y).unwrap();
            assert!(l1 < prev, "{l1} >= {prev}");
            prev = l1;
        }
    }

    #[test]
    fn actor_climbs_quadratic_critic() {
        // Q1(s, a) = -|a - a*|^2, whose action gradient is supplied directly
        let mut a =
            Td3Agent::new(3, 2, Hyperparams { learning_rate: 1e-2, ..small_hp() }, &mut SimRng::seed_from_u64(13))
                .unwrap();
        let target = [0.3, -0.5];
        let obs = Array2::from_shape_vec((1, 3), vec![0.2, -0.1, 0.7]).unwrap();
        for _ in 0..2000 {
            let tape = a.nets.actor.forward_tape(obs.view()).unwrap();
            let act = tape.output();
            // d(-Q)/da = 2 (a - a*)
            let grad = Array2::from_shape_fn((1, 2), |(_, j)| 2.0 * (act[[0, j]] - target[j]));
            let (g, _) = a.nets.actor.backward(&tape, grad.view()).unwrap();
            a.actor_opt.step_net(&mut a.nets.actor, &g).unwrap();
        }
        let act = a.act(&[0.2, -0.1, 0.7]).unwrap();
        assert!((act[0] - 0.3).abs() < 1e-3 && (act[1] + 0.5).abs() < 1e-3, "{act:?}");
    }

    #[test]
    fn actor_update_leaves_critics_and_reports_loss() {
        let mut a = agent(14);
        let mut rng = SimRng::seed_from_u64(15);
        let b = batch(8, &mut rng);
        let critics = (a.nets.critic1.clone(), a.nets.critic2.clone());
        let pi = a.nets.actor.forward(b.observations.view()).unwrap();
        let q = a.nets.critic1.forward(critic_input(b.observations.view(), pi.view()).view()).unwrap();
        let expected = -q.mean().unwrap();
        let loss = a.actor_update(&b).unwrap();
        assert_relative_eq!(loss, expected, max_relative = 1e-12);
        assert_eq!((a.nets.critic1.clone(), a.nets.critic2.clone()), critics);
    }

    #[test]
    fn delayed_actor_updates() {
        let mut a = agent(16);
        let mut rng = SimRng::seed_from_u64(17);
        let b = batch(8, &mut rng);
        let mut changes = 0;
        for _ in 0..9 {
            let before = a.nets.actor.clone();
            a.train_iteration(&b, &mut rng).unwrap();
            if a.nets.actor != before {
                changes += 1;
            }
        }
        assert_eq!(changes, 4);
    }

    #[test]
    fn polyak_limits_and_geometric_series() {
        let mut a = agent(18);
        a.nets.actor.layers[0].weights.fill(0.7);
        let mut nets = a.nets.clone();
        nets.polyak_update(0.0).unwrap();
        assert_eq!(nets, a.nets);
        nets.polyak_update(1.0).unwrap();
        assert_eq!(nets.actor_target, nets.actor);
        assert_eq!(nets.critic1_target, nets.critic1);
        assert_eq!(nets.critic2_target, nets.critic2);

        let mut target = Mlp::zeros(&[1, 1], Activation::Relu, Activation::Identity).unwrap();
        let mut online = target.clone();
        online.layers[0].weights.fill(1.0);
        for _ in 0..200 {
            polyak_update(&mut target, &online, 0.005).unwrap();
        }
        assert_relative_eq!(target.layers[0].weights[[0, 0]], 1.0 - 0.995f64.powi(200), max_relative = 1e-12);
        assert_relative_eq!(target.layers[0].weights[[0, 0]], 0.6330, epsilon = 1e-4);

        let other = Mlp::zeros(&[2, 1], Activation::Relu, Activation::Identity).unwrap();
        assert!(polyak_update(&mut target, &other, 0.5).is_err());
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        assert!(Hyperparams { discount: 1.0, ..Default::default() }.validate().is_err());
        assert!(Hyperparams { policy_delay: 0, ..Default::default() }.validate().is_err());
        assert!(Hyperparams { target_noise: -0.1, ..Default::default() }.validate().is_err());
    }
}
