//! One-dimensional velocity-control task for exercising the learner quickly.
//!
//! The state is a velocity `v` in `[-1, 1]`; each action adds an increment of
//! at most `0.3` (first action component) and the reward is the new velocity.
//! The best policy accelerates at full rate and then holds `v = 1`.

use crate::env::{Environment, Observation, ResetMode, StepOutcome};
use crate::error::{Error, Result};
use crate::SimRng;

pub const TOY_ACTION_LIMIT: f64 = 0.3;
pub const TOY_EPISODE_STEPS: u64 = 200;

#[derive(Clone, Debug, Default)]
pub struct VelocityTask {
    velocity: f64,
    steps: u64,
    position: f64,
}

impl VelocityTask {
    pub fn new() -> Self {
        Self::default()
    }

    /// Return of the full-acceleration policy from rest.
    pub fn optimal_return() -> f64 {
        let mut v: f64 = 0.0;
        let mut total = 0.0;
        for _ in 0..TOY_EPISODE_STEPS {
            v = (v + TOY_ACTION_LIMIT).min(1.0);
            total += v;
        }
        total
    }

    fn observe(&self) -> Observation {
        Observation(vec![self.velocity])
    }
}

impl Environment for VelocityTask {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_limit(&self) -> f64 {
        TOY_ACTION_LIMIT
    }

    fn episode_steps(&self) -> u64 {
        TOY_EPISODE_STEPS
    }

    fn reset(&mut self, _mode: ResetMode, _rng: &mut SimRng) -> Result<Observation> {
        *self = Self::default();
        Ok(self.observe())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let a = *action.first().ok_or_else(|| Error::Shape("empty action".into()))?;
        if !a.is_finite() {
            return Err(Error::Divergence(format!("non-finite action {a}")));
        }
        self.velocity = (self.velocity + a.clamp(-TOY_ACTION_LIMIT, TOY_ACTION_LIMIT)).clamp(-1.0, 1.0);
        self.position += self.velocity;
        self.steps += 1;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: self.velocity,
            truncated: self.steps >= TOY_EPISODE_STEPS,
        })
    }

    fn progress_coordinate(&self) -> f64 {
        self.position
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn optimal_return_value() {
        assert_relative_eq!(VelocityTask::optimal_return(), 0.3 + 0.6 + 0.9 + 197.0, max_relative = 1e-12);
    }

    #[test]
    fn full_throttle_achieves_optimum() {
        let mut env = VelocityTask::new();
        env.reset(ResetMode::Train, &mut SimRng::seed_from_u64(0)).unwrap();
        let mut total = 0.0;
        loop {
            let out = env.step(&[5.0]).unwrap();
            total += out.reward;
            if out.truncated {
                break;
            }
        }
        assert_relative_eq!(total, VelocityTask::optimal_return(), max_relative = 1e-12);
    }
}
