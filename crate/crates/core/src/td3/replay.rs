//! Fixed-capacity ring buffer of transitions with uniform sampling.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::SimRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    /// Normalized action in `[-1, 1]`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub observations: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_observations: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Row-major flat storage that grows up to `capacity` and then overwrites
/// the oldest row.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    observations: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_observations: Vec<f64>,
    next: usize,
    size: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_observations: Vec::new(),
            next: 0,
            size: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.observation.len() != self.obs_dim
            || t.next_observation.len() != self.obs_dim
            || t.action.len() != self.act_dim
        {
            return Err(Error::Shape(format!(
                "transition widths ({}, {}, {}) do not match buffer ({}, {})",
                t.observation.len(),
                t.action.len(),
                t.next_observation.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        if self.size < self.capacity {
            self.observations.extend_from_slice(&t.observation);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_observations.extend_from_slice(&t.next_observation);
            self.size += 1;
        } else {
            let i = self.next;
            self.observations[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.observation);
            self.actions[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_observations[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.next_observation);
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        (i < self.size).then(|| Transition {
            observation: self.observations[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            action: self.actions[i * self.act_dim..(i + 1) * self.act_dim].to_vec(),
            reward: self.rewards[i],
            next_observation: self.next_observations[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
        })
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
        if self.size < n || n == 0 {
            return Err(Error::NotReady { size: self.size, requested: n });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.size)).collect())
    }

    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut observations = Array2::zeros((n, o));
        let mut actions = Array2::zeros((n, a));
        let mut next_observations = Array2::zeros((n, o));
        let mut rewards = Array1::zeros(n);
        for (row, &i) in idx.iter().enumerate() {
            observations.row_mut(row).as_slice_mut().unwrap().copy_from_slice(&self.observations[i * o..(i + 1) * o]);
            actions.row_mut(row).as_slice_mut().unwrap().copy_from_slice(&self.actions[i * a..(i + 1) * a]);
            next_observations
                .row_mut(row)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&self.next_observations[i * o..(i + 1) * o]);
            rewards[row] = self.rewards[i];
        }
        Ok(Batch { observations, actions, rewards, next_observations })
    }
}
