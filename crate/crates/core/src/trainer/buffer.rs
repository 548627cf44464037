use ndarray::{Array1, Array2};
use rand::Rng;

use crate::env::{Observation, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::safety_index::KinematicPair;

/// One environment step with the raw kinematics needed to re-evaluate Δφ
/// under whatever ζ is current when the transition is replayed.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub kin: KinematicPair,
    pub kin_next: KinematicPair,
}

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 20)),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Transitions in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.data.len() < self.capacity { 0 } else { self.next };
        self.data[split..].iter().chain(self.data[..split].iter())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Result<Batch> {
        if self.data.is_empty() {
            return Err(Error::Usage("cannot sample from an empty replay buffer".into()));
        }
        let picks: Vec<&Transition> = (0..size)
            .map(|_| &self.data[rng.random_range(0..self.data.len())])
            .collect();
        Ok(Batch::from_transitions(picks))
    }
}

/// Column-stacked minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub done: Array1<f64>,
    pub kin: Vec<KinematicPair>,
    pub kin_next: Vec<KinematicPair>,
}

impl Batch {
    pub fn from_transitions<'a, I>(items: I) -> Self
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = items.into_iter().collect();
        let n = items.len();
        let mut b = Batch {
            obs: Array2::zeros((n, OBS_DIM)),
            actions: Array2::zeros((n, ACTION_DIM)),
            rewards: Array1::zeros(n),
            next_obs: Array2::zeros((n, OBS_DIM)),
            done: Array1::zeros(n),
            kin: Vec::with_capacity(n),
            kin_next: Vec::with_capacity(n),
        };
        for (i, t) in items.into_iter().enumerate() {
            for j in 0..OBS_DIM {
                b.obs[[i, j]] = t.obs[j];
                b.next_obs[[i, j]] = t.next_obs[j];
            }
            for j in 0..ACTION_DIM {
                b.actions[[i, j]] = t.action[j];
            }
            b.rewards[i] = t.reward;
            b.done[i] = if t.done { 1.0 } else { 0.0 };
            b.kin.push(t.kin);
            b.kin_next.push(t.kin_next);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}
