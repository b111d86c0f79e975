use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::demo::DemoSet;
use crate::env::{Origin, Transition};
use crate::error::{Error, Result};

/// Replay memory with two regions: a FIFO ring of agent transitions bounded
/// by `capacity`, and a demonstration region that is filled once and never
/// evicted. Sampling is uniform over the union.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    demo: Vec<Transition>,
    live: VecDeque<Transition>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            demo: Vec::new(),
            live: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.demo.len() + self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn demo_len(&self) -> usize {
        self.demo.len()
    }

    pub fn live_len(&self) -> usize {
        self.live.len()
    }

    pub fn demo_region(&self) -> &[Transition] {
        &self.demo
    }

    pub fn live_region(&self) -> impl Iterator<Item = &Transition> {
        self.live.iter()
    }

    /// Total agent transitions ever pushed.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Stores an agent transition, evicting the oldest live one when full.
    pub fn push(&mut self, transition: Transition) -> Result<()> {
        if transition.origin != Origin::Agent {
            return Err(Error::InvalidConfig(
                "only agent transitions can be pushed; demos go through preload_demos".into(),
            ));
        }
        if self.live.len() == self.capacity {
            self.live.pop_front();
        }
        self.live.push_back(transition);
        self.pushed += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i < self.demo.len() {
            self.demo.get(i)
        } else {
            self.live.get(i - self.demo.len())
        }
    }

    /// `n` draws uniformly with replacement over demo and live regions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        let total = self.len();
        if total == 0 {
            return Err(Error::EmptyBuffer);
        }
        if n == 0 {
            return Err(Error::InvalidSample("sample size must be at least 1".into()));
        }
        Ok((0..n)
            .map(|_| {
                let i = rng.random_range(0..total);
                self.get(i).expect("index below len")
            })
            .collect())
    }

    /// Fills the demo region from the `best_k` highest-return trajectories.
    ///
    /// When their union holds at least `n_transitions`, a uniform subset
    /// without replacement is taken (the whole union, in order, when sizes
    /// match). A smaller union is taken whole and topped up with uniform
    /// draws with replacement.
    pub fn preload_demos<R: Rng + ?Sized>(
        &mut self,
        demos: &DemoSet,
        best_k: usize,
        n_transitions: usize,
        rng: &mut R,
    ) -> Result<()> {
        if best_k == 0 || best_k > demos.len() {
            return Err(Error::InvalidConfig(format!(
                "best_k = {best_k} with {} demonstration trajectories",
                demos.len()
            )));
        }
        if !self.demo.is_empty() {
            return Err(Error::InvalidConfig("demo region is already loaded".into()));
        }
        let mut ranked: Vec<usize> = (0..demos.len()).collect();
        let trajs = demos.trajectories();
        ranked.sort_by(|&a, &b| trajs[b].total_return.total_cmp(&trajs[a].total_return));
        let union: Vec<&Transition> = ranked[..best_k]
            .iter()
            .flat_map(|&i| trajs[i].transitions.iter())
            .collect();
        if union.is_empty() {
            return Err(Error::InvalidConfig("selected demonstrations are empty".into()));
        }

        let picked: Vec<&Transition> = if union.len() == n_transitions {
            union
        } else if union.len() > n_transitions {
            let mut idx = index::sample(rng, union.len(), n_transitions).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| union[i]).collect()
        } else {
            let mut all = union.clone();
            for _ in union.len()..n_transitions {
                all.push(union[rng.random_range(0..union.len())]);
            }
            all
        };
        self.demo = picked
            .into_iter()
            .map(|t| Transition {
                origin: Origin::Demo,
                ..t.clone()
            })
            .collect();
        Ok(())
    }
}
