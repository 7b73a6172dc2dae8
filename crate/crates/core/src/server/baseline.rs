//! Replacement-policy baselines. Each policy keeps one resident class set
//! per client, shared by all fixed layers, and updates it as classes are
//! observed.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::AllocationMatrix;
use crate::error::CocaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Aca,
    Lru,
    Fifo,
    Rand,
    FixedAll,
    EdgeOnly,
}

impl Policy {
    pub const ALL: [Policy; 6] =
        [Policy::Aca, Policy::Lru, Policy::Fifo, Policy::Rand, Policy::FixedAll, Policy::EdgeOnly];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Aca => "aca",
            Policy::Lru => "lru",
            Policy::Fifo => "fifo",
            Policy::Rand => "rand",
            Policy::FixedAll => "fixed_all",
            Policy::EdgeOnly => "edge_only",
        }
    }

    /// True for the policies driven by [`BaselineState`].
    pub fn is_replacement(self) -> bool {
        matches!(self, Policy::Lru | Policy::Fifo | Policy::Rand)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = CocaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Policy::ALL
            .into_iter()
            .find(|p| {
                p.name() == norm
                    || (norm == "fixedall" && *p == Policy::FixedAll)
                    || (norm == "edgeonly" && *p == Policy::EdgeOnly)
            })
            .ok_or_else(|| CocaError::validation(format!("unknown policy `{s}`")))
    }
}

/// Resident classes of a replacement policy, most recently inserted (FIFO)
/// or used (LRU) at the back.
#[derive(Debug, Clone)]
pub struct BaselineState {
    policy: Policy,
    capacity: usize,
    resident: VecDeque<usize>,
    rng: ChaCha8Rng,
}

impl BaselineState {
    pub fn new(policy: Policy, capacity: usize, rng: ChaCha8Rng) -> Self {
        BaselineState { policy, capacity, resident: VecDeque::with_capacity(capacity), rng }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn resident(&self) -> impl Iterator<Item = usize> + '_ {
        self.resident.iter().copied()
    }

    pub fn observe(&mut self, class: usize) {
        if self.capacity == 0 {
            return;
        }
        if let Some(pos) = self.resident.iter().position(|&c| c == class) {
            if self.policy == Policy::Lru {
                self.resident.remove(pos);
                self.resident.push_back(class);
            }
            return;
        }
        if self.resident.len() == self.capacity {
            let victim = match self.policy {
                Policy::Rand => self.rng.random_range(0..self.resident.len()),
                _ => 0,
            };
            self.resident.remove(victim);
        }
        self.resident.push_back(class);
    }
}

/// Allocation for a non-ACA policy. `state` is required for the replacement
/// policies and ignored otherwise.
pub fn baseline_allocate(
    policy: Policy,
    state: Option<&BaselineState>,
    classes: usize,
    layers: usize,
    fixed_layers: &[usize],
) -> AllocationMatrix {
    let fixed = fixed_layers.iter().copied().filter(|&j| j < layers);
    match policy {
        Policy::EdgeOnly | Policy::Aca => AllocationMatrix::empty(classes, layers),
        Policy::FixedAll => AllocationMatrix::rectangular(classes, layers, 0..classes, fixed),
        Policy::Lru | Policy::Fifo | Policy::Rand => match state {
            Some(s) => {
                let resident: Vec<usize> = s.resident().filter(|&c| c < classes).collect();
                AllocationMatrix::rectangular(classes, layers, resident, fixed)
            }
            None => AllocationMatrix::empty(classes, layers),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn state(policy: Policy, capacity: usize, seed: u64) -> BaselineState {
        BaselineState::new(policy, capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    fn sorted(s: &BaselineState) -> Vec<usize> {
        let mut v: Vec<usize> = s.resident().collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn lru_evicts_least_recent() {
        let mut s = state(Policy::Lru, 2, 0);
        for c in [1, 2, 3] {
            s.observe(c);
        }
        assert_eq!(sorted(&s), vec![2, 3]);
        let mut s = state(Policy::Lru, 2, 0);
        for c in [1, 2, 1, 3] {
            s.observe(c);
        }
        assert_eq!(sorted(&s), vec![1, 3]);
    }

    #[test]
    fn fifo_ignores_reuse() {
        let mut s = state(Policy::Fifo, 2, 0);
        for c in [1, 2, 1, 3] {
            s.observe(c);
        }
        assert_eq!(sorted(&s), vec![2, 3]);
    }

    #[test]
    fn rand_is_reproducible() {
        let run = |seed| {
            let mut s = state(Policy::Rand, 3, seed);
            let mut trail = Vec::new();
            for c in 0..40 {
                s.observe(c % 11);
                trail.push(sorted(&s));
            }
            trail
        };
        assert_eq!(run(5), run(5));
        assert!(run(5).iter().all(|r| r.len() <= 3));
    }

    #[test]
    fn allocations_by_policy() {
        assert!(baseline_allocate(Policy::EdgeOnly, None, 4, 3, &[0, 1]).is_empty());
        let full = baseline_allocate(Policy::FixedAll, None, 4, 3, &[0, 2]);
        assert_eq!(full.count(), 8);
        assert_eq!(full.active_layers(), vec![0, 2]);
        let mut s = state(Policy::Lru, 2, 0);
        s.observe(3);
        let x = baseline_allocate(Policy::Lru, Some(&s), 4, 3, &[1]);
        assert_eq!(x.iter_set().collect::<Vec<_>>(), vec![(3, 1)]);
    }

    #[test]
    fn parses_policy_names() {
        assert_eq!("LRU".parse::<Policy>().unwrap(), Policy::Lru);
        assert_eq!("fixed-all".parse::<Policy>().unwrap(), Policy::FixedAll);
        assert_eq!("EdgeOnly".parse::<Policy>().unwrap(), Policy::EdgeOnly);
        assert!("mru".parse::<Policy>().is_err());
        for p in Policy::ALL {
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
    }
}
