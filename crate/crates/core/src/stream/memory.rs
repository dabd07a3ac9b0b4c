use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// One cell per (class, domain), `capacity` exemplars each.
    #[default]
    PerDomain,
    /// One cell per class, `capacity` exemplars drawn from the pooled domains.
    ClassBalanced,
}

/// Capacity-bounded exemplar store.
///
/// Selection depends only on the seed and the offered data, so every method
/// run against the same experiment seed replays the same exemplars.
#[derive(Clone, Debug, PartialEq)]
pub struct RehearsalMemory {
    capacity: usize,
    mode: MemoryMode,
    seed: u64,
    cells: BTreeMap<(usize, Option<usize>), Vec<Sample>>,
}

impl RehearsalMemory {
    pub fn new(capacity: usize, mode: MemoryMode, seed: u64) -> Self {
        Self {
            capacity,
            mode,
            seed,
            cells: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.cells.values().flatten()
    }

    pub fn cell(&self, class: usize, domain: Option<usize>) -> Option<&[Sample]> {
        self.cells.get(&(class, domain)).map(Vec::as_slice)
    }

    pub fn classes(&self) -> BTreeSet<usize> {
        self.cells.keys().map(|k| k.0).collect()
    }

    /// Fills every cell not yet present from `task_data` with a uniform draw
    /// without replacement of `min(capacity, cell size)` exemplars. Existing
    /// cells are left alone.
    pub fn update(&mut self, task_data: &[Sample]) {
        if self.capacity == 0 {
            return;
        }
        let mut groups: BTreeMap<(usize, Option<usize>), Vec<&Sample>> = BTreeMap::new();
        for s in task_data {
            let key = match self.mode {
                MemoryMode::PerDomain => (s.label, Some(s.domain)),
                MemoryMode::ClassBalanced => (s.label, None),
            };
            groups.entry(key).or_default().push(s);
        }
        for (key, members) in groups {
            if self.cells.contains_key(&key) {
                continue;
            }
            let domain_tag = key.1.map_or(u64::MAX, |d| d as u64);
            let mut rng = rng_for(self.seed, &[stream::MEMORY, key.0 as u64, domain_tag]);
            let take = self.capacity.min(members.len());
            let mut picks = index::sample(&mut rng, members.len(), take).into_vec();
            picks.sort_unstable();
            self.cells.insert(key, picks.into_iter().map(|i| members[i].clone()).collect());
        }
    }
}
