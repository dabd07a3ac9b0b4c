use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Ordered, pairwise-disjoint class sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<Vec<usize>>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Shuffles the classes and cuts them into `q` contiguous groups whose sizes
/// differ by at most one (larger groups first).
pub fn split_tasks(num_classes: usize, q: usize, seed: u64) -> Result<TaskStream> {
    if q == 0 || q > num_classes {
        return Err(Error::Config(format!("cannot split {num_classes} classes into {q} tasks")));
    }
    let mut classes: Vec<usize> = (0..num_classes).collect();
    classes.shuffle(&mut rng_for(seed, &[stream::TASKS]));
    let (base, extra) = (num_classes / q, num_classes % q);
    let mut tasks = Vec::with_capacity(q);
    let mut start = 0;
    for i in 0..q {
        let size = base + usize::from(i < extra);
        tasks.push(classes[start..start + size].to_vec());
        start += size;
    }
    Ok(TaskStream { tasks })
}

/// Dataset label ↔ head class index, in order of introduction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap {
    order: Vec<usize>,
    index: BTreeMap<usize, usize>,
}

impl LabelMap {
    pub fn extend(&mut self, labels: &[usize]) -> Result<()> {
        for &l in labels {
            if self.index.contains_key(&l) {
                return Err(Error::Protocol(format!("class {l} introduced twice")));
            }
            self.index.insert(l, self.order.len());
            self.order.push(l);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn head_index(&self, label: usize) -> Option<usize> {
        self.index.get(&label).copied()
    }

    pub fn label(&self, head_index: usize) -> Option<usize> {
        self.order.get(head_index).copied()
    }
}
