use rand::seq::SliceRandom;

use super::{LabelMap, RehearsalMemory, Sample};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

/// What the learner sees: features and head class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::shape("batch", features.shape(), &[labels.len()]));
        }
        Ok(Self { features, labels })
    }

    /// Strips domain ids and maps dataset labels to head indices.
    pub fn from_samples(samples: &[&Sample], labels: &LabelMap) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("empty batch".into()))?;
        let d = first.features.len();
        let mut data = Vec::with_capacity(samples.len() * d);
        let mut ids = Vec::with_capacity(samples.len());
        for s in samples {
            data.extend_from_slice(&s.features);
            ids.push(labels.head_index(s.label).ok_or(Error::LabelOutOfRange {
                label: s.label,
                classes: labels.len(),
            })?);
        }
        Self::new(Tensor::new(vec![samples.len(), d], data)?, ids)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One epoch over `current ∪ memory` in seeded random order.
pub struct Batches<'a> {
    pool: Vec<&'a Sample>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Iterator for Batches<'a> {
    type Item = Vec<&'a Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.pool.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.pool.len());
        let out = self.pool[self.pos..end].to_vec();
        self.pos = end;
        Some(out)
    }
}

/// Shuffles the union of current-domain samples and all memory exemplars
/// and cuts it into `batch_size` chunks; the last chunk may be short. The
/// order is a function of `(seed, epoch)`.
pub fn batches<'a>(
    current: &'a [Sample],
    memory: &'a RehearsalMemory,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut pool: Vec<&Sample> = current.iter().chain(memory.samples()).collect();
    if pool.is_empty() {
        return Err(Error::Config("no samples to batch".into()));
    }
    pool.shuffle(&mut rng_for(seed, &[stream::BATCHES, epoch as u64]));
    Ok(Batches {
        pool,
        batch_size,
        pos: 0,
    })
}
