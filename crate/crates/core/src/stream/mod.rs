//! Multi-domain labeled data and everything that feeds it to the learner.
//!
//! Domain ids live on [`Sample`] for bookkeeping (memory cells, per-domain
//! reports, audits). The learner only ever receives a [`Batch`], which
//! carries features and class indices and nothing else.

mod batches;
mod memory;
mod synthetic;
mod table;
mod tasks;

pub use batches::{batches, Batch, Batches};
pub use memory::{MemoryMode, RehearsalMemory};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use table::{load_features_table, write_features_table};
pub use tasks::{split_tasks, LabelMap, TaskStream};

use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    pub domain: usize,
}

/// One domain's train and test samples.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DomainSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// All domains of a data source, before any domain is held out.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPool {
    pub dim: usize,
    pub num_classes: usize,
    pub domains: Vec<DomainSplit>,
}

impl DomainPool {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    /// Checks feature widths, finiteness, label range, and that every
    /// `(class, domain)` train cell is populated.
    pub fn validate(&self) -> Result<()> {
        for (k, dom) in self.domains.iter().enumerate() {
            for s in dom.train.iter().chain(&dom.test) {
                if s.features.len() != self.dim {
                    return Err(Error::Validation(format!(
                        "domain {k}: sample with {} features, expected {}",
                        s.features.len(),
                        self.dim
                    )));
                }
                if s.features.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation(format!("domain {k}: non-finite feature")));
                }
                if s.label >= self.num_classes || s.domain != k {
                    return Err(Error::Validation(format!(
                        "domain {k}: sample labelled ({}, domain {}) out of place",
                        s.label, s.domain
                    )));
                }
            }
        }
        let mut missing = Vec::new();
        for (k, dom) in self.domains.iter().enumerate() {
            let present: BTreeSet<usize> = dom.train.iter().map(|s| s.label).collect();
            for c in 0..self.num_classes {
                if !present.contains(&c) {
                    missing.push(format!("(class {c}, domain {k})"));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Validation(format!("empty train cells: {}", missing.join(", "))));
        }
        Ok(())
    }

    /// Leave-one-domain-out view: every other domain is a training source and
    /// `held_out` becomes the unseen target, all of its samples test-only.
    pub fn leave_one_out(&self, held_out: usize) -> Result<DomainDataset> {
        if held_out >= self.domains.len() {
            return Err(Error::Config(format!(
                "held-out domain {held_out} out of range (have {})",
                self.domains.len()
            )));
        }
        if self.domains.len() < 2 {
            return Err(Error::Config("need at least two domains".into()));
        }
        let source_domains: Vec<usize> = (0..self.domains.len()).filter(|&k| k != held_out).collect();
        let train = source_domains.iter().map(|&k| self.domains[k].train.clone()).collect();
        let mut test: Vec<Vec<Sample>> = source_domains.iter().map(|&k| self.domains[k].test.clone()).collect();
        let target = &self.domains[held_out];
        test.push(target.train.iter().chain(&target.test).cloned().collect());
        Ok(DomainDataset {
            dim: self.dim,
            num_classes: self.num_classes,
            source_domains,
            unseen_domain: held_out,
            train,
            test,
        })
    }
}

/// Training view with one unseen domain.
///
/// `train[i]` and `test[i]` belong to `source_domains[i]`; the final entry of
/// `test` is the unseen domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub dim: usize,
    pub num_classes: usize,
    pub source_domains: Vec<usize>,
    pub unseen_domain: usize,
    pub train: Vec<Vec<Sample>>,
    pub test: Vec<Vec<Sample>>,
}

impl DomainDataset {
    pub fn num_sources(&self) -> usize {
        self.source_domains.len()
    }

    pub fn unseen_test(&self) -> &[Sample] {
        self.test.last().expect("unseen domain present")
    }

    /// Domain id of test group `i`.
    pub fn test_domain_id(&self, i: usize) -> usize {
        if i < self.source_domains.len() {
            self.source_domains[i]
        } else {
            self.unseen_domain
        }
    }
}
