//! Seeded multi-domain Gaussian data with affine domain shift.
//!
//! Class prototypes `μ_c` sit on a sphere of radius `R`. Domain `k` maps a
//! prototype through `x = Q_k (s_k ⊙ μ_c) + t_k + ε` where `Q_k` is the
//! orthogonal factor of `I + α G_k / √d`, `s_k ∈ [1−α, 1+α]^d`,
//! `‖t_k‖ = α R`, and `ε ~ N(0, σ² I)`; `α` is the shift strength. At
//! `α = 0` every domain is the same distribution.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DomainPool, DomainSplit, Sample};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    /// Total number of domains; one of them is held out per experiment.
    pub m_domains: usize,
    pub d: usize,
    /// Samples per (class, domain), split 80/20 into train and test.
    pub per_cell_count: usize,
    pub shift_strength: f64,
    pub noise_sigma: f64,
    pub prototype_radius: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            m_domains: 4,
            d: 20,
            per_cell_count: 50,
            shift_strength: 0.5,
            noise_sigma: 0.3,
            prototype_radius: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic data: {m}")));
        if self.num_classes < 2 {
            return fail("num_classes must be >= 2");
        }
        if self.m_domains < 2 {
            return fail("m_domains must be >= 2");
        }
        if self.d == 0 {
            return fail("d must be >= 1");
        }
        if self.per_cell_count < 2 {
            return fail("per_cell_count must be >= 2");
        }
        if !(0.0..1.0).contains(&self.shift_strength) {
            return fail("shift_strength must lie in [0, 1)");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be >= 0");
        }
        if !(self.prototype_radius.is_finite() && self.prototype_radius > 0.0) {
            return fail("prototype_radius must be > 0");
        }
        Ok(())
    }

    pub fn train_per_cell(&self) -> usize {
        let n = ((self.per_cell_count as f64) * 0.8).round() as usize;
        n.clamp(1, self.per_cell_count - 1)
    }
}

struct DomainShift {
    rotation: DMatrix<f64>,
    scale: Vec<f64>,
    translation: Vec<f64>,
}

fn gaussian_vec(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn domain_shift(cfg: &SyntheticConfig, k: usize) -> DomainShift {
    let d = cfg.d;
    let alpha = cfg.shift_strength;
    let mut rng = rng_for(cfg.seed, &[stream::DATA, 1, k as u64]);
    let g = gaussian_vec(&mut rng, d * d);
    let perturb = DMatrix::from_row_slice(d, d, &g) * (alpha / (d as f64).sqrt()) + DMatrix::identity(d, d);
    let qr = perturb.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let scale = (0..d)
        .map(|_| if alpha > 0.0 { rng.random_range(1.0 - alpha..=1.0 + alpha) } else { 1.0 })
        .collect();
    let dir = unit(gaussian_vec(&mut rng, d));
    let translation = dir.iter().map(|x| x * alpha * cfg.prototype_radius).collect();
    DomainShift {
        rotation: q,
        scale,
        translation,
    }
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DomainPool> {
    cfg.validate()?;
    let d = cfg.d;
    let mut proto_rng = rng_for(cfg.seed, &[stream::DATA, 0]);
    let prototypes: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| {
            unit(gaussian_vec(&mut proto_rng, d))
                .into_iter()
                .map(|x| x * cfg.prototype_radius)
                .collect()
        })
        .collect();

    let n_train = cfg.train_per_cell();
    let mut domains = Vec::with_capacity(cfg.m_domains);
    for k in 0..cfg.m_domains {
        let shift = domain_shift(cfg, k);
        let mut split = DomainSplit::default();
        for (c, mu) in prototypes.iter().enumerate() {
            let scaled: Vec<f64> = mu.iter().zip(&shift.scale).map(|(m, s)| m * s).collect();
            let center: Vec<f64> = (0..d)
                .map(|i| {
                    let rot: f64 = (0..d).map(|j| shift.rotation[(i, j)] * scaled[j]).sum();
                    rot + shift.translation[i]
                })
                .collect();
            let mut noise_rng = rng_for(cfg.seed, &[stream::DATA, 2, k as u64, c as u64]);
            for idx in 0..cfg.per_cell_count {
                let features = center
                    .iter()
                    .map(|m| {
                        let e: f64 = StandardNormal.sample(&mut noise_rng);
                        m + cfg.noise_sigma * e
                    })
                    .collect();
                let sample = Sample {
                    features,
                    label: c,
                    domain: k,
                };
                if idx < n_train {
                    split.train.push(sample);
                } else {
                    split.test.push(sample);
                }
            }
        }
        domains.push(split);
    }
    let pool = DomainPool {
        dim: d,
        num_classes: cfg.num_classes,
        domains,
    };
    pool.validate()?;
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let cfg = SyntheticConfig {
            per_cell_count: 5,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn no_shift_no_noise_domains_coincide() {
        let cfg = SyntheticConfig {
            num_classes: 3,
            m_domains: 3,
            d: 4,
            per_cell_count: 5,
            shift_strength: 0.0,
            noise_sigma: 0.0,
            ..Default::default()
        };
        let pool = generate_synthetic(&cfg).unwrap();
        for k in 1..3 {
            for (a, b) in pool.domains[0].train.iter().zip(&pool.domains[k].train) {
                assert_eq!(a.label, b.label);
                for (x, y) in a.features.iter().zip(&b.features) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn split_is_eighty_twenty() {
        let cfg = SyntheticConfig {
            num_classes: 2,
            m_domains: 2,
            per_cell_count: 10,
            ..Default::default()
        };
        let pool = generate_synthetic(&cfg).unwrap();
        assert_eq!(pool.domains[0].train.len(), 16);
        assert_eq!(pool.domains[0].test.len(), 4);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SyntheticConfig { num_classes: 1, ..Default::default() },
            SyntheticConfig { m_domains: 1, ..Default::default() },
            SyntheticConfig { per_cell_count: 1, ..Default::default() },
            SyntheticConfig { shift_strength: 1.5, ..Default::default() },
            SyntheticConfig { noise_sigma: -1.0, ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        }
    }
}
