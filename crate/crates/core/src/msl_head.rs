//! Mahalanobis similarity classifier.
//!
//! Each class `c` owns a low-rank factor `L_c ∈ R^{r×n}` and a bias
//! `b_c ∈ R^n`. The class score of a feature `h` is
//!
//! ```text
//! sim_c(h) = ‖L_c (h − b_c)‖² = (h − b_c)ᵀ Σ_c (h − b_c),   Σ_c = L_cᵀ L_c
//! ```
//!
//! so `Σ_c` is positive semi-definite by construction and never stored.
//! The full-rank form and the eigen-decomposed form are kept here as
//! reference paths for testing; training only ever sees the factorized one.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetric {
    pub class_id: usize,
    /// `[r×n]`
    pub factor: Tensor,
    /// `[n]`
    pub bias: Tensor,
}

impl ClassMetric {
    pub fn new(class_id: usize, factor: Tensor, bias: Tensor) -> Result<Self> {
        let fs = factor.shape();
        if fs.len() != 2 || bias.shape() != [fs[1]] || fs[0] > fs[1] {
            return Err(Error::shape("class_metric", fs, bias.shape()));
        }
        Ok(Self {
            class_id,
            factor,
            bias,
        })
    }

    pub fn rank(&self) -> usize {
        self.factor.rows()
    }

    pub fn dim(&self) -> usize {
        self.factor.cols()
    }

    /// `Σ = LᵀL`.
    pub fn sigma(&self) -> Tensor {
        let (r, n) = (self.rank(), self.dim());
        let l = self.factor.data();
        let mut out = vec![0.0; n * n];
        for k in 0..r {
            let row = &l[k * n..(k + 1) * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] += row[i] * row[j];
                }
            }
        }
        Tensor::new(vec![n, n], out).expect("square")
    }
}

/// Default rank: 64 once features are at least that wide, otherwise full.
pub fn default_rank(feature_dim: usize) -> usize {
    if feature_dim >= 64 {
        64
    } else {
        feature_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MslHead {
    metrics: Vec<ClassMetric>,
    dim: usize,
    rank: usize,
}

#[derive(Clone, Debug)]
pub struct MslVars {
    classes: Vec<(Var, Var)>,
}

impl MslHead {
    pub fn new(dim: usize, rank: usize) -> Result<Self> {
        if dim == 0 || rank == 0 || rank > dim {
            return Err(Error::Config(format!(
                "metric rank must satisfy 1 <= r <= n, got r={rank}, n={dim}"
            )));
        }
        Ok(Self {
            metrics: Vec::new(),
            dim,
            rank,
        })
    }

    pub fn from_metrics(dim: usize, rank: usize, metrics: Vec<ClassMetric>) -> Result<Self> {
        let mut head = Self::new(dim, rank)?;
        for (i, m) in metrics.into_iter().enumerate() {
            if m.class_id != i || m.rank() != rank || m.dim() != dim {
                return Err(Error::Config(format!("class metric {i} inconsistent with head (r={rank}, n={dim})")));
            }
            head.metrics.push(m);
        }
        Ok(head)
    }

    pub fn num_classes(&self) -> usize {
        self.metrics.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn metrics(&self) -> &[ClassMetric] {
        &self.metrics
    }

    pub fn metrics_mut(&mut self) -> &mut [ClassMetric] {
        &mut self.metrics
    }

    /// Appends `k` classes with `L ~ U(−1/√n, 1/√n)`. Biases start at zero
    /// unless `biases` supplies one vector per new class.
    pub fn expand(&mut self, k: usize, seed: u64, biases: Option<&[Vec<f64>]>) -> Result<()> {
        if k == 0 {
            return Err(Error::Config("head expansion needs k >= 1".into()));
        }
        if let Some(b) = biases {
            if b.len() != k || b.iter().any(|v| v.len() != self.dim) {
                return Err(Error::Config("bias initializers must be k vectors of length n".into()));
            }
        }
        let mut rng = rng_for(seed, &[stream::HEAD, self.metrics.len() as u64]);
        let bound = 1.0 / (self.dim as f64).sqrt();
        for i in 0..k {
            let factor = (0..self.rank * self.dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias = biases.map_or_else(|| vec![0.0; self.dim], |b| b[i].clone());
            self.metrics.push(ClassMetric {
                class_id: self.metrics.len(),
                factor: Tensor::new(vec![self.rank, self.dim], factor)?.into_param(),
                bias: Tensor::vector(bias).into_param(),
            });
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> MslVars {
        MslVars {
            classes: self
                .metrics
                .iter()
                .map(|m| (tape.leaf(&m.factor), tape.leaf(&m.bias)))
                .collect(),
        }
    }

    /// Taped `[B×C]` score matrix for a `[B×n]` feature batch.
    pub fn scores(&self, tape: &mut Tape, vars: &MslVars, h: Var) -> Result<Var> {
        let shape = tape.value(h).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(Error::shape("head_scores", &shape, &[0, self.dim]));
        }
        if vars.classes.is_empty() {
            return Err(Error::Config("head has no classes".into()));
        }
        let batch = shape[0];
        let mut cols = Vec::with_capacity(vars.classes.len());
        for &(l, b) in &vars.classes {
            let bias = tape.repeat_rows(b, batch)?;
            let resid = tape.sub(h, bias)?;
            let lt = tape.transpose(l)?;
            let proj = tape.matmul(resid, lt)?;
            let sq = tape.mul(proj, proj)?;
            cols.push(tape.row_sum(sq)?);
        }
        tape.stack_cols(&cols)
    }

    /// Untaped score matrix.
    pub fn score_matrix(&self, features: &Tensor) -> Result<Tensor> {
        let fs = features.shape();
        if fs.len() != 2 || fs[1] != self.dim {
            return Err(Error::shape("head_scores", fs, &[0, self.dim]));
        }
        let (batch, c, n, r) = (fs[0], self.metrics.len(), self.dim, self.rank);
        let mut out = vec![0.0; batch * c];
        let mut resid = vec![0.0; n];
        for i in 0..batch {
            let h = features.row(i);
            for (j, m) in self.metrics.iter().enumerate() {
                for ((rv, hv), bv) in resid.iter_mut().zip(h).zip(m.bias.data()) {
                    *rv = hv - bv;
                }
                let l = m.factor.data();
                let mut s = 0.0;
                for k in 0..r {
                    let p: f64 = l[k * n..(k + 1) * n].iter().zip(&resid).map(|(a, b)| a * b).sum();
                    s += p * p;
                }
                out[i * c + j] = s;
            }
        }
        Tensor::new(vec![batch, c], out)
    }

    pub fn store_grads(&mut self, vars: &MslVars, grads: &Gradients) -> Result<()> {
        for (m, &(l, b)) in self.metrics.iter_mut().zip(&vars.classes) {
            if let Some(g) = grads.get(l) {
                m.factor.accumulate_grad(g)?;
            }
            if let Some(g) = grads.get(b) {
                m.bias.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.metrics.iter().flat_map(|m| [&m.factor, &m.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.metrics.iter_mut().flat_map(|m| [&mut m.factor, &mut m.bias])
    }

    /// Text dump, see the README for the layout.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "msl-head v1").unwrap();
        writeln!(s, "{} {} {}", self.num_classes(), self.rank, self.dim).unwrap();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        for m in &self.metrics {
            writeln!(s, "{}", join(m.factor.data())).unwrap();
            writeln!(s, "{}", join(m.bias.data())).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            })
        };
        let (ln, header) = next("header")?;
        if header.trim() != "msl-head v1" {
            return Err(Error::Parse {
                line: ln,
                message: format!("unsupported header `{header}`"),
            });
        }
        let (ln, dims) = next("dimensions")?;
        let dims = parse_numbers::<usize>(dims, ln)?;
        let [c, r, n] = dims[..] else {
            return Err(Error::Parse {
                line: ln,
                message: "expected `C r n`".into(),
            });
        };
        let mut head = Self::new(n, r)?;
        for class_id in 0..c {
            let (ln, lrow) = next("factor row")?;
            let factor = parse_numbers::<f64>(lrow, ln)?;
            let (lb, brow) = next("bias row")?;
            let bias = parse_numbers::<f64>(brow, lb)?;
            if factor.len() != r * n || bias.len() != n {
                return Err(Error::Parse {
                    line: ln,
                    message: format!("class {class_id}: expected {} factor and {n} bias values", r * n),
                });
            }
            head.metrics.push(ClassMetric {
                class_id,
                factor: Tensor::new(vec![r, n], factor)?.into_param(),
                bias: Tensor::vector(bias).into_param(),
            });
        }
        Ok(head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_numbers<T: std::str::FromStr>(line: &str, ln: usize) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<T>().map_err(|_| Error::Parse {
                line: ln,
                message: format!("bad number `{tok}`"),
            })
        })
        .collect()
}

/// `‖L (h − b)‖²` on the tape.
pub fn similarity_lowrank(tape: &mut Tape, h: Var, factor: Var, bias: Var) -> Result<Var> {
    let n = tape.value(factor).cols();
    if tape.value(h).shape() != [n] {
        return Err(Error::shape("similarity_lowrank", tape.value(h).shape(), &[n]));
    }
    let resid = tape.sub(h, bias)?;
    let col = tape.reshape(resid, &[n, 1])?;
    let proj = tape.matmul(factor, col)?;
    let r = tape.value(proj).len();
    let flat = tape.reshape(proj, &[r])?;
    tape.squared_l2_norm(flat)
}

fn check_square(op: &'static str, sigma: &Tensor, n: usize) -> Result<()> {
    if sigma.shape() != [n, n] {
        return Err(Error::shape(op, sigma.shape(), &[n, n]));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (sigma.at(i, j) - sigma.at(j, i)).abs() > SYMMETRY_TOL {
                return Err(Error::NotPsd(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `(h − b)ᵀ Σ (h − b)` with an explicit metric matrix.
pub fn similarity_fullrank(h: &[f64], sigma: &Tensor, b: &[f64]) -> Result<f64> {
    let n = h.len();
    if b.len() != n {
        return Err(Error::shape("similarity_fullrank", &[n], &[b.len()]));
    }
    check_square("similarity_fullrank", sigma, n)?;
    let r: Vec<f64> = h.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut s = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| sigma.at(i, j) * r[j]).sum();
        s += r[i] * row;
    }
    Ok(s)
}

/// Evaluates both sides of `rᵀΣr = ‖Λ^{1/2} Vᵀ r‖²` with `Σ = V Λ Vᵀ`.
/// Eigenvalues in `[−1e-9, 0)` are clamped to zero; anything below is a PSD
/// violation.
pub fn eigen_identity_check(sigma: &Tensor, residual: &[f64]) -> Result<(f64, f64)> {
    let n = residual.len();
    check_square("eigen_identity_check", sigma, n)?;
    let lhs = similarity_fullrank(residual, sigma, &vec![0.0; n])?;
    let m = DMatrix::from_row_slice(n, n, sigma.data());
    let eig = SymmetricEigen::new(m);
    let r = DVector::from_column_slice(residual);
    let mut rhs = 0.0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -PSD_TOL {
            return Err(Error::NotPsd(format!("eigenvalue {lambda}")));
        }
        let lambda = lambda.max(0.0);
        let coord = eig.eigenvectors.column(k).dot(&r);
        let w = lambda.sqrt() * coord;
        rhs += w * w;
    }
    Ok((lhs, rhs))
}
