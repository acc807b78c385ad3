//! Parameter-free layers: the elementwise sigmoid squash and the
//! half-exchanging permutation used between coupling layers.

use crate::error::{Error, Result};
use crate::numerics::{log_sigmoid, logit, sigmoid};

use super::mask::SplitMask;

/// Elementwise logistic squash onto (0,1)^dim. Used as the output stage of
/// dequantization-noise flows.
#[derive(Debug, Clone)]
pub struct Sigmoid {
    dim: usize,
}

impl Sigmoid {
    pub fn new(dim: usize) -> Self {
        Sigmoid { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x)?;
        let y: Vec<f64> = x.iter().map(|&v| sigmoid(v)).collect();
        // log sigma'(x) = log sigma(x) + log sigma(-x).
        let ld: f64 = x.iter().map(|&v| log_sigmoid(v) + log_sigmoid(-v)).sum();
        Ok((y, ld))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(y)?;
        for (i, &v) in y.iter().enumerate() {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::OutOfImage {
                    layer: "sigmoid",
                    coord: i,
                    value: v,
                });
            }
        }
        let x: Vec<f64> = y.iter().map(|&v| logit(v)).collect();
        let ld: f64 = x.iter().map(|&v| -(log_sigmoid(v) + log_sigmoid(-v))).sum();
        Ok((x, ld))
    }

    pub fn backward(&self, x: &[f64], g: &[f64], g_logdet: f64) -> Result<Vec<f64>> {
        self.check(x)?;
        // dy/dx = sigma'(x); d logdet/dx_i = 1 - 2 sigma(x_i).
        Ok((0..self.dim)
            .map(|i| {
                let s = sigmoid(x[i]);
                g[i] * s * (1.0 - s) + g_logdet * (1.0 - 2.0 * s)
            })
            .collect())
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                what: "sigmoid input",
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Fixed permutation exchanging the two halves of a split (the classic
/// "flip" between coupling layers), stored in general permutation form so
/// augmented variants can leave appended coordinates in place.
#[derive(Debug, Clone)]
pub struct TupleFlip {
    /// y[i] = x[perm[i]].
    perm: Vec<usize>,
}

impl TupleFlip {
    /// Swap the pass and transformed blocks of `mask` (requires equal sizes).
    pub fn from_mask(mask: &SplitMask) -> Result<Self> {
        if mask.n_pass() != mask.n_trans() {
            return Err(Error::InvalidConfig {
                msg: format!(
                    "tuple flip needs equal halves, got {} and {}",
                    mask.n_pass(),
                    mask.n_trans()
                ),
            });
        }
        let mut perm = vec![0usize; mask.dim()];
        for (p, t) in mask.pass_indices().iter().zip(mask.trans_indices()) {
            perm[*p] = t;
            perm[t] = *p;
        }
        Ok(TupleFlip { perm })
    }

    pub fn from_perm(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::InvalidConfig {
                    msg: "not a permutation".into(),
                });
            }
            seen[p] = true;
        }
        Ok(TupleFlip { perm })
    }

    /// Extend with fixed points over `extra` appended coordinates.
    pub fn extended(&self, extra: usize) -> Self {
        let d = self.perm.len();
        let mut perm = self.perm.clone();
        perm.extend(d..d + extra);
        TupleFlip { perm }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x)?;
        Ok((self.perm.iter().map(|&p| x[p]).collect(), 0.0))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(y)?;
        let mut x = vec![0.0; y.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        Ok((x, 0.0))
    }

    pub fn backward(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check(g)?;
        let mut gx = vec![0.0; g.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            gx[p] = g[i];
        }
        Ok(gx)
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.perm.len() {
            return Err(Error::DimMismatch {
                what: "tuple flip input",
                expected: self.perm.len(),
                got: v.len(),
            });
        }
        Ok(())
    }
}
