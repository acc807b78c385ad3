//! Coordinate split masks for coupling layers.
//!
//! A mask partitions the coordinates of a vector into a pass-through half
//! (left unchanged, feeds the coupling networks) and a transformed half.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Alternating coordinates; even indices pass through.
    Checker,
    /// Contiguous halves; the first ceil(d/2) coordinates pass through.
    Channel,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMask {
    pass: Vec<bool>,
    kind: MaskKind,
}

impl SplitMask {
    pub fn checker(dim: usize) -> Self {
        SplitMask {
            pass: (0..dim).map(|i| i % 2 == 0).collect(),
            kind: MaskKind::Checker,
        }
    }

    pub fn channel(dim: usize) -> Self {
        let half = dim.div_ceil(2);
        SplitMask {
            pass: (0..dim).map(|i| i < half).collect(),
            kind: MaskKind::Channel,
        }
    }

    /// Arbitrary pass pattern. Both halves must be non-empty.
    pub fn custom(pass: Vec<bool>) -> Result<Self> {
        let n_pass = pass.iter().filter(|&&b| b).count();
        if n_pass == 0 || n_pass == pass.len() {
            return Err(Error::InvalidConfig {
                msg: "split mask must leave both halves non-empty".into(),
            });
        }
        Ok(SplitMask {
            pass,
            kind: MaskKind::Custom,
        })
    }

    /// Same partition with the roles of the halves exchanged.
    pub fn flipped(&self) -> Self {
        SplitMask {
            pass: self.pass.iter().map(|&b| !b).collect(),
            kind: MaskKind::Custom,
        }
    }

    pub fn dim(&self) -> usize {
        self.pass.len()
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn is_pass(&self, i: usize) -> bool {
        self.pass[i]
    }

    pub fn n_pass(&self) -> usize {
        self.pass.iter().filter(|&&b| b).count()
    }

    pub fn n_trans(&self) -> usize {
        self.dim() - self.n_pass()
    }

    /// Indices of pass-through coordinates, ascending.
    pub fn pass_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.pass[i]).collect()
    }

    /// Indices of transformed coordinates, ascending.
    pub fn trans_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| !self.pass[i]).collect()
    }

    pub fn gather_pass(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim()).filter(|&i| self.pass[i]).map(|i| x[i]).collect()
    }

    pub fn gather_trans(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim()).filter(|&i| !self.pass[i]).map(|i| x[i]).collect()
    }

    /// Reassemble a full vector from its two halves.
    pub fn scatter(&self, pass_vals: &[f64], trans_vals: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let (mut p, mut t) = (0, 0);
        for i in 0..self.dim() {
            if self.pass[i] {
                out[i] = pass_vals[p];
                p += 1;
            } else {
                out[i] = trans_vals[t];
                t += 1;
            }
        }
        out
    }

    /// Extend the partition over `extra` appended coordinates, continuing the
    /// mask's own pattern: checker masks keep alternating by global index,
    /// channel masks pass the first half of the new block, custom masks
    /// alternate over the new block.
    pub fn extended(&self, extra: usize) -> Self {
        let d = self.dim();
        let mut pass = self.pass.clone();
        match self.kind {
            MaskKind::Checker => pass.extend((0..extra).map(|j| (d + j) % 2 == 0)),
            MaskKind::Channel => {
                let half = extra.div_ceil(2);
                pass.extend((0..extra).map(|j| j < half));
            }
            MaskKind::Custom => pass.extend((0..extra).map(|j| j % 2 == 0)),
        }
        SplitMask {
            pass,
            kind: self.kind,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checker_alternates() {
        let m = SplitMask::checker(5);
        assert_eq!(m.pass_indices(), vec![0, 2, 4]);
        assert_eq!(m.trans_indices(), vec![1, 3]);
    }

    #[test]
    fn channel_splits_contiguously() {
        let m = SplitMask::channel(5);
        assert_eq!(m.pass_indices(), vec![0, 1, 2]);
        assert_eq!(m.n_trans(), 2);
    }

    #[test]
    fn gather_scatter_round_trip() {
        let m = SplitMask::checker(6);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let p = m.gather_pass(&x);
        let t = m.gather_trans(&x);
        assert_eq!(p, vec![1.0, 3.0, 5.0]);
        assert_eq!(t, vec![2.0, 4.0, 6.0]);
        assert_eq!(m.scatter(&p, &t), x.to_vec());
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        assert!(SplitMask::custom(vec![true, true]).is_err());
        assert!(SplitMask::custom(vec![false]).is_err());
        assert!(SplitMask::custom(vec![true, false]).is_ok());
    }

    #[test]
    fn flipped_swaps_roles() {
        let m = SplitMask::checker(4).flipped();
        assert_eq!(m.pass_indices(), vec![1, 3]);
    }

    #[test]
    fn extension_continues_checker_parity() {
        // After 2 x-coordinates the appended block keeps global parity, so
        // appended index 0 (global 2) passes.
        let m = SplitMask::checker(2).extended(4);
        assert_eq!(m.pass_indices(), vec![0, 2, 4]);
        assert_eq!(m.dim(), 6);
    }

    #[test]
    fn extension_splits_channel_block() {
        let m = SplitMask::channel(4).extended(4);
        assert_eq!(m.pass_indices(), vec![0, 1, 4, 5]);
    }
}
