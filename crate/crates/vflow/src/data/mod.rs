//! The 2-D checkerboard benchmark distribution and the statistics used to
//! validate samplers and models against it.
//!
//! In unit coordinates the density is uniform over the 8 "black" unit cells
//! of a 4x4 board centered at the origin: the first coordinate is uniform on
//! (-2, 2) and the second lands in one of the two unit intervals whose cell
//! parity matches, i.e. floor(v1) + floor(v2) is even. Scaling both
//! coordinates by `scale` (2 by default) stretches the support to
//! [-2*scale, 2*scale]^2 and the density to 1 / (8 * scale^2); at the
//! default scale that is exactly -ln 32 nats per point.

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const DEFAULT_SCALE: f64 = 2.0;

/// Number of unit cells carrying mass.
pub const N_CELLS: usize = 32;

#[derive(Debug, Clone)]
pub struct Checkerboard {
    scale: f64,
}

impl Checkerboard {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig {
                msg: format!("checkerboard scale must be positive, got {scale}"),
            });
        }
        Ok(Checkerboard { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Half-width of the support along each axis.
    pub fn bound(&self) -> f64 {
        2.0 * self.scale
    }

    pub fn sample(&self, rng: &mut Rng) -> [f64; 2] {
        let x1 = 4.0 * rng.uniform() - 2.0;
        let k = rng.below(2) as f64;
        let parity = x1.floor().rem_euclid(2.0);
        let x2 = rng.uniform() - 2.0 * k + parity;
        [x1 * self.scale, x2 * self.scale]
    }

    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng).to_vec()).collect()
    }

    /// Whether a point carries mass: inside the board and on a cell whose
    /// parity is even.
    pub fn in_support(&self, x: &[f64]) -> bool {
        let v1 = x[0] / self.scale;
        let v2 = x[1] / self.scale;
        if !(-2.0..2.0).contains(&v1) || !(-2.0..2.0).contains(&v2) {
            return false;
        }
        ((v1.floor() + v2.floor()) as i64).rem_euclid(2) == 0
    }

    /// Exact log-density: uniform over the support, -inf outside.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        if self.in_support(x) {
            -(8.0 * self.scale * self.scale).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Index (0..32) of the half-unit subcell a support point falls in.
    /// Each of the 8 occupied unit cells splits into 4 subcells, giving 32
    /// equal-mass bins for goodness-of-fit tests.
    fn cell_index(&self, x: &[f64]) -> Option<usize> {
        if !self.in_support(x) {
            return None;
        }
        // Half-unit grid over the board: 8 columns x 8 rows.
        let c = (2.0 * (x[0] / self.scale + 2.0)).floor() as usize; // 0..8
        let r = (2.0 * (x[1] / self.scale + 2.0)).floor() as usize; // 0..8
        // Within a column, the occupied rows are two adjacent pairs; shift
        // odd-parity columns down so both cases collapse to {0, 1, 4, 5},
        // then close the gap.
        let shifted = if (c / 2) % 2 == 1 { r - 2 } else { r };
        let slot = if shifted >= 4 { shifted - 2 } else { shifted };
        Some(c * 4 + slot)
    }

    /// Pearson chi-square statistic of `points` against the uniform
    /// 32-cell law, counting only support cells; any point outside the
    /// support is tallied separately and makes the statistic infinite.
    /// Returns (statistic, degrees of freedom).
    pub fn chi_square(&self, points: &[Vec<f64>]) -> (f64, usize) {
        let mut counts = [0usize; N_CELLS];
        let mut outside = 0usize;
        for p in points {
            match self.cell_index(p) {
                Some(i) => counts[i] += 1,
                None => outside += 1,
            }
        }
        if outside > 0 {
            return (f64::INFINITY, N_CELLS - 1);
        }
        let expected = points.len() as f64 / N_CELLS as f64;
        let stat = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        (stat, N_CELLS - 1)
    }
}

/// Map a coordinate in [lo, hi) onto {0, .., levels-1} by equal-width bins
/// (values at or beyond hi clamp into the last bin).
pub fn quantize(v: f64, lo: f64, hi: f64, levels: usize) -> usize {
    let t = (v - lo) / (hi - lo) * levels as f64;
    (t.floor() as isize).clamp(0, levels as isize - 1) as usize
}

/// Quantize a batch of 2-D points into integer pairs.
pub fn quantize_points(points: &[Vec<f64>], lo: f64, hi: f64, levels: usize) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| {
            p.iter()
                .map(|&v| quantize(v, lo, hi, levels) as f64)
                .collect()
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic, sup_t |F_a(t) - F_b(t)|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        if sa[i] <= sb[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Critical value for the two-sample KS test at significance alpha
/// (asymptotic): c(alpha) * sqrt((n + m) / (n * m)).
pub fn ks_critical(alpha: f64, n: usize, m: usize) -> f64 {
    // c(alpha) = sqrt(-ln(alpha / 2) / 2)
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * (((n + m) as f64) / ((n * m) as f64)).sqrt()
}
