//! State spaces: axis-aligned boxes, and the norm used to measure distances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm in which a chain's local Lipschitz constant is expressed.
///
/// Bounds produced for a chain hold in the Wasserstein distance induced by
/// this norm. Since `|v|_2 <= |v|_1`, an L1 bound is also a Euclidean bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Euclidean,
    L1,
}

impl Norm {
    pub fn length(&self, v: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
            Norm::L1 => v.iter().map(|a| a.abs()).sum(),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Norm::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// Closed box `[lower_0, upper_0] x ... x [lower_{d-1}, upper_{d-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBox> for DomainBox {
    type Error = Error;
    fn try_from(r: RawBox) -> Result<Self> {
        DomainBox::new(r.lower, r.upper)
    }
}

impl From<DomainBox> for RawBox {
    fn from(b: DomainBox) -> Self {
        RawBox {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

/// Relative slack allowed when testing membership, to absorb rounding in maps
/// that land exactly on a face.
const MEMBERSHIP_SLACK: f64 = 1e-9;

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "bound lengths {} and {} must agree and be positive",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidDomain(format!(
                    "dimension {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l)
    }

    pub fn max_width(&self) -> f64 {
        self.widths().fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| {
                    let slack = MEMBERSHIP_SLACK * (u - l);
                    *v >= l - slack && *v <= u + slack
                })
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(Error::DomainViolation(x.to_vec()));
        }
        Ok(())
    }

    /// Uniform draw from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }

    /// Points per axis of the coarsest lattice with at least `target` points.
    pub fn lattice_side(&self, target: usize) -> usize {
        let d = self.dim() as u32;
        let mut n = (target.max(1) as f64).powf(1.0 / d as f64).round().max(2.0) as usize;
        while n.saturating_pow(d) < target {
            n += 1;
        }
        n
    }

    /// Full tensor lattice with `per_axis` evenly spaced points on each axis,
    /// endpoints included. Points are ordered with the last axis fastest.
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = per_axis.max(2);
        let d = self.dim();
        let total = n.pow(d as u32);
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..n)
                    .map(|k| {
                        let t = k as f64 / (n - 1) as f64;
                        self.lower[i] + t * (self.upper[i] - self.lower[i])
                    })
                    .collect()
            })
            .collect();
        (0..total)
            .map(|mut idx| {
                let mut p = vec![0.0; d];
                for i in (0..d).rev() {
                    p[i] = axes[i][idx % n];
                    idx /= n;
                }
                p
            })
            .collect()
    }

    /// Euclidean covering radius of [`DomainBox::lattice`]: half the cell diagonal.
    pub fn lattice_covering_radius(&self, per_axis: usize) -> f64 {
        let n = per_axis.max(2);
        self.widths()
            .map(|w| {
                let h = 0.5 * w / (n - 1) as f64;
                h * h
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Maps `x` to `[-1, 1]^d` affinely.
    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            let c = 0.5 * (self.lower[i] + self.upper[i]);
            let h = 0.5 * (self.upper[i] - self.lower[i]);
            out[i] = (x[i] - c) / h;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    #[test]
    fn rejects_degenerate_bounds() {
        assert!(DomainBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(DomainBox::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(DomainBox::new(vec![], vec![]).is_err());
        assert!(DomainBox::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn lattice_shape_and_radius() {
        let b = DomainBox::cube(2, 0.0, 1.0).unwrap();
        let pts = b.lattice(11);
        assert_eq!(pts.len(), 121);
        assert_eq!(pts[0], vec![0.0, 0.0]);
        assert_eq!(pts[1], vec![0.0, 0.1]);
        assert_eq!(pts[120], vec![1.0, 1.0]);
        let r = b.lattice_covering_radius(11);
        assert!((r - 0.05 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.lattice_side(121), 11);
        assert_eq!(b.lattice_side(122), 12);
    }

    #[test]
    fn uniform_sample_mean_centered() {
        let b = DomainBox::cube(1, -0.5, 0.5).unwrap();
        let mut rng = Streams::new(1).rng();
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| b.sample_uniform(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn l1_dominates_euclidean() {
        let v = [0.3, -0.4];
        assert!((Norm::Euclidean.length(&v) - 0.5).abs() < 1e-15);
        assert!((Norm::L1.length(&v) - 0.7).abs() < 1e-15);
    }
}
