use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Chain;
use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Binary-labelled points in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticDataset {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    x1: f64,
    x2: f64,
    y: f64,
}

impl LogisticDataset {
    /// `m` points uniform on `[-1/2, 1/2]^2`; the label is `Ber(0.9)` when the
    /// first coordinate is the larger one and `Ber(0.1)` otherwise.
    pub fn generate(m: usize, rng: &mut StreamRng) -> Self {
        let mut x = Vec::with_capacity(m);
        let mut y = Vec::with_capacity(m);
        for _ in 0..m {
            let p = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let prob = if p[0] > p[1] { 0.9 } else { 0.1 };
            y.push(if rng.random::<f64>() < prob { 1.0 } else { 0.0 });
            x.push(p);
        }
        Self { x, y }
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut ds = Self {
            x: vec![],
            y: vec![],
        };
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if row.y != 0.0 && row.y != 1.0 {
                return Err(Error::Config(format!(
                    "{}: label {} is not 0 or 1",
                    path.display(),
                    row.y
                )));
            }
            ds.x.push([row.x1, row.x2]);
            ds.y.push(row.y);
        }
        if ds.x.is_empty() {
            return Err(Error::Config(format!("{}: empty dataset", path.display())));
        }
        Ok(ds)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (p, y) in self.x.iter().zip(&self.y) {
            w.serialize(Row {
                x1: p[0],
                x2: p[1],
                y: *y,
            })
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn max_abs_coord(&self) -> f64 {
        self.x
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `max |sigma''|`, attained at `z = ln(2 +- sqrt 3)`.
const SIGMOID_CURVATURE: f64 = 0.096_225_044_864_937_6;

/// Mini-batch SGD for L2-regularized logistic regression:
///
/// `f(b) = b (1 - lambda alpha / m) + (alpha / beta) sum_{i in B} [y_i - sigma(b.x_i)] x_i`
///
/// with `B` a uniform `beta`-subset of the data. `Df(b)` is the spectral norm
/// of the Jacobian `(1 - lambda alpha / m) I - (alpha / beta) sum sigma'(b.x_i) x_i x_i^T`.
#[derive(Debug, Clone)]
pub struct LogisticSgd {
    data: LogisticDataset,
    lambda: f64,
    alpha: f64,
    batch: usize,
    domain: DomainBox,
}

impl LogisticSgd {
    pub fn new(
        data: LogisticDataset,
        lambda: f64,
        alpha: f64,
        batch: usize,
        domain: DomainBox,
    ) -> Result<Self> {
        if data.is_empty() || data.x.len() != data.y.len() {
            return Err(Error::InvalidParameter(
                "dataset must be nonempty with one label per point".into(),
            ));
        }
        if !(lambda > 0.0 && alpha > 0.0) {
            return Err(Error::InvalidParameter(
                "lambda and alpha must be positive".into(),
            ));
        }
        if batch == 0 || batch > data.len() {
            return Err(Error::InvalidParameter(format!(
                "batch size {batch} must lie in 1..={}",
                data.len()
            )));
        }
        if domain.dim() != 2 {
            return Err(Error::InvalidDomain(
                "logistic_sgd lives in the plane".into(),
            ));
        }
        let shrink = 1.0 - lambda * alpha / data.len() as f64;
        if shrink <= 0.0 {
            return Err(Error::InvalidParameter("need lambda * alpha < m".into()));
        }
        Ok(Self {
            data,
            lambda,
            alpha,
            batch,
            domain,
        })
    }

    pub fn data(&self) -> &LogisticDataset {
        &self.data
    }

    pub fn shrink(&self) -> f64 {
        1.0 - self.lambda * self.alpha / self.data.len() as f64
    }

    /// Smallest `L` for which `[-L, L]^2` is absorbing for every batch:
    /// `(1 - lambda alpha / m) L + alpha max|x_ij| <= L`.
    pub fn absorbing_half_width(&self) -> f64 {
        self.data.len() as f64 * self.data.max_abs_coord() / self.lambda
    }

    /// Whether the configured domain contains `[-L, L]^2` with `L` from
    /// [`LogisticSgd::absorbing_half_width`] and is symmetric about it.
    pub fn domain_provably_absorbing(&self) -> bool {
        let l = self.absorbing_half_width();
        self.domain
            .lower()
            .iter()
            .zip(self.domain.upper())
            .all(|(lo, hi)| -lo >= l && *hi >= l && (lo + hi).abs() < 1e-12)
    }

    fn jacobian(&self, batch: &[u16], b: &[f64]) -> (f64, f64, f64) {
        let scale = self.alpha / self.batch as f64;
        let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
        for &i in batch {
            let x = &self.data.x[i as usize];
            let s = sigmoid(b[0] * x[0] + b[1] * x[1]);
            let w = s * (1.0 - s);
            a11 += w * x[0] * x[0];
            a12 += w * x[0] * x[1];
            a22 += w * x[1] * x[1];
        }
        let c = self.shrink();
        (c - scale * a11, -scale * a12, c - scale * a22)
    }
}

/// Spectral norm of the symmetric matrix `[[a, b], [b, c]]`.
pub(crate) fn sym2_spectral_norm(a: f64, b: f64, c: f64) -> f64 {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean + rad).abs().max((mean - rad).abs())
}

impl Chain for LogisticSgd {
    /// Indices of the mini-batch.
    type Map = Vec<u16>;

    fn name(&self) -> &str {
        "logistic_sgd"
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn sample_map(&self, rng: &mut StreamRng) -> Vec<u16> {
        index::sample(rng, self.data.len(), self.batch)
            .into_iter()
            .map(|i| i as u16)
            .collect()
    }

    fn map_into(&self, batch: &Vec<u16>, b: &[f64], out: &mut [f64]) {
        let scale = self.alpha / self.batch as f64;
        let c = self.shrink();
        let (mut g0, mut g1) = (0.0, 0.0);
        for &i in batch {
            let x = &self.data.x[i as usize];
            let r = self.data.y[i as usize] - sigmoid(b[0] * x[0] + b[1] * x[1]);
            g0 += r * x[0];
            g1 += r * x[1];
        }
        out[0] = c * b[0] + scale * g0;
        out[1] = c * b[1] + scale * g1;
    }

    fn lipschitz_at(&self, batch: &Vec<u16>, b: &[f64]) -> f64 {
        let (a, o, c) = self.jacobian(batch, b);
        sym2_spectral_norm(a, o, c)
    }

    /// The Jacobian's eigenvalues lie in `[shrink - (alpha/beta) sum |x_i|^2 / 4, shrink]`.
    fn lipschitz_bound(&self, batch: &Vec<u16>) -> f64 {
        let scale = self.alpha / self.batch as f64;
        let spread: f64 = batch
            .iter()
            .map(|&i| {
                let x = &self.data.x[i as usize];
                0.25 * (x[0] * x[0] + x[1] * x[1])
            })
            .sum();
        let c = self.shrink();
        c.max((c - scale * spread).abs())
    }

    /// Weyl's inequality with `|sigma'(s) - sigma'(t)| <= max|sigma''| |s - t|`.
    fn df_lipschitz_bound(&self, batch: &Vec<u16>) -> Option<f64> {
        let scale = self.alpha / self.batch as f64;
        Some(
            scale
                * batch
                    .iter()
                    .map(|&i| {
                        let x = &self.data.x[i as usize];
                        SIGMOID_CURVATURE * (x[0] * x[0] + x[1] * x[1]).powf(1.5)
                    })
                    .sum::<f64>(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn chain(seed: u64) -> LogisticSgd {
        let data = LogisticDataset::generate(100, &mut Streams::new(seed).rng());
        LogisticSgd::new(data, 1.0, 0.1, 10, DomainBox::cube(2, -50.0, 50.0).unwrap()).unwrap()
    }

    #[test]
    fn spectral_norm_of_symmetric_2x2() {
        assert!((sym2_spectral_norm(2.0, 0.0, -3.0) - 3.0).abs() < 1e-15);
        // [[1, 2], [2, 1]] has eigenvalues 3 and -1.
        assert!((sym2_spectral_norm(1.0, 2.0, 1.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn df_at_origin_is_below_regularization_level() {
        let c = chain(5);
        let mut rng = Streams::new(9).rng();
        for _ in 0..1000 {
            let batch = c.sample_map(&mut rng);
            let df = c.lipschitz_at(&batch, &[0.0, 0.0]);
            assert!(df > 0.0 && df <= 0.999 + 1e-15, "{df}");
        }
    }

    #[test]
    fn batches_are_subsets_without_repeats() {
        let c = chain(5);
        let mut rng = Streams::new(2).rng();
        let mut b = c.sample_map(&mut rng);
        assert_eq!(b.len(), 10);
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 10);
    }

    #[test]
    fn half_width_fifty_is_absorbing() {
        let c = chain(5);
        assert!(c.absorbing_half_width() <= 50.0);
        assert!(c.domain_provably_absorbing());
    }

    #[test]
    fn labels_follow_the_larger_coordinate() {
        let ds = LogisticDataset::generate(20_000, &mut Streams::new(1).rng());
        let (mut hit, mut n) = (0.0, 0.0);
        for (p, y) in ds.x.iter().zip(&ds.y) {
            if p[0] > p[1] {
                hit += y;
                n += 1.0;
            }
        }
        assert!((hit / n - 0.9).abs() < 0.02);
    }

    #[test]
    fn csv_round_trip() {
        let ds = LogisticDataset::generate(7, &mut Streams::new(1).rng());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.save_csv(&p).unwrap();
        assert_eq!(LogisticDataset::load_csv(&p).unwrap(), ds);
    }
}
