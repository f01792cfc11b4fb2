//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use rayon::prelude::*;

use dcdc_core::chain::{
    sample_transition_pair, BuiltinChain, Chain, ChainSpec, DatasetSource, InitialPoint,
};
use dcdc_core::domain::{DomainBox, Norm};
use dcdc_core::net::{NetSpec, ValueNet};
use dcdc_core::rng::{StreamRng, Streams};
use dcdc_core::trainer::loss_grad_estimate;
use dcdc_core::value::{UFunction, ValueFunction};

pub fn logistic_chain() -> BuiltinChain {
    ChainSpec::LogisticSgd {
        dataset: DatasetSource::Generate { m: 100 },
        lambda: 1.0,
        alpha: 0.1,
        batch: 10,
        half_width: 50.0,
    }
    .build(Streams::new(7))
    .unwrap()
}

/// The empirical law of a frozen sample: `X_0` uniform over `points`, each
/// map uniform over `maps`.
pub struct Frozen<'a> {
    pub inner: &'a BuiltinChain,
    pub points: Vec<Vec<f64>>,
    pub maps: Vec<<BuiltinChain as Chain>::Map>,
}

impl<'a> Frozen<'a> {
    pub fn draw(inner: &'a BuiltinChain, points: usize, maps: usize, rng: &mut StreamRng) -> Self {
        let points = (0..points)
            .map(|_| inner.domain().sample_uniform(rng))
            .collect();
        let maps = (0..maps).map(|_| inner.sample_map(rng)).collect();
        Self {
            inner,
            points,
            maps,
        }
    }

    /// `mean_x (K_hat V(x) - V(x) + U)^2` over the frozen sample.
    pub fn loss(&self, v: &ValueNet, u: f64) -> f64 {
        let total: f64 = self
            .points
            .par_iter()
            .map(|x| {
                let mut y = vec![0.0; x.len()];
                let k: f64 = self
                    .maps
                    .iter()
                    .map(|m| {
                        let d = self.inner.lipschitz_at(m, x);
                        if d == 0.0 {
                            return 0.0;
                        }
                        self.inner.map_into(m, x, &mut y);
                        d * v.value(&y)
                    })
                    .sum::<f64>()
                    / self.maps.len() as f64;
                (k - v.value(x) + u).powi(2)
            })
            .sum();
        total / self.points.len() as f64
    }
}

impl Chain for Frozen<'_> {
    type Map = usize;

    fn name(&self) -> &str {
        "frozen"
    }
    fn domain(&self) -> &DomainBox {
        self.inner.domain()
    }
    fn norm(&self) -> Norm {
        self.inner.norm()
    }
    fn sample_map(&self, rng: &mut StreamRng) -> usize {
        rng.random_range(0..self.maps.len())
    }
    fn map_into(&self, map: &usize, x: &[f64], out: &mut [f64]) {
        self.inner.map_into(&self.maps[*map], x, out)
    }
    fn lipschitz_at(&self, map: &usize, x: &[f64]) -> f64 {
        self.inner.lipschitz_at(&self.maps[*map], x)
    }
    fn lipschitz_bound(&self, map: &usize) -> f64 {
        self.inner.lipschitz_bound(&self.maps[*map])
    }
    fn df_lipschitz_bound(&self, map: &usize) -> Option<f64> {
        self.inner.df_lipschitz_bound(&self.maps[*map])
    }
    fn sample_reference(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.points[rng.random_range(0..self.points.len())].clone()
    }
}

/// One coordinate of the unbiasedness comparison.
#[derive(Debug)]
pub struct CoordCheck {
    pub index: usize,
    pub mean: f64,
    pub std_error: f64,
    pub finite_difference: f64,
}

impl CoordCheck {
    pub fn z(&self) -> f64 {
        (self.mean - self.finite_difference).abs() / self.std_error
    }
}

/// Mean of the single-triple gradient estimate under the frozen empirical
/// law against the central difference of the frozen empirical loss, on
/// `coords` random parameter coordinates.
pub fn unbiasedness(seed: u64, coords: usize, resamples: usize) -> Vec<CoordCheck> {
    let chain = logistic_chain();
    let streams = Streams::new(seed);
    let frozen = Frozen::draw(&chain, 200, 2000, &mut streams.child(0).rng());
    let spec = NetSpec::new(2, vec![8]).with_input_box(chain.domain().clone());
    let net = ValueNet::init(spec, streams.child(1)).unwrap();
    let u = 0.1;
    let uf = UFunction::constant(u).unwrap();
    let mut pick = streams.child(2).rng();
    let mut idx: Vec<usize> = (0..net.param_count()).collect();
    for i in 0..coords {
        let j = pick.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx.truncate(coords);

    let samples: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams.child(3).child(r as u64).rng();
            let t = sample_transition_pair(&frozen, &InitialPoint::Reference, &mut rng).unwrap();
            let g = loss_grad_estimate(&net, &frozen, &uf, &t).unwrap();
            idx.iter().map(|&i| g[i]).collect()
        })
        .collect();

    let h = 1e-5;
    idx.iter()
        .enumerate()
        .map(|(c, &i)| {
            let n = resamples as f64;
            let mean = samples.iter().map(|s| s[c]).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s[c] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            CoordCheck {
                index: i,
                mean,
                std_error: (var / n).sqrt(),
                finite_difference: (frozen.loss(&plus, u) - frozen.loss(&minus, u)) / (2.0 * h),
            }
        })
        .collect()
}

/// Largest violation ratio `|g - fd| / (1e-4 |fd| + 1e-7)` of the parameter
/// gradient against central differences (`h = 1e-5`) over `pairs` random
/// networks and inputs. Values at most 1 pass.
#[allow(clippy::needless_range_loop)]
pub fn backprop_violation(pairs: usize, seed: u64) -> f64 {
    let mut rng = Streams::new(seed).rng();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..pairs {
        let dim = rng.random_range(1..=3);
        let layers = rng.random_range(1..=2);
        let widths: Vec<usize> = (0..layers).map(|_| rng.random_range(2..=12)).collect();
        let dom = DomainBox::cube(dim, -2.0, 3.0).unwrap();
        let spec = NetSpec::new(dim, widths).with_input_box(dom.clone());
        let mut net = ValueNet::init(spec, Streams::new(seed).child(p as u64)).unwrap();
        for w in net.params_mut() {
            *w += rng.random_range(-1.0..1.0);
        }
        let x = dom.sample_uniform(&mut rng);
        let g = net.grad_params(&x).unwrap();
        for i in 0..net.param_count() {
            let mut a = net.clone();
            a.params_mut()[i] += h;
            let mut b = net.clone();
            b.params_mut()[i] -= h;
            let fd = (a.forward(&x).unwrap() - b.forward(&x).unwrap()) / (2.0 * h);
            worst = worst.max((g[i] - fd).abs() / (1e-4 * fd.abs() + 1e-7));
        }
    }
    worst
}

/// Least-squares slope of `log y` on `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
