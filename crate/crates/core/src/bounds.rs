//! Wasserstein bounds from a certified contractive drift.
//!
//! Exponential: `W(X_n, X_inf) <= C r^n` with `r = 1 - inf U / sup V` and
//! `C = E[|X_0 - X_1| V(X_0 + W (X_1 - X_0))] / (inf U inf V / sup V)`,
//! `W ~ U[0, 1]` independent.
//!
//! Polynomial, from a sequence `K V_k <= V_k - V_{k-1}`, `k = 1..m`:
//! `W(X_n, X_inf) <= E[|X_0 - X_1| V_m(...)] / (inf V_0 prod_{k=1}^{m-1} (1 + n/k))`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certifier::Certificate;
use crate::chain::Chain;
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::stats::mean_se;
use crate::value::ValueFunction;

/// Law of `X_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDistribution {
    Point {
        point: Vec<f64>,
    },
    /// Uniform on the chain's domain.
    Uniform,
}

impl InitialDistribution {
    fn sample<C: Chain + ?Sized>(&self, chain: &C, rng: &mut crate::rng::StreamRng) -> Vec<f64> {
        match self {
            InitialDistribution::Point { point } => point.clone(),
            InitialDistribution::Uniform => chain.sample_reference(rng),
        }
    }

    fn check<C: Chain + ?Sized>(&self, chain: &C) -> Result<()> {
        match self {
            InitialDistribution::Point { point } => chain.domain().check(point),
            InitialDistribution::Uniform => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    Certificate,
    Analytic,
}

/// The three constants entering the exponential bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftEvidence {
    pub inf_u: f64,
    pub inf_v: f64,
    pub sup_v: f64,
    pub source: EvidenceSource,
}

impl DriftEvidence {
    /// `inf U = u~ - eps` with the widened extrema of `V`.
    pub fn from_certificate(cert: &Certificate) -> Result<Self> {
        cert.ensure_valid()?;
        Ok(Self {
            inf_u: cert.effective_inf_u(),
            inf_v: cert.extrema.inf_v_widened,
            sup_v: cert.extrema.sup_v_widened,
            source: EvidenceSource::Certificate,
        })
    }

    /// Known constants, for chains with a closed-form solution.
    pub fn exact(inf_u: f64, inf_v: f64, sup_v: f64) -> Result<Self> {
        if !(inf_u > 0.0 && inf_v > 0.0 && sup_v >= inf_v && sup_v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < inf U, 0 < inf V <= sup V, got {inf_u}, {inf_v}, {sup_v}"
            )));
        }
        Ok(Self {
            inf_u,
            inf_v,
            sup_v,
            source: EvidenceSource::Analytic,
        })
    }

    pub fn rate(&self) -> f64 {
        1.0 - self.inf_u / self.sup_v
    }
}

/// Monte-Carlo estimate of `E[|X_0 - X_1| V(X_0 + W (X_1 - X_0))]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMoment {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    /// Interpolated points that fell outside the domain; `sup V` was used there.
    pub fallbacks: usize,
}

pub fn transition_moment<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
    chain: &C,
    v: &V,
    x0: &InitialDistribution,
    sup_v: f64,
    paths: usize,
    streams: Streams,
) -> Result<TransitionMoment> {
    x0.check(chain)?;
    if paths < 2 {
        return Err(Error::InvalidParameter("need at least 2 paths".into()));
    }
    let dom = chain.domain();
    let norm = chain.norm();
    let samples: Vec<(f64, bool)> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = streams.child(p as u64).rng();
            let a = x0.sample(chain, &mut rng);
            let m = chain.sample_map(&mut rng);
            let mut b = vec![0.0; a.len()];
            chain.map_into(&m, &a, &mut b);
            let w: f64 = rng.random();
            let z: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + w * (q - p)).collect();
            let dist = norm.distance(&a, &b);
            if dom.contains(&z) {
                (dist * v.value(&z), false)
            } else {
                (dist * sup_v, true)
            }
        })
        .collect();
    let vals: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let (mean, std_error) = mean_se(&vals);
    let fallbacks = samples.iter().filter(|s| s.1).count();
    if fallbacks > 0 {
        log::warn!("{fallbacks} interpolated points left the domain; sup V used there");
    }
    Ok(TransitionMoment {
        mean,
        std_error,
        paths,
        fallbacks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialBound {
    pub rate: f64,
    /// Shipped pre-multiplier: the estimate plus two standard errors.
    pub c: f64,
    pub c_estimate: f64,
    pub c_std_error: f64,
    pub evidence: DriftEvidence,
    pub numerator: TransitionMoment,
    pub initial: InitialDistribution,
}

impl ExponentialBound {
    pub fn eval(&self, n: u64) -> f64 {
        self.c * self.rate.powf(n as f64)
    }
}

pub fn exponential_bound<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
    evidence: DriftEvidence,
    chain: &C,
    v: &V,
    x0: &InitialDistribution,
    mc_paths: usize,
    streams: Streams,
) -> Result<ExponentialBound> {
    if !(evidence.inf_u > 0.0) {
        return Err(Error::InvalidCertificate(format!(
            "effective inf U = {} is not positive",
            evidence.inf_u
        )));
    }
    let rate = evidence.rate();
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::DegenerateRate(rate));
    }
    let numerator = transition_moment(chain, v, x0, evidence.sup_v, mc_paths, streams)?;
    let denom = evidence.inf_u * evidence.inf_v / evidence.sup_v;
    let c_estimate = numerator.mean / denom;
    let c_std_error = numerator.std_error / denom;
    Ok(ExponentialBound {
        rate,
        c: c_estimate + 2.0 * c_std_error,
        c_estimate,
        c_std_error,
        evidence,
        numerator,
        initial: x0.clone(),
    })
}

/// Factor by which stage `k`'s lower function must be shrunk so that the
/// certified inequality reads `K V_k <= V_k - s_k V_{k-1}`.
///
/// The stage certificate gives `K V_k <= V_k - U_k + eta` with
/// `eta = max(K_N V - V + U) + eps` and `U_k >= floor`, hence
/// `s_k = min(1, 1 - eta / floor)`.
pub fn stage_scale(cert: &Certificate) -> f64 {
    let eta = cert.drift_with_u.max + cert.config.epsilon;
    (1.0 - eta / cert.u_floor).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialBound {
    pub order: usize,
    /// Shipped numerator: estimate plus two standard errors.
    pub numerator: f64,
    pub moment: TransitionMoment,
    /// `inf V_0` after the stage rescaling.
    pub inf_v0: f64,
    /// Lower bound of the base function before rescaling.
    pub base_inf_v0: f64,
    pub stage_scales: Vec<f64>,
    pub initial: InitialDistribution,
}

impl PolynomialBound {
    /// Bound from explicit constants.
    pub fn from_parts(order: usize, numerator: f64, inf_v0: f64) -> Result<Self> {
        if order < 1 || !(numerator >= 0.0) || !(inf_v0 > 0.0) {
            return Err(Error::InvalidParameter(
                "polynomial bound needs m >= 1 and positive constants".into(),
            ));
        }
        Ok(Self {
            order,
            numerator,
            moment: TransitionMoment {
                mean: numerator,
                std_error: 0.0,
                paths: 0,
                fallbacks: 0,
            },
            inf_v0,
            base_inf_v0: inf_v0,
            stage_scales: vec![1.0; order],
            initial: InitialDistribution::Uniform,
        })
    }

    pub fn denominator(&self, n: u64) -> f64 {
        let n = n as f64;
        (1..self.order).fold(self.inf_v0, |acc, k| acc * (1.0 + n / k as f64))
    }

    pub fn eval(&self, n: u64) -> f64 {
        self.numerator / self.denominator(n)
    }
}

/// Polynomial bound from the certificates of stages `1..=m` and the final net.
///
/// `base_inf_v0` is the lower bound of the reward the first stage was trained against.
pub fn polynomial_bound<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
    certs: &[Certificate],
    base_inf_v0: f64,
    v_m: &V,
    chain: &C,
    x0: &InitialDistribution,
    mc_paths: usize,
    streams: Streams,
) -> Result<PolynomialBound> {
    if certs.is_empty() {
        return Err(Error::InvalidParameter("need at least one stage".into()));
    }
    if !(base_inf_v0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inf V_0 must be positive, got {base_inf_v0}"
        )));
    }
    let mut scales = Vec::with_capacity(certs.len());
    for (k, c) in certs.iter().enumerate() {
        let s = stage_scale(c);
        if !(s > 0.0) {
            return Err(Error::InvalidStage {
                stage: k + 1,
                reason: format!(
                    "max K^V - V + U = {:.6} plus eps exceeds the floor {:.6}",
                    c.drift_with_u.max, c.u_floor
                ),
            });
        }
        scales.push(s);
    }
    let last = certs.last().expect("non-empty");
    let moment = transition_moment(
        chain,
        v_m,
        x0,
        last.extrema.sup_v_widened,
        mc_paths,
        streams,
    )?;
    Ok(PolynomialBound {
        order: certs.len(),
        numerator: moment.mean + 2.0 * moment.std_error,
        moment,
        inf_v0: base_inf_v0 * scales.iter().product::<f64>(),
        base_inf_v0,
        stage_scales: scales,
        initial: x0.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    Exponential(ExponentialBound),
    Polynomial(PolynomialBound),
}

impl Bound {
    pub fn eval(&self, n: u64) -> f64 {
        match self {
            Bound::Exponential(b) => b.eval(n),
            Bound::Polynomial(b) => b.eval(n),
        }
    }

    pub fn headline(&self) -> String {
        match self {
            Bound::Exponential(b) => {
                format!(
                    "W(X_n, X_inf) <= {:.4} * {:.8}^n  (r = 1 - {:.4e})",
                    b.c,
                    b.rate,
                    1.0 - b.rate
                )
            }
            Bound::Polynomial(b) => format!(
                "W(X_n, X_inf) <= {:.4} / ({:.4e} * prod_{{k=1}}^{} (1 + n/k))",
                b.numerator,
                b.inf_v0,
                b.order - 1
            ),
        }
    }

    /// Smallest `n` with `bound(n) < threshold`, if any.
    pub fn first_below(&self, threshold: f64) -> Option<u64> {
        if self.eval(0) < threshold {
            return Some(0);
        }
        match self {
            Bound::Exponential(b) => {
                // C r^n < t  <=>  n > ln(t / C) / ln r.
                let x = (threshold / b.c).ln() / b.rate.ln();
                if !x.is_finite() || x > 1e18 {
                    return None;
                }
                let mut n = x.floor() as u64 + 1;
                // Guard the closed form against rounding at the boundary.
                while n > 0 && b.eval(n - 1) < threshold {
                    n -= 1;
                }
                while b.eval(n) >= threshold {
                    n += 1;
                }
                Some(n)
            }
            Bound::Polynomial(b) => {
                if b.order < 2 {
                    return None;
                }
                let mut hi = 1u64;
                while b.eval(hi) >= threshold {
                    if hi > 1 << 60 {
                        return None;
                    }
                    hi *= 2;
                }
                let mut lo = hi / 2;
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if b.eval(mid) < threshold {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Some(hi)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub threshold: f64,
    pub first_n: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub headline: String,
    pub bound: Bound,
    pub rows: Vec<(u64, f64)>,
    pub crossings: Vec<Crossing>,
    pub chain_hash: Option<String>,
    pub net_hash: Option<String>,
}

pub const THRESHOLDS: [f64; 3] = [1.0, 0.1, 0.01];

/// Default horizon: 0, then roughly geometric steps up to `max_n`.
pub fn default_horizon(max_n: u64) -> Vec<u64> {
    let mut v = vec![0];
    let mut n = 1u64;
    while n <= max_n {
        for k in [1, 2, 5] {
            if n * k <= max_n {
                v.push(n * k);
            }
        }
        n *= 10;
    }
    v
}

pub fn bound_report(bound: Bound, horizon: &[u64]) -> BoundReport {
    BoundReport {
        headline: bound.headline(),
        rows: horizon.iter().map(|&n| (n, bound.eval(n))).collect(),
        crossings: THRESHOLDS
            .iter()
            .map(|&t| Crossing {
                threshold: t,
                first_n: bound.first_below(t),
            })
            .collect(),
        bound,
        chain_hash: None,
        net_hash: None,
    }
}

impl BoundReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.headline);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>12}  {:>14}", "n", "bound");
        for (n, v) in &self.rows {
            let _ = writeln!(s, "{n:>12}  {v:>14.6e}");
        }
        let _ = writeln!(s);
        for c in &self.crossings {
            match c.first_n {
                Some(n) => {
                    let _ = writeln!(s, "first n with bound < {}: {n}", c.threshold);
                }
                None => {
                    let _ = writeln!(s, "bound never drops below {}", c.threshold);
                }
            }
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = dir.join("bound.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("bound.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let csv_path = dir.join("bound.csv");
        let mut w =
            csv::Writer::from_path(&csv_path).map_err(|e| Error::io(&csv_path, e.into()))?;
        let err = |e: csv::Error| Error::io(&csv_path, e.into());
        w.write_record(["n", "bound"]).map_err(err)?;
        for (n, v) in &self.rows {
            w.write_record([n.to_string(), v.to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }
}
