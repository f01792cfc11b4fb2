//! Statistical verification of a trained drift function.
//!
//! On a point set `M` the empirical operator `K_N V(x) = (1/N) sum Df_k(x) V(f_k(x))`
//! is compared with `V`. The certified drift level is
//! `u~ = inf_M [V - K_N V]`, and the certificate is valid when `u~ > eps`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::Chain;
use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::net::ValueNet;
use crate::rng::{purpose, StreamRng, Streams};
use crate::stats::{mean_se, mean_std};
use crate::value::{UFunction, ValueFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    #[default]
    Lattice,
    Uniform,
}

fn default_eps() -> f64 {
    0.01
}
fn default_delta() -> f64 {
    0.05
}
fn default_covering_grid() -> usize {
    10_000
}
fn default_probes() -> usize {
    2_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertConfig {
    /// Number of evaluation points. A lattice rounds this up to a full grid.
    pub points: usize,
    /// Maps per point.
    pub maps: usize,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub point_source: PointSource,
    /// Reference lattice size for bounding the covering radius of a uniform point set.
    #[serde(default = "default_covering_grid")]
    pub covering_grid_points: usize,
    /// Points used for the Lipschitz estimates.
    #[serde(default = "default_probes")]
    pub lipschitz_probes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl CertConfig {
    pub fn new(points: usize, maps: usize, seed: u64) -> Self {
        Self {
            points,
            maps,
            epsilon: default_eps(),
            delta: default_delta(),
            point_source: PointSource::Lattice,
            covering_grid_points: default_covering_grid(),
            lipschitz_probes: default_probes(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 1 || self.maps < 2 {
            return Err(Error::InvalidParameter(format!(
                "certification needs M >= 1 and N >= 2, got M = {}, N = {}",
                self.points, self.maps
            )));
        }
        if !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(
                "epsilon must be positive and delta in (0, 1)".into(),
            ));
        }
        if self.covering_grid_points < 2 || self.lipschitz_probes < 1000 {
            return Err(Error::InvalidParameter(
                "covering grid needs at least 2 points and the Lipschitz estimate at least 1000 probes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Self {
        let (mean, std) = mean_std(v);
        Self {
            max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std,
        }
    }
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Inputs to the sample-size formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzInputs {
    /// Lipschitz constant of `V` (Euclidean), as the largest finite-difference slope.
    pub dv: Estimate,
    /// Lipschitz constant of `U`; 0 for constant `U`.
    pub du: Estimate,
    /// `E[(sup_x Df(x))^2]`.
    pub e_df2: Estimate,
    /// `E[Lip(Df)]`; 0 for chains with piecewise-constant `Df`.
    pub e_d2f: Estimate,
    /// Set when `Df` has jumps so the smoothness assumption fails.
    pub piecewise_df: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeInputs {
    pub dv: f64,
    pub du: f64,
    pub sup_v: f64,
    pub e_df2: f64,
    pub e_d2f: f64,
}

/// Sample sizes that make `KV - V + U <= eps` hold everywhere with
/// probability `1 - delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub epsilon: f64,
    pub delta: f64,
    pub dim: usize,
    /// Side of the domain; `L~` is rescaled by it for the unit cube.
    pub domain_scale: f64,
    pub inputs: SizeInputs,
    /// `L~ = DV E Df^2 + sup V E D^2 f + DV + DU` on the unit cube.
    pub lipschitz: f64,
    /// `C~ = (2 L~ sqrt(d) / eps)^d`.
    pub cubes: f64,
    /// `ceil(2 C~ ln(C~ e) / delta)`, absent when `C~` is too large to be useful.
    pub recommended_m: Option<u64>,
    /// `8 sup V^2 E Df^2 / (delta eps^2)` before rounding.
    pub n_bound: f64,
    pub recommended_n: Option<u64>,
    /// Human-readable formula used when a count is too large to report.
    pub symbolic: Option<String>,
}

pub const SYMBOLIC_LIMIT: f64 = 1e15;

pub fn sample_sizes(
    epsilon: f64,
    delta: f64,
    inputs: SizeInputs,
    dim: usize,
    domain_scale: f64,
) -> Result<ComplexityEstimate> {
    let SizeInputs {
        dv,
        du,
        sup_v,
        e_df2,
        e_d2f,
    } = inputs;
    if !(epsilon > 0.0 && delta > 0.0 && delta < 1.0 && dim >= 1 && domain_scale > 0.0) {
        return Err(Error::InvalidParameter(
            "sample sizes need eps > 0, delta in (0,1), d >= 1".into(),
        ));
    }
    if [dv, du, sup_v, e_df2, e_d2f]
        .iter()
        .any(|v| !(v.is_finite() && *v >= 0.0))
        || !(sup_v > 0.0)
    {
        return Err(Error::InvalidParameter(format!(
            "invalid Lipschitz inputs {inputs:?}"
        )));
    }
    let lipschitz = (dv * e_df2 + sup_v * e_d2f + dv + du) * domain_scale;
    let cubes = (2.0 * lipschitz * (dim as f64).sqrt() / epsilon).powi(dim as i32);
    let n_bound = 8.0 * sup_v * sup_v * e_df2 / (delta * epsilon * epsilon);
    let mut symbolic = Vec::new();
    let recommended_m = if cubes.is_finite() && cubes <= SYMBOLIC_LIMIT {
        let c = cubes.max(1.0);
        Some((2.0 * c * (c * std::f64::consts::E).ln() / delta).ceil() as u64)
    } else {
        symbolic.push(format!(
            "M = ceil(2 C ln(C e) / delta) with C = (2 * {lipschitz:.4e} * sqrt({dim}) / {epsilon})^{dim} = {cubes:.3e}"
        ));
        None
    };
    let recommended_n = if n_bound <= SYMBOLIC_LIMIT {
        Some(n_bound.ceil() as u64)
    } else {
        symbolic.push(format!("N = ceil({n_bound:.3e})"));
        None
    };
    Ok(ComplexityEstimate {
        epsilon,
        delta,
        dim,
        domain_scale,
        inputs,
        lipschitz,
        cubes,
        recommended_m,
        n_bound,
        recommended_n,
        symbolic: if symbolic.is_empty() {
            None
        } else {
            Some(symbolic.join("; "))
        },
    })
}

/// `K_N V(x)` with `N` fresh maps from `rng`.
pub fn empirical_k_with<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
    net: &V,
    chain: &C,
    x: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> f64 {
    let mut y = vec![0.0; x.len()];
    let mut acc = 0.0;
    for _ in 0..n {
        let m = chain.sample_map(rng);
        let d = chain.lipschitz_at(&m, x);
        if d != 0.0 {
            chain.map_into(&m, x, &mut y);
            acc += d * net.value(&y);
        }
    }
    acc / n as f64
}

/// `K_N V(x)`, rejecting points outside the domain.
pub fn empirical_k<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
    net: &V,
    chain: &C,
    x: &[f64],
    n: usize,
    rng: &mut StreamRng,
) -> Result<f64> {
    chain.domain().check(x)?;
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    Ok(empirical_k_with(net, chain, x, n, rng))
}

/// Largest central-difference gradient norm of `f` over `probes` uniform points.
///
/// The standard error is taken over ten blocks of probes.
pub fn max_slope<F: ValueFunction + ?Sized>(
    f: &F,
    domain: &DomainBox,
    probes: usize,
    streams: Streams,
) -> Estimate {
    let d = domain.dim();
    let h = 1e-4 * domain.max_width();
    let blocks = 10usize;
    let per = probes.div_ceil(blocks);
    let maxima: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = streams.child(b as u64).rng();
            let mut best: f64 = 0.0;
            let mut xp = vec![0.0; d];
            let mut xm = vec![0.0; d];
            for _ in 0..per {
                let x = domain.sample_uniform(&mut rng);
                let mut g2 = 0.0;
                for i in 0..d {
                    xp.copy_from_slice(&x);
                    xm.copy_from_slice(&x);
                    xp[i] = (x[i] + h).min(domain.upper()[i]);
                    xm[i] = (x[i] - h).max(domain.lower()[i]);
                    let g = (f.value(&xp) - f.value(&xm)) / (xp[i] - xm[i]);
                    g2 += g * g;
                }
                best = best.max(g2.sqrt());
            }
            best
        })
        .collect();
    let (_, se) = mean_se(&maxima);
    Estimate {
        value: maxima.iter().cloned().fold(0.0, f64::max),
        std_error: se,
    }
}

/// Estimates `DV`, `DU`, `E Df^2` and `E D^2 f`.
pub fn estimate_lipschitz_inputs<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
    net: &V,
    chain: &C,
    u: &UFunction,
    probes: usize,
    streams: Streams,
) -> Result<LipschitzInputs> {
    if probes < 1000 {
        return Err(Error::InvalidParameter(format!(
            "need at least 1000 probes, got {probes}"
        )));
    }
    let dv = max_slope(net, chain.domain(), probes, streams.child(0));
    let du = if u.is_constant() {
        Estimate {
            value: 0.0,
            std_error: 0.0,
        }
    } else {
        max_slope(u, chain.domain(), probes, streams.child(1))
    };
    let mut rng = streams.child(2).rng();
    let mut df2 = Vec::with_capacity(probes);
    let mut d2f = Vec::with_capacity(probes);
    let mut piecewise = false;
    for _ in 0..probes {
        let m = chain.sample_map(&mut rng);
        df2.push(chain.lipschitz_bound(&m).powi(2));
        match chain.df_lipschitz_bound(&m) {
            Some(v) => d2f.push(v),
            None => {
                piecewise = true;
                d2f.push(0.0);
            }
        }
    }
    let est = |v: &[f64]| {
        let (m, se) = mean_se(v);
        Estimate {
            value: m,
            std_error: se,
        }
    };
    Ok(LipschitzInputs {
        dv,
        du,
        e_df2: est(&df2),
        e_d2f: est(&d2f),
        piecewise_df: piecewise,
    })
}

/// Outcome of a truncated Monte-Carlo evaluation of `V*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub value: f64,
    pub std_error: f64,
    /// `sup U` times the mean running product at the horizon.
    pub tail: f64,
    /// False when the tail exceeds the standard error.
    pub converged: bool,
}

/// `V*(x) = E_x sum_k U(X_k) prod_{l <= k} Df_l(X_{l-1})`, truncated at `horizon`.
pub fn vstar_oracle<C: Chain + ?Sized>(
    chain: &C,
    u: &UFunction,
    x: &[f64],
    horizon: usize,
    paths: usize,
    streams: Streams,
) -> Result<OracleEstimate> {
    chain.domain().check(x)?;
    if paths < 2 {
        return Err(Error::InvalidParameter(
            "oracle needs at least 2 paths".into(),
        ));
    }
    let sup_u = match u {
        UFunction::Constant(c) => *c,
        UFunction::Clamped { .. } => {
            let d = chain.domain();
            d.lattice(d.lattice_side(10_000))
                .iter()
                .map(|p| u.value(p))
                .fold(0.0, f64::max)
        }
    };
    let out: Vec<(f64, f64)> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = streams.child(p as u64).rng();
            let mut xk = x.to_vec();
            let mut y = vec![0.0; x.len()];
            let mut weight = 1.0;
            let mut total = 0.0;
            for _ in 0..horizon {
                total += weight * u.value(&xk);
                let m = chain.sample_map(&mut rng);
                weight *= chain.lipschitz_at(&m, &xk);
                if weight == 0.0 {
                    break;
                }
                chain.map_into(&m, &xk, &mut y);
                std::mem::swap(&mut xk, &mut y);
            }
            (total, weight)
        })
        .collect();
    let totals: Vec<f64> = out.iter().map(|o| o.0).collect();
    let (value, std_error) = mean_se(&totals);
    let tail = sup_u * out.iter().map(|o| o.1).sum::<f64>() / paths as f64;
    let converged = tail <= std_error.max(1e-12);
    if !converged {
        log::warn!(
            "oracle tail {tail:.3e} exceeds standard error {std_error:.3e} at horizon {horizon}"
        );
    }
    Ok(OracleEstimate {
        value,
        std_error,
        tail,
        converged,
    })
}

/// Extrema of `V` over the evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub inf_v: f64,
    pub sup_v: f64,
    /// Euclidean covering radius of the evaluation set, or an upper bound on it.
    pub covering_radius: f64,
    /// `DV` times the covering radius.
    pub widening: f64,
    pub inf_v_widened: f64,
    pub sup_v_widened: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub format: String,
    pub chain: String,
    /// Filled in by callers that know how the chain was built.
    pub chain_hash: Option<String>,
    pub net_hash: String,
    pub config: CertConfig,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// `K_N V(x)` per point.
    pub k_hat: Vec<f64>,
    /// `K_N V(x) - V(x)` per point.
    pub residuals: Vec<f64>,
    /// Statistics of `K_N V - V`.
    pub drift: Summary,
    /// Statistics of `K_N V - V + U`.
    pub drift_with_u: Summary,
    /// `inf_M [V - K_N V]`.
    pub u_tilde: f64,
    /// `inf_M U`.
    pub inf_u_on_points: f64,
    /// Known lower bound of `U` on the whole domain.
    pub u_floor: f64,
    pub extrema: Extrema,
    pub lipschitz: LipschitzInputs,
    pub complexity: ComplexityEstimate,
    /// `Df` is piecewise constant, so the smoothness assumption behind the
    /// sample sizes does not hold and the certificate rests on the empirical margin.
    pub caveat: Option<String>,
    pub valid: bool,
}

pub const CERTIFICATE_FORMAT: &str = "dcdc-certificate-v1";

impl Certificate {
    /// Certified uniform drift level after the `eps` inflation.
    pub fn effective_inf_u(&self) -> f64 {
        self.u_tilde - self.config.epsilon
    }

    pub fn ensure_valid(&self) -> Result<()> {
        if self.valid {
            Ok(())
        } else {
            Err(Error::InvalidCertificate(format!(
                "u~ = {:.6} does not exceed eps = {} (max K^V - V = {:.6})",
                self.u_tilde, self.config.epsilon, self.drift.max
            )))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Certificate = serde_json::from_str(&s)?;
        if c.format != CERTIFICATE_FORMAT {
            return Err(Error::InvalidCertificate(format!(
                "unknown certificate format {}",
                c.format
            )));
        }
        Ok(c)
    }

    /// One row per point: coordinates, `V`, `K_N V`, `K_N V - V`.
    pub fn write_surface_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let d = self.points.first().map_or(0, |p| p.len());
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.extend(["v", "k_hat_v", "residual"].map(String::from));
        let csv_err = |e: csv::Error| Error::io(path, e.into());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.points.len() {
            let mut row: Vec<String> = self.points[i].iter().map(|v| v.to_string()).collect();
            row.push(self.values[i].to_string());
            row.push(self.k_hat[i].to_string());
            row.push(self.residuals[i].to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn evaluation_points(
    domain: &DomainBox,
    cfg: &CertConfig,
    streams: Streams,
) -> (Vec<Vec<f64>>, f64) {
    match cfg.point_source {
        PointSource::Lattice => {
            let side = domain.lattice_side(cfg.points);
            (domain.lattice(side), domain.lattice_covering_radius(side))
        }
        PointSource::Uniform => {
            let mut rng = streams.rng();
            let pts: Vec<Vec<f64>> = (0..cfg.points)
                .map(|_| domain.sample_uniform(&mut rng))
                .collect();
            let r = covering_radius_bound(domain, &pts, cfg.covering_grid_points);
            (pts, r)
        }
    }
}

/// Upper bound on `sup_x min_i |x - p_i|` over the domain: the largest
/// distance from a reference lattice to the point set, plus the lattice's own
/// covering radius.
pub fn covering_radius_bound(domain: &DomainBox, points: &[Vec<f64>], grid_points: usize) -> f64 {
    let side = domain.lattice_side(grid_points);
    let grid = domain.lattice(side);
    let worst = grid
        .par_iter()
        .map(|g| {
            points
                .iter()
                .map(|p| g.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .reduce(|| 0.0, f64::max);
    worst + domain.lattice_covering_radius(side)
}

/// Extrema of `V` over the point set, widened by `DV` times the covering radius.
///
/// `floor` is a known lower bound of `V` (the network's output offset).
pub fn value_extrema(values: &[f64], covering_radius: f64, dv: f64, floor: f64) -> Extrema {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let widening = dv * covering_radius;
    Extrema {
        inf_v: lo,
        sup_v: hi,
        covering_radius,
        widening,
        inf_v_widened: (lo - widening).max(floor),
        sup_v_widened: hi + widening,
    }
}

/// Evaluates `K_N V - V` on the point set and assembles the certificate.
///
/// Point `i` draws its maps from its own stream, so the result does not
/// depend on the number of worker threads.
pub fn certify<C: Chain + ?Sized>(
    net: &ValueNet,
    chain: &C,
    u: &UFunction,
    cfg: &CertConfig,
) -> Result<Certificate> {
    cfg.validate()?;
    if net.spec().input_dim != chain.dim() {
        return Err(Error::DimensionMismatch {
            expected: chain.dim(),
            got: net.spec().input_dim,
        });
    }
    let streams = Streams::new(cfg.seed).child(purpose::CERTIFY);
    let (points, covering_radius) = evaluation_points(chain.domain(), cfg, streams.child(0));
    let map_streams = streams.child(1);
    let evals: Vec<(f64, f64, f64)> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = map_streams.child(i as u64).rng();
            let k = empirical_k_with(net, chain, x, cfg.maps, &mut rng);
            (net.value(x), k, u.value(x))
        })
        .collect();
    let values: Vec<f64> = evals.iter().map(|e| e.0).collect();
    let k_hat: Vec<f64> = evals.iter().map(|e| e.1).collect();
    let residuals: Vec<f64> = evals.iter().map(|e| e.1 - e.0).collect();
    let with_u: Vec<f64> = evals.iter().map(|e| e.1 - e.0 + e.2).collect();
    let drift = Summary::of(&residuals);
    let u_tilde = -drift.max;
    let inf_u_on_points = evals.iter().map(|e| e.2).fold(f64::INFINITY, f64::min);

    let lipschitz = estimate_lipschitz_inputs(
        net,
        chain,
        u,
        cfg.lipschitz_probes,
        Streams::new(cfg.seed).child(purpose::LIPSCHITZ),
    )?;
    let extrema = value_extrema(
        &values,
        covering_radius,
        lipschitz.dv.value,
        net.spec().output.floor(),
    );
    let complexity = sample_sizes(
        cfg.epsilon,
        cfg.delta,
        SizeInputs {
            dv: lipschitz.dv.value,
            du: lipschitz.du.value,
            sup_v: extrema.sup_v_widened,
            e_df2: lipschitz.e_df2.value,
            e_d2f: lipschitz.e_d2f.value,
        },
        chain.dim(),
        chain.domain().max_width(),
    )?;
    let caveat = lipschitz.piecewise_df.then(|| {
        "Df is piecewise constant; the smoothness assumption behind the sample sizes fails and the \
         certificate rests on the empirical margin"
            .to_string()
    });
    Ok(Certificate {
        format: CERTIFICATE_FORMAT.into(),
        chain: chain.name().to_string(),
        chain_hash: None,
        net_hash: net.hash(),
        config: cfg.clone(),
        points,
        values,
        k_hat,
        residuals,
        drift,
        drift_with_u: Summary::of(&with_u),
        u_tilde,
        inf_u_on_points,
        u_floor: u.inf_value(),
        extrema,
        lipschitz,
        complexity,
        caveat,
        valid: u_tilde > cfg.epsilon,
    })
}

/// Repeated `K_N V(x)` draws, used for concentration checks.
pub fn empirical_k_repeats<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
    net: &V,
    chain: &C,
    x: &[f64],
    n: usize,
    repeats: usize,
    streams: Streams,
) -> Result<Vec<f64>> {
    chain.domain().check(x)?;
    Ok((0..repeats)
        .into_par_iter()
        .map(|r| empirical_k_with(net, chain, x, n, &mut streams.child(r as u64).rng()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::testing::Identity;
    use crate::chain::{QuadSgd1d, TandemFluid};
    use crate::net::NetSpec;
    use crate::value::ConstantValue;

    fn constant_net(dim: usize, c: f64) -> ValueNet {
        let mut net = ValueNet::zeros(NetSpec::new(dim, vec![4])).unwrap();
        let b = net.output_bias_index();
        net.params_mut()[b] = (c - 0.01).exp_m1().ln();
        net
    }

    #[test]
    fn identity_chain_reproduces_v() {
        let chain = Identity {
            domain: DomainBox::cube(2, -1.0, 1.0).unwrap(),
        };
        let net = ValueNet::init(NetSpec::new(2, vec![5]), Streams::new(3)).unwrap();
        let x = [0.2, -0.7];
        for n in [1, 7, 100] {
            let k = empirical_k(&net, &chain, &x, n, &mut Streams::new(1).rng()).unwrap();
            assert!((k - net.forward(&x).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_v_on_quad_chain_is_exact() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let v = ConstantValue(2.5);
        let k = empirical_k(&v, &chain, &[0.3], 50, &mut Streams::new(1).rng()).unwrap();
        assert!((k - 2.25).abs() < 1e-14);
    }

    #[test]
    fn tandem_at_full_buffers_is_plain_average() {
        let chain = TandemFluid::standard();
        let net = ValueNet::init(NetSpec::new(2, vec![5]), Streams::new(3)).unwrap();
        let x = [1.0, 1.0];
        let k = empirical_k(&net, &chain, &x, 300, &mut Streams::new(4).rng()).unwrap();
        let mut rng = Streams::new(4).rng();
        let mut y = vec![0.0; 2];
        let mut acc = 0.0;
        for _ in 0..300 {
            let m = chain.sample_map(&mut rng);
            assert_eq!(chain.lipschitz_at(&m, &x), 1.0);
            chain.map_into(&m, &x, &mut y);
            acc += net.forward(&y).unwrap();
        }
        assert!((k - acc / 300.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_k_rejects_outside_points() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        assert!(empirical_k(
            &ConstantValue(1.0),
            &chain,
            &[0.8],
            5,
            &mut Streams::new(1).rng()
        )
        .is_err());
    }

    #[test]
    fn worked_sample_sizes() {
        let inputs = SizeInputs {
            dv: 0.0,
            du: 0.0,
            sup_v: 1.0,
            e_df2: 0.81,
            e_d2f: 0.0,
        };
        // L~ = 1 through the domain scale with DV = 1, DU = 0 and E Df^2 = 0.
        let c = sample_sizes(
            0.1,
            0.1,
            SizeInputs {
                dv: 1.0,
                e_df2: 0.0,
                ..inputs
            },
            1,
            1.0,
        )
        .unwrap();
        assert_eq!(c.lipschitz, 1.0);
        assert!((c.cubes - 20.0).abs() < 1e-12);
        let expect_m = (2.0 * 20.0 * (20.0 * std::f64::consts::E).ln() / 0.1_f64).ceil() as u64;
        assert_eq!(c.recommended_m, Some(expect_m));
        let c = sample_sizes(0.1, 0.1, inputs, 1, 1.0).unwrap();
        assert_eq!(c.recommended_n, Some(6480));
    }

    #[test]
    fn two_dimensional_cube_count() {
        let c = sample_sizes(
            0.01,
            0.05,
            SizeInputs {
                dv: 10.0,
                du: 0.0,
                sup_v: 1.0,
                e_df2: 0.0,
                e_d2f: 0.0,
            },
            2,
            1.0,
        )
        .unwrap();
        let side: f64 = 2.0 * 10.0 * 2f64.sqrt() / 0.01;
        assert!((c.cubes - side * side).abs() / c.cubes < 1e-12);
        assert!((c.cubes - 8e6).abs() / 8e6 < 1e-9);
        let m = c.recommended_m.unwrap() as f64;
        assert!(m > 2.0 * c.cubes / 0.05);
    }

    #[test]
    fn huge_cube_counts_are_symbolic() {
        let c = sample_sizes(
            1e-3,
            0.05,
            SizeInputs {
                dv: 100.0,
                du: 0.0,
                sup_v: 1.0,
                e_df2: 1.0,
                e_d2f: 0.0,
            },
            4,
            1.0,
        )
        .unwrap();
        assert!(c.recommended_m.is_none());
        assert!(c.symbolic.unwrap().contains("M = "));
    }

    #[test]
    fn quad_lipschitz_inputs() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let net = constant_net(1, 1.0);
        let l = estimate_lipschitz_inputs(&net, &chain, &u, 1000, Streams::new(1)).unwrap();
        assert!((l.e_df2.value - 0.81).abs() < 1e-12);
        assert_eq!(l.e_d2f.value, 0.0);
        assert!(!l.piecewise_df);
        assert!(l.dv.value < 1e-8);
        let t = TandemFluid::standard();
        let l = estimate_lipschitz_inputs(&constant_net(2, 1.0), &t, &u, 1000, Streams::new(1))
            .unwrap();
        assert_eq!(l.e_df2.value, 1.0);
        assert!(l.piecewise_df);
    }

    #[test]
    fn untrained_net_fails_certification() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let net = ValueNet::init(NetSpec::new(1, vec![8]), Streams::new(9)).unwrap();
        let cert = certify(&net, &chain, &u, &CertConfig::new(64, 200, 1)).unwrap();
        // A random net has V ~ 0.7, so V - KV ~ 0.07 at best; it can pass
        // only if it happens to be nearly constant. Check the bookkeeping.
        assert!((cert.u_tilde + cert.drift.max).abs() < 1e-15);
        assert_eq!(cert.valid, cert.u_tilde > 0.01);
    }

    #[test]
    fn analytic_solution_certifies() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let net = constant_net(1, 1.0);
        let cert = certify(&net, &chain, &u, &CertConfig::new(101, 100, 2)).unwrap();
        assert!(cert.valid);
        assert!((cert.u_tilde - 0.1).abs() < 1e-12);
        assert!(cert.drift_with_u.max.abs() < 1e-12);
        assert!((cert.extrema.sup_v - 1.0).abs() < 1e-12);
        assert!(cert.caveat.is_none());
    }

    #[test]
    fn certificate_round_trips() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let net = constant_net(1, 1.0);
        let cert = certify(&net, &chain, &u, &CertConfig::new(11, 10, 2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        cert.save(&p).unwrap();
        assert_eq!(Certificate::load(&p).unwrap(), cert);
        cert.write_surface_csv(&dir.path().join("s.csv")).unwrap();
        let s = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert_eq!(s.lines().count(), 12);
        assert!(s.starts_with("x1,v,k_hat_v,residual"));
    }

    #[test]
    fn quad_oracle_is_geometric_sum() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let o = vstar_oracle(&chain, &u, &[0.2], 400, 200, Streams::new(1)).unwrap();
        assert!((o.value - 1.0).abs() < 1e-9);
        assert!(o.converged);
        let z = vstar_oracle(
            &chain,
            &UFunction::Constant(0.0),
            &[0.2],
            50,
            20,
            Streams::new(1),
        )
        .unwrap();
        assert_eq!(z.value, 0.0);
    }
}
