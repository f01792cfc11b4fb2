//! Random-mapping representation of Markov chains.
//!
//! A chain is `X_{n+1} = f_{n+1}(X_n)` with i.i.d. random maps `f_n`. A
//! [`Chain`] samples realized maps, applies them, and reports the local
//! Lipschitz constant `Df(x)` of each realization.

mod builtin;
mod logistic;
mod quad;
mod tandem;
mod walk;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use builtin::{BuiltinChain, BuiltinMap, ChainSpec, DatasetSource};
pub use logistic::{LogisticDataset, LogisticSgd};
pub use quad::QuadSgd1d;
pub use tandem::TandemFluid;
pub use walk::RegulatedWalk;

use crate::domain::{DomainBox, Norm};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Scalar noise law used by the built-in chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
}

impl Dist {
    pub fn uniform(low: f64, high: f64) -> Self {
        Dist::Uniform { low, high }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Dist::Uniform { low, high }
                if !(low.is_finite() && high.is_finite() && low <= high) =>
            {
                Err(Error::InvalidParameter(format!(
                    "uniform law needs low <= high, got [{low}, {high}]"
                )))
            }
            Dist::Constant { value } if !value.is_finite() => Err(Error::InvalidParameter(
                "constant law must be finite".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Dist::Constant { value } => value,
        }
    }

    /// Support as a closed interval.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Dist::Uniform { low, high } => (low, high),
            Dist::Constant { value } => (value, value),
        }
    }

    pub fn mean(&self) -> f64 {
        let (a, b) = self.support();
        0.5 * (a + b)
    }
}

/// A Markov chain given by its random mapping.
///
/// Implementations must be pure given the realized map: `map_into` and
/// `lipschitz_at` may be called concurrently from many workers.
pub trait Chain: Send + Sync {
    /// One realization of the random mapping.
    type Map: Clone + Send + Sync + std::fmt::Debug;

    fn name(&self) -> &str;

    fn domain(&self) -> &DomainBox;

    /// Norm in which `Df` is measured.
    fn norm(&self) -> Norm {
        Norm::Euclidean
    }

    fn sample_map(&self, rng: &mut StreamRng) -> Self::Map;

    /// Writes `f(x)` into `out`. No domain check.
    fn map_into(&self, map: &Self::Map, x: &[f64], out: &mut [f64]);

    /// `Df(x)` for the realized map. No domain check.
    fn lipschitz_at(&self, map: &Self::Map, x: &[f64]) -> f64;

    /// Global bound `sup_x Df(x)` for the realized map.
    fn lipschitz_bound(&self, map: &Self::Map) -> f64;

    /// Lipschitz constant of `x -> Df(x)` for the realized map, or `None`
    /// when `Df` is piecewise constant with jumps.
    fn df_lipschitz_bound(&self, map: &Self::Map) -> Option<f64>;

    /// Draw from the reference density `h` (uniform on the domain).
    fn sample_reference(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.domain().sample_uniform(rng)
    }

    fn dim(&self) -> usize {
        self.domain().dim()
    }
}

/// `f(x)`, rejecting `x` outside the domain.
pub fn apply<C: Chain + ?Sized>(chain: &C, map: &C::Map, x: &[f64]) -> Result<Vec<f64>> {
    chain.domain().check(x)?;
    let mut out = vec![0.0; x.len()];
    chain.map_into(map, x, &mut out);
    Ok(out)
}

/// `Df(x)`, rejecting `x` outside the domain.
pub fn local_lipschitz<C: Chain + ?Sized>(chain: &C, map: &C::Map, x: &[f64]) -> Result<f64> {
    chain.domain().check(x)?;
    Ok(chain.lipschitz_at(map, x))
}

/// How `X_0` is drawn for a training triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitialPoint {
    #[default]
    Reference,
    Fixed {
        point: Vec<f64>,
    },
}

/// `(X_0, f_1, f_{-1})` with `f_1`, `f_{-1}` independent.
#[derive(Debug, Clone)]
pub struct TransitionTriple<M> {
    pub x0: Vec<f64>,
    pub forward: M,
    pub backward: M,
}

pub fn sample_transition_pair<C: Chain + ?Sized>(
    chain: &C,
    mode: &InitialPoint,
    rng: &mut StreamRng,
) -> Result<TransitionTriple<C::Map>> {
    let x0 = match mode {
        InitialPoint::Reference => chain.sample_reference(rng),
        InitialPoint::Fixed { point } => {
            chain.domain().check(point)?;
            point.clone()
        }
    };
    let forward = chain.sample_map(rng);
    let backward = chain.sample_map(rng);
    Ok(TransitionTriple {
        x0,
        forward,
        backward,
    })
}

/// Outcome of [`absorption_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionReport {
    pub starts: usize,
    pub steps: u64,
    pub exits: u64,
    /// Largest per-axis distance outside the box seen on any step.
    pub max_excursion: f64,
}

impl AbsorptionReport {
    pub fn absorbing(&self) -> bool {
        self.exits == 0
    }
}

/// Simulates `steps` transitions in total, split over `starts` paths that
/// begin at random points on the boundary of the domain.
pub fn absorption_check<C: Chain + ?Sized>(
    chain: &C,
    starts: usize,
    steps: u64,
    streams: crate::rng::Streams,
) -> AbsorptionReport {
    let dom = chain.domain();
    let d = dom.dim();
    let per = steps / starts.max(1) as u64;
    let mut exits = 0;
    let mut max_excursion: f64 = 0.0;
    let mut y = vec![0.0; d];
    for s in 0..starts {
        let mut rng = streams.child(s as u64).rng();
        let mut x = dom.sample_uniform(&mut rng);
        let face = rng.random_range(0..d);
        x[face] = if rng.random::<bool>() {
            dom.upper()[face]
        } else {
            dom.lower()[face]
        };
        for _ in 0..per {
            let map = chain.sample_map(&mut rng);
            chain.map_into(&map, &x, &mut y);
            if !dom.contains(&y) {
                exits += 1;
                let ex = y
                    .iter()
                    .zip(dom.lower().iter().zip(dom.upper()))
                    .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
                    .fold(0.0, f64::max);
                max_excursion = max_excursion.max(ex);
            }
            std::mem::swap(&mut x, &mut y);
        }
    }
    AbsorptionReport {
        starts,
        steps: per * starts as u64,
        exits,
        max_excursion,
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! Chains used only by tests.
    use super::*;

    /// `f(x) = x`, `Df = 1`.
    pub struct Identity {
        pub domain: DomainBox,
    }

    impl Chain for Identity {
        type Map = ();
        fn name(&self) -> &str {
            "identity"
        }
        fn domain(&self) -> &DomainBox {
            &self.domain
        }
        fn sample_map(&self, _rng: &mut StreamRng) {}
        fn map_into(&self, _map: &(), x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(x);
        }
        fn lipschitz_at(&self, _map: &(), _x: &[f64]) -> f64 {
            1.0
        }
        fn lipschitz_bound(&self, _map: &()) -> f64 {
            1.0
        }
        fn df_lipschitz_bound(&self, _map: &()) -> Option<f64> {
            Some(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn walk() -> RegulatedWalk {
        RegulatedWalk::new(Dist::uniform(-1.0 / 3.0, 1.0 / 3.0)).unwrap()
    }

    #[test]
    fn apply_rejects_outside_points() {
        let c = walk();
        assert!(matches!(
            apply(&c, &0.1, &[0.7]),
            Err(Error::DomainViolation(_))
        ));
        assert!(matches!(
            local_lipschitz(&c, &0.1, &[0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reference_mode_is_uniform_on_interval() {
        let c = walk();
        let mut rng = Streams::new(3).rng();
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let t = sample_transition_pair(&c, &InitialPoint::Reference, &mut rng).unwrap();
            assert!(c.domain().contains(&t.x0));
            sum += t.x0[0];
        }
        assert!((sum / n as f64).abs() < 0.01);
    }

    #[test]
    fn fixed_mode_returns_the_point() {
        let c = walk();
        let mut rng = Streams::new(3).rng();
        let mode = InitialPoint::Fixed { point: vec![0.0] };
        for _ in 0..100 {
            assert_eq!(
                sample_transition_pair(&c, &mode, &mut rng).unwrap().x0,
                vec![0.0]
            );
        }
        let bad = InitialPoint::Fixed { point: vec![2.0] };
        assert!(sample_transition_pair(&c, &bad, &mut rng).is_err());
    }

    #[test]
    fn forward_and_backward_maps_are_independent() {
        let c = TandemFluid::standard();
        let mut rng = Streams::new(11).rng();
        let x = [0.1, 0.05];
        let n = 10_000;
        let (mut a, mut b, mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let t = sample_transition_pair(&c, &InitialPoint::Reference, &mut rng).unwrap();
            let p = c.lipschitz_at(&t.forward, &x);
            let q = c.lipschitz_at(&t.backward, &x);
            a += p;
            b += q;
            ab += p * q;
            aa += p * p;
            bb += q * q;
        }
        let nf = n as f64;
        let cov = ab / nf - a / nf * b / nf;
        let corr = cov / ((aa / nf - (a / nf).powi(2)) * (bb / nf - (b / nf).powi(2))).sqrt();
        assert!(corr.abs() < 0.03, "corr = {corr}");
    }
}
