use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{Chain, Dist, LogisticDataset, LogisticSgd, QuadSgd1d, RegulatedWalk, TandemFluid};
use crate::domain::{DomainBox, Norm};
use crate::error::{Error, Result};
use crate::rng::{purpose, StreamRng, Streams};

/// Where the logistic chain's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Regenerate `m` points from the experiment seed.
    Generate { m: usize },
    /// CSV with header `x1,x2,y`.
    Csv { path: PathBuf },
}

/// Serializable description of a built-in chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ChainSpec {
    #[serde(rename = "quad_sgd_1d")]
    QuadSgd1d {
        alpha: f64,
        z: Dist,
        lower: f64,
        upper: f64,
    },
    LogisticSgd {
        dataset: DatasetSource,
        lambda: f64,
        alpha: f64,
        batch: usize,
        half_width: f64,
    },
    TandemFluid {
        capacity: f64,
        r1: f64,
        r2: f64,
        t: Dist,
        z: Dist,
    },
    RegulatedWalk {
        z: Dist,
    },
}

impl ChainSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ChainSpec::QuadSgd1d { .. } => "quad_sgd_1d",
            ChainSpec::LogisticSgd { .. } => "logistic_sgd",
            ChainSpec::TandemFluid { .. } => "tandem_fluid",
            ChainSpec::RegulatedWalk { .. } => "regulated_walk",
        }
    }

    /// Instantiates the chain. `streams` seeds dataset generation.
    pub fn build(&self, streams: Streams) -> Result<BuiltinChain> {
        Ok(match self {
            ChainSpec::QuadSgd1d {
                alpha,
                z,
                lower,
                upper,
            } => BuiltinChain::Quad(QuadSgd1d::new(
                *alpha,
                *z,
                DomainBox::cube(1, *lower, *upper)?,
            )?),
            ChainSpec::LogisticSgd {
                dataset,
                lambda,
                alpha,
                batch,
                half_width,
            } => {
                let data = match dataset {
                    DatasetSource::Generate { m } => {
                        LogisticDataset::generate(*m, &mut streams.child(purpose::DATASET).rng())
                    }
                    DatasetSource::Csv { path } => LogisticDataset::load_csv(path)?,
                };
                if data.len() > u16::MAX as usize {
                    return Err(Error::InvalidParameter("dataset too large".into()));
                }
                let dom = DomainBox::cube(2, -half_width, *half_width)?;
                BuiltinChain::Logistic(LogisticSgd::new(data, *lambda, *alpha, *batch, dom)?)
            }
            ChainSpec::TandemFluid {
                capacity,
                r1,
                r2,
                t,
                z,
            } => BuiltinChain::Tandem(TandemFluid::new(*capacity, *r1, *r2, *t, *z)?),
            ChainSpec::RegulatedWalk { z } => BuiltinChain::Walk(RegulatedWalk::new(*z)?),
        })
    }
}

/// One of the shipped chains.
#[derive(Debug, Clone)]
pub enum BuiltinChain {
    Quad(QuadSgd1d),
    Logistic(LogisticSgd),
    Tandem(TandemFluid),
    Walk(RegulatedWalk),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinMap {
    Scalar(f64),
    Batch(Vec<u16>),
    Pair(f64, f64),
}

macro_rules! dispatch {
    ($self:expr, $map:expr, $c:ident, $m:ident => $body:expr) => {
        match ($self, $map) {
            (BuiltinChain::Quad($c), BuiltinMap::Scalar($m)) => $body,
            (BuiltinChain::Walk($c), BuiltinMap::Scalar($m)) => $body,
            (BuiltinChain::Logistic($c), BuiltinMap::Batch($m)) => $body,
            (BuiltinChain::Tandem($c), BuiltinMap::Pair(t, z)) => {
                let $m = &(*t, *z);
                $body
            }
            _ => unreachable!("map realized by a different chain"),
        }
    };
}

impl BuiltinChain {
    /// Distance of the map's randomness from a jump of `Df` at `x`, for the
    /// indicator-valued chains; `None` for chains with continuous `Df`.
    pub fn distance_to_kink(&self, map: &BuiltinMap, x: &[f64]) -> Option<f64> {
        match (self, map) {
            (BuiltinChain::Walk(c), BuiltinMap::Scalar(z)) => Some(c.distance_to_kink(*z, x[0])),
            (BuiltinChain::Tandem(c), BuiltinMap::Pair(t, z)) => {
                Some(c.distance_to_kink(&(*t, *z), x))
            }
            _ => None,
        }
    }

    /// Whether `Df` is piecewise constant, so the smoothness assumption behind
    /// the sample-size prescription fails literally.
    pub fn df_piecewise_constant(&self) -> bool {
        matches!(self, BuiltinChain::Tandem(_) | BuiltinChain::Walk(_))
    }
}

impl Chain for BuiltinChain {
    type Map = BuiltinMap;

    fn name(&self) -> &str {
        match self {
            BuiltinChain::Quad(c) => c.name(),
            BuiltinChain::Logistic(c) => c.name(),
            BuiltinChain::Tandem(c) => c.name(),
            BuiltinChain::Walk(c) => c.name(),
        }
    }

    fn domain(&self) -> &DomainBox {
        match self {
            BuiltinChain::Quad(c) => c.domain(),
            BuiltinChain::Logistic(c) => c.domain(),
            BuiltinChain::Tandem(c) => c.domain(),
            BuiltinChain::Walk(c) => c.domain(),
        }
    }

    fn norm(&self) -> Norm {
        match self {
            BuiltinChain::Quad(c) => c.norm(),
            BuiltinChain::Logistic(c) => c.norm(),
            BuiltinChain::Tandem(c) => c.norm(),
            BuiltinChain::Walk(c) => c.norm(),
        }
    }

    fn sample_map(&self, rng: &mut StreamRng) -> BuiltinMap {
        match self {
            BuiltinChain::Quad(c) => BuiltinMap::Scalar(c.sample_map(rng)),
            BuiltinChain::Logistic(c) => BuiltinMap::Batch(c.sample_map(rng)),
            BuiltinChain::Tandem(c) => {
                let (t, z) = c.sample_map(rng);
                BuiltinMap::Pair(t, z)
            }
            BuiltinChain::Walk(c) => BuiltinMap::Scalar(c.sample_map(rng)),
        }
    }

    fn map_into(&self, map: &BuiltinMap, x: &[f64], out: &mut [f64]) {
        dispatch!(self, map, c, m => c.map_into(m, x, out))
    }

    fn lipschitz_at(&self, map: &BuiltinMap, x: &[f64]) -> f64 {
        dispatch!(self, map, c, m => c.lipschitz_at(m, x))
    }

    fn lipschitz_bound(&self, map: &BuiltinMap) -> f64 {
        dispatch!(self, map, c, m => c.lipschitz_bound(m))
    }

    fn df_lipschitz_bound(&self, map: &BuiltinMap) -> Option<f64> {
        dispatch!(self, map, c, m => c.df_lipschitz_bound(m))
    }
}
