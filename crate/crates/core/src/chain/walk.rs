use super::{Chain, Dist};
use crate::domain::DomainBox;
use crate::error::Result;
use crate::rng::StreamRng;

/// Two-sided regulated random walk `f(x) = max(min(x + Z, 1/2), -1/2)`.
///
/// The clip collapses a neighbourhood to a point whenever `x + Z` saturates,
/// so `Df(x) = 1{-1/2 < x + Z < 1/2}`.
#[derive(Debug, Clone)]
pub struct RegulatedWalk {
    z: Dist,
    domain: DomainBox,
}

pub const WALK_HALF_WIDTH: f64 = 0.5;

impl RegulatedWalk {
    pub fn new(z: Dist) -> Result<Self> {
        z.validate()?;
        Ok(Self {
            z,
            domain: DomainBox::cube(1, -WALK_HALF_WIDTH, WALK_HALF_WIDTH)?,
        })
    }

    /// `Z ~ U[-1/3, 1/3]`.
    pub fn standard() -> Self {
        Self::new(Dist::uniform(-1.0 / 3.0, 1.0 / 3.0)).expect("valid law")
    }

    pub fn z(&self) -> Dist {
        self.z
    }

    /// Distance from `x + Z` to the nearest clip level; zero on the
    /// discontinuity of `Df`.
    pub fn distance_to_kink(&self, z: f64, x: f64) -> f64 {
        (WALK_HALF_WIDTH - (x + z).abs()).abs()
    }
}

impl Chain for RegulatedWalk {
    /// Realized `Z`.
    type Map = f64;

    fn name(&self) -> &str {
        "regulated_walk"
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn sample_map(&self, rng: &mut StreamRng) -> f64 {
        self.z.sample(rng)
    }

    fn map_into(&self, z: &f64, x: &[f64], out: &mut [f64]) {
        out[0] = (x[0] + z).clamp(-WALK_HALF_WIDTH, WALK_HALF_WIDTH);
    }

    fn lipschitz_at(&self, z: &f64, x: &[f64]) -> f64 {
        let s = x[0] + z;
        if s > -WALK_HALF_WIDTH && s < WALK_HALF_WIDTH {
            1.0
        } else {
            0.0
        }
    }

    fn lipschitz_bound(&self, _z: &f64) -> f64 {
        1.0
    }

    fn df_lipschitz_bound(&self, _z: &f64) -> Option<f64> {
        None
    }
}
