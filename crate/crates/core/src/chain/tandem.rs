use super::{Chain, Dist};
use crate::domain::{DomainBox, Norm};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Workload after each arrival in a two-station tandem fluid network.
///
/// Station 1 drains at `r1` into station 2, which drains at `r2 < r1`; both
/// buffers hold at most `capacity`. Fluid `Z` arrives after an interarrival
/// time `T`. Between arrivals the state moves north-west then south, then
/// jumps east by `Z`.
///
/// `Df(x) = 1{T <= (x1 + x2) / r2}` in the L1 norm: when the network empties
/// before the next arrival a neighbourhood collapses to a point, and
/// otherwise total workload differences are not expanded.
#[derive(Debug, Clone)]
pub struct TandemFluid {
    capacity: f64,
    r1: f64,
    r2: f64,
    t: Dist,
    z: Dist,
    domain: DomainBox,
}

impl TandemFluid {
    pub fn new(capacity: f64, r1: f64, r2: f64, t: Dist, z: Dist) -> Result<Self> {
        t.validate()?;
        z.validate()?;
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "capacity must be positive, got {capacity}"
            )));
        }
        if !(r1 > r2 && r2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need r1 > r2 > 0, got r1 = {r1}, r2 = {r2}"
            )));
        }
        if t.support().0 < 0.0 || z.support().0 < 0.0 {
            return Err(Error::InvalidParameter(
                "interarrival times and amounts must be nonnegative".into(),
            ));
        }
        Ok(Self {
            capacity,
            r1,
            r2,
            t,
            z,
            domain: DomainBox::cube(2, 0.0, capacity)?,
        })
    }

    /// `c = 1`, `(r1, r2) = (1.1, 1.0)`, `T ~ U[0, 0.2]`, `Z ~ U[0, 0.1]`.
    pub fn standard() -> Self {
        Self::new(
            1.0,
            1.1,
            1.0,
            Dist::uniform(0.0, 0.2),
            Dist::uniform(0.0, 0.1),
        )
        .expect("valid parameters")
    }

    pub fn rates(&self) -> (f64, f64) {
        (self.r1, self.r2)
    }

    /// `E Z < r2 E T`.
    pub fn is_stable(&self) -> bool {
        self.z.mean() < self.r2 * self.t.mean()
    }

    /// Distance of `T` from the depletion threshold `(x1 + x2) / r2`.
    pub fn distance_to_kink(&self, map: &(f64, f64), x: &[f64]) -> f64 {
        (map.0 - (x[0] + x[1]) / self.r2).abs()
    }
}

impl Chain for TandemFluid {
    /// Realized `(T, Z)`.
    type Map = (f64, f64);

    fn name(&self) -> &str {
        "tandem_fluid"
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn norm(&self) -> Norm {
        Norm::L1
    }

    fn sample_map(&self, rng: &mut StreamRng) -> (f64, f64) {
        let t = self.t.sample(rng);
        let z = self.z.sample(rng);
        (t, z)
    }

    fn map_into(&self, &(t, z): &(f64, f64), x: &[f64], out: &mut [f64]) {
        let (c, r1, r2) = (self.capacity, self.r1, self.r2);
        let (x1, x2) = (x[0], x[1]);
        let empty_at = x1 / r1;
        out[0] = ((x1 - r1 * t).max(0.0) + z).min(c);
        out[1] =
            ((x2 + (r1 - r2) * t.min(empty_at)).min(c) - r2 * (t - empty_at).max(0.0)).max(0.0);
    }

    fn lipschitz_at(&self, &(t, _): &(f64, f64), x: &[f64]) -> f64 {
        if t <= (x[0] + x[1]) / self.r2 {
            1.0
        } else {
            0.0
        }
    }

    fn lipschitz_bound(&self, _map: &(f64, f64)) -> f64 {
        1.0
    }

    fn df_lipschitz_bound(&self, _map: &(f64, f64)) -> Option<f64> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{apply, local_lipschitz};

    #[test]
    fn empty_network_receives_arrival() {
        let c = TandemFluid::standard();
        let y = apply(&c, &(0.1, 0.05), &[0.0, 0.0]).unwrap();
        assert!((y[0] - 0.05).abs() < 1e-15);
        assert_eq!(y[1], 0.0);
        assert_eq!(local_lipschitz(&c, &(0.1, 0.05), &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn full_buffers_always_expand_neutrally() {
        let c = TandemFluid::standard();
        for t in [0.0, 0.1, 0.2] {
            assert_eq!(c.lipschitz_at(&(t, 0.05), &[1.0, 1.0]), 1.0);
        }
    }

    #[test]
    fn north_west_then_south_path() {
        let c = TandemFluid::standard();
        // x1 empties after 0.2 / 1.1; station 2 gains 0.1 * 0.2 / 1.1 then drains for the rest.
        let y = apply(&c, &(0.2, 0.0), &[0.2, 0.5]).unwrap();
        let t_empty = 0.2 / 1.1;
        let expect = 0.5 + 0.1 * t_empty - (0.2 - t_empty);
        assert_eq!(y[0], 0.0);
        assert!((y[1] - expect).abs() < 1e-15);
        assert!(c.is_stable());
    }

    #[test]
    fn rejects_slow_first_station() {
        assert!(TandemFluid::new(
            1.0,
            0.9,
            1.0,
            Dist::uniform(0.0, 0.2),
            Dist::uniform(0.0, 0.1)
        )
        .is_err());
    }
}
