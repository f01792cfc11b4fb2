use super::{Chain, Dist};
use crate::domain::DomainBox;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Constant step-size SGD on `E (x - Z)^2 / 2`: `f(x) = x - alpha (x - Z)`.
///
/// `Df = |1 - alpha|` everywhere, so `V = u / alpha` solves `KV = V - u`
/// exactly for constant `u` when `0 < alpha <= 1`.
#[derive(Debug, Clone)]
pub struct QuadSgd1d {
    alpha: f64,
    z: Dist,
    domain: DomainBox,
}

impl QuadSgd1d {
    /// The domain must contain the support of `Z`; it is then absorbing.
    pub fn new(alpha: f64, z: Dist, domain: DomainBox) -> Result<Self> {
        z.validate()?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step size must lie in (0, 1], got {alpha}"
            )));
        }
        if domain.dim() != 1 {
            return Err(Error::InvalidDomain(
                "quad_sgd_1d lives on an interval".into(),
            ));
        }
        let (lo, hi) = z.support();
        if lo < domain.lower()[0] || hi > domain.upper()[0] {
            return Err(Error::InvalidDomain(format!(
                "support of Z [{lo}, {hi}] must lie inside the domain for it to be absorbing"
            )));
        }
        Ok(Self { alpha, z, domain })
    }

    /// `alpha` with `Z ~ U[-1/2, 1/2]` on `[-1/2, 1/2]`.
    pub fn standard(alpha: f64) -> Result<Self> {
        Self::new(
            alpha,
            Dist::uniform(-0.5, 0.5),
            DomainBox::cube(1, -0.5, 0.5)?,
        )
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn z(&self) -> Dist {
        self.z
    }
}

impl Chain for QuadSgd1d {
    /// Realized `Z`.
    type Map = f64;

    fn name(&self) -> &str {
        "quad_sgd_1d"
    }

    fn domain(&self) -> &DomainBox {
        &self.domain
    }

    fn sample_map(&self, rng: &mut StreamRng) -> f64 {
        self.z.sample(rng)
    }

    fn map_into(&self, z: &f64, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] - self.alpha * (x[0] - z);
    }

    fn lipschitz_at(&self, _z: &f64, _x: &[f64]) -> f64 {
        (1.0 - self.alpha).abs()
    }

    fn lipschitz_bound(&self, _z: &f64) -> f64 {
        (1.0 - self.alpha).abs()
    }

    fn df_lipschitz_bound(&self, _z: &f64) -> Option<f64> {
        Some(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{apply, local_lipschitz};

    #[test]
    fn zero_noise_contracts_toward_origin() {
        let c = QuadSgd1d::standard(0.1).unwrap();
        let y = apply(&c, &0.0, &[0.5]).unwrap();
        assert!((y[0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn df_is_one_minus_alpha() {
        let c = QuadSgd1d::standard(0.1).unwrap();
        for (z, x) in [(0.3, -0.2), (-0.5, 0.5), (0.0, 0.0)] {
            assert_eq!(local_lipschitz(&c, &z, &[x]).unwrap(), 0.9);
        }
    }

    #[test]
    fn rejects_non_absorbing_domain() {
        let dom = DomainBox::cube(1, -0.1, 0.1).unwrap();
        assert!(QuadSgd1d::new(0.1, Dist::uniform(-0.5, 0.5), dom).is_err());
        assert!(QuadSgd1d::standard(1.5).is_err());
    }
}
