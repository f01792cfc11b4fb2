//! Functions `V` and `U` on the state space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ValueNet;

/// A real function on the state space.
pub trait ValueFunction: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
}

impl<T: ValueFunction + ?Sized> ValueFunction for &T {
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

/// `V(x) = c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantValue(pub f64);

impl ValueFunction for ConstantValue {
    fn value(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// Reward function `U` with a known positive lower bound on the domain.
#[derive(Debug, Clone)]
pub enum UFunction {
    Constant(f64),
    /// `max(net(x), floor)`: a previous stage's solution clamped below by
    /// its certified infimum.
    Clamped {
        net: Box<ValueNet>,
        floor: f64,
    },
}

impl UFunction {
    pub fn constant(u: f64) -> Result<Self> {
        if !(u > 0.0 && u.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "U must be bounded away from zero, got {u}"
            )));
        }
        Ok(UFunction::Constant(u))
    }

    pub fn clamped(net: ValueNet, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "clamp floor must be positive, got {floor}"
            )));
        }
        Ok(UFunction::Clamped {
            net: Box::new(net),
            floor,
        })
    }

    /// Positive lower bound on the domain.
    pub fn inf_value(&self) -> f64 {
        match self {
            UFunction::Constant(u) => *u,
            UFunction::Clamped { floor, .. } => *floor,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, UFunction::Constant(_))
    }
}

impl ValueFunction for UFunction {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            UFunction::Constant(u) => *u,
            UFunction::Clamped { net, floor } => net.value(x).max(*floor),
        }
    }
}
