//! Ranking-gap surrogates `ℓ(z)`: hinge and its quadratic and logistic
//! smoothings.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurrogateSpec {
    /// `max(z, 0)`. The derivative at the kink is taken as 0.
    Hinge,
    /// Quadratic smoothing of width `rho` around the kink.
    Quadratic { rho: f64 },
    /// `(1/l) ln(1 + exp(l z))`.
    Logistic { l: f64 },
}

impl SurrogateSpec {
    pub fn hinge() -> Self {
        SurrogateSpec::Hinge
    }

    pub fn quadratic(rho: f64) -> Result<Self> {
        let s = SurrogateSpec::Quadratic { rho };
        s.validate()?;
        Ok(s)
    }

    pub fn logistic(l: f64) -> Result<Self> {
        let s = SurrogateSpec::Logistic { l };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SurrogateSpec::Hinge => Ok(()),
            SurrogateSpec::Quadratic { rho } if rho > 0.0 && rho.is_finite() => Ok(()),
            SurrogateSpec::Quadratic { rho } => Err(Error::InvalidParam(format!(
                "quadratic rho must be positive, got {rho}"
            ))),
            SurrogateSpec::Logistic { l } if l > 0.0 && l.is_finite() => Ok(()),
            SurrogateSpec::Logistic { l } => Err(Error::InvalidParam(format!(
                "logistic L must be positive, got {l}"
            ))),
        }
    }

    /// Loss and derivative at `z`.
    pub fn eval(&self, z: f64) -> Result<(f64, f64)> {
        if !z.is_finite() {
            return Err(Error::InvalidParam(format!("surrogate input {z} is not finite")));
        }
        Ok(self.eval_unchecked(z))
    }

    pub(crate) fn eval_unchecked(&self, z: f64) -> (f64, f64) {
        match *self {
            SurrogateSpec::Hinge => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            SurrogateSpec::Quadratic { rho } => {
                if z >= rho {
                    (z, 1.0)
                } else if z <= -rho {
                    (0.0, 0.0)
                } else {
                    let s = z + rho;
                    (s * s / (4.0 * rho), s / (2.0 * rho))
                }
            }
            SurrogateSpec::Logistic { l } => {
                let lz = l * z;
                let loss = z.max(0.0) + (-lz.abs()).exp().ln_1p() / l;
                (loss, sigmoid(lz))
            }
        }
    }

    pub fn loss(&self, z: f64) -> f64 {
        self.eval_unchecked(z).0
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.eval_unchecked(z).1
    }
}

/// Overflow-free logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
