//! Vanilla and leaky dropout.
//!
//! Both variants draw `z_i = 1` with probability `1 − β` and scale preserved
//! units by `1 / (1 − β)`. Vanilla dropout zeroes the remaining units; leaky
//! dropout multiplies them by `γ = (1 − β) / c²` so they are suppressed but
//! never fully deactivated.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DropoutKind {
    Vanilla,
    Leaky,
    None,
}

impl fmt::Display for DropoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropoutKind::Vanilla => "vanilla",
            DropoutKind::Leaky => "leaky",
            DropoutKind::None => "none",
        })
    }
}

impl FromStr for DropoutKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vanilla" => Ok(DropoutKind::Vanilla),
            "leaky" => Ok(DropoutKind::Leaky),
            "none" => Ok(DropoutKind::None),
            _ => Err(format!("unknown dropout kind `{s}` (vanilla, leaky, none)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub kind: DropoutKind,
    /// Drop probability.
    pub beta: f64,
    /// Suppression constant `c` of the leaky variant.
    pub c_sup: f64,
}

impl DropoutSpec {
    pub fn new(kind: DropoutKind, beta: f64, c_sup: f64) -> Result<Self> {
        let spec = DropoutSpec { kind, beta, c_sup };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Contract(format!(
                "drop rate β = {} must lie in [0, 1)",
                self.beta
            )));
        }
        if !(self.c_sup >= 1.0) || !self.c_sup.is_finite() {
            return Err(Error::Contract(format!(
                "suppression constant c = {} must be ≥ 1",
                self.c_sup
            )));
        }
        Ok(())
    }

    /// `γ = (1 − β) / c²`.
    pub fn gamma(&self) -> f64 {
        (1.0 - self.beta) / (self.c_sup * self.c_sup)
    }

    pub fn preserved_value(&self) -> f64 {
        1.0 / (1.0 - self.beta)
    }

    pub fn suppressed_value(&self) -> f64 {
        match self.kind {
            DropoutKind::Leaky => self.gamma(),
            DropoutKind::Vanilla => 0.0,
            DropoutKind::None => 1.0,
        }
    }

    /// Analytic `E[m_i]`: exactly 1 for vanilla, `1 + β·γ` for leaky.
    pub fn expected_mask_mean(&self) -> f64 {
        match self.kind {
            DropoutKind::Vanilla | DropoutKind::None => 1.0,
            DropoutKind::Leaky => 1.0 + self.beta * self.gamma(),
        }
    }

    /// Draws one mask of length `n`.
    pub fn sample_mask<T: Scalar>(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<T>> {
        self.validate()?;
        if self.kind == DropoutKind::None {
            return Ok(vec![T::one(); n]);
        }
        let keep_prob = 1.0 - self.beta;
        let preserved = T::from_f64(self.preserved_value());
        let suppressed = T::from_f64(self.suppressed_value());
        Ok((0..n)
            .map(|_| {
                if rng.gen::<f64>() < keep_prob {
                    preserved
                } else {
                    suppressed
                }
            })
            .collect())
    }

    /// Multiplies `x` by a fresh mask in training mode; identity otherwise.
    /// The mask is a constant in backward.
    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        if mode == Mode::Eval || self.kind == DropoutKind::None {
            return Ok(x);
        }
        let mask = self.sample_mask(g.value(x).numel(), rng)?;
        g.mul_const(x, mask)
    }
}
