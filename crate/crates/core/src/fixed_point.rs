//! Signed fixed-point numbers embedded in `Z_N`.
//!
//! A real `x` is stored as `q = round(x · 2^l_f)`, and negative `q` wraps to
//! `N - |q|`. Residues above `N / 2` decode as negative.

use num_bigint::{BigInt, BigUint};
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParameterError {
    #[error("parameter constraint violated: {constraint}")]
    Violated { constraint: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("value {value} exceeds the fixed-point range of magnitude 2^{bound_bits}")]
    Overflow { value: f64, bound_bits: u32 },
    #[error("value is not finite")]
    NotFinite,
}

/// Bit-length parameters of the encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointParams {
    pub l_i: u32,
    pub l_f: u32,
    pub lambda: u32,
    pub gamma: u32,
    pub l_f_prime: u32,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        let (l_i, l_f, gamma) = (16, 16, 40);
        Self { l_i, l_f, lambda: 100, gamma, l_f_prime: 2 * (l_i + l_f) + gamma }
    }
}

impl FixedPointParams {
    /// Total message bits `l = l_i + l_f`.
    pub fn l(&self) -> u32 {
        self.l_i + self.l_f
    }

    /// Checks the constraints that do not involve the modulus.
    pub fn validate(&self) -> Result<(), ParameterError> {
        if self.l_i == 0 || self.l_f == 0 || self.lambda == 0 || self.gamma == 0 || self.l_f_prime == 0 {
            return Err(violated("l_i, l_f, lambda, gamma, l_f_prime must all be positive"));
        }
        if self.l() > 62 {
            return Err(violated("l = l_i + l_f must be at most 62"));
        }
        if self.l_f_prime <= self.l() + self.gamma {
            return Err(violated("l_f_prime > l + gamma"));
        }
        Ok(())
    }
}

fn violated(constraint: &str) -> ParameterError {
    ParameterError::Violated { constraint: constraint.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointCodec {
    params: FixedPointParams,
    n: BigUint,
}

impl FixedPointCodec {
    pub fn new(params: FixedPointParams, n: BigUint) -> Self {
        Self { params, n }
    }

    pub fn params(&self) -> &FixedPointParams {
        &self.params
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn l(&self) -> u32 {
        self.params.l()
    }

    pub fn l_f(&self) -> u32 {
        self.params.l_f
    }

    /// `log2 N > l + lambda + 1` plus the modulus-free constraints.
    pub fn validate(&self) -> Result<(), ParameterError> {
        self.params.validate()?;
        // N is odd, so log2 N > k exactly when bits(N) > k
        let needed = u64::from(self.params.l() + self.params.lambda + 1);
        if self.n.bits() <= needed {
            return Err(violated("log2 N > l + lambda + 1"));
        }
        Ok(())
    }

    /// `round(x · 2^l_f)`, half away from zero, checked against `|x| < 2^(l_i - 1)`.
    pub fn quantize(&self, x: f64) -> Result<i64, FixedPointError> {
        if !x.is_finite() {
            return Err(FixedPointError::NotFinite);
        }
        let bound_bits = self.params.l_i - 1;
        if x.abs() >= (bound_bits as f64).exp2() {
            return Err(FixedPointError::Overflow { value: x, bound_bits });
        }
        Ok((x * f64::from(self.params.l_f).exp2()).round() as i64)
    }

    pub fn encode(&self, x: f64) -> Result<BigUint, FixedPointError> {
        Ok(self.embed(&BigInt::from(self.quantize(x)?)))
    }

    pub fn decode(&self, m: &BigUint) -> f64 {
        self.decode_scaled(m, self.params.l_f)
    }

    /// Decodes a residue carrying `frac_bits` fractional bits.
    pub fn decode_scaled(&self, m: &BigUint, frac_bits: u32) -> f64 {
        let q = self.lift(m);
        q.to_f64().unwrap_or(if q.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
            / f64::from(frac_bits).exp2()
    }

    /// Signed integer to residue.
    pub fn embed(&self, q: &BigInt) -> BigUint {
        math::reduce_signed(q, &self.n)
    }

    /// Residue to signed integer in `(-N/2, N/2]`.
    pub fn lift(&self, m: &BigUint) -> BigInt {
        math::lift_signed(m, &self.n)
    }
}

/// `round(x · 2^frac_bits)` for coefficients without the `l_i` range check.
pub fn quantize_coefficient(x: f64, frac_bits: u32) -> Result<i128, FixedPointError> {
    if !x.is_finite() {
        return Err(FixedPointError::NotFinite);
    }
    let scaled = (x * f64::from(frac_bits).exp2()).round();
    if scaled.abs() >= 2f64.powi(100) {
        return Err(FixedPointError::Overflow { value: x, bound_bits: 100 - frac_bits });
    }
    Ok(scaled as i128)
}

/// Floor division of a signed integer by `2^bits`.
pub fn floor_shift(v: &BigInt, bits: u32) -> BigInt {
    if v.is_zero() {
        return BigInt::zero();
    }
    // arithmetic shift on BigInt rounds toward negative infinity
    v >> bits
}
