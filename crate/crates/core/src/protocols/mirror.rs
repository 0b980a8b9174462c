//! Plaintext replay of the encrypted solver.
//!
//! Uses the same integer coefficients, the same initial dual and the same
//! truncation and scaling masks (drawn from the same seeded streams), so its
//! output must equal the decrypted output of the encrypted run exactly.

use nalgebra::DVector;
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, Zero};

use super::iteration::{clamp_scaled, initial_dual_scaled, reciprocal, sample_scaling, IterationCoefficients};
use super::truncation::{sample_mask, truncate_plain};
use super::{Mode, ProtocolConfig, ProtocolError};
use crate::fixed_point::FixedPointCodec;
use crate::math::RandomSource;
use crate::qp::QPInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorRun {
    /// `μ_0 … μ_K` at scale `2^l_f`.
    pub mu_history: Vec<Vec<BigInt>>,
    /// Primal at scale `2^(2·l_f)`.
    pub x_scaled: Vec<BigInt>,
    pub x: DVector<f64>,
    /// Signs of the unprojected iterates; filled in the alternative mode only.
    pub signs: Vec<Vec<i8>>,
}

/// Quantized `b` and `c` at scale `2^l_f`.
pub fn quantize_private(inst: &QPInstance, config: &ProtocolConfig) -> Result<(Vec<BigInt>, Vec<BigInt>), ProtocolError> {
    // quantization only reads the parameters, not the modulus
    let codec = FixedPointCodec::new(config.params, BigUint::one());
    let q = |v: &DVector<f64>| -> Result<Vec<BigInt>, ProtocolError> {
        v.iter().map(|&x| Ok(BigInt::from(codec.quantize(x)?))).collect()
    };
    Ok((q(inst.b())?, q(inst.c())?))
}

pub fn mirror_solve(inst: &QPInstance, config: &ProtocolConfig, mode: Mode) -> Result<MirrorRun, ProtocolError> {
    config.params.validate()?;
    let params = config.params;
    let (l, l_f) = (params.l(), params.l_f);
    let coeffs = IterationCoefficients::new(inst, l_f)?;
    let (b, c) = quantize_private(inst, config)?;
    let mut truncation_rng = RandomSource::derive(config.seed, "truncation");
    let mut scaling_rng = RandomSource::derive(config.seed, "scaling");
    let bound = BigInt::one() << (l - 1);

    let mut mu = initial_dual_scaled(inst.m(), config.seed, l_f);
    let mut mu_history = vec![mu.clone()];
    let mut signs = Vec::new();
    for k in 0..if inst.m() == 0 { 0 } else { config.k } {
        let mu_bar = coeffs.gradient_step_plain(&mu, &b, &c);
        mu = match mode {
            Mode::Main => {
                let magnitude = config.main_truncation_bits();
                mu_bar
                    .iter()
                    .map(|v| {
                        let r = sample_mask(magnitude, params.lambda, &mut truncation_rng);
                        let t = truncate_plain(v, &r, l_f, magnitude);
                        if t.abs() >= bound {
                            return Err(ProtocolError::Overflow(format!(
                                "iterate {k} leaves the {l}-bit comparison range"
                            )));
                        }
                        Ok(if t.is_negative() { BigInt::zero() } else { t })
                    })
                    .collect::<Result<_, _>>()?
            }
            Mode::Alternative => {
                let magnitude = config.alt_truncation_bits();
                let mut step_signs = Vec::with_capacity(mu_bar.len());
                let next = mu_bar
                    .iter()
                    .map(|v| {
                        let r = sample_scaling(params.gamma, l, &mut scaling_rng);
                        let w = v * BigInt::from(r.clone());
                        step_signs.push(if w.is_zero() { 0 } else if w.is_negative() { -1 } else { 1 });
                        let y = clamp_scaled(&w, l_f) * BigInt::from(reciprocal(&r, params.l_f_prime));
                        let mask = sample_mask(magnitude, params.lambda, &mut truncation_rng);
                        let t = truncate_plain(&y, &mask, params.l_f_prime, magnitude);
                        if t.abs() >= bound {
                            return Err(ProtocolError::Overflow(format!("iterate {k} leaves the {l}-bit range")));
                        }
                        Ok(t)
                    })
                    .collect::<Result<_, _>>()?;
                signs.push(step_signs);
                next
            }
        };
        mu_history.push(mu.clone());
    }
    let x_scaled = coeffs.primal_plain(&mu, &c);
    let scale = f64::from(2 * l_f).exp2();
    let x = DVector::from_iterator(
        x_scaled.len(),
        x_scaled.iter().map(|v| num_traits::ToPrimitive::to_f64(v).unwrap_or(f64::NAN) / scale),
    );
    Ok(MirrorRun { mu_history, x_scaled, x, signs })
}
