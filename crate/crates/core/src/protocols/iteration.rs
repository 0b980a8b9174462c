//! One projected gradient step on encrypted duals, in both variants, and the
//! final primal recovery.

use nalgebra::DMatrix;
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, Zero};

use super::comparison::{compare_cloud, compare_target};
use super::message::{Message, Tag};
use super::party::{CloudContext, TargetContext};
use super::truncation::{truncate_cloud, truncate_target};
use super::update::{randomize_pair, update_cloud, update_target};
use super::ProtocolError;
use crate::fixed_point::quantize_coefficient;
use crate::math::{self, RandomSource};
use crate::paillier::{PaillierCiphertext, PaillierPublicKey};
use crate::qp::QPInstance;

/// Public integer coefficients, all carrying `l_f` fractional bits.
///
/// With `μ`, `b`, `c` at scale `2^l_f`, the unprojected iterate at scale
/// `2^(2·l_f)` is `w·μ + p·c + beta·b`, and the primal at the same scale is
/// `x_mu·μ + x_c·c`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationCoefficients {
    pub eta: f64,
    pub w: Vec<Vec<BigInt>>,
    pub p: Vec<Vec<BigInt>>,
    pub beta: BigInt,
    pub x_mu: Vec<Vec<BigInt>>,
    pub x_c: Vec<Vec<BigInt>>,
}

fn quantize_matrix(mat: &DMatrix<f64>, l_f: u32) -> Result<Vec<Vec<BigInt>>, ProtocolError> {
    (0..mat.nrows())
        .map(|i| (0..mat.ncols()).map(|j| Ok(BigInt::from(quantize_coefficient(mat[(i, j)], l_f)?))).collect())
        .collect()
}

impl IterationCoefficients {
    pub fn new(inst: &QPInstance, l_f: u32) -> Result<Self, ProtocolError> {
        let m = inst.m();
        let eta = if m == 0 { 0.0 } else { inst.step_size()? };
        let q_inv = inst.q_inv();
        let p_real = -(inst.a() * q_inv);
        let m_real = &p_real * inst.a().transpose();
        let mut w = quantize_matrix(&(m_real * eta), l_f)?;
        for (i, row) in w.iter_mut().enumerate() {
            row[i] += BigInt::one() << l_f;
        }
        Ok(Self {
            eta,
            w,
            p: quantize_matrix(&(p_real * eta), l_f)?,
            beta: BigInt::from(quantize_coefficient(-eta, l_f)?),
            x_mu: quantize_matrix(&(-(q_inv * inst.a().transpose())), l_f)?,
            x_c: quantize_matrix(&(-q_inv), l_f)?,
        })
    }

    /// Plaintext `w·μ + p·c + beta·b`.
    pub fn gradient_step_plain(&self, mu: &[BigInt], b: &[BigInt], c: &[BigInt]) -> Vec<BigInt> {
        let dot = |row: &[BigInt], v: &[BigInt]| row.iter().zip(v).map(|(a, b)| a * b).sum::<BigInt>();
        (0..mu.len()).map(|i| dot(&self.w[i], mu) + dot(&self.p[i], c) + &self.beta * &b[i]).collect()
    }

    /// Plaintext `x_mu·μ + x_c·c`.
    pub fn primal_plain(&self, mu: &[BigInt], c: &[BigInt]) -> Vec<BigInt> {
        let dot = |row: &[BigInt], v: &[BigInt]| row.iter().zip(v).map(|(a, b)| a * b).sum::<BigInt>();
        (0..c.len()).map(|j| dot(&self.x_mu[j], mu) + dot(&self.x_c[j], c)).collect()
    }

    pub fn gradient_step(
        &self,
        pk: &PaillierPublicKey,
        mu: &[PaillierCiphertext],
        b: &[PaillierCiphertext],
        c: &[PaillierCiphertext],
    ) -> Result<Vec<PaillierCiphertext>, ProtocolError> {
        let mut operands: Vec<PaillierCiphertext> = mu.iter().chain(c).cloned().collect();
        (0..mu.len())
            .map(|i| {
                operands.push(b[i].clone());
                let scalars: Vec<BigInt> =
                    self.w[i].iter().chain(&self.p[i]).chain(std::iter::once(&self.beta)).cloned().collect();
                let out = pk.linear_combination(&scalars, &operands);
                operands.pop();
                Ok(out?)
            })
            .collect()
    }

    pub fn primal(
        &self,
        pk: &PaillierPublicKey,
        mu: &[PaillierCiphertext],
        c: &[PaillierCiphertext],
    ) -> Result<Vec<PaillierCiphertext>, ProtocolError> {
        let operands: Vec<PaillierCiphertext> = mu.iter().chain(c).cloned().collect();
        (0..c.len())
            .map(|j| {
                let scalars: Vec<BigInt> = self.x_mu[j].iter().chain(&self.x_c[j]).cloned().collect();
                Ok(pk.linear_combination(&scalars, &operands)?)
            })
            .collect()
    }
}

/// Seeded initial dual at scale `2^l_f`: integers uniform in `[1, 2^l_f]`,
/// the same draws as [`crate::qp::initial_dual`].
pub fn initial_dual_scaled(m: usize, seed: u64, l_f: u32) -> Vec<BigInt> {
    let mut rng = RandomSource::derive(seed, "mu0");
    (0..m).map(|_| BigInt::from(rng.index(1usize << l_f) + 1)).collect()
}

/// Multiplicative blinder in `[2^(γ+l-1), 2^(γ+l))`.
pub fn sample_scaling(gamma: u32, l: u32, rng: &mut RandomSource) -> BigUint {
    let bits = u64::from(gamma + l - 1);
    (BigUint::one() << bits) + math::sample_bits(bits, rng)
}

/// `round(2^l_f' / r)`.
pub fn reciprocal(r: &BigUint, l_f_prime: u32) -> BigUint {
    ((BigUint::one() << l_f_prime) + (r >> 1u8)) / r
}

/// What the target keeps from the scaled iterate: `max(⌊w / 2^l_f⌋, 0)`.
pub fn clamp_scaled(w: &BigInt, l_f: u32) -> BigInt {
    let floor = w >> l_f;
    if floor.is_negative() {
        BigInt::zero()
    } else {
        floor
    }
}

fn sign_of(v: &BigInt) -> i8 {
    if v.is_zero() {
        0
    } else if v.is_negative() {
        -1
    } else {
        1
    }
}

/// Cloud half of the main iteration: truncate, randomize, compare, update.
pub fn main_iteration_cloud(
    ctx: &mut CloudContext,
    coeffs: &IterationCoefficients,
    mu: &[PaillierCiphertext],
    b: &[PaillierCiphertext],
    c: &[PaillierCiphertext],
) -> Result<Vec<PaillierCiphertext>, ProtocolError> {
    let pk = ctx.pk.clone();
    let (l, l_f) = (ctx.l(), ctx.config.params.l_f);
    let mu_bar = coeffs.gradient_step(&pk, mu, b, c)?;
    let mu_bar = truncate_cloud(ctx, &mu_bar, l_f, ctx.config.main_truncation_bits())?;

    let zero = pk.encode_constant(&BigUint::zero())?;
    let offset = pk.encode_constant(&(BigUint::one() << (l - 1)))?;
    let (mut lo, mut hi) = (Vec::with_capacity(mu.len()), Vec::with_capacity(mu.len()));
    for v in &mu_bar {
        let (a, b, _) = randomize_pair(&pk, v, &zero, &mut ctx.rng, &mut ctx.log)?;
        lo.push(a);
        hi.push(b);
    }
    let shifted = |cts: &[PaillierCiphertext]| -> Result<Vec<_>, ProtocolError> {
        cts.iter().map(|c| Ok(pk.add(c, &offset)?)).collect()
    };
    compare_cloud(ctx, &shifted(&lo)?, &shifted(&hi)?, l)?;
    update_cloud(ctx, &lo, &hi)
}

/// Target half of the main iteration. Returns the comparison bits it saw.
pub fn main_iteration_target(ctx: &mut TargetContext, m: usize) -> Result<Vec<bool>, ProtocolError> {
    let (l, l_f) = (ctx.l(), ctx.config.params.l_f);
    let envelope = u64::from(ctx.config.main_truncation_bits() + ctx.config.params.lambda + 1);
    truncate_target(ctx, m, l_f, envelope)?;
    let t = compare_target(ctx, m, l)?;
    update_target(ctx, &t)?;
    Ok(t)
}

/// Cloud half of the alternative iteration.
pub fn alt_iteration_cloud(
    ctx: &mut CloudContext,
    coeffs: &IterationCoefficients,
    mu: &[PaillierCiphertext],
    b: &[PaillierCiphertext],
    c: &[PaillierCiphertext],
) -> Result<Vec<PaillierCiphertext>, ProtocolError> {
    let pk = ctx.pk.clone();
    let params = ctx.config.params;
    let mu_bar = coeffs.gradient_step(&pk, mu, b, c)?;
    let mut scales = Vec::with_capacity(mu.len());
    let mut blinded = Vec::with_capacity(mu.len());
    for v in &mu_bar {
        let r = sample_scaling(params.gamma, params.l(), &mut ctx.scaling_rng);
        ctx.log.coin("alt_r", &r);
        blinded.push(pk.rerandomize(&pk.scalar_mul(&r, v)?, &mut ctx.rng)?);
        scales.push(r);
    }
    let sigma = ctx.sigma_bits();
    ctx.link.send(&Message::paillier(Tag::AltBlinded, ctx.link.local(), ctx.link.peer(), &blinded, sigma))?;

    let reply = ctx.link.recv(Tag::AltReply)?;
    reply.expect_len(mu.len())?;
    let rescaled = reply
        .parse_paillier(&pk)?
        .iter()
        .zip(&scales)
        .map(|(y, r)| Ok(pk.scalar_mul(&reciprocal(r, params.l_f_prime), y)?))
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    truncate_cloud(ctx, &rescaled, params.l_f_prime, ctx.config.alt_truncation_bits())
}

/// Target half of the alternative iteration. Returns the sign of each
/// unprojected iterate, which this variant reveals.
pub fn alt_iteration_target(ctx: &mut TargetContext, m: usize) -> Result<Vec<i8>, ProtocolError> {
    let pk = ctx.pk().clone();
    let params = ctx.config.params;
    let scaled_bits = u64::from(2 * params.l() + params.l_f + params.gamma);
    let msg = ctx.link.recv(Tag::AltBlinded)?;
    msg.expect_len(m)?;
    let mut signs = Vec::with_capacity(m);
    let mut reply = Vec::with_capacity(m);
    for c in msg.parse_paillier(&pk)? {
        let w = ctx.sk.decrypt_signed(&c)?;
        ctx.log.observe("alt_scaled", w.magnitude(), Some(scaled_bits));
        let sign = sign_of(&w);
        ctx.log.observe("sign", &BigUint::from((sign + 1) as u8), None);
        signs.push(sign);
        reply.push(pk.encrypt_signed(&clamp_scaled(&w, params.l_f), &mut ctx.rng)?);
    }
    let sigma = ctx.sigma_bits();
    ctx.link.send(&Message::paillier(Tag::AltReply, ctx.link.local(), ctx.link.peer(), &reply, sigma))?;
    let envelope = u64::from(ctx.config.alt_truncation_bits() + params.lambda + 1);
    truncate_target(ctx, m, params.l_f_prime, envelope)?;
    Ok(signs)
}
