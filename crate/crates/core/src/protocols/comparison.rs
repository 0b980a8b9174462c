//! Encrypted comparison.
//!
//! [`dgk_compare_cloud`] / [`dgk_compare_target`] compare a cloud-held `α`
//! with a target-held `β`, both `l`-bit, and leave the bit `[α ≤ β]` xor-shared
//! between the two. [`compare_cloud`] / [`compare_target`] lift this to two
//! Paillier ciphertexts held by the cloud and deliver `t = [a ≤ b]` to the
//! target.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive, Zero};

use super::message::Tag;
use super::party::{CloudContext, TargetContext};
use super::ProtocolError;
use crate::dgk::{self, DgkCiphertext};
use crate::math::{self, RandomSource};
use crate::paillier::PaillierCiphertext;

fn check_inputs(values: &[u64], l: u32) -> Result<(), ProtocolError> {
    if l == 0 || l > 62 {
        return Err(ProtocolError::Domain(format!("comparison width l = {l} outside 1..=62")));
    }
    if let Some(v) = values.iter().find(|&&v| v >> l != 0) {
        return Err(ProtocolError::Domain(format!("comparison input {v} does not fit in {l} bits")));
    }
    Ok(())
}

fn check_plaintext_space(u: u64, l: u32) -> Result<(), ProtocolError> {
    let needed = dgk::plaintext_modulus_for(u64::from(l));
    if u < needed {
        return Err(ProtocolError::Config(format!("DGK plaintext modulus {u} too small for l = {l}")));
    }
    Ok(())
}

fn shuffle<T>(items: &mut [T], rng: &mut RandomSource) {
    for i in (1..items.len()).rev() {
        items.swap(i, rng.index(i + 1));
    }
}

/// Cloud half of the bitwise comparison. Returns the cloud's shares `δ_C`.
pub fn dgk_compare_cloud(ctx: &mut CloudContext, alphas: &[u64], l: u32) -> Result<Vec<bool>, ProtocolError> {
    check_inputs(alphas, l)?;
    let pk = ctx.dgk.clone();
    let u = pk.plaintext_modulus();
    check_plaintext_space(u, l)?;
    let width = l as usize;

    let msg = ctx.link.recv(Tag::DgkBits)?;
    msg.expect_len(alphas.len() * width)?;
    let bits = msg.parse_dgk(&pk)?;

    let one = pk.encode_constant(1);
    let u_big = BigUint::from(u);
    let mut deltas = Vec::with_capacity(alphas.len());
    let mut out = Vec::with_capacity(alphas.len() * (width + 1));
    for (&alpha, enc_beta) in alphas.iter().zip(bits.chunks(width)) {
        let delta_c = ctx.rng.coin();
        ctx.log.coin_bit("delta_c", delta_c);

        let blind = |c: &DgkCiphertext, ctx: &mut CloudContext| -> Result<DgkCiphertext, ProtocolError> {
            let r = loop {
                let r = math::sample_bits(2 * pk.t_bits(), &mut ctx.rng);
                if !(&r % &u_big).is_zero() {
                    break r;
                }
            };
            ctx.log.coin("dgk_blind", &r);
            let fresh = pk.encrypt(0, &mut ctx.rng)?;
            Ok(pk.add(&pk.scalar_mul(&r, c)?, &fresh)?)
        };

        let mut terms = Vec::with_capacity(width + 1);
        // running Σ_{j>i} α_j ⊕ β_j, from the most significant bit down
        let mut suffix = pk.encode_constant(0);
        for i in (0..width).rev() {
            let alpha_i = alpha >> i & 1 == 1;
            let beta_i = &enc_beta[i];
            if alpha_i == delta_c {
                let c = if delta_c {
                    pk.add(beta_i, &suffix)?
                } else {
                    pk.sub(&pk.add(&one, &suffix)?, beta_i)?
                };
                terms.push(blind(&c, ctx)?);
            } else {
                let filler = 1 + ctx.rng.index((u - 1) as usize) as u64;
                terms.push(pk.encrypt(filler, &mut ctx.rng)?);
            }
            let xor = if alpha_i { pk.sub(&one, beta_i)? } else { beta_i.clone() };
            suffix = pk.add(&suffix, &xor)?;
        }
        // zero iff α = β and δ_C = 0
        let equal = pk.add(&pk.encode_constant(u64::from(delta_c)), &suffix)?;
        terms.push(blind(&equal, ctx)?);

        shuffle(&mut terms, &mut ctx.rng);
        out.extend(terms);
        deltas.push(delta_c);
    }
    let n_bits = pk.n_bits();
    ctx.link.send(&super::Message::dgk(Tag::DgkBlinded, ctx.link.local(), ctx.link.peer(), &out, n_bits))?;
    Ok(deltas)
}

/// Target half of the bitwise comparison. Returns the target's shares `δ_T`;
/// `δ_C xor δ_T = [α ≤ β]`.
pub fn dgk_compare_target(ctx: &mut TargetContext, betas: &[u64], l: u32) -> Result<Vec<bool>, ProtocolError> {
    check_inputs(betas, l)?;
    let u = ctx.dgk.public_key().plaintext_modulus();
    check_plaintext_space(u, l)?;
    let width = l as usize;

    let mut bits = Vec::with_capacity(betas.len() * width);
    for &beta in betas {
        for i in 0..width {
            bits.push(ctx.dgk.encrypt(beta >> i & 1, &mut ctx.rng)?);
        }
    }
    let n_bits = ctx.dgk.public_key().n_bits();
    ctx.link.send(&super::Message::dgk(Tag::DgkBits, ctx.link.local(), ctx.link.peer(), &bits, n_bits))?;

    let msg = ctx.link.recv(Tag::DgkBlinded)?;
    msg.expect_len(betas.len() * (width + 1))?;
    let blinded = msg.parse_dgk(ctx.dgk.public_key())?;
    let mut deltas = Vec::with_capacity(betas.len());
    for chunk in blinded.chunks(width + 1) {
        let mut found = false;
        for c in chunk {
            found |= ctx.dgk.is_zero(c)?;
        }
        ctx.log.coin_bit("delta_t", found);
        deltas.push(found);
    }
    Ok(deltas)
}

/// Cloud half of the encrypted comparison of `a[k]` with `b[k]`, whose
/// plaintexts must lie in `[0, 2^l)`. The target learns `t_k = [a_k ≤ b_k]`.
pub fn compare_cloud(
    ctx: &mut CloudContext,
    a: &[PaillierCiphertext],
    b: &[PaillierCiphertext],
    l: u32,
) -> Result<(), ProtocolError> {
    if a.len() != b.len() {
        return Err(ProtocolError::Domain("comparison operands differ in length".into()));
    }
    let lambda = u64::from(ctx.config.params.lambda);
    if u64::from(l) + lambda + 1 >= ctx.sigma_bits() - 1 {
        return Err(ProtocolError::Config(format!("blinded comparison of {l} bits overflows the Paillier modulus")));
    }
    let pk = ctx.pk.clone();
    let two_l = BigUint::one() << l;
    let mask = &two_l - 1u8;

    let mut rhos = Vec::with_capacity(a.len());
    let mut zs = Vec::with_capacity(a.len());
    for (ak, bk) in a.iter().zip(b) {
        let rho = math::sample_bits(u64::from(l) + lambda, &mut ctx.rng);
        ctx.log.coin("rho", &rho);
        let shift = pk.encode_constant(&(&two_l + &rho))?;
        let z = pk.add(&pk.sub(bk, ak)?, &shift)?;
        zs.push(pk.rerandomize(&z, &mut ctx.rng)?);
        rhos.push(rho);
    }
    let sigma = ctx.sigma_bits();
    ctx.link.send(&super::Message::paillier(Tag::CompareZ, ctx.link.local(), ctx.link.peer(), &zs, sigma))?;

    let alphas: Vec<u64> = rhos.iter().map(|r| (r & &mask).to_u64().expect("l-bit value")).collect();
    let deltas = dgk_compare_cloud(ctx, &alphas, l)?;

    let reply = ctx.link.recv(Tag::CompareReply)?;
    reply.expect_len(2 * a.len())?;
    let parts = reply.parse_paillier(&pk)?;
    let one = pk.encode_constant(&BigUint::one())?;
    let mut ts = Vec::with_capacity(a.len());
    for ((pair, rho), &delta_c) in parts.chunks(2).zip(&rhos).zip(&deltas) {
        let (z_high, delta_t) = (&pair[0], &pair[1]);
        // borrow of the low bits: [β < α]
        let borrow = if delta_c { delta_t.clone() } else { pk.sub(&one, delta_t)? };
        let rho_high = BigInt::from(rho >> l);
        let t = pk.sub(&pk.add(z_high, &pk.mul_signed(&-rho_high, &one)?)?, &borrow)?;
        ts.push(pk.rerandomize(&t, &mut ctx.rng)?);
    }
    ctx.link.send(&super::Message::paillier(Tag::CompareResult, ctx.link.local(), ctx.link.peer(), &ts, sigma))?;
    Ok(())
}

/// Target half of [`compare_cloud`] for `count` pairs.
pub fn compare_target(ctx: &mut TargetContext, count: usize, l: u32) -> Result<Vec<bool>, ProtocolError> {
    let lambda = u64::from(ctx.config.params.lambda);
    let envelope = u64::from(l) + lambda + 1;
    let msg = ctx.link.recv(Tag::CompareZ)?;
    msg.expect_len(count)?;
    let zs = msg.parse_paillier(ctx.pk())?;
    let mask = (BigUint::one() << l) - 1u8;
    let mut highs = Vec::with_capacity(count);
    let mut betas = Vec::with_capacity(count);
    for c in &zs {
        let z = ctx.sk.decrypt(c)?;
        ctx.log.observe("compare_z", &z, Some(envelope));
        betas.push((&z & &mask).to_u64().expect("l-bit value"));
        highs.push(z >> l);
    }

    let deltas = dgk_compare_target(ctx, &betas, l)?;

    let pk = ctx.pk().clone();
    let mut reply = Vec::with_capacity(2 * count);
    for (high, delta_t) in highs.iter().zip(deltas) {
        reply.push(pk.encrypt(high, &mut ctx.rng)?);
        reply.push(pk.encrypt(&BigUint::from(u8::from(delta_t)), &mut ctx.rng)?);
    }
    let sigma = ctx.sigma_bits();
    ctx.link.send(&super::Message::paillier(Tag::CompareReply, ctx.link.local(), ctx.link.peer(), &reply, sigma))?;

    let result = ctx.link.recv(Tag::CompareResult)?;
    result.expect_len(count)?;
    let mut ts = Vec::with_capacity(count);
    for c in result.parse_paillier(&pk)? {
        let t = ctx.sk.decrypt(&c)?;
        ctx.log.observe("t", &t, None);
        match t.to_u8() {
            Some(0) => ts.push(false),
            Some(1) => ts.push(true),
            _ => return Err(ProtocolError::Overflow(format!("comparison produced t = {t}; operands exceed l bits"))),
        }
    }
    Ok(ts)
}
