//! Blinded truncation: the cloud removes `shift` fractional bits from
//! encrypted values with the target's help.
//!
//! The result is `⌊v / 2^shift⌋` or one more, depending on the carry out of
//! the masked low bits.

use num_bigint::{BigInt, BigUint};
use num_traits::One;

use super::message::{Message, Tag};
use super::party::{CloudContext, TargetContext};
use super::ProtocolError;
use crate::math::{self, RandomSource};
use crate::paillier::PaillierCiphertext;

/// Mask for one value of magnitude below `2^magnitude_bits`.
pub fn sample_mask(magnitude_bits: u32, lambda: u32, rng: &mut RandomSource) -> BigUint {
    math::sample_bits(u64::from(magnitude_bits + lambda), rng)
}

/// Plaintext replay of the truncation of `v` under mask `r`.
pub fn truncate_plain(v: &BigInt, r: &BigUint, shift: u32, magnitude_bits: u32) -> BigInt {
    let offset = BigInt::one() << magnitude_bits;
    let blinded = v + BigInt::from(r.clone()) + &offset;
    (blinded >> shift) - (BigInt::from(r.clone()) >> shift) - (offset >> shift)
}

/// Cloud half. Plaintexts must satisfy `|v| < 2^magnitude_bits`; masks come
/// from the truncation stream so the plaintext mirror can replay them.
pub fn truncate_cloud(
    ctx: &mut CloudContext,
    values: &[PaillierCiphertext],
    shift: u32,
    magnitude_bits: u32,
) -> Result<Vec<PaillierCiphertext>, ProtocolError> {
    if shift > magnitude_bits {
        return Err(ProtocolError::Domain(format!("cannot drop {shift} bits from a {magnitude_bits}-bit value")));
    }
    let lambda = ctx.config.params.lambda;
    if u64::from(magnitude_bits + lambda + 1) >= ctx.sigma_bits() - 1 {
        return Err(ProtocolError::Config(format!(
            "blinded truncation of {magnitude_bits}-bit values overflows the Paillier modulus"
        )));
    }
    let pk = ctx.pk.clone();
    let offset = BigUint::one() << magnitude_bits;
    let mut corrections = Vec::with_capacity(values.len());
    let mut request = Vec::with_capacity(values.len());
    for v in values {
        let r = sample_mask(magnitude_bits, lambda, &mut ctx.truncation_rng);
        ctx.log.coin("trunc_mask", &r);
        let shifted = pk.add(v, &pk.encode_constant(&(&r + &offset))?)?;
        request.push(pk.rerandomize(&shifted, &mut ctx.rng)?);
        corrections.push(-BigInt::from((&r >> shift) + (&offset >> shift)));
    }
    let sigma = ctx.sigma_bits();
    ctx.link.send(&Message::paillier(Tag::TruncRequest, ctx.link.local(), ctx.link.peer(), &request, sigma))?;

    let reply = ctx.link.recv(Tag::TruncReply)?;
    reply.expect_len(values.len())?;
    let one = pk.encode_constant(&BigUint::one())?;
    reply
        .parse_paillier(&pk)?
        .iter()
        .zip(&corrections)
        .map(|(y, k)| Ok(pk.add(y, &pk.mul_signed(k, &one)?)?))
        .collect()
}

/// Target half. `envelope_bits` bounds the blinded values it may see.
pub fn truncate_target(
    ctx: &mut TargetContext,
    count: usize,
    shift: u32,
    envelope_bits: u64,
) -> Result<(), ProtocolError> {
    let pk = ctx.pk().clone();
    let msg = ctx.link.recv(Tag::TruncRequest)?;
    msg.expect_len(count)?;
    let mut reply = Vec::with_capacity(count);
    for c in msg.parse_paillier(&pk)? {
        let blinded = ctx.sk.decrypt(&c)?;
        ctx.log.observe("trunc_blinded", &blinded, Some(envelope_bits));
        reply.push(pk.encrypt(&(blinded >> shift), &mut ctx.rng)?);
    }
    let sigma = ctx.sigma_bits();
    ctx.link.send(&Message::paillier(Tag::TruncReply, ctx.link.local(), ctx.link.peer(), &reply, sigma))?;
    Ok(())
}
