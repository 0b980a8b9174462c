//! Random operand order and the blinded selection of the larger operand.

use num_bigint::BigInt;

use super::message::{Message, Tag};
use super::party::{CloudContext, TargetContext};
use super::transcript::PartyLog;
use super::ProtocolError;
use crate::math::{self, RandomSource};
use crate::paillier::{PaillierCiphertext, PaillierPublicKey};

/// Orders `(zero, mu_bar)` by a fair coin and rerandomizes both. The coin
/// stays with the cloud.
pub fn randomize_pair(
    pk: &PaillierPublicKey,
    mu_bar: &PaillierCiphertext,
    zero: &PaillierCiphertext,
    rng: &mut RandomSource,
    log: &mut PartyLog,
) -> Result<(PaillierCiphertext, PaillierCiphertext, bool), ProtocolError> {
    let swap = rng.coin();
    log.coin_bit("swap", swap);
    let (a, b) = if swap { (mu_bar, zero) } else { (zero, mu_bar) };
    Ok((pk.rerandomize(a, rng)?, pk.rerandomize(b, rng)?, swap))
}

/// Cloud half of the update: returns ciphertexts of `t_k ? b_k : a_k`.
pub fn update_cloud(
    ctx: &mut CloudContext,
    a: &[PaillierCiphertext],
    b: &[PaillierCiphertext],
) -> Result<Vec<PaillierCiphertext>, ProtocolError> {
    if a.len() != b.len() {
        return Err(ProtocolError::Domain("update operands differ in length".into()));
    }
    let pk = ctx.pk.clone();
    let bits = u64::from(ctx.l() + ctx.config.params.lambda);
    let mut masks = Vec::with_capacity(a.len());
    let mut request = Vec::with_capacity(2 * a.len());
    for (ak, bk) in a.iter().zip(b) {
        let r = math::sample_bits(bits, &mut ctx.rng);
        let s = math::sample_bits(bits, &mut ctx.rng);
        ctx.log.coin("update_r", &r);
        ctx.log.coin("update_s", &s);
        request.push(pk.add(ak, &pk.encrypt(&r, &mut ctx.rng)?)?);
        request.push(pk.add(bk, &pk.encrypt(&s, &mut ctx.rng)?)?);
        masks.push((BigInt::from(r), BigInt::from(s)));
    }
    let sigma = ctx.sigma_bits();
    ctx.link.send(&Message::paillier(Tag::UpdateRequest, ctx.link.local(), ctx.link.peer(), &request, sigma))?;

    let reply = ctx.link.recv(Tag::UpdateReply)?;
    reply.expect_len(2 * a.len())?;
    let parts = reply.parse_paillier(&pk)?;
    let one = pk.encode_constant(&1u8.into())?;
    parts
        .chunks(2)
        .zip(&masks)
        .map(|(pair, (r, s))| {
            let (v, t) = (&pair[0], &pair[1]);
            // v + (r - s)·t - r
            let mu = pk.add(v, &pk.mul_signed(&(r - s), t)?)?;
            Ok(pk.add(&mu, &pk.mul_signed(&-r, &one)?)?)
        })
        .collect()
}

/// Target half of the update: selects by its comparison bits.
pub fn update_target(ctx: &mut TargetContext, t: &[bool]) -> Result<(), ProtocolError> {
    let pk = ctx.pk().clone();
    let msg = ctx.link.recv(Tag::UpdateRequest)?;
    msg.expect_len(2 * t.len())?;
    let blinded = msg.parse_paillier(&pk)?;
    let mut reply = Vec::with_capacity(2 * t.len());
    for (pair, &tk) in blinded.chunks(2).zip(t) {
        let chosen = if tk { &pair[1] } else { &pair[0] };
        reply.push(pk.rerandomize(chosen, &mut ctx.rng)?);
        reply.push(pk.encrypt(&u8::from(tk).into(), &mut ctx.rng)?);
    }
    let sigma = ctx.sigma_bits();
    ctx.link.send(&Message::paillier(Tag::UpdateReply, ctx.link.local(), ctx.link.peer(), &reply, sigma))?;
    Ok(())
}
