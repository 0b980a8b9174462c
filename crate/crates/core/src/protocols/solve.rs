//! The full multi-party run: agents upload encrypted shares of `b` and `c`,
//! the cloud iterates with the target's help, and the target decrypts the
//! primal solution.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use super::iteration::{
    alt_iteration_cloud, alt_iteration_target, initial_dual_scaled, main_iteration_cloud, main_iteration_target,
    IterationCoefficients,
};
use super::message::{Message, Tag};
use super::party::{CloudContext, TargetContext};
use super::transcript::{PartyLog, Transcript};
use super::transport::{duplex, Endpoint};
use super::{Keys, Mode, Party, ProtocolConfig, ProtocolError};
use crate::fixed_point::FixedPointCodec;
use crate::math::RandomSource;
use crate::paillier::{PaillierCiphertext, PaillierPublicKey};
use crate::qp::QPInstance;

/// The private entries one agent holds.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentInput {
    pub index: usize,
    pub b: Vec<(usize, f64)>,
    pub c: Vec<(usize, f64)>,
}

/// Splits `b` and `c` by the instance's ownership tags.
pub fn agent_inputs(inst: &QPInstance) -> Vec<AgentInput> {
    let owners = inst.owners();
    (0..owners.agent_count().max(1))
        .map(|index| AgentInput {
            index,
            b: owners.b.iter().enumerate().filter(|(_, &o)| o == index).map(|(i, _)| (i, inst.b()[i])).collect(),
            c: owners.c.iter().enumerate().filter(|(_, &o)| o == index).map(|(j, _)| (j, inst.c()[j])).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    /// Share collection, coefficient preparation and `μ_0` encryption.
    pub setup: Duration,
    pub iterations: Duration,
    pub primal: Duration,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub x: DVector<f64>,
    /// Primal at scale `2^(2·l_f)`.
    pub x_scaled: Vec<BigInt>,
    /// Signs revealed to the target, one vector per iteration (alternative mode).
    pub signs: Vec<Vec<i8>>,
    pub final_mu: Vec<PaillierCiphertext>,
    pub transcript: Transcript,
    pub phases: PhaseTimes,
    pub wall_time: Duration,
}

impl SolveOutput {
    pub fn messages(&self) -> usize {
        self.transcript.total_messages()
    }

    pub fn bytes(&self) -> usize {
        self.transcript.total_bytes()
    }
}

/// Encrypts and uploads one agent's entries.
pub fn run_agent(
    input: &AgentInput,
    pk: &PaillierPublicKey,
    codec: &FixedPointCodec,
    seed: u64,
    link: &mut Endpoint,
) -> Result<PartyLog, ProtocolError> {
    let mut rng = RandomSource::derive(seed, &format!("agent{}", input.index));
    let mut shares = Vec::with_capacity(input.b.len() + input.c.len());
    for (vector, entries) in [('b', &input.b), ('c', &input.c)] {
        for &(i, x) in entries {
            shares.push((vector, i, pk.encrypt(&codec.encode(x)?, &mut rng)?));
        }
    }
    link.send_items(Tag::AgentShare, Message::share_items(&shares, pk.sigma_bits()))?;
    let mut log = PartyLog::new(link.local());
    log.absorb(link.take_log());
    Ok(log)
}

struct CloudResult {
    final_mu: Vec<PaillierCiphertext>,
    phases: PhaseTimes,
}

fn collect_shares(
    agents: &mut [Endpoint],
    pk: &PaillierPublicKey,
    m: usize,
    n: usize,
) -> Result<(Vec<PaillierCiphertext>, Vec<PaillierCiphertext>), ProtocolError> {
    let mut b = vec![None; m];
    let mut c = vec![None; n];
    for link in agents.iter_mut() {
        let msg = link.recv(Tag::AgentShare)?;
        for (vector, index, ct) in msg.parse_shares(pk)? {
            let slot = match vector {
                'b' => b.get_mut(index),
                _ => c.get_mut(index),
            };
            *slot.ok_or_else(|| ProtocolError::Malformed(format!("share index {vector}[{index}] out of range")))? =
                Some(ct);
        }
    }
    let finish = |v: Vec<Option<PaillierCiphertext>>, name: char| {
        v.into_iter()
            .enumerate()
            .map(|(index, ct)| ct.ok_or(ProtocolError::MissingShare { vector: name, index }))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok((finish(b, 'b')?, finish(c, 'c')?))
}

fn run_cloud(
    ctx: &mut CloudContext,
    agents: &mut [Endpoint],
    inst: &QPInstance,
    mode: Mode,
) -> Result<CloudResult, ProtocolError> {
    let start = Instant::now();
    let pk = ctx.pk.clone();
    let (m, n) = (inst.m(), inst.n());
    let (b, c) = match collect_shares(agents, &pk, m, n) {
        Ok(shares) => shares,
        Err(err) => {
            ctx.link.abort(&err.to_string());
            return Err(err);
        }
    };
    let coeffs = IterationCoefficients::new(inst, ctx.config.params.l_f)?;
    let mut mu = initial_dual_scaled(m, ctx.config.seed, ctx.config.params.l_f)
        .iter()
        .map(|v| Ok(pk.encrypt_signed(v, &mut ctx.rng)?))
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    let setup = start.elapsed();

    let start = Instant::now();
    if m > 0 {
        for _ in 0..ctx.config.k {
            mu = match mode {
                Mode::Main => main_iteration_cloud(ctx, &coeffs, &mu, &b, &c)?,
                Mode::Alternative => alt_iteration_cloud(ctx, &coeffs, &mu, &b, &c)?,
            };
        }
    }
    let iterations = start.elapsed();

    let start = Instant::now();
    let x = coeffs.primal(&pk, &mu, &c)?;
    let sigma = ctx.sigma_bits();
    ctx.link.send(&Message::paillier(Tag::PrimalResult, Party::Cloud, Party::Target, &x, sigma))?;
    Ok(CloudResult { final_mu: mu, phases: PhaseTimes { setup, iterations, primal: start.elapsed() } })
}

fn run_target(ctx: &mut TargetContext, mode: Mode, m: usize, n: usize) -> Result<(Vec<BigInt>, Vec<Vec<i8>>), ProtocolError> {
    let mut signs = Vec::new();
    if m > 0 {
        for _ in 0..ctx.config.k {
            match mode {
                Mode::Main => {
                    main_iteration_target(ctx, m)?;
                }
                Mode::Alternative => signs.push(alt_iteration_target(ctx, m)?),
            }
        }
    }
    let msg = ctx.link.recv(Tag::PrimalResult)?;
    msg.expect_len(n)?;
    let x = msg.parse_paillier(ctx.pk())?.iter().map(|c| Ok(ctx.sk.decrypt_signed(c)?)).collect::<Result<_, ProtocolError>>()?;
    Ok((x, signs))
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> ProtocolError {
    let text = payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default();
    ProtocolError::Panicked(text)
}

fn is_disconnect(err: &ProtocolError) -> bool {
    matches!(err, ProtocolError::Disconnected { .. })
}

/// Runs agents, cloud and target on their own threads over links with the
/// given per-message latency.
pub fn solve_encrypted(
    inst: &QPInstance,
    config: &ProtocolConfig,
    keys: &Keys,
    mode: Mode,
    latency: Duration,
) -> Result<SolveOutput, ProtocolError> {
    solve_with_agents(inst, config, keys, mode, latency, &agent_inputs(inst))
}

/// As [`solve_encrypted`] with explicit agent inputs.
pub fn solve_with_agents(
    inst: &QPInstance,
    config: &ProtocolConfig,
    keys: &Keys,
    mode: Mode,
    latency: Duration,
    inputs: &[AgentInput],
) -> Result<SolveOutput, ProtocolError> {
    config.validate(mode)?;
    keys.check_compatible(config)?;
    let pk = keys.paillier.public_key().clone();
    let codec = FixedPointCodec::new(config.params, pk.modulus().clone());
    codec.validate()?;
    let (m, n) = (inst.m(), inst.n());

    let (cloud_link, target_link) = duplex(Party::Cloud, Party::Target, latency);
    let mut cloud_sides = Vec::with_capacity(inputs.len());
    let mut agent_sides = Vec::with_capacity(inputs.len());
    for input in inputs {
        let (a, c) = duplex(Party::Agent(input.index), Party::Cloud, latency);
        agent_sides.push(a);
        cloud_sides.push(c);
    }

    let start = Instant::now();
    let mut cloud = CloudContext::new(pk.clone(), keys.dgk.public_key().clone(), *config, cloud_link);
    let mut target = TargetContext::new(keys.paillier.clone(), keys.dgk.clone(), *config, target_link);

    let (agent_results, cloud_result, target_result) = std::thread::scope(|s| {
        let agent_handles: Vec<_> = inputs
            .iter()
            .zip(agent_sides)
            .map(|(input, mut link)| {
                let (pk, codec) = (&pk, &codec);
                s.spawn(move || run_agent(input, pk, codec, config.seed, &mut link))
            })
            .collect();
        let target_handle = s.spawn(move || {
            let out = run_target(&mut target, mode, m, n);
            (out, target.finish())
        });

        let cloud_out = run_cloud(&mut cloud, &mut cloud_sides, inst, mode);
        let mut cloud_log = cloud.finish();
        for link in &mut cloud_sides {
            cloud_log.absorb(link.take_log());
        }
        drop(cloud_sides);

        let agents: Vec<Result<PartyLog, ProtocolError>> =
            agent_handles.into_iter().map(|h| h.join().unwrap_or_else(|p| Err(panic_message(p)))).collect();
        let target = target_handle.join().map_err(panic_message);
        (agents, (cloud_out, cloud_log), target)
    });
    let wall_time = start.elapsed();

    let (cloud_out, cloud_log) = cloud_result;
    let (target_out, target_log) = match target_result {
        Ok((out, log)) => (out, Some(log)),
        Err(err) => (Err(err), None),
    };
    let mut agent_logs = Vec::new();
    for result in agent_results {
        agent_logs.push(result?);
    }

    let cloud_out = match (cloud_out, &target_out) {
        (Err(err), Err(t)) if is_disconnect(&err) && !is_disconnect(t) => return Err(clone_error(t)),
        (Err(err), _) => return Err(err),
        (Ok(out), _) => out,
    };
    let (x_scaled, signs) = target_out?;

    let mut transcript = Transcript::default();
    for log in agent_logs {
        transcript.insert(log);
    }
    transcript.insert(cloud_log);
    transcript.insert(target_log.expect("target finished"));

    let scale = f64::from(2 * config.params.l_f).exp2();
    let x = DVector::from_iterator(n, x_scaled.iter().map(|v| num_traits::ToPrimitive::to_f64(v).unwrap_or(f64::NAN) / scale));
    Ok(SolveOutput { x, x_scaled, signs, final_mu: cloud_out.final_mu, transcript, phases: cloud_out.phases, wall_time })
}

fn clone_error(err: &ProtocolError) -> ProtocolError {
    match err {
        ProtocolError::Aborted { by, reason } => ProtocolError::Aborted { by: *by, reason: reason.clone() },
        ProtocolError::Overflow(s) => ProtocolError::Overflow(s.clone()),
        other => ProtocolError::Malformed(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::mirror::mirror_solve;
    use crate::protocols::party::fixtures;
    use crate::qp;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn active_one_dimensional_instance() {
        let (config, keys) = fixtures::keys();
        // min ½x² + 2x s.t. x ≤ -2 is solved at the boundary
        let inst = QPInstance::new(dmatrix![1.0], dmatrix![1.0], dvector![-2.0], dvector![2.0]).unwrap();
        let config = ProtocolConfig { k: 10, ..*config };
        let out = solve_encrypted(&inst, &config, keys, Mode::Main, Duration::ZERO).unwrap();
        assert!((out.x[0] + 2.0).abs() <= 2f64.powi(-14), "{}", out.x[0]);
        assert!(out.transcript.is_complete());
        assert_eq!(out.transcript.link_messages(Party::Cloud, Party::Target), 9 * 10 + 1);
        assert!(out.transcript.reused_blinding().is_empty());
        assert!(out.transcript.envelope_violations().is_empty());
    }

    #[test]
    fn matches_mirror_in_both_modes() {
        let (config, keys) = fixtures::keys();
        let inst = qp::random_instance(2, 3, 11).unwrap();
        let config = ProtocolConfig { k: 6, seed: 11, ..*config };
        for mode in [Mode::Main, Mode::Alternative] {
            let out = solve_encrypted(&inst, &config, keys, mode, Duration::ZERO).unwrap();
            let mirror = mirror_solve(&inst, &config, mode).unwrap();
            assert_eq!(out.x_scaled, mirror.x_scaled, "{mode}");
            assert_eq!(out.signs, mirror.signs);
            let mu: Vec<BigInt> = out.final_mu.iter().map(|c| keys.paillier.decrypt_signed(c).unwrap()).collect();
            assert_eq!(&mu, mirror.mu_history.last().unwrap());
        }
    }

    #[test]
    fn no_constraints() {
        let (config, keys) = fixtures::keys();
        let q = dmatrix![2.0, 0.5; 0.5, 1.0];
        let inst = QPInstance::new(q, nalgebra::DMatrix::zeros(0, 2), DVector::zeros(0), dvector![1.0, -3.0]).unwrap();
        let out = solve_encrypted(&inst, config, keys, Mode::Main, Duration::ZERO).unwrap();
        let exact = -(inst.q_inv() * inst.c());
        assert!((&out.x - exact).amax() < 1e-3);
        assert_eq!(out.transcript.link_messages(Party::Cloud, Party::Target), 1);
    }

    #[test]
    fn missing_share_aborts_with_index() {
        let (config, keys) = fixtures::keys();
        let inst = qp::random_instance(2, 3, 5).unwrap();
        let mut inputs = agent_inputs(&inst);
        inputs[0].b.retain(|&(i, _)| i != 2);
        match solve_with_agents(&inst, config, keys, Mode::Main, Duration::ZERO, &inputs) {
            Err(ProtocolError::MissingShare { vector: 'b', index: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }
}
