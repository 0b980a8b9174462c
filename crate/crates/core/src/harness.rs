//! Simulated deployments: timed runs over links with injected latency,
//! coalition views for audits, and benchmark sweeps.

use std::collections::BTreeMap;
use std::io;
use std::time::Duration;

use nalgebra::DVector;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocols::solve::{solve_encrypted, SolveOutput};
use crate::protocols::message::ItemKind;
use crate::protocols::transcript::{Direction, PartyLog, Transcript};
use crate::protocols::{Keys, Mode, Party, ProtocolConfig, ProtocolError};
use crate::qp::{self, QPInstance, QpError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// FIFO, lossless links with a fixed one-way delay per message.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulatedNetwork {
    pub latency_ms: u64,
}

impl SimulatedNetwork {
    pub fn latency(&self) -> Duration {
        Duration::from_millis(self.latency_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub sigma_bits: u64,
    pub mode: Mode,
    pub latency_ms: u64,
    pub x_star: Vec<f64>,
    /// Final dual, decrypted for auditing only.
    pub mu_star: Vec<f64>,
    pub kkt_residual: f64,
    pub setup_seconds: f64,
    pub iteration_seconds: f64,
    pub primal_seconds: f64,
    pub wall_seconds: f64,
    pub messages: usize,
    pub bytes: usize,
    pub cloud_target_messages: usize,
}

/// Runs the encrypted solver and summarizes it. Keys are taken as given, so
/// key generation is not part of the measured time.
pub fn run_simulation(
    inst: &QPInstance,
    config: &ProtocolConfig,
    keys: &Keys,
    mode: Mode,
    network: SimulatedNetwork,
) -> Result<(RunReport, SolveOutput), HarnessError> {
    let out = solve_encrypted(inst, config, keys, mode, network.latency())?;
    let scale = f64::from(config.params.l_f).exp2();
    let mu_star = out
        .final_mu
        .iter()
        .map(|c| {
            let v = keys.paillier.decrypt_signed(c).map_err(ProtocolError::from)?;
            Ok(v.to_f64().unwrap_or(f64::NAN) / scale)
        })
        .collect::<Result<Vec<f64>, HarnessError>>()?;
    let kkt_residual = inst.kkt_residual(&out.x, &DVector::from_vec(mu_star.clone()))?;
    let report = RunReport {
        n: inst.n(),
        m: inst.m(),
        k: config.k,
        sigma_bits: config.sigma_bits,
        mode,
        latency_ms: network.latency_ms,
        x_star: out.x.iter().copied().collect(),
        mu_star,
        kkt_residual,
        setup_seconds: out.phases.setup.as_secs_f64(),
        iteration_seconds: out.phases.iterations.as_secs_f64(),
        primal_seconds: out.phases.primal.as_secs_f64(),
        wall_seconds: out.wall_time.as_secs_f64(),
        messages: out.messages(),
        bytes: out.bytes(),
        cloud_target_messages: out.transcript.link_messages(Party::Cloud, Party::Target),
    };
    Ok((report, out))
}

/// Combined logs of a set of colluding parties.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionView {
    pub parties: Vec<Party>,
    pub logs: Vec<PartyLog>,
}

impl CoalitionView {
    /// Every received payload is a ciphertext and nothing was decrypted.
    pub fn only_ciphertexts(&self) -> bool {
        self.logs.iter().all(|log| {
            log.observations.is_empty()
                && log
                    .messages
                    .iter()
                    .filter(|m| m.direction == Direction::Received)
                    .all(|m| matches!(m.tag.kind(), ItemKind::Paillier | ItemKind::Dgk | ItemKind::Share))
        })
    }

    /// Every decrypted value that carries an envelope lies inside it.
    pub fn within_envelopes(&self) -> bool {
        let mut transcript = Transcript::default();
        for log in &self.logs {
            transcript.insert(log.clone());
        }
        transcript.envelope_violations().is_empty()
    }

    pub fn decrypted_values(&self) -> usize {
        self.logs.iter().map(|l| l.observations.len()).sum()
    }
}

/// The view of `parties`. The cloud and the target together form a
/// prohibited coalition.
pub fn coalition_view(transcript: &Transcript, parties: &[Party]) -> Result<CoalitionView, HarnessError> {
    if parties.contains(&Party::Cloud) && parties.contains(&Party::Target) {
        return Err(HarnessError::Domain("the cloud and the target may not collude".into()));
    }
    let mut members: Vec<Party> = parties.to_vec();
    members.sort();
    members.dedup();
    let logs = members
        .iter()
        .map(|p| transcript.get(*p).cloned().ok_or_else(|| HarnessError::Domain(format!("{p} took no part in the run"))))
        .collect::<Result<_, _>>()?;
    Ok(CoalitionView { parties: members, logs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub sizes: Vec<(usize, usize)>,
    pub latencies_ms: Vec<u64>,
    pub modes: Vec<Mode>,
    pub repeats: usize,
    pub config: ProtocolConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: u64,
    pub mode: Mode,
    pub latency_ms: u64,
    pub mean_seconds: f64,
    pub messages: usize,
    pub bytes: usize,
}

/// One row per size, mode and latency. Repeats use instances seeded
/// `config.seed + r`.
pub fn bench_sweep(spec: &BenchSpec, keys: &Keys) -> Result<Vec<BenchRow>, HarnessError> {
    if spec.repeats == 0 {
        return Err(HarnessError::Domain("repeats must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &(n, m) in &spec.sizes {
        let instances = (0..spec.repeats as u64)
            .map(|r| qp::random_instance(n, m, spec.config.seed + r))
            .collect::<Result<Vec<_>, _>>()?;
        for &mode in &spec.modes {
            for &latency_ms in &spec.latencies_ms {
                let mut total = 0.0;
                let (mut messages, mut bytes) = (0, 0);
                for inst in &instances {
                    let (report, _) = run_simulation(inst, &spec.config, keys, mode, SimulatedNetwork { latency_ms })?;
                    total += report.wall_seconds;
                    messages = report.messages;
                    bytes = report.bytes;
                }
                rows.push(BenchRow {
                    n,
                    m,
                    k: spec.config.k,
                    sigma: spec.config.sigma_bits,
                    mode,
                    latency_ms,
                    mean_seconds: total / spec.repeats as f64,
                    messages,
                    bytes,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<W: io::Write>(rows: &[BenchRow], out: W) -> Result<(), HarnessError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Cells `(n, mode, latency)` whose mean time does not strictly increase with `m`.
pub fn monotone_in_m_violations(rows: &[BenchRow]) -> Vec<String> {
    let mut groups: BTreeMap<(usize, String, u64), Vec<(usize, f64)>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.n, row.mode.to_string(), row.latency_ms)).or_default().push((row.m, row.mean_seconds));
    }
    let mut violations = Vec::new();
    for ((n, mode, latency), mut cells) in groups {
        cells.sort_by_key(|c| c.0);
        for pair in cells.windows(2) {
            if pair[1].1 <= pair[0].1 {
                violations.push(format!(
                    "n={n} mode={mode} latency={latency}ms: m={} took {:.3}s, m={} took {:.3}s",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                ));
            }
        }
    }
    violations
}

/// Mean over sizes of `time(latency) / time(0)` for one mode.
pub fn latency_inflation(rows: &[BenchRow], mode: Mode, latency_ms: u64) -> Option<f64> {
    let base: BTreeMap<(usize, usize), f64> = rows
        .iter()
        .filter(|r| r.mode == mode && r.latency_ms == 0)
        .map(|r| ((r.n, r.m), r.mean_seconds))
        .collect();
    let ratios: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == mode && r.latency_ms == latency_ms)
        .filter_map(|r| base.get(&(r.n, r.m)).map(|b| r.mean_seconds / b))
        .collect();
    (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Mean over sizes of `time(latency) - time(0)` in seconds for one mode.
pub fn latency_slowdown(rows: &[BenchRow], mode: Mode, latency_ms: u64) -> Option<f64> {
    let base: BTreeMap<(usize, usize), f64> = rows
        .iter()
        .filter(|r| r.mode == mode && r.latency_ms == 0)
        .map(|r| ((r.n, r.m), r.mean_seconds))
        .collect();
    let deltas: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == mode && r.latency_ms == latency_ms)
        .filter_map(|r| base.get(&(r.n, r.m)).map(|b| r.mean_seconds - b))
        .collect();
    (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64)
}
