//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line to
//! stderr (uncaptured), and the test fails if any criterion fails.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_bigint::{BigInt, BigUint};
use num_traits::One;

use encqp::dgk;
use encqp::harness::{self, BenchSpec};
use encqp::math::{self, RandomSource};
use encqp::paillier;
use encqp::privacy::{self, CoalitionKnowledge};
use encqp::protocols::comparison::{compare_cloud, compare_target, dgk_compare_cloud, dgk_compare_target};
use encqp::protocols::mirror::mirror_solve;
use encqp::protocols::party::run_pair;
use encqp::protocols::solve::{solve_encrypted, SolveOutput};
use encqp::protocols::{Keys, Mode, Party, ProtocolConfig};
use encqp::qp::{self, QPInstance};

const PAILLIER_TRIALS: usize = 1000;
const PAILLIER_BUDGET: Duration = Duration::from_secs(30);
const COMPARISON_PAIRS: usize = 10_000;
const COMPARISON_BUDGET: Duration = Duration::from_secs(120);
const INSTANCES: u64 = 20;
const MIRROR_K: usize = 30;
const ORACLE_K: usize = 200;
const ENCRYPTED_TOL: f64 = 1e-2;
const PLAINTEXT_TOL: f64 = 1e-4;
const MAX_DUAL_CONDITION: f64 = 10.0;
const SWEEP_K: usize = 10;
const SWEEP_BUDGET: Duration = Duration::from_secs(600);
const BALANCE_ROUNDS: usize = 1000;
const BALANCE_RANGE: (f64, f64) = (0.45, 0.55);
const WITNESS_TOL: f64 = 1e-8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(results: &mut Vec<(usize, bool)>, criterion: usize, name: &str, outcome: Outcome) {
    let verdict = if outcome.pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr();
    writeln!(err, "criterion {criterion:>2} {verdict} {name}: {}", outcome.detail).unwrap();
    results.push((criterion, outcome.pass));
}

fn config() -> ProtocolConfig {
    ProtocolConfig { seed: 2024, ..ProtocolConfig::default() }
}

fn sup_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn paillier_correctness() -> Outcome {
    let mut rng = RandomSource::new(1);
    let (pk, sk) = paillier::keygen(256, &mut rng).unwrap();
    let n = pk.modulus().clone();
    let start = Instant::now();
    let mut failures = 0;
    for _ in 0..PAILLIER_TRIALS {
        let a = math::sample_below(&n, &mut rng).unwrap();
        let b = math::sample_below(&n, &mut rng).unwrap();
        let k = math::sample_below(&n, &mut rng).unwrap();
        let ea = pk.encrypt(&a, &mut rng).unwrap();
        let eb = pk.encrypt(&b, &mut rng).unwrap();
        let sum = sk.decrypt(&pk.add(&ea, &eb).unwrap()).unwrap();
        let prod = sk.decrypt(&pk.scalar_mul(&k, &ea).unwrap()).unwrap();
        if sum != (&a + &b) % &n || prod != (&k * &a) % &n {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: failures == 0 && elapsed < PAILLIER_BUDGET,
        detail: format!("{failures} failures in {PAILLIER_TRIALS} trials, {:.1} s", elapsed.as_secs_f64()),
    }
}

fn ciphertext_size() -> Outcome {
    let mut rng = RandomSource::new(2);
    let mut details = Vec::new();
    let mut pass = true;
    for sigma in [256u64, 1024] {
        let (pk, _) = paillier::keygen(sigma, &mut rng).unwrap();
        let mut widths = std::collections::BTreeSet::new();
        for m in 0u32..20 {
            let c = pk.encrypt(&BigUint::from(m), &mut rng).unwrap();
            pass &= c.value() < pk.modulus_squared();
            widths.insert(c.to_bytes(sigma).len() as u64 * 8);
            pass &= c.to_wire(sigma).len() as u64 == 16 + 2 * sigma / 4;
        }
        pass &= widths.len() == 1 && widths.contains(&(2 * sigma));
        details.push(format!("sigma {sigma}: {widths:?} bits"));
    }
    Outcome { pass, detail: details.join(", ") }
}

fn dgk_zero_test() -> Outcome {
    let mut rng = RandomSource::new(3);
    let (pk, sk) = dgk::keygen(256, 16, 8, &mut rng).unwrap();
    let u = pk.plaintext_modulus();
    let mut wrong = 0;
    for m in 0..u {
        for _ in 0..5 {
            let c = pk.encrypt(m, &mut rng).unwrap();
            if sk.is_zero(&c).unwrap() != (m == 0) {
                wrong += 1;
            }
        }
    }
    Outcome { pass: u <= 37 && wrong == 0, detail: format!("u = {u}, {wrong} misclassified of {}", 5 * u) }
}

fn comparison(keys: &Keys, config: &ProtocolConfig) -> Outcome {
    let start = Instant::now();
    let pairs: Vec<(u64, u64)> = (0..16).flat_map(|a| (0..16).map(move |b| (a, b))).collect();
    let alphas: Vec<u64> = pairs.iter().map(|p| p.0).collect();
    let betas: Vec<u64> = pairs.iter().map(|p| p.1).collect();
    let (dc, dt, _, _) = run_pair(
        keys,
        *config,
        |c| dgk_compare_cloud(c, &alphas, 4).unwrap(),
        |t| dgk_compare_target(t, &betas, 4).unwrap(),
    );
    let table_errors = pairs.iter().zip(dc.iter().zip(&dt)).filter(|((a, b), (x, y))| (*x ^ *y) != (a <= b)).count();

    let pk = keys.paillier.public_key().clone();
    let mut rng = RandomSource::new(4);
    let random: Vec<(u64, u64)> =
        (0..COMPARISON_PAIRS).map(|_| (rng.next_u64() & 0xffff, rng.next_u64() & 0xffff)).collect();
    let a: Vec<_> = random.iter().map(|p| pk.encrypt(&BigUint::from(p.0), &mut rng).unwrap()).collect();
    let b: Vec<_> = random.iter().map(|p| pk.encrypt(&BigUint::from(p.1), &mut rng).unwrap()).collect();
    let (_, ts, _, _) = run_pair(
        keys,
        *config,
        |c| compare_cloud(c, &a, &b, 16).unwrap(),
        |t| compare_target(t, random.len(), 16).unwrap(),
    );
    let random_errors = random.iter().zip(&ts).filter(|((x, y), t)| **t != (x <= y)).count();
    let elapsed = start.elapsed();
    Outcome {
        pass: table_errors == 0 && random_errors == 0 && elapsed < COMPARISON_BUDGET,
        detail: format!(
            "l=4 table {table_errors}/256 wrong, l=16 {random_errors}/{COMPARISON_PAIRS} wrong, {:.1} s",
            elapsed.as_secs_f64()
        ),
    }
}

fn small_instance(i: u64) -> QPInstance {
    let (n, m) = [(1, 1), (2, 1), (2, 2), (3, 2), (3, 3)][i as usize % 5];
    qp::random_well_conditioned(n, m, 500 + i, MAX_DUAL_CONDITION).unwrap()
}

fn decrypt_mu(keys: &Keys, out: &SolveOutput) -> Vec<BigInt> {
    out.final_mu.iter().map(|c| keys.paillier.decrypt_signed(c).unwrap()).collect()
}

fn bit_exactness(keys: &Keys, base: &ProtocolConfig, transcripts: &mut Vec<SolveOutput>) -> Outcome {
    let mut mismatches = Vec::new();
    for i in 0..INSTANCES {
        let inst = small_instance(i);
        let config = ProtocolConfig { k: MIRROR_K, seed: base.seed + i, ..*base };
        for mode in [Mode::Main, Mode::Alternative] {
            let out = solve_encrypted(&inst, &config, keys, mode, Duration::ZERO).unwrap();
            let mirror = mirror_solve(&inst, &config, mode).unwrap();
            let same = out.x_scaled == mirror.x_scaled
                && decrypt_mu(keys, &out) == *mirror.mu_history.last().unwrap()
                && out.signs == mirror.signs;
            if !same {
                mismatches.push(format!("instance {i} {mode}"));
            }
            transcripts.push(out);
        }
    }
    Outcome {
        pass: mismatches.is_empty(),
        detail: format!("{} runs, mismatches: {mismatches:?}", 2 * INSTANCES),
    }
}

struct OracleRuns {
    main: Vec<DVector<f64>>,
    alternative: Vec<DVector<f64>>,
}

fn oracle_equivalence(keys: &Keys, base: &ProtocolConfig, transcripts: &mut Vec<SolveOutput>) -> (Outcome, OracleRuns) {
    let mut worst_encrypted: f64 = 0.0;
    let mut worst_plain: f64 = 0.0;
    let mut runs = OracleRuns { main: Vec::new(), alternative: Vec::new() };
    for i in 0..INSTANCES {
        let inst = small_instance(i);
        let config = ProtocolConfig { k: ORACLE_K, seed: base.seed + 100 + i, ..*base };
        let oracle = inst.active_set_oracle().unwrap();
        let plain = inst.solve_dual_ascent(ORACLE_K, config.seed, config.params.l_f).unwrap();
        worst_plain = worst_plain.max(sup_distance(&plain.x_star, &oracle.x_star));
        for mode in [Mode::Main, Mode::Alternative] {
            let out = solve_encrypted(&inst, &config, keys, mode, Duration::ZERO).unwrap();
            if mode == Mode::Main {
                worst_encrypted = worst_encrypted.max(sup_distance(&out.x, &oracle.x_star));
                runs.main.push(out.x.clone());
            } else {
                runs.alternative.push(out.x.clone());
            }
            transcripts.push(out);
        }
    }
    let outcome = Outcome {
        pass: worst_encrypted <= ENCRYPTED_TOL && worst_plain <= PLAINTEXT_TOL,
        detail: format!("max error encrypted {worst_encrypted:.2e} (tol {ENCRYPTED_TOL}), plaintext {worst_plain:.2e} (tol {PLAINTEXT_TOL})"),
    };
    (outcome, runs)
}

fn alternative_equivalence(runs: &OracleRuns) -> Outcome {
    let worst = runs.main.iter().zip(&runs.alternative).map(|(a, b)| sup_distance(a, b)).fold(0.0, f64::max);
    Outcome {
        pass: runs.main.len() == INSTANCES as usize && worst <= ENCRYPTED_TOL,
        detail: format!("max main/alternative gap {worst:.2e} over {} instances", runs.main.len()),
    }
}

fn timing_trends(keys: &Keys, base: &ProtocolConfig) -> Outcome {
    let spec = BenchSpec {
        sizes: vec![(2, 2), (2, 5), (2, 10), (5, 2), (5, 5), (5, 10)],
        latencies_ms: vec![0, 20],
        modes: vec![Mode::Main, Mode::Alternative],
        repeats: 1,
        config: ProtocolConfig { k: SWEEP_K, ..*base },
    };
    let start = Instant::now();
    let rows = harness::bench_sweep(&spec, keys).unwrap();
    let elapsed = start.elapsed();
    let main_rows: Vec<_> = rows.iter().filter(|r| r.mode == Mode::Main).cloned().collect();
    let violations = harness::monotone_in_m_violations(&main_rows);
    let main_inflation = harness::latency_inflation(&rows, Mode::Main, 20).unwrap();
    let alt_inflation = harness::latency_inflation(&rows, Mode::Alternative, 20).unwrap();
    let main_slowdown = harness::latency_slowdown(&rows, Mode::Main, 20).unwrap();
    let alt_slowdown = harness::latency_slowdown(&rows, Mode::Alternative, 20).unwrap();
    let mut err = std::io::stderr();
    for r in &rows {
        writeln!(err, "    n={} m={} {} {}ms: {:.3} s", r.n, r.m, r.mode, r.latency_ms, r.mean_seconds).unwrap();
    }
    let a = violations.is_empty();
    let b = main_inflation > alt_inflation;
    Outcome {
        pass: a && b && elapsed < SWEEP_BUDGET,
        detail: format!(
            "(a) {} {violations:?}; (b) {} inflation main x{main_inflation:.2} vs alternative x{alt_inflation:.2} \
             (added seconds main {main_slowdown:.2} vs alternative {alt_slowdown:.2}); {:.0} s",
            if a { "PASS" } else { "FAIL" },
            if b { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        ),
    }
}

fn transcript_statistics(transcripts: &[SolveOutput]) -> Outcome {
    let outcomes: Vec<bool> = transcripts
        .iter()
        .filter_map(|t| t.transcript.get(Party::Target))
        .flat_map(|log| log.observations_labeled("t").map(|o| math::from_hex(&o.value).unwrap()).collect::<Vec<_>>())
        .take(BALANCE_ROUNDS)
        .map(|v| v == BigUint::one())
        .collect();
    let ones = outcomes.iter().filter(|&&b| b).count();
    let frequency = ones as f64 / outcomes.len().max(1) as f64;
    let balanced = outcomes.len() == BALANCE_ROUNDS && (BALANCE_RANGE.0..=BALANCE_RANGE.1).contains(&frequency);
    let envelope: usize = transcripts.iter().map(|t| t.transcript.envelope_violations().len()).sum();
    let checked: usize = transcripts
        .iter()
        .filter_map(|t| t.transcript.get(Party::Target))
        .map(|log| log.observations.iter().filter(|o| o.envelope_bits.is_some()).count())
        .sum();
    let reused: usize = transcripts.iter().map(|t| t.transcript.reused_blinding().len()).sum();
    Outcome {
        pass: balanced && envelope == 0 && checked > 0 && reused == 0,
        detail: format!(
            "t=1 frequency {frequency:.3} over {} rounds; {envelope} of {checked} blinded plaintexts outside envelope; {reused} reused blinding values over {} runs",
            outcomes.len(),
            transcripts.len()
        ),
    }
}

fn privacy_analysis() -> Outcome {
    // x₁ ≤ 0.5 binds, x₂ ≤ 5 is slack
    let inst = QPInstance::new(
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![0.5, 5.0]),
        DVector::from_vec(vec![-1.0, -1.0]),
    )
    .unwrap();
    let sol = inst.active_set_oracle().unwrap();
    let verdict =
        privacy::retrievability_verdict(&CoalitionKnowledge::default(), &inst, &sol.x_star, Some(&sol.mu_star)).unwrap();
    let witness = privacy::construct_witness(&inst, &sol.x_star, &sol.mu_star, &CoalitionKnowledge::default(), None).unwrap();
    let original: Vec<f64> = inst.b().iter().chain(inst.c().iter()).chain(sol.mu_star.iter()).copied().collect();
    let alternative: Vec<f64> = witness.b.iter().chain(&witness.c).chain(&witness.mu).copied().collect();
    let recheck = inst
        .with_private_data(DVector::from_vec(witness.b.clone()), DVector::from_vec(witness.c.clone()))
        .unwrap()
        .kkt_residual(&sol.x_star, &DVector::from_vec(witness.mu.clone()))
        .unwrap();
    Outcome {
        pass: !verdict.b_retrievable
            && !verdict.c_retrievable
            && original != alternative
            && witness.kkt_residual <= WITNESS_TOL
            && recheck <= WITNESS_TOL,
        detail: format!(
            "b_retrievable {}, c_retrievable {}, t {:?}, witness b' {:?} with KKT residual {recheck:.1e}",
            verdict.b_retrievable, verdict.c_retrievable, verdict.t, witness.b
        ),
    }
}

#[test]
fn acceptance() {
    let base = config();
    let keys = Keys::generate(&base).unwrap();
    let mut results = Vec::new();
    let mut transcripts = Vec::new();

    report(&mut results, 1, "Paillier homomorphisms", paillier_correctness());
    report(&mut results, 2, "ciphertext width", ciphertext_size());
    report(&mut results, 3, "DGK zero test", dgk_zero_test());
    report(&mut results, 4, "comparison", comparison(&keys, &base));
    report(&mut results, 5, "encrypted equals mirror", bit_exactness(&keys, &base, &mut transcripts));
    let (outcome, runs) = oracle_equivalence(&keys, &base, &mut transcripts);
    report(&mut results, 6, "oracle equivalence", outcome);
    report(&mut results, 7, "main vs alternative", alternative_equivalence(&runs));
    report(&mut results, 8, "timing trends", timing_trends(&keys, &base));
    report(&mut results, 9, "transcript statistics", transcript_statistics(&transcripts));
    report(&mut results, 10, "privacy witness", privacy_analysis());

    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    let total = results.len();
    let passed = total - failed.len();
    writeln!(std::io::stderr(), "acceptance: {passed}/{total} criteria pass").unwrap();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
