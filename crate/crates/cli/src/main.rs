use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use encqp::dgk::{DgkKeyFile, DgkPrivateKey};
use encqp::fixed_point::FixedPointParams;
use encqp::harness::{self, BenchSpec, HarnessError, SimulatedNetwork};
use encqp::math::{self, RandomSource};
use encqp::paillier::{PaillierKeyFile, PaillierPrivateKey};
use encqp::privacy::{self, CoalitionKnowledge, PrivacyError};
use encqp::protocols::{DgkParams, Keys, Mode, ProtocolConfig, ProtocolError};
use encqp::qp::{self, QPInstance, QpError};

const PAILLIER_FILE: &str = "paillier.json";
const DGK_FILE: &str = "dgk.json";

#[derive(Parser)]
#[command(name = "encqp", version, about = "Quadratic programs solved over Paillier-encrypted data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate Paillier and DGK private keys into a directory.
    Keygen(KeygenArgs),
    /// Write a random feasible instance as JSON.
    GenInstance(GenInstanceArgs),
    /// Solve an instance in plaintext or over encrypted data.
    Solve(SolveArgs),
    /// Time the encrypted solver over a grid of sizes and latencies; CSV on stdout.
    Bench(BenchArgs),
    /// Decide whether a coalition can recover b and c.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Clone)]
struct CodecArgs {
    #[arg(long, default_value_t = 16)]
    l_i: u32,
    #[arg(long, default_value_t = 16)]
    l_f: u32,
    #[arg(long, default_value_t = 100)]
    lambda: u32,
    #[arg(long, default_value_t = 40)]
    gamma: u32,
    /// Defaults to 2·(l_i + l_f) + gamma.
    #[arg(long)]
    l_f_prime: Option<u32>,
}

impl CodecArgs {
    fn params(&self) -> FixedPointParams {
        FixedPointParams {
            l_i: self.l_i,
            l_f: self.l_f,
            lambda: self.lambda,
            gamma: self.gamma,
            l_f_prime: self.l_f_prime.unwrap_or(2 * (self.l_i + self.l_f) + self.gamma),
        }
    }
}

#[derive(Args, Clone)]
struct KeyArgs {
    #[arg(long, default_value_t = 256)]
    sigma: u64,
    #[arg(long, default_value_t = DgkParams::default().n_bits)]
    dgk_bits: u64,
    #[arg(long, default_value_t = DgkParams::default().t_bits)]
    dgk_t_bits: u64,
}

#[derive(Args)]
struct KeygenArgs {
    #[command(flatten)]
    keys: KeyArgs,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing key files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GenInstanceArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rejects instances whose dual Hessian is worse conditioned (requires m <= n).
    #[arg(long)]
    max_condition: Option<f64>,
    /// Written to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolveMode {
    Plain,
    Encrypted,
    Alternative,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value_t = SolveMode::Encrypted)]
    mode: SolveMode,
    /// Key directory from `keygen`; keys are derived from --seed when absent.
    #[arg(long)]
    keys: Option<PathBuf>,
    #[arg(short = 'k', long = "iterations", default_value_t = 30)]
    iterations: usize,
    #[command(flatten)]
    key_args: KeyArgs,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Sizes as `NxM`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2x2,2x5,2x10")]
    sizes: Vec<String>,
    /// One-way delays in milliseconds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    latency: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "main")]
    modes: Vec<Mode>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(short = 'k', long = "iterations", default_value_t = 30)]
    iterations: usize,
    #[command(flatten)]
    key_args: KeyArgs,
    #[command(flatten)]
    codec: CodecArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit with status 1 when mean time fails to increase with m.
    #[arg(long)]
    monotone_check: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Coalition knowledge as JSON; the target alone when absent.
    #[arg(long)]
    knowledge: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Check(String),
    Input(String),
    Config(String),
    Protocol(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::Protocol(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Check(s) | CliError::Input(s) | CliError::Config(s) | CliError::Protocol(s) => s,
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Config(_) | ProtocolError::Parameter(_) => CliError::Config(e.to_string()),
            ProtocolError::Qp(_) | ProtocolError::Domain(_) => CliError::Input(e.to_string()),
            _ => CliError::Protocol(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Protocol(p) => p.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<QpError> for CliError {
    fn from(e: QpError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PrivacyError> for CliError {
    fn from(e: PrivacyError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn pretty<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))
}

fn emit(value: &serde_json::Value) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Input(e.to_string()))?;
    writeln!(out).map_err(|e| CliError::Input(e.to_string()))
}

fn config(key_args: &KeyArgs, codec: &CodecArgs, k: usize, seed: u64) -> ProtocolConfig {
    ProtocolConfig {
        params: codec.params(),
        k,
        sigma_bits: key_args.sigma,
        dgk: DgkParams { n_bits: key_args.dgk_bits, t_bits: key_args.dgk_t_bits },
        seed,
    }
}

fn load_keys(dir: &Path) -> Result<Keys, CliError> {
    let paillier_file: PaillierKeyFile = read_json(&dir.join(PAILLIER_FILE))?;
    let dgk_file: DgkKeyFile = read_json(&dir.join(DGK_FILE))?;
    let paillier = PaillierPrivateKey::from_key_file(&paillier_file)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.join(PAILLIER_FILE).display())))?;
    let dgk = DgkPrivateKey::from_key_file(&dgk_file)
        .map_err(|e| CliError::Input(format!("{}: {e}", dir.join(DGK_FILE).display())))?;
    Ok(Keys { paillier, dgk })
}

fn keygen(args: KeygenArgs) -> Result<(), CliError> {
    let cfg = config(&args.keys, &args.codec, 1, args.seed);
    cfg.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if args.keys.sigma % 2 != 0 {
        return Err(CliError::Config(format!("--sigma must be even, got {}", args.keys.sigma)));
    }
    let paths = [args.out.join(PAILLIER_FILE), args.out.join(DGK_FILE)];
    if !args.force {
        if let Some(existing) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Input(format!("{} exists; pass --force to overwrite", existing.display())));
        }
    }
    eprintln!("generating {}-bit Paillier and {}-bit DGK keys", args.keys.sigma, args.keys.dgk_bits);
    let keys = Keys::generate(&cfg).map_err(|e| CliError::Config(e.to_string()))?;

    let mut rng = RandomSource::derive(args.seed, "keygen-check");
    let pk = keys.paillier.public_key();
    let probe = math::sample_below(pk.modulus(), &mut rng).map_err(|e| CliError::Protocol(e.to_string()))?;
    let roundtrip = keys
        .paillier
        .decrypt(&pk.encrypt(&probe, &mut rng).map_err(|e| CliError::Protocol(e.to_string()))?)
        .map_err(|e| CliError::Protocol(e.to_string()))?
        == probe;

    fs::create_dir_all(&args.out).map_err(|e| CliError::Input(format!("{}: {e}", args.out.display())))?;
    write_file(&paths[0], &pretty(&keys.paillier.to_key_file())?)?;
    write_file(&paths[1], &pretty(&keys.dgk.to_key_file())?)?;
    emit(&json!({
        "paillier": paths[0],
        "dgk": paths[1],
        "sigma_bits": pk.sigma_bits(),
        "key_id": format!("{:016x}", pk.key_id()),
        "dgk_plaintext_modulus": keys.dgk.public_key().plaintext_modulus(),
        "roundtrip": roundtrip,
    }))
}

fn gen_instance(args: GenInstanceArgs) -> Result<(), CliError> {
    let inst = match args.max_condition {
        Some(cond) => qp::random_well_conditioned(args.n, args.m, args.seed, cond)?,
        None => qp::random_instance(args.n, args.m, args.seed)?,
    };
    let text = pretty(&inst)?;
    match args.out {
        Some(path) => {
            write_file(&path, &text)?;
            emit(&json!({ "instance": path, "n": inst.n(), "m": inst.m() }))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn solve(args: SolveArgs) -> Result<(), CliError> {
    let inst: QPInstance = read_json(&args.instance)?;
    let cfg = config(&args.key_args, &args.codec, args.iterations, args.seed);
    let mode = match args.mode {
        SolveMode::Plain => {
            cfg.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if cfg.k == 0 {
                return Err(CliError::Config("iteration count must be at least 1".into()));
            }
            let sol = inst.solve_dual_ascent(cfg.k, cfg.seed, cfg.params.l_f)?;
            return emit(&json!({
                "x_star": sol.x_star.as_slice(),
                "kkt_residual": sol.kkt_residual,
                "report": { "mode": "plain", "n": inst.n(), "m": inst.m(), "k": cfg.k, "mu_star": sol.mu_star.as_slice() },
            }));
        }
        SolveMode::Encrypted => Mode::Main,
        SolveMode::Alternative => Mode::Alternative,
    };
    cfg.validate(mode)?;
    let keys = match &args.keys {
        Some(dir) => load_keys(dir)?,
        None => {
            eprintln!("deriving keys from seed {}", cfg.seed);
            Keys::generate(&cfg)?
        }
    };
    eprintln!("solving n = {}, m = {} for K = {} in {mode} mode", inst.n(), inst.m(), cfg.k);
    let (report, _) = harness::run_simulation(&inst, &cfg, &keys, mode, SimulatedNetwork { latency_ms: args.latency_ms })?;
    emit(&json!({ "x_star": report.x_star, "kkt_residual": report.kkt_residual, "report": report }))
}

fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Input(format!("size `{s}` is not of the form NxM"));
    let (n, m) = s.split_once('x').ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
}

fn bench(args: BenchArgs) -> Result<(), CliError> {
    let cfg = config(&args.key_args, &args.codec, args.iterations, args.seed);
    for &mode in &args.modes {
        cfg.validate(mode)?;
    }
    let spec = BenchSpec {
        sizes: args.sizes.iter().map(|s| parse_size(s)).collect::<Result<_, _>>()?,
        latencies_ms: args.latency.clone(),
        modes: args.modes.clone(),
        repeats: args.repeats,
        config: cfg,
    };
    let keys = Keys::generate(&cfg)?;
    eprintln!("running {} cells", spec.sizes.len() * spec.modes.len() * spec.latencies_ms.len());
    let rows = harness::bench_sweep(&spec, &keys)?;
    harness::write_csv(&rows, io::stdout().lock())?;
    if args.monotone_check {
        let violations = harness::monotone_in_m_violations(&rows);
        if !violations.is_empty() {
            return Err(CliError::Check(format!("time not increasing in m: {}", violations.join("; "))));
        }
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let inst: QPInstance = read_json(&args.instance)?;
    let knowledge: CoalitionKnowledge = match &args.knowledge {
        Some(path) => read_json(path)?,
        None => CoalitionKnowledge::default(),
    };
    let sol = if inst.m() <= 12 {
        inst.active_set_oracle()?
    } else {
        eprintln!("m = {} exceeds the exact solver; using 10000 dual ascent steps", inst.m());
        inst.solve_dual_ascent(10_000, 0, 16)?
    };
    let verdict = privacy::retrievability_verdict(&knowledge, &inst, &sol.x_star, Some(&sol.mu_star))?;
    emit(&serde_json::to_value(&verdict).map_err(|e| CliError::Input(e.to_string()))?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Keygen(a) => keygen(a),
        Command::GenInstance(a) => gen_instance(a),
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
