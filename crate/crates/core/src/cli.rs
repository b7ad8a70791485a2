//! Command-line front end: certificate synthesis and verification, training,
//! paired evaluation and trajectory export.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid input, 3 synthesis
//! failure, 4 invalid certificate, 5 training aborted.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ddpg::{
    evaluate, evaluation_episode, initial_state_sampler, paired_difference, train, Agent, EvalOptions, InitialStates,
    PairedDifference, PolicyCheckpoint, PolicyKind, TrainConfig, TrainingSummary,
};
use crate::error::{Error, Result};
use crate::invariance::{
    candidate_gains, gain_search, verify_certificate, CertificateFile, CertificateMeta, RciCertificate, RpiOptions,
    SafetySystem, SystemFile, VerificationReport,
};
use crate::plant::{max_angle, rollout_with_disturbances, CaseFile, Environment, GridCase};
use crate::policy::{Controller, LinearPolicy};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_INVALID_INPUT: u8 = 2;
pub const EXIT_SYNTHESIS: u8 = 3;
pub const EXIT_INVALID_CERTIFICATE: u8 = 4;
pub const EXIT_TRAINING_ABORTED: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "safegauge", version, about = "Safe reinforcement learning for frequency regulation with gauge-map safety filters")]
pub struct Cli {
    /// Grid case JSON, or a raw system JSON (`A`, `B`, `E`, `U`, `D`, `X`) for synth/verify.
    #[arg(long, global = true)]
    pub case: Option<PathBuf>,
    /// Certificate JSON.
    #[arg(long, global = true)]
    pub cert: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Run configuration JSON with optional `synth`, `train` and `eval` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search candidate gains for a verified invariant-set certificate.
    Synth(SynthArgs),
    /// Check a certificate against the case and print worst-case slacks.
    Verify,
    /// Train a safe or soft-penalty policy.
    Train(TrainArgs),
    /// Evaluate policies on shared initial states and disturbance streams.
    Eval(EvalArgs),
    /// Simulate one episode and export the trajectory.
    Rollout(RolloutArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub max_pairs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainedKind {
    Safe,
    Penalty,
}

impl From<TrainedKind> for PolicyKind {
    fn from(k: TrainedKind) -> Self {
        match k {
            TrainedKind::Safe => PolicyKind::Safe,
            TrainedKind::Penalty => PolicyKind::Penalty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnyKind {
    Linear,
    Safe,
    Penalty,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value = "safe")]
    pub policy: TrainedKind,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Record elapsed seconds per episode (metric files are then not reproducible).
    #[arg(long)]
    pub wallclock: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Compare linear, safe and (with `--penalty-actor`) penalty policies.
    #[arg(long)]
    pub paired: bool,
    /// Policy to evaluate without `--paired`.
    #[arg(long, value_enum, default_value = "linear")]
    pub policy: AnyKind,
    /// Safe-policy checkpoint; a freshly initialized actor is used if absent.
    #[arg(long)]
    pub actor: Option<PathBuf>,
    /// Penalty-policy checkpoint.
    #[arg(long)]
    pub penalty_actor: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long, value_enum, default_value = "linear")]
    pub policy: AnyKind,
    #[arg(long)]
    pub actor: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Initial state as comma-separated values; defaults to the first evaluation episode's.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Evaluation episode whose initial state and disturbances are replayed.
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    /// Multipliers of the normalized state weight `diag(1/x̄²)`.
    pub state_weights: Vec<f64>,
    /// Multipliers of the normalized input weight `diag(1/ū²)`.
    pub input_weights: Vec<f64>,
    pub discount: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub max_pairs: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        let rpi = RpiOptions::default();
        Self {
            state_weights: vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0],
            input_weights: vec![1.0],
            discount: 1.0,
            max_iter: rpi.max_iter,
            tol: rpi.tol,
            max_pairs: rpi.max_pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub steps: usize,
    /// Initial states uniform over `init_fraction · S` ...
    pub init_fraction: f64,
    /// ... unless a fixed initial state is given.
    pub initial_state: Option<Vec<f64>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 100, steps: 100, init_fraction: 0.5, initial_state: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthOptions,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))
            }
        }
    }
}

/// A parsed `--case` file.
#[derive(Debug, Clone)]
pub enum LoadedCase {
    Grid(Box<GridCase>),
    System(Box<SafetySystem>),
}

impl LoadedCase {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// A JSON object with an `A` key is a raw system, anything else a grid case.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        if value.get("A").is_some() {
            let file: SystemFile = serde_json::from_value(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
            Ok(Self::System(Box::new(file.into_system()?)))
        } else {
            Ok(Self::Grid(Box::new(CaseFile::from_json(text)?.to_case()?)))
        }
    }

    pub fn system(&self) -> Result<SafetySystem> {
        match self {
            Self::Grid(c) => c.safety_system(),
            Self::System(s) => Ok((**s).clone()),
        }
    }

    pub fn environment(&self, seed: u64) -> Result<Environment> {
        match self {
            Self::Grid(c) => Environment::from_case(c, seed),
            Self::System(_) => Err(Error::InvalidInput("simulation needs a grid case file".into())),
        }
    }
}

/// Map an error to the process exit code.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NoValidGain | Error::SetTooComplex(_) | Error::NotConverged(_) | Error::EmptyInterior => EXIT_SYNTHESIS,
        Error::CertificateInvalid(_) => EXIT_INVALID_CERTIFICATE,
        Error::TrainingAborted(_) => EXIT_TRAINING_ABORTED,
        Error::DimensionMismatch(_)
        | Error::NonFinite(_)
        | Error::InvalidInput(_)
        | Error::DisconnectedNetwork
        | Error::SingularInertia(_)
        | Error::NonBoxInputSet
        | Error::NotACSet
        | Error::Unstable(_) => EXIT_INVALID_INPUT,
        Error::PolicyStep { source, .. } => exit_code(source),
        _ => EXIT_OTHER,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: Option<&Path>) -> Result<Option<String>> {
    path.map(|p| fs::read(p).map(|b| sha256_hex(&b)).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display()))))
        .transpose()
}

/// Hash of everything that determines a command's output.
#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    command: &'a str,
    case: Option<String>,
    cert: Option<String>,
    options: &'a T,
}

fn config_hash<T: Serialize>(cli: &Cli, command: &str, options: &T, extra: &[Option<&Path>]) -> Result<String> {
    let mut p = serde_json::to_value(Provenance {
        command,
        case: file_digest(cli.case.as_deref())?,
        cert: file_digest(cli.cert.as_deref())?,
        options,
    })
    .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let extras = extra.iter().map(|e| file_digest(*e)).collect::<Result<Vec<_>>>()?;
    p["inputs"] = serde_json::to_value(extras).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(sha256_hex(p.to_string().as_bytes()))
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::InvalidInput(format!("missing --{flag}")))
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out).map_err(|e| Error::InvalidInput(format!("{}: {e}", cli.out.display())))?;
    Ok(&cli.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn load_certificate(path: &Path, sys: &SafetySystem) -> Result<RciCertificate> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let file: CertificateFile = serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    file.into_certificate(sys)
}

fn load_verified(path: &Path, sys: &SafetySystem) -> Result<RciCertificate> {
    let cert = load_certificate(path, sys)?;
    let report = verify_certificate(&cert, sys)?;
    if !report.check_valid() {
        return Err(Error::CertificateInvalid(format!("worst slack {:e}", report.worst())));
    }
    Ok(cert)
}

fn load_checkpoint(path: &Path) -> Result<PolicyCheckpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct CandidateRecord {
    index: usize,
    score: Option<f64>,
    rows: usize,
    error: Option<String>,
}

#[derive(Serialize)]
struct SynthReport {
    config_hash: String,
    options: SynthOptions,
    best_index: usize,
    rows: usize,
    candidates: Vec<CandidateRecord>,
    verification: VerificationReport,
}

pub fn cmd_synth(cli: &Cli, args: &SynthArgs, config: &RunConfig) -> Result<()> {
    let case = LoadedCase::load(require(&cli.case, "case")?)?;
    let sys = case.system()?;
    let mut opts = config.synth.clone();
    if let Some(p) = args.max_pairs {
        opts.max_pairs = p;
    }
    let hash = config_hash(cli, "synth", &opts, &[])?;
    let candidates = candidate_gains(&sys, &opts.state_weights, &opts.input_weights, opts.discount)?;
    let rpi = RpiOptions { max_iter: opts.max_iter, tol: opts.tol, max_pairs: opts.max_pairs };
    let result = gain_search(&sys, &candidates, &rpi)?;
    let mut cert = result.certificate;
    cert.meta = CertificateMeta { source: format!("synth candidate {} config_hash={hash}", result.best_index), ..cert.meta };
    let out = out_dir(cli)?;
    write_json(&out.join("certificate.json"), &CertificateFile::from_certificate(&cert))?;
    let report = SynthReport {
        config_hash: hash,
        options: opts,
        best_index: result.best_index,
        rows: cert.num_rows(),
        candidates: result
            .outcomes
            .iter()
            .map(|o| CandidateRecord { index: o.index, score: o.score, rows: o.rows, error: o.error.clone() })
            .collect(),
        verification: result.report,
    };
    write_json(&out.join("synth_report.json"), &report)?;
    println!(
        "certificate: candidate {} of {}, {} rows, worst slack {:e}",
        report.best_index,
        candidates.len(),
        report.rows,
        report.verification.worst()
    );
    Ok(())
}

fn worst(rows: &[crate::invariance::RowSlack]) -> f64 {
    rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min)
}

pub fn cmd_verify(cli: &Cli) -> Result<()> {
    let case = LoadedCase::load(require(&cli.case, "case")?)?;
    let sys = case.system()?;
    let cert = load_certificate(require(&cli.cert, "cert")?, &sys)?;
    let report = verify_certificate(&cert, &sys)?;
    println!("invariance worst slack {:e} ({} rows)", worst(&report.invariance), report.invariance.len());
    println!("safety     worst slack {:e} ({} rows)", worst(&report.safety), report.safety.len());
    println!("control    worst slack {:e} ({} rows)", worst(&report.control), report.control.len());
    if report.check_valid() {
        println!("certificate valid (threshold {:e})", report.threshold);
        return Ok(());
    }
    for (check, row) in report.violated() {
        println!("violated {check} row {} slack {:e}", row.row, row.slack);
    }
    Err(Error::CertificateInvalid(format!("worst slack {:e}", report.worst())))
}

pub fn cmd_train(cli: &Cli, args: &TrainArgs, config: &RunConfig) -> Result<()> {
    let case = LoadedCase::load(require(&cli.case, "case")?)?;
    let mut cfg = config.train.clone();
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    if let Some(s) = args.steps {
        cfg.steps_per_episode = s;
    }
    cfg.record_wallclock |= args.wallclock;
    cfg.validate()?;
    let kind = PolicyKind::from(args.policy);
    let env = case.environment(cfg.seed)?;
    let cert = load_verified(require(&cli.cert, "cert")?, &env.system)?;
    let hash = config_hash(cli, &format!("train {}", kind.as_str()), &cfg, &[])?;
    let report = train(&env, &cert, kind, &cfg)?;
    let out = out_dir(cli)?;
    let header = format!("config_hash={hash}");
    report.write_metrics_csv(create(&out.join("metrics.csv"))?, Some(&header))?;
    {
        use std::io::Write;
        let mut w = create(&out.join("max_angle.csv"))?;
        writeln!(w, "# {header}")?;
        writeln!(w, "episode,max_angle_dev,violations")?;
        for e in &report.episodes {
            writeln!(w, "{},{:e},{}", e.episode, e.max_angle_dev, e.violations)?;
        }
    }
    // Optimizer state only matches the final actor.
    let opt = (report.selected_episode == cfg.episodes).then_some(&report.agent.actor_opt);
    let mut ckpt = PolicyCheckpoint::new(kind, &report.selected, opt, Some(cfg.seed));
    ckpt.certificate_sha256 = file_digest(cli.cert.as_deref())?;
    ckpt.config_hash = Some(hash.clone());
    write_json(&out.join("actor.json"), &ckpt)?;
    #[derive(Serialize)]
    struct Summary {
        config_hash: String,
        #[serde(flatten)]
        summary: TrainingSummary,
    }
    let summary = Summary { config_hash: hash, summary: TrainingSummary::from_report(&report) };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "trained {} policy: {} episodes, {} updates, violations {}, last episode cost {:.6}",
        kind.as_str(),
        report.episodes.len(),
        report.updates,
        summary.summary.total_violations,
        summary.summary.last_cost
    );
    Ok(())
}

/// Policies for evaluation and rollout, built from the shared context.
struct PolicySet {
    policies: Vec<Box<dyn Controller>>,
}

fn build_policy(
    kind: AnyKind,
    actor: Option<&Path>,
    env: &Environment,
    cert: &RciCertificate,
    cert_digest: Option<&str>,
    seed: u64,
) -> Result<Box<dyn Controller>> {
    match kind {
        AnyKind::Linear => Ok(Box::new(LinearPolicy::new(cert.k.clone()))),
        AnyKind::Safe | AnyKind::Penalty => {
            let want = if kind == AnyKind::Safe { PolicyKind::Safe } else { PolicyKind::Penalty };
            let policy = match actor {
                Some(p) => {
                    let ckpt = load_checkpoint(p)?;
                    if ckpt.kind != want {
                        return Err(Error::InvalidInput(format!(
                            "{} holds a {} policy, expected {}",
                            p.display(),
                            ckpt.kind.as_str(),
                            want.as_str()
                        )));
                    }
                    if let (Some(want), Some(have)) = (ckpt.certificate_sha256.as_deref(), cert_digest) {
                        if want != have && ckpt.kind == PolicyKind::Safe {
                            return Err(Error::InvalidInput(format!(
                                "{} was trained against a different certificate",
                                p.display()
                            )));
                        }
                    }
                    ckpt.into_policy(&env.system, Some(cert))?
                }
                None => {
                    let cfg = TrainConfig { seed, ..TrainConfig::default() };
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    Agent::new(env, cert, want, &cfg, &mut rng)?.policy
                }
            };
            Ok(Box::new(policy))
        }
    }
}

impl PolicySet {
    fn refs(&self) -> Vec<&dyn Controller> {
        self.policies.iter().map(|p| p.as_ref()).collect()
    }
}

fn initial_states(cfg: &EvalConfig, cert: &RciCertificate, n: usize) -> Result<InitialStates> {
    match &cfg.initial_state {
        Some(x) if x.len() != n => Err(Error::DimensionMismatch(format!("initial_state has {} entries, expected {n}", x.len()))),
        Some(x) => Ok(InitialStates::Fixed(DVector::from_vec(x.clone()))),
        None => Ok(InitialStates::Uniform(initial_state_sampler(cert, cfg.init_fraction)?)),
    }
}

#[derive(Serialize)]
struct PolicyRecord {
    name: String,
    mean_cost: f64,
    total_violations: usize,
    total_action_violations: usize,
    episodes_with_violations: usize,
    max_angle_dev: f64,
    total_fallbacks: usize,
    /// `this − linear`, paired by episode.
    versus_linear: Option<PairedDifference>,
}

#[derive(Serialize)]
struct EvalSummary {
    config_hash: String,
    seed: u64,
    eval: EvalConfig,
    policies: Vec<PolicyRecord>,
}

pub fn cmd_eval(cli: &Cli, args: &EvalArgs, config: &RunConfig) -> Result<()> {
    let case = LoadedCase::load(require(&cli.case, "case")?)?;
    let seed = cli.seed.unwrap_or(config.train.seed);
    let mut ecfg = config.eval.clone();
    if let Some(e) = args.episodes {
        ecfg.episodes = e;
    }
    if let Some(s) = args.steps {
        ecfg.steps = s;
    }
    let env = case.environment(seed)?;
    let cert = load_verified(require(&cli.cert, "cert")?, &env.system)?;
    let digest = file_digest(cli.cert.as_deref())?;
    let mut policies = Vec::new();
    if args.paired {
        policies.push(build_policy(AnyKind::Linear, None, &env, &cert, digest.as_deref(), seed)?);
        policies.push(build_policy(AnyKind::Safe, args.actor.as_deref(), &env, &cert, digest.as_deref(), seed)?);
        if let Some(p) = &args.penalty_actor {
            policies.push(build_policy(AnyKind::Penalty, Some(p), &env, &cert, digest.as_deref(), seed)?);
        }
    } else {
        let actor = match args.policy {
            AnyKind::Penalty => args.penalty_actor.as_deref().or(args.actor.as_deref()),
            _ => args.actor.as_deref(),
        };
        policies.push(build_policy(args.policy, actor, &env, &cert, digest.as_deref(), seed)?);
    }
    let set = PolicySet { policies };
    #[derive(Serialize)]
    struct EvalKey<'a> {
        seed: u64,
        paired: bool,
        policy: String,
        eval: &'a EvalConfig,
    }
    let key = EvalKey { seed, paired: args.paired, policy: format!("{:?}", args.policy), eval: &ecfg };
    let hash = config_hash(cli, "eval", &key, &[args.actor.as_deref(), args.penalty_actor.as_deref()])?;
    let init = initial_states(&ecfg, &cert, env.system.state_dim())?;
    let opts = EvalOptions { episodes: ecfg.episodes, steps: ecfg.steps, seed };
    let report = evaluate(&set.refs(), &env, &init, &opts)?;
    let out = out_dir(cli)?;
    let header = format!("config_hash={hash}");
    report.write_csv(create(&out.join("eval.csv"))?, Some(&header))?;
    {
        use std::io::Write;
        let mut w = create(&out.join("paired_costs.csv"))?;
        writeln!(w, "# {header}")?;
        let names: Vec<String> = report.policies.iter().map(|p| p.name.clone()).collect();
        writeln!(w, "episode,{}", names.join(","))?;
        for e in 0..opts.episodes {
            let costs: Vec<String> = report.policies.iter().map(|p| format!("{:e}", p.costs[e])).collect();
            writeln!(w, "{},{}", e + 1, costs.join(","))?;
        }
    }
    if args.paired {
        // Per-step max angle on the first shared episode.
        use std::io::Write;
        let (x0, ds) = evaluation_episode(&env, &init, &opts, 0);
        let generators = env.num_generators();
        let trajs = set
            .refs()
            .iter()
            .map(|p| rollout_with_disturbances(*p, &env, &x0, &ds))
            .collect::<Result<Vec<_>>>()?;
        let mut w = create(&out.join("angle_trajectories.csv"))?;
        writeln!(w, "# {header}")?;
        let names: Vec<String> = set.policies.iter().map(|p| p.name().to_string()).collect();
        writeln!(w, "t,{}", names.join(","))?;
        for t in 0..=opts.steps {
            let vals: Vec<String> = trajs.iter().map(|tr| format!("{:e}", max_angle(&tr.states[t], generators))).collect();
            writeln!(w, "{t},{}", vals.join(","))?;
        }
    }
    let linear = report.policies.iter().find(|p| p.name == "linear");
    let records = report
        .policies
        .iter()
        .map(|p| {
            Ok(PolicyRecord {
                name: p.name.clone(),
                mean_cost: p.mean_cost(),
                total_violations: p.total_violations(),
                total_action_violations: p.total_action_violations(),
                episodes_with_violations: p.violations.iter().filter(|v| **v > 0).count(),
                max_angle_dev: p.max_angle_dev.iter().copied().fold(0.0, f64::max),
                total_fallbacks: p.fallbacks.iter().sum(),
                versus_linear: match linear {
                    Some(l) if p.name != "linear" => Some(paired_difference(&p.costs, &l.costs)?),
                    _ => None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for r in &records {
        let diff = r
            .versus_linear
            .map(|d| format!(", vs linear {:+.6} ± {:.6}", d.mean, d.std_err))
            .unwrap_or_default();
        println!(
            "{:<8} mean cost {:.6}, violations {}, action violations {}, max angle {:.6}{diff}",
            r.name, r.mean_cost, r.total_violations, r.total_action_violations, r.max_angle_dev
        );
    }
    write_json(&out.join("eval_summary.json"), &EvalSummary { config_hash: hash, seed, eval: ecfg, policies: records })?;
    Ok(())
}

pub fn cmd_rollout(cli: &Cli, args: &RolloutArgs, config: &RunConfig) -> Result<()> {
    let case = LoadedCase::load(require(&cli.case, "case")?)?;
    let seed = cli.seed.unwrap_or(config.train.seed);
    let env = case.environment(seed)?;
    let cert = load_verified(require(&cli.cert, "cert")?, &env.system)?;
    let digest = file_digest(cli.cert.as_deref())?;
    let policy = build_policy(args.policy, args.actor.as_deref(), &env, &cert, digest.as_deref(), seed)?;
    let ecfg = EvalConfig { steps: args.steps, ..config.eval.clone() };
    let init = initial_states(&ecfg, &cert, env.system.state_dim())?;
    let opts = EvalOptions { episodes: args.episode + 1, steps: args.steps, seed };
    if args.steps == 0 {
        return Err(Error::InvalidInput("rollout needs at least one step".into()));
    }
    let (mut x0, ds) = evaluation_episode(&env, &init, &opts, args.episode);
    if let Some(x) = &args.x0 {
        if x.len() != env.system.state_dim() {
            return Err(Error::DimensionMismatch(format!("--x0 has {} entries, expected {}", x.len(), env.system.state_dim())));
        }
        x0 = DVector::from_vec(x.clone());
    }
    #[derive(Serialize)]
    struct RolloutKey<'a> {
        seed: u64,
        policy: String,
        steps: usize,
        episode: usize,
        x0: &'a [f64],
        eval: &'a EvalConfig,
    }
    let key = RolloutKey {
        seed,
        policy: format!("{:?}", args.policy),
        steps: args.steps,
        episode: args.episode,
        x0: x0.as_slice(),
        eval: &ecfg,
    };
    let hash = config_hash(cli, "rollout", &key, &[args.actor.as_deref()])?;
    let traj = rollout_with_disturbances(policy.as_ref(), &env, &x0, &ds)?;
    let out = out_dir(cli)?;
    let name = format!("trajectory_{}.csv", policy.name());
    traj.write_csv(create(&out.join(&name))?, Some(&format!("config_hash={hash}")))?;
    println!(
        "{}: cost {:.6}, violations {}, max angle {:.6}, fallbacks {} -> {}",
        policy.name(),
        traj.accumulated_cost(),
        traj.violation_count(),
        traj.max_angle_deviation(env.num_generators()),
        traj.fallback_count(),
        out.join(name).display()
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a, &config),
        Command::Verify => cmd_verify(cli),
        Command::Train(a) => cmd_train(cli, a, &config),
        Command::Eval(a) => cmd_eval(cli, a, &config),
        Command::Rollout(a) => cmd_rollout(cli, a, &config),
    }
}

/// Parse arguments, run, and report errors on stderr. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID_INPUT } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
