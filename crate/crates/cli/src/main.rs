use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use czk_core::concentration::{check_tape_concentration, parse_rho};
use czk_core::fixtures::{pin_fixtures, verify_fixtures};
use czk_core::harness::{
    blowup_bench, compare_experiments, direction_check, mc_estimate, params_report, parse_cap, run_lemma_suite,
    success_fail_ratio, write_report, AttemptEvent, ConcentrationParams, ExperimentConfig, DEFAULT_CONCENTRATION,
};
use czk_core::seeds::{derive_u64, rng_for};
use czk_core::simulators::SimulatorKind;
use czk_core::tree::BadRule;
use czk_core::splice::{decide, run_ps, serve, Decision, FramedChannel, HonestChannel, LocalVerifier};
use serde::Serialize;
use serde_json::{json, Value};

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "czk", version, about = "Concurrent zero-knowledge splicing experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed.
    #[arg(long, global = true, env = "CZK_SEED")]
    seed: Option<u64>,
    /// Sessions per schedule.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Parallel copies per session.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    graph_size: Option<usize>,
    /// Whether the generated instance is an isomorphic pair.
    #[arg(long, global = true, action = ArgAction::Set)]
    iso: Option<bool>,
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// `rewinding` or `witness`.
    #[arg(long, global = true)]
    simulator: Option<String>,
    /// Step cap: `measured`, `measured:MULT` or a number. For `params`, the
    /// address range N.
    #[arg(long, global = true)]
    cap: Option<String>,
    #[arg(long, global = true)]
    max_attempts: Option<u64>,
    /// Bad-vertex rule for the tree checkers: `literal` or `activated`.
    #[arg(long, global = true)]
    bad_rule: Option<String>,
    /// Let sessions run past N queries.
    #[arg(long, global = true)]
    uncapped: bool,
    /// Use m = k³ (slow).
    #[arg(long, global = true)]
    full_scale: bool,
    /// `key = value` file applied before the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report path (stdout if absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Jsonl)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the splicing prover against an honest verifier and report its
    /// verdicts.
    Attack {
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        /// Talk to a verifier served on this Unix socket instead of a local one.
        #[arg(long)]
        connect: Option<PathBuf>,
    },
    /// Serve honest verifier sessions on a Unix socket.
    Serve {
        #[arg(long)]
        listen: PathBuf,
        #[arg(long, default_value_t = 1)]
        sessions: u64,
    },
    /// Estimate the probability of one attempt outcome.
    Estimate {
        /// succeed, fail, abort, good or bad.
        #[arg(long, default_value = "succeed")]
        event: String,
    },
    /// Run every pointwise tree checker, the negative controls, the F bound
    /// and the tape concentration computation.
    Lemmas {
        #[arg(long, default_value = "0.1")]
        rho: String,
        #[arg(long, default_value_t = DEFAULT_CONCENTRATION.m)]
        conc_m: u64,
        #[arg(long, default_value_t = DEFAULT_CONCENTRATION.k)]
        conc_k: u64,
        #[arg(long, default_value_t = DEFAULT_CONCENTRATION.threshold)]
        threshold: f64,
    },
    /// Compare the tree distributions of the two experiments.
    Experiment {
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Operational success and failure rates against the expected weights.
    Direction {
        #[arg(long, default_value_t = 4.0)]
        sigmas: f64,
    },
    /// Success/fail ratio of single attempts.
    Ratio,
    /// Query counts of the simulator for k = 1..=k-max.
    Blowup {
        #[arg(long, default_value_t = 5)]
        k_max: usize,
    },
    /// Print the exact weight parameters for --k and --cap (N).
    Params,
    /// Exact tape concentration tail.
    Concentration {
        #[arg(long, default_value = "0.1")]
        rho: String,
        #[arg(long, default_value_t = DEFAULT_CONCENTRATION.threshold)]
        threshold: f64,
    },
    /// Pinned report corpus.
    Fixtures {
        #[command(subcommand)]
        action: FixtureAction,
    },
}

#[derive(Subcommand)]
enum FixtureAction {
    Verify {
        #[arg(long, default_value = "fixtures")]
        dir: PathBuf,
    },
    /// Regenerate every report and rewrite the digests.
    Pin {
        #[arg(long, default_value = "fixtures")]
        dir: PathBuf,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<czk_core::Error>() {
            Some(czk_core::Error::Config(_)) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure { code, error }
    }
}

impl From<czk_core::Error> for Failure {
    fn from(e: czk_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: anyhow::anyhow!(msg.into()),
    }
}

impl Global {
    fn config(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::from_env()?;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(|e| Failure { code: EXIT_USAGE, error: e })?;
            cfg.apply_kv(&text)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(v) = self.graph_size {
            cfg.v = v;
        }
        if let Some(iso) = self.iso {
            cfg.iso = iso;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = &self.simulator {
            cfg.simulator = SimulatorKind::parse(s)?;
        }
        if let Some(c) = &self.cap {
            cfg.cap = parse_cap(c)?;
        }
        if let Some(a) = self.max_attempts {
            cfg.max_attempts = a;
        }
        cfg.full_scale |= self.full_scale;
        cfg.uncapped |= self.uncapped;
        if let Some(r) = &self.bad_rule {
            cfg.bad_rule = BadRule::parse(r)?;
        }
        let cfg = cfg.effective();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// One CSV row per record; nested values are written as JSON.
fn csv_rows(records: &[Value]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = match records.first() {
        Some(Value::Object(map)) => map.keys().cloned().collect(),
        Some(_) => vec!["value".into()],
        None => return Ok(String::new()),
    };
    w.write_record(&header)?;
    for r in records {
        let row: Vec<String> = match r {
            Value::Object(map) => header.iter().map(|h| map.get(h).map(scalar).unwrap_or_default()).collect(),
            other => vec![scalar(other)],
        };
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

struct Report {
    records: Vec<Value>,
}

impl Report {
    fn new() -> Self {
        Report { records: Vec::new() }
    }

    fn push<T: Serialize>(&mut self, r: &T) -> anyhow::Result<()> {
        self.records.push(serde_json::to_value(r)?);
        Ok(())
    }

    fn render(&self, format: Format) -> anyhow::Result<String> {
        match format {
            Format::Jsonl => {
                let mut out = String::new();
                for r in &self.records {
                    out.push_str(&serde_json::to_string(r)?);
                    out.push('\n');
                }
                Ok(out)
            }
            Format::Csv => csv_rows(&self.records),
        }
    }
}

fn emit(g: &Global, report: &Report) -> Result<(), Failure> {
    let body = report.render(g.format)?;
    match &g.out {
        Some(path) => write_report(path, &body)?,
        None => print!("{body}"),
    }
    Ok(())
}

fn attack(g: &Global, repeats: u64, connect: Option<&Path>) -> Result<(), Failure> {
    let cfg = g.config()?;
    let setup = cfg.setup()?;
    let mut report = Report::new();
    let mut in_l = 0;
    for i in 0..repeats {
        let seed = derive_u64(cfg.seed, "attack", i);
        let (decision, ps) = match connect {
            Some(path) => {
                let stream = UnixStream::connect(path).with_context(|| format!("connecting to {}", path.display()))?;
                let mut channel = FramedChannel::open(stream)?;
                let ps = run_ps(&setup, &mut channel, cfg.max_attempts, seed)?;
                let d = if channel.verdict() == Some(true) { Decision::InL } else { Decision::NotInL };
                (d, ps)
            }
            None => decide(&setup, cfg.max_attempts, seed)?,
        };
        in_l += u64::from(decision == Decision::InL);
        report.push(&json!({
            "repeat": i,
            "seed": seed,
            "decision": decision,
            "verdict": ps.verdict,
            "attempts": ps.attempts,
        }))?;
    }
    report.push(&json!({
        "summary": true,
        "iso": cfg.iso,
        "n": setup.wp.n,
        "repeats": repeats,
        "in_l": in_l,
        "not_in_l": repeats - in_l,
    }))?;
    emit(g, &report)
}

fn serve_sessions(g: &Global, listen: &Path, sessions: u64) -> Result<(), Failure> {
    let cfg = g.config()?;
    let (pair, _) = cfg.instance()?;
    let x = pair.to_instance();
    let listener = UnixListener::bind(listen).with_context(|| format!("binding {}", listen.display()))?;
    let mut report = Report::new();
    for i in 0..sessions {
        let (stream, _) = listener.accept().context("accepting a session")?;
        let mut verifier = LocalVerifier::random(x.clone(), &mut rng_for(cfg.seed, "serve", i))?;
        let verdict = serve(stream, &mut verifier)?;
        report.push(&json!({ "session": i, "verdict": verdict }))?;
    }
    drop(listener);
    let _ = std::fs::remove_file(listen);
    emit(g, &report)
}

fn lemmas(g: &Global, conc: ConcentrationParams) -> Result<bool, Failure> {
    let cfg = g.config()?;
    let mut suite = run_lemma_suite(&cfg, conc)?;
    let trees = std::mem::take(&mut suite.trees);
    let ok = suite.ok() && suite.concentration.holds;
    for c in suite.controls.iter().filter(|c| !c.ok) {
        eprintln!("negative control `{}` not flagged: {}", c.name, c.detail);
    }
    if let Some((h, beta)) = suite.f_bound_counterexample {
        eprintln!("F bound fails at h = {h}, beta = {beta}");
    }
    if !suite.concentration.holds {
        eprintln!(
            "tape concentration: violation probability {:.5} is not below {}",
            suite.concentration.violation, conc.threshold
        );
    }
    let mut report = Report::new();
    report.push(&suite)?;
    for t in &trees {
        report.push(t)?;
    }
    emit(g, &report)?;
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Attack { repeats, connect } => attack(g, *repeats, connect.as_deref())?,
        Command::Serve { listen, sessions } => serve_sessions(g, listen, *sessions)?,
        Command::Estimate { event } => {
            let cfg = g.config()?;
            let event = AttemptEvent::parse(event)?;
            let mut r = Report::new();
            r.push(&mc_estimate(event, &cfg)?)?;
            emit(g, &r)?;
        }
        Command::Lemmas {
            rho,
            conc_m,
            conc_k,
            threshold,
        } => {
            let conc = ConcentrationParams {
                m: *conc_m,
                k: *conc_k,
                rho: parse_rho(rho)?,
                threshold: *threshold,
            };
            return lemmas(g, conc);
        }
        Command::Experiment { alpha } => {
            let cfg = g.config()?;
            let c = compare_experiments(&cfg, *alpha)?;
            let mut r = Report::new();
            r.push(&c)?;
            emit(g, &r)?;
        }
        Command::Direction { sigmas } => {
            let cfg = g.config()?;
            let d = direction_check(&cfg, *sigmas)?;
            let mut r = Report::new();
            r.push(&d)?;
            emit(g, &r)?;
        }
        Command::Ratio => {
            let cfg = g.config()?;
            let mut r = Report::new();
            r.push(&success_fail_ratio(&cfg)?)?;
            emit(g, &r)?;
        }
        Command::Blowup { k_max } => {
            let cfg = g.config()?;
            if *k_max == 0 {
                return Err(usage("--k-max must be positive"));
            }
            let rows = blowup_bench(1..=*k_max, cfg.m, &cfg.simulator, cfg.v, cfg.trials, cfg.seed)?;
            let mut r = Report::new();
            for row in &rows {
                r.push(row)?;
            }
            emit(g, &r)?;
        }
        Command::Params => {
            let k = g.config()?.k;
            let n: u64 = match &g.cap {
                Some(c) => c.parse().map_err(|_| usage(format!("--cap must be a positive integer N, got `{c}`")))?,
                None => return Err(usage("params needs --cap N")),
            };
            let mut r = Report::new();
            r.push(&params_report(k, n)?)?;
            emit(g, &r)?;
        }
        Command::Concentration { rho, threshold } => {
            let cfg = g.config()?;
            let s = check_tape_concentration(cfg.m as u64, parse_rho(rho)?, cfg.k as u64)?.summary(*threshold);
            let holds = s.holds;
            let mut r = Report::new();
            r.push(&s)?;
            emit(g, &r)?;
            return Ok(holds);
        }
        Command::Fixtures { action } => match action {
            FixtureAction::Verify { dir } => {
                let results = verify_fixtures(dir)?;
                let ok = results.iter().all(|r| r.pass);
                for r in results.iter().filter(|r| !r.pass) {
                    eprintln!("fixture `{}` failed: {}", r.name, r.reason.as_deref().unwrap_or(""));
                }
                let mut rep = Report::new();
                for r in &results {
                    rep.push(r)?;
                }
                emit(g, &rep)?;
                return Ok(ok);
            }
            FixtureAction::Pin { dir } => {
                let records = pin_fixtures(dir)?;
                let mut rep = Report::new();
                for r in &records {
                    rep.push(r)?;
                }
                emit(g, &rep)?;
            }
        },
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VIOLATION),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
