//! Command-line front end: `run`, `sweep`, `analyze`, `replay`.
//!
//! `run` and `sweep` accept `--config FILE`, a TOML file whose keys are the
//! long flag names with `-` replaced by `_` (`tail_fraction = 0.3`,
//! `scenario = ["a.toml"]`, `seed = [1, 2]`). Flags given on the command line
//! win over file values.
//!
//! Exit codes: 0 success, 1 runtime failure (an episode ended in `error`, a
//! replay diverged, a log could not be read), 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    consensus_histograms, entropy_binned_net_advantage, frontier, group_by_config,
    override_analysis, summary_report, uncertainty_profile, EntropyScale,
    DEFAULT_NET_ADVANTAGE_EDGES, DEFAULT_OVERRIDE_THRESHOLD,
};
use crate::cluster::DedupMode;
use crate::env::{digest, load_scenario_file, Outcome, ScenarioSpec};
use crate::llm::{Backend, HttpBackend, HttpConfig, LlmClient, ScriptedBackend};
use crate::orchestrator::{log_to_string, read_log_file, replay, Agent, AgentConfig, EpisodeRecord};
use crate::prompts::PromptSet;
use crate::select::{DeepConfConfig, DeepConfVariant, GateConfig, GateMode, Strategy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "catts", version, about = "Sample, vote, and gate arbitration for web-agent steps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes over scenarios and write one log per (scenario, seed).
    Run(RunOptions),
    /// Run a grid over tau and/or N and write a frontier table.
    Sweep(SweepOptions),
    /// Build reports from episode logs.
    Analyze(AnalyzeOptions),
    /// Re-execute a log's decisions against a scenario and compare.
    Replay(ReplayOptions),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Majority,
    Arbiter,
    #[value(name = "arbiter_scaling")]
    ArbiterScaling,
    Catts,
    Deepconf,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    /// TOML file with defaults for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Scenario file(s); the `.toml` extension may be omitted.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub scenario: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyKind>,
    /// Candidates sampled per step.
    #[arg(long)]
    pub n: Option<usize>,
    /// Arbiter calls per arbitrated step.
    #[arg(long)]
    pub k: Option<usize>,
    /// Gate for `catts`: entropy, margin, always, none.
    #[arg(long)]
    pub gate: Option<GateMode>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// average_trace, tail, bottom_percent.
    #[arg(long)]
    pub deepconf_variant: Option<DeepConfVariant>,
    #[arg(long)]
    pub tail_fraction: Option<f64>,
    #[arg(long)]
    pub bottom_fraction: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Confidence-weighted voting for deepconf.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub weighted: Option<bool>,
    /// One or more master seeds.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub seed: Vec<u64>,
    /// exact or llm.
    #[arg(long)]
    pub dedup: Option<DedupMode>,
    /// Chat-completions base URL; without it the scenario's script is used.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub developer_as_system: Option<bool>,
    /// Directory with prompt template overrides.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Episodes run concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepOptions {
    #[command(flatten)]
    pub run: RunOptions,
    /// Thresholds to sweep (catts only).
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Candidate counts to sweep.
    #[arg(long, value_delimiter = ',')]
    pub ns: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Summary,
    Profile,
    Override,
    #[value(name = "net_advantage")]
    NetAdvantage,
    Histogram,
    Frontier,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeOptions {
    /// Log files or glob patterns.
    #[arg(long, num_args = 1.., required = true)]
    pub logs: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "summary")]
    pub report: Vec<ReportKind>,
    /// Second strategy's logs for `net_advantage`.
    #[arg(long, num_args = 1..)]
    pub baseline: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_OVERRIDE_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_delimiter = ',')]
    pub edges: Option<Vec<f64>>,
    /// Bin net advantage on raw instead of normalized entropy.
    #[arg(long)]
    pub raw_entropy: bool,
    #[arg(long, default_value_t = 0.1)]
    pub width: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayOptions {
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

impl RunOptions {
    fn load_file(path: &Path) -> Result<RunOptions, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    /// Flags first, then the config file.
    fn merged(self) -> Result<RunOptions, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let f = Self::load_file(&path)?;
        Ok(RunOptions {
            config: self.config,
            scenario: if self.scenario.is_empty() { f.scenario } else { self.scenario },
            strategy: self.strategy.or(f.strategy),
            n: self.n.or(f.n),
            k: self.k.or(f.k),
            gate: self.gate.or(f.gate),
            tau: self.tau.or(f.tau),
            deepconf_variant: self.deepconf_variant.or(f.deepconf_variant),
            tail_fraction: self.tail_fraction.or(f.tail_fraction),
            bottom_fraction: self.bottom_fraction.or(f.bottom_fraction),
            window: self.window.or(f.window),
            eta: self.eta.or(f.eta),
            weighted: self.weighted.or(f.weighted),
            seed: if self.seed.is_empty() { f.seed } else { self.seed },
            dedup: self.dedup.or(f.dedup),
            endpoint: self.endpoint.or(f.endpoint),
            model: self.model.or(f.model),
            temperature: self.temperature.or(f.temperature),
            max_tokens: self.max_tokens.or(f.max_tokens),
            max_steps: self.max_steps.or(f.max_steps),
            developer_as_system: self.developer_as_system.or(f.developer_as_system),
            prompts: self.prompts.or(f.prompts),
            out: self.out.or(f.out),
            jobs: self.jobs.or(f.jobs),
        })
    }
}

/// Fully checked run settings.
struct Resolved {
    scenarios: Vec<ScenarioSpec>,
    config: AgentConfig,
    seeds: Vec<u64>,
    http: Option<HttpConfig>,
    prompts: PromptSet,
    out: PathBuf,
    jobs: usize,
}

/// `path`, or `path.toml` when `path` does not exist.
pub fn resolve_scenario_path(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let mut with_ext = path.as_os_str().to_owned();
    with_ext.push(".toml");
    let with_ext = PathBuf::from(with_ext);
    if with_ext.exists() {
        with_ext
    } else {
        path.to_path_buf()
    }
}

fn build_strategy(o: &RunOptions) -> Result<Strategy, CliError> {
    let kind = o.strategy.ok_or_else(|| usage("--strategy is required"))?;
    let strategy = match kind {
        StrategyKind::Majority => Strategy::Majority,
        StrategyKind::Arbiter => Strategy::Arbiter { k: o.k.unwrap_or(1) },
        StrategyKind::ArbiterScaling => Strategy::Arbiter {
            k: o.k.ok_or_else(|| usage("--k is required for arbiter_scaling"))?,
        },
        StrategyKind::Catts => {
            let mode = o.gate.unwrap_or(GateMode::Margin);
            let tau = match mode {
                GateMode::Entropy | GateMode::Margin => {
                    o.tau.ok_or_else(|| usage("--tau is required for catts"))?
                }
                GateMode::None | GateMode::Always => o.tau.unwrap_or(0.0),
            };
            Strategy::Catts { gate: GateConfig::new(mode, tau), k: o.k.unwrap_or(1) }
        }
        StrategyKind::Deepconf => {
            let d = DeepConfConfig::default();
            Strategy::DeepConf(DeepConfConfig {
                variant: o.deepconf_variant.unwrap_or(d.variant),
                tail_fraction: o.tail_fraction.unwrap_or(d.tail_fraction),
                bottom_fraction: o.bottom_fraction.unwrap_or(d.bottom_fraction),
                window: o.window.unwrap_or(d.window),
                eta: o.eta.unwrap_or(d.eta),
                weighted: o.weighted.unwrap_or(d.weighted),
            })
        }
    };
    if kind != StrategyKind::Catts && (o.gate.is_some() || o.tau.is_some()) {
        log::warn!("--gate/--tau only apply to the catts strategy; ignored");
    }
    strategy.validate().map_err(|e| usage(e.to_string()))?;
    Ok(strategy)
}

fn resolve(o: RunOptions) -> Result<Resolved, CliError> {
    let o = o.merged()?;
    if o.scenario.is_empty() {
        return Err(usage("--scenario is required"));
    }
    let mut scenarios = Vec::new();
    for p in &o.scenario {
        let path = resolve_scenario_path(p);
        let spec = load_scenario_file(&path).map_err(|e| usage(format!("scenario {}: {e}", path.display())))?;
        if o.endpoint.is_none() && spec.script.is_empty() {
            return Err(usage(format!(
                "scenario {} has no scripted responses; pass --endpoint to use a live model",
                path.display()
            )));
        }
        scenarios.push(spec);
    }
    let defaults = AgentConfig::default();
    let config = AgentConfig {
        n: o.n.unwrap_or(defaults.n),
        strategy: build_strategy(&o)?,
        dedup: o.dedup.unwrap_or(defaults.dedup),
        seed: 0,
        model: o.model.clone().unwrap_or(defaults.model),
        temperature: o.temperature.unwrap_or(defaults.temperature),
        max_tokens: o.max_tokens.unwrap_or(defaults.max_tokens),
        max_steps: o.max_steps,
        ..defaults
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let http = o.endpoint.as_ref().map(|url| {
        let mut h = HttpConfig::new(url.clone());
        h.developer_as_system = o.developer_as_system.unwrap_or(false);
        h
    });
    let prompts = match &o.prompts {
        Some(dir) => PromptSet::load_dir(dir).map_err(|e| usage(format!("prompts {}: {e}", dir.display())))?,
        None => PromptSet::default(),
    };
    Ok(Resolved {
        scenarios,
        config,
        seeds: if o.seed.is_empty() { vec![0] } else { o.seed },
        http,
        prompts,
        out: o.out.unwrap_or_else(|| PathBuf::from("out")),
        jobs: o.jobs.unwrap_or(1).max(1),
    })
}

struct Job {
    spec: ScenarioSpec,
    config: AgentConfig,
    log_path: PathBuf,
}

fn log_file_name(spec: &ScenarioSpec, seed: u64) -> String {
    let safe: String = spec
        .task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}-seed{seed}.jsonl")
}

/// Run jobs on `jobs` threads, writing each log as soon as it finishes.
fn execute(jobs: Vec<Job>, threads: usize, http: Option<&HttpConfig>, prompts: &PromptSet) -> Result<Vec<EpisodeRecord>, CliError> {
    let shared: Option<Arc<dyn Backend>> = match http {
        Some(h) => Some(Arc::new(HttpBackend::new(h.clone()).map_err(|e| usage(e.to_string()))?)),
        None => None,
    };
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<EpisodeRecord, CliError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.min(jobs.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let backend: Arc<dyn Backend> = match &shared {
                    Some(b) => b.clone(),
                    None => Arc::new(ScriptedBackend::new(job.spec.script.clone())),
                };
                let agent = Agent::new(job.config.clone(), LlmClient::new(backend, job.config.model.clone()), prompts.clone());
                let result = agent
                    .run_episode(&job.spec)
                    .map_err(|e| usage(e.to_string()))
                    .and_then(|rec| {
                        if let Some(dir) = job.log_path.parent() {
                            std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
                        }
                        std::fs::write(&job.log_path, log_to_string(&rec))
                            .map_err(|e| runtime(format!("{}: {e}", job.log_path.display())))?;
                        println!(
                            "{} seed={} outcome={} steps={} tokens={} log={}",
                            rec.task_id(),
                            rec.header.config.seed,
                            rec.outcome(),
                            rec.steps.len(),
                            rec.total_tokens(),
                            job.log_path.display()
                        );
                        Ok(rec)
                    });
                results.lock().expect("results lock")[i] = Some(result);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

fn jobs_for(r: &Resolved, config: &AgentConfig, dir: &Path) -> Vec<Job> {
    let mut jobs = Vec::new();
    for spec in &r.scenarios {
        for &seed in &r.seeds {
            jobs.push(Job {
                spec: spec.clone(),
                config: AgentConfig { seed, ..config.clone() },
                log_path: dir.join(log_file_name(spec, seed)),
            });
        }
    }
    jobs
}

fn count_errors(records: &[EpisodeRecord]) -> usize {
    records.iter().filter(|r| r.outcome() == Outcome::Error).count()
}

fn cmd_run(o: RunOptions) -> Result<(), CliError> {
    let r = resolve(o)?;
    let jobs = jobs_for(&r, &r.config, &r.out);
    let records = execute(jobs, r.jobs, r.http.as_ref(), &r.prompts)?;
    match count_errors(&records) {
        0 => Ok(()),
        n => Err(runtime(format!("{n} episode(s) ended in error"))),
    }
}

/// Stable directory name for a grid point.
pub fn point_dir_name(config: &AgentConfig) -> String {
    let key = serde_json::to_string(&AgentConfig { seed: 0, ..config.clone() }).expect("config serializes");
    format!("point-{}", &digest(&key)[..12])
}

fn cmd_sweep(o: SweepOptions) -> Result<(), CliError> {
    let taus = o.taus.clone();
    let ns = o.ns.clone();
    if taus.is_none() && ns.is_none() {
        return Err(usage("sweep needs --taus and/or --ns"));
    }
    if taus.as_ref().is_some_and(Vec::is_empty) || ns.as_ref().is_some_and(Vec::is_empty) {
        return Err(usage("sweep grid is empty"));
    }
    let mut run = o.run;
    if taus.is_some() && run.tau.is_none() {
        // any value satisfies validation; every point overrides it
        run.tau = Some(0.0);
    }
    let r = resolve(run)?;
    if taus.is_some() && !matches!(r.config.strategy, Strategy::Catts { .. }) {
        return Err(usage("--taus requires --strategy catts"));
    }
    let mut points = Vec::new();
    for &n in ns.as_deref().unwrap_or(&[r.config.n]) {
        let tau_list: Vec<Option<f64>> = match &taus {
            Some(t) => t.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        for tau in tau_list {
            let mut config = AgentConfig { n, ..r.config.clone() };
            if let (Some(t), Strategy::Catts { gate, .. }) = (tau, &mut config.strategy) {
                gate.tau = t;
            }
            config.validate().map_err(|e| usage(e.to_string()))?;
            points.push(config);
        }
    }
    let mut jobs = Vec::new();
    let mut dirs = Vec::new();
    for config in &points {
        let dir = r.out.join(point_dir_name(config));
        std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        std::fs::write(dir.join("point.json"), serde_json::to_string_pretty(config).expect("config serializes"))
            .map_err(|e| runtime(e.to_string()))?;
        jobs.extend(jobs_for(&r, config, &dir));
        dirs.push(dir);
    }
    let per_point = r.scenarios.len() * r.seeds.len();
    let records = execute(jobs, r.jobs, r.http.as_ref(), &r.prompts)?;
    let groups: Vec<(String, Vec<EpisodeRecord>)> = records
        .chunks(per_point)
        .zip(&points)
        .map(|(recs, config)| (format!("{} n={}", config.strategy.label(), config.n), recs.to_vec()))
        .collect();
    let table = frontier(&groups);
    let path = r.out.join("frontier.csv");
    std::fs::write(&path, table.to_csv()).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    println!("{} grid points, frontier written to {}", points.len(), path.display());
    match count_errors(&records) {
        0 => Ok(()),
        n => Err(runtime(format!("{n} episode(s) ended in error"))),
    }
}

fn expand_logs(patterns: &[String]) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for p in patterns {
        let matches = glob::glob(p).map_err(|e| usage(format!("bad pattern {p:?}: {e}")))?;
        let before = paths.len();
        for m in matches.flatten() {
            if m.is_file() {
                paths.push(m);
            }
        }
        if paths.len() == before && Path::new(p).is_file() {
            paths.push(PathBuf::from(p));
        }
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

fn load_logs(patterns: &[String]) -> Result<Vec<EpisodeRecord>, CliError> {
    let paths = expand_logs(patterns)?;
    if paths.is_empty() {
        return Err(usage(format!("no logs match {patterns:?}")));
    }
    paths
        .iter()
        .map(|p| read_log_file(p).map_err(|e| runtime(format!("{}: {e}", p.display()))))
        .collect()
}

fn write_report(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_analyze(o: AnalyzeOptions) -> Result<(), CliError> {
    let logs = load_logs(&o.logs)?;
    for kind in &o.report {
        match kind {
            ReportKind::Summary => {
                let text = summary_report(&logs);
                print!("{text}");
                write_report(&o.out, "summary.txt", &text)?;
            }
            ReportKind::Profile => {
                let p = uncertainty_profile(&logs).map_err(|e| runtime(e.to_string()))?;
                write_report(&o.out, "profile.csv", &p.to_csv())?;
            }
            ReportKind::Override => {
                write_report(&o.out, "override.csv", &override_analysis(&logs, o.threshold).to_csv())?;
            }
            ReportKind::NetAdvantage => {
                if o.baseline.is_empty() {
                    return Err(usage("--report net_advantage needs --baseline"));
                }
                let b = load_logs(&o.baseline)?;
                let edges = o.edges.clone().unwrap_or(DEFAULT_NET_ADVANTAGE_EDGES.to_vec());
                let scale = if o.raw_entropy { EntropyScale::Raw } else { EntropyScale::Normalized };
                let report = entropy_binned_net_advantage(&logs, &b, &edges, scale).map_err(|e| usage(e.to_string()))?;
                write_report(&o.out, "net_advantage.csv", &report.to_csv())?;
            }
            ReportKind::Histogram => {
                let h = consensus_histograms(&logs, o.width).map_err(|e| usage(e.to_string()))?;
                write_report(&o.out, "histogram.csv", &h.to_csv())?;
            }
            ReportKind::Frontier => {
                let table = frontier(&group_by_config(logs.clone()));
                write_report(&o.out, "frontier.csv", &table.to_csv())?;
            }
        }
    }
    Ok(())
}

fn cmd_replay(o: ReplayOptions) -> Result<(), CliError> {
    let record = read_log_file(&o.log).map_err(|e| runtime(format!("{}: {e}", o.log.display())))?;
    let path = resolve_scenario_path(&o.scenario);
    let spec = load_scenario_file(&path).map_err(|e| usage(format!("scenario {}: {e}", path.display())))?;
    match replay(&record, &spec) {
        Ok(()) => {
            println!("ok: {} steps, outcome {}", record.steps.len(), record.outcome());
            Ok(())
        }
        Err(d) => Err(runtime(d.to_string())),
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Run(o) => cmd_run(o),
        Command::Sweep(o) => cmd_sweep(o),
        Command::Analyze(o) => cmd_analyze(o),
        Command::Replay(o) => cmd_replay(o),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Runtime(m) => eprintln!("failed: {m}"),
            }
            e.code()
        }
    }
}
