//! The `moncat` command line.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
//! Subcommands that accept `--config FILE` read a JSON object whose keys
//! mirror the long flags with `_` for `-`; flags given on the command line
//! override the file.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use moncat_client::Client;
use moncat_core::cat::{Mode, SessionConfig};
use moncat_core::data::{from_json, read_dataset, read_grade_scale, read_model, write_dataset, write_model};
use moncat_core::evaluation::{
    generate_synthetic, run_experiment, simulate_cohort, timing_benchmark, ExperimentConfig, Metric, MetricCurves,
    DEFAULT_MAX_NAIVE,
};
use moncat_core::inference::JointModel;
use moncat_core::learning::{learn, LearnConfig, Method};
use moncat_core::model::StudentModel;
use moncat_core::networks::{exam_network, small_network};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "moncat",
    version,
    about = "Adaptive testing with monotone Bayesian-network student models"
)]
pub struct Cli {
    /// Worker threads for parallel work (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a monotone ground-truth model and a synthetic dataset.
    Gen(GenArgs),
    /// Learn model parameters from a dataset.
    Train(TrainArgs),
    /// Simulate test sessions and write metric curves.
    Simulate(SimulateArgs),
    /// Time score-distribution computation against naive enumeration.
    Bench(BenchArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Drive one scripted session through a running service.
    Session(SessionArgs),
}

/// Marks errors caused by invalid invocations (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {:#}", e);
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("building thread pool")?;
    pool.install(|| match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
        Command::Serve(a) => serve(a, cli.threads),
        Command::Session(a) => session(a),
    })
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            from_json(&text).with_context(|| format!("config {}", p.display()))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn load_model(path: &Path) -> Result<StudentModel> {
    read_model(path).with_context(|| format!("model {}", path.display()))
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON config with keys structure, network, skills, questions, students, seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file whose structure is used (parameters are ignored).
    #[arg(long)]
    pub structure: Option<PathBuf>,
    /// Built-in structure when --structure is absent.
    #[arg(long, value_parser = ["exam", "small"], conflicts_with = "structure")]
    pub network: Option<String>,
    /// Skills of the small network.
    #[arg(long)]
    pub skills: Option<usize>,
    /// Questions of the small network.
    #[arg(long)]
    pub questions: Option<usize>,
    /// Number of students to sample.
    #[arg(long)]
    pub students: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset (CSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Output ground-truth model (JSON).
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub structure: Option<PathBuf>,
    pub network: String,
    pub skills: usize,
    pub questions: usize,
    pub students: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            structure: None,
            network: "exam".into(),
            skills: 3,
            questions: 12,
            students: 1000,
            seed: 0,
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let mut c: GenConfig = load_config(a.config.as_deref())?;
    if a.structure.is_some() {
        c.structure = a.structure;
    }
    if let Some(v) = a.network {
        c.network = v;
        c.structure = None;
    }
    c.skills = a.skills.unwrap_or(c.skills);
    c.questions = a.questions.unwrap_or(c.questions);
    c.students = a.students.unwrap_or(c.students);
    c.seed = a.seed.unwrap_or(c.seed);

    let structure = match &c.structure {
        Some(p) => load_model(p)?,
        None => builtin_network(&c.network, c.skills, c.questions)?,
    };
    let (data, truth) = generate_synthetic(&structure, c.seed, c.students);
    write_dataset(&a.data, &data).with_context(|| format!("writing {}", a.data.display()))?;
    write_model(&a.model, &truth).with_context(|| format!("writing {}", a.model.display()))?;
    Ok(())
}

fn builtin_network(name: &str, skills: usize, questions: usize) -> Result<StudentModel> {
    match name {
        "exam" => Ok(exam_network()),
        "small" => {
            if skills == 0 || questions == 0 {
                return Err(usage("small network needs positive --skills and --questions"));
            }
            Ok(small_network(skills, questions))
        }
        other => Err(usage(format!("unknown network {:?} (expected exam or small)", other))),
    }
}

// ---------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON learning config (keys as the long flags below).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training dataset (CSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Model file providing the structure.
    #[arg(long)]
    pub structure: PathBuf,
    /// em, grad, irem, qirem or rgrad.
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Random starting points.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// EM pseudo-count.
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Comma-separated penalty weights for rgrad.
    #[arg(long, value_delimiter = ',')]
    pub penalty_schedule: Option<Vec<f64>>,
    #[arg(long)]
    pub penalty_iterations: Option<usize>,
    /// qirem projection period.
    #[arg(long)]
    pub projection_period: Option<usize>,
    /// Output model (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Output report (JSON); printed to standard output when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn train(a: TrainArgs) -> Result<()> {
    let mut c: LearnConfig = load_config(a.config.as_deref())?;
    c.method = a.method.unwrap_or(c.method);
    c.seed = a.seed.unwrap_or(c.seed);
    c.restarts = a.restarts.unwrap_or(c.restarts);
    c.max_iterations = a.max_iterations.unwrap_or(c.max_iterations);
    c.tolerance = a.tolerance.unwrap_or(c.tolerance);
    c.smoothing = a.smoothing.unwrap_or(c.smoothing);
    c.penalty_schedule = a.penalty_schedule.unwrap_or(c.penalty_schedule);
    c.penalty_iterations = a.penalty_iterations.unwrap_or(c.penalty_iterations);
    c.projection_period = a.projection_period.unwrap_or(c.projection_period);
    c.validate().map_err(|e| usage(e.to_string()))?;

    let structure = load_model(&a.structure)?;
    let data = read_dataset(&a.data, &structure).with_context(|| format!("dataset {}", a.data.display()))?;
    let result = learn(&data, &structure, &c)?;
    write_model(&a.out, &result.model).with_context(|| format!("writing {}", a.out.display()))?;
    let report = to_json(&result.report(&c));
    match &a.report {
        Some(p) => write_text(p, &report),
        None => {
            print!("{}", report);
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON experiment config (keys as the long flags, learning keys under "learn").
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset (CSV); test students and training draws come from it.
    #[arg(long)]
    pub data: PathBuf,
    /// Model file providing the structure for learning.
    #[arg(long, required_unless_present = "model")]
    pub structure: Option<PathBuf>,
    /// Simulate with this fixed model instead of learning.
    #[arg(long, conflicts_with = "structure")]
    pub model: Option<PathBuf>,
    /// Comma-separated training-set sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Test cohort size.
    #[arg(long)]
    pub cohort: Option<usize>,
    /// Comma-separated learning methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Comma-separated modes (fixed, adaptive).
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<Mode>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grade-error level for the crossing report.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Grade scale (JSON).
    #[arg(long)]
    pub grade_scale: Option<PathBuf>,
    /// Output directory for curve CSVs and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

/// Manifest of a simulation with a fixed model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSimulationReport {
    pub cohort: usize,
    pub threshold: f64,
    pub curves: Vec<ModeCurves>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeCurves {
    pub mode: Mode,
    pub curves: MetricCurves,
    pub crossing_a: Option<usize>,
    pub crossing_b: Option<usize>,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut c: ExperimentConfig = load_config(a.config.as_deref())?;
    c.sizes = a.sizes.unwrap_or(c.sizes);
    c.replications = a.replications.unwrap_or(c.replications);
    c.cohort = a.cohort.unwrap_or(c.cohort);
    c.methods = a.methods.unwrap_or(c.methods);
    c.modes = a.modes.unwrap_or(c.modes);
    c.seed = a.seed.unwrap_or(c.seed);
    c.threshold = a.threshold.unwrap_or(c.threshold);
    c.learn.restarts = a.restarts.unwrap_or(c.learn.restarts);
    c.learn.max_iterations = a.max_iterations.unwrap_or(c.learn.max_iterations);
    if let Some(p) = &a.grade_scale {
        c.grade_scale = Some(read_grade_scale(p).with_context(|| format!("grade scale {}", p.display()))?);
    }
    c.validate().map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    if let Some(path) = &a.model {
        return simulate_model(&load_model(path)?, &a.data, &c, &a.out);
    }
    let structure = load_model(a.structure.as_deref().expect("clap requires structure or model"))?;
    let data = read_dataset(&a.data, &structure).with_context(|| format!("dataset {}", a.data.display()))?;
    let report = run_experiment(&data, &structure, &c)?;
    for r in &report.curves {
        for metric in Metric::ALL {
            let name = format!("curve_{}_{}_n{}_{}.csv", metric.name(), r.method, r.size, r.mode);
            write_text(&a.out.join(name), &r.curves.get(metric).to_csv())?;
        }
        println!(
            "{} n={} {}: grade error below {} at {} (all) / {} (remaining)",
            r.method,
            r.size,
            r.mode,
            c.threshold,
            step_text(r.crossing_b),
            step_text(r.crossing_a)
        );
    }
    write_text(&a.out.join("manifest.json"), &to_json(&report))
}

fn step_text(step: Option<usize>) -> String {
    step.map_or_else(|| "never".to_string(), |s| format!("step {}", s))
}

fn simulate_model(model: &StudentModel, data_path: &Path, c: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = read_dataset(data_path, model).with_context(|| format!("dataset {}", data_path.display()))?;
    let cohort: Vec<Vec<usize>> = (0..data.len())
        .filter_map(|i| data.complete_row(i))
        .take(c.cohort)
        .collect();
    if cohort.is_empty() {
        bail!("dataset has no complete rows");
    }
    let jm = Arc::new(JointModel::new(model.clone())?);
    let mut report = ModelSimulationReport {
        cohort: cohort.len(),
        threshold: c.threshold,
        curves: Vec::new(),
    };
    for &mode in &c.modes {
        let mut config = SessionConfig::new(&jm, mode);
        if let Some(scale) = &c.grade_scale {
            config.grade_scale = scale.clone();
        }
        let sessions = simulate_cohort(&jm, &cohort, &config)?;
        let curves = MetricCurves::from_sessions(&sessions);
        for metric in Metric::ALL {
            let name = format!("curve_{}_model_{}.csv", metric.name(), mode);
            write_text(&out.join(name), &curves.get(metric).to_csv())?;
        }
        let crossing_a = curves.grade_error_a.first_below(c.threshold);
        let crossing_b = curves.grade_error_b.first_below(c.threshold);
        println!(
            "{}: grade error below {} at {} (all) / {} (remaining)",
            mode,
            c.threshold,
            step_text(crossing_b),
            step_text(crossing_a)
        );
        report.curves.push(ModeCurves {
            mode,
            curves,
            crossing_a,
            crossing_b,
        });
    }
    write_text(&out.join("manifest.json"), &to_json(&report))
}

// ---------------------------------------------------------------- bench

/// Default question counts of the timing benchmark.
pub const DEFAULT_COUNTS: [usize; 12] = [4, 6, 8, 10, 12, 14, 16, 18, 20, 25, 30, 37];

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON config with keys counts, max_naive, repeats, seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model to time; defaults to a synthetic model on the exam network.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated question counts (ascending).
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Largest count for which naive enumeration is run.
    #[arg(long)]
    pub max_naive: Option<usize>,
    /// Timed runs per point; the median is reported.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub counts: Vec<usize>,
    pub max_naive: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            counts: DEFAULT_COUNTS.to_vec(),
            max_naive: DEFAULT_MAX_NAIVE,
            repeats: 5,
            seed: 0,
        }
    }
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut c: BenchConfig = load_config(a.config.as_deref())?;
    c.counts = a.counts.unwrap_or(c.counts);
    c.max_naive = a.max_naive.unwrap_or(c.max_naive);
    c.repeats = a.repeats.unwrap_or(c.repeats);
    c.seed = a.seed.unwrap_or(c.seed);

    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => generate_synthetic(&exam_network(), c.seed, 1).1,
    };
    if a.model.is_none() {
        c.counts.retain(|&k| k <= model.num_questions());
    }
    let rows = timing_benchmark(&model, &c.counts, c.max_naive, c.repeats).map_err(|e| usage(e.to_string()))?;
    let mut csv = String::from("questions,divorcing_seconds,naive_seconds,max_abs_difference\n");
    for r in rows {
        let naive = r
            .naive_seconds
            .map_or_else(|| "infeasible".to_string(), |s| format!("{:e}", s));
        let diff = r
            .max_abs_difference
            .map_or_else(|| "infeasible".to_string(), |d| format!("{:e}", d));
        csv.push_str(&format!(
            "{},{:e},{},{}\n",
            r.questions, r.divorcing_seconds, naive, diff
        ));
    }
    match &a.out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{}", csv);
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- serve

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Model to serve as ID=PATH; repeatable. Defaults to a synthetic
    /// model on the exam network with id "exam".
    #[arg(long = "model", value_name = "ID=PATH")]
    pub models: Vec<String>,
    /// Directory for session logs; sessions found there are restored.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Allowed browser origin (default: any).
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Seed of the default model.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn serve(a: ServeArgs, threads: Option<usize>) -> Result<()> {
    let mut models = Vec::new();
    for spec in &a.models {
        let (id, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--model expects ID=PATH, got {:?}", spec)))?;
        models.push((id.to_string(), load_model(Path::new(path))?));
    }
    if models.is_empty() {
        models.push(("exam".to_string(), generate_synthetic(&exam_network(), a.seed, 1).1));
    }
    let origin = match &a.cors_origin {
        Some(o) => Some(o.parse().map_err(|_| usage(format!("invalid origin {:?}", o)))?),
        None => None,
    };
    let state = Arc::new(moncat_server::AppState::new(models, a.log_dir.clone())?);
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .try_init();

    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = threads {
        rt.worker_threads(n);
    }
    let rt = rt.enable_all().build().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{}", addr);
        let _ = std::io::stdout().flush();
        moncat_server::serve(listener, state, origin).await?;
        Ok(())
    })
}

// ---------------------------------------------------------------- session

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// Service base URL.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub server: String,
    /// Model id on the service.
    #[arg(long, default_value = "exam")]
    pub model: String,
    #[arg(long, default_value = "adaptive")]
    pub mode: Mode,
    /// Comma-separated answer state for every question, in id order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub answers: Vec<usize>,
    /// Output step log (JSON lines); printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn session(a: SessionArgs) -> Result<()> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    let log = rt.block_on(async {
        let client = Client::new(a.server.clone());
        let created = client.create_session(&a.model, a.mode.name()).await?;
        let id = created.session_id;
        let mut next = created.next_question.map(|q| q.id);
        while let Some(q) = next {
            let state = *a
                .answers
                .get(q)
                .ok_or_else(|| usage(format!("no answer given for question {}", q)))?;
            next = client.answer(&id, q, state).await?.next_question.map(|q| q.id);
        }
        client.session(&id).await.map_err(anyhow::Error::from)
    })?;
    let mut text = String::new();
    for step in &log.steps {
        text.push_str(&serde_json::to_string(step).map_err(|e| anyhow!(e))?);
        text.push('\n');
    }
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{}", text);
            Ok(())
        }
    }
}
