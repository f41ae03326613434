//! The `bnopt` command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid config or request,
//! 3 numerical failure, 4 ask-tell protocol misuse.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::acquisition::Source;
use crate::bench::{run_benchmark, ReportSummary, TRACE_HEADER};
use crate::config::{ConfigError, RunConfig, SensitivitySpec};
use crate::rng;
use crate::sensitivity::{self, EffectCurve};
use crate::space::{Configuration, SearchSpace};
use crate::study::{Study, StudyError, TellStatus};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PROTOCOL: i32 = 4;

/// How long suggest / tell wait for another process to release a study.
const LOCK_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Parser)]
#[command(
    name = "bnopt",
    version,
    about = "Bayesian optimization over branching and nested hyperparameter spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a study on a builtin objective, or create the study file for an
    /// external one.
    Optimize {
        config: PathBuf,
        /// Output directory (overrides `run.output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check the config and exit.
        #[arg(long)]
        validate_only: bool,
        /// Replace an existing external study file.
        #[arg(long)]
        force: bool,
    },
    /// Print the open configurations of a study as JSON lines.
    Suggest { study: PathBuf },
    /// Report the result for one token. `nan` marks a failed evaluation.
    Tell {
        study: PathBuf,
        token: String,
        #[arg(allow_hyphen_values = true)]
        y: String,
    },
    /// Replicated benchmark of one or more methods on a builtin objective.
    Benchmark {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        validate_only: bool,
    },
    /// Main effects and interactions of a study's fitted surface.
    Sensitivity {
        study: PathBuf,
        spec: PathBuf,
        /// Output directory (default: the study's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        validate_only: bool,
    },
    /// Check a run config without running anything.
    Validate { config: PathBuf },
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        let code = match e {
            StudyError::Options(_) => EXIT_CONFIG,
            StudyError::FitFailure { .. } => EXIT_NUMERIC,
            StudyError::UnknownToken(_)
            | StudyError::AlreadyTold(_)
            | StudyError::Schema(_)
            | StudyError::NoObservations => EXIT_PROTOCOL,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

type CliResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Optimize {
            config,
            out: dir,
            validate_only,
            force,
        } => cmd_optimize(&config, dir, validate_only, force, out),
        Command::Suggest { study } => cmd_suggest(&study, out, err),
        Command::Tell { study, token, y } => cmd_tell(&study, &token, &y, out, err),
        Command::Benchmark {
            config,
            out: dir,
            validate_only,
        } => cmd_benchmark(&config, dir, validate_only, out),
        Command::Sensitivity {
            study,
            spec,
            out: dir,
            validate_only,
        } => cmd_sensitivity(&study, &spec, dir, validate_only, out),
        Command::Validate { config } => {
            RunConfig::load(&config)?;
            writeln!(out, "{}: ok", config.display()).map_err(|e| io_failure(&config, e))
        }
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::other("path has no file name"))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    write_atomic(path, bytes).map_err(|e| io_failure(path, e))
}

/// Advisory lock held while a process reads, modifies and writes a study.
pub struct StudyLock {
    path: PathBuf,
}

impl StudyLock {
    pub fn lock_path(study: &Path) -> PathBuf {
        let mut p = study.as_os_str().to_owned();
        p.push(".lock");
        PathBuf::from(p)
    }

    pub fn acquire(study: &Path, timeout: Duration) -> Result<Self, Failure> {
        let path = Self::lock_path(study);
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(Self { path }),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if start.elapsed() >= timeout {
                        return Err(Failure::new(
                            EXIT_PROTOCOL,
                            format!(
                                "{} is locked by another process (remove {} if none is running)",
                                study.display(),
                                path.display()
                            ),
                        ));
                    }
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(io_failure(&path, e)),
            }
        }
    }
}

impl Drop for StudyLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn load_study(path: &Path) -> Result<Study, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PROTOCOL, format!("{}: {e}", path.display())))?;
    let study = Study::from_json(&text)
        .map_err(|e| Failure::new(EXIT_PROTOCOL, format!("{}: not a study file: {e}", path.display())))?;
    study.check_schema()?;
    Ok(study)
}

fn save_study(path: &Path, study: &Study) -> CliResult {
    write_file(path, study.to_json().as_bytes())
}

pub fn source_label(s: Source) -> String {
    match s {
        Source::InitialDesign => "initial_design".into(),
        Source::Ei => "ei".into(),
        Source::EpsilonRandom => "epsilon_random".into(),
        Source::FantasyStep(k) => format!("fantasy_step_{k}"),
        Source::RandomFallback => "random_fallback".into(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per observation: bookkeeping columns, then every variable of the
/// space (empty when inactive).
pub fn trace_csv(study: &Study) -> csv::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let vars = variable_names(&study.space);
    let mut header: Vec<String> = ["eval_index", "generation", "token", "source", "y", "best_so_far"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(vars.iter().cloned());
    w.write_record(&header)?;
    for (i, (o, best)) in study.observations.iter().zip(&study.best_so_far).enumerate() {
        let mut row = vec![
            i.to_string(),
            o.generation.to_string(),
            o.token.clone(),
            source_label(o.source),
            fmt_opt(o.y),
            fmt_opt(*best),
        ];
        row.extend(
            vars.iter()
                .map(|v| o.config.get(v).map(|x| x.to_string()).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

fn variable_names(space: &SearchSpace) -> Vec<String> {
    space
        .quant()
        .iter()
        .map(|q| q.name.clone())
        .chain(space.branch().iter().map(|b| b.name.clone()))
        .chain(space.nested().iter().map(|n| n.name.clone()))
        .collect()
}

#[derive(Debug, Serialize)]
struct Recommendation<'a> {
    config: &'a Configuration,
    observed: f64,
    eval_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_value: Option<f64>,
}

fn cmd_optimize(
    config: &Path,
    dir: Option<PathBuf>,
    validate_only: bool,
    force: bool,
    out: &mut dyn Write,
) -> CliResult {
    let resolved = RunConfig::load(config)?;
    if validate_only {
        return writeln!(out, "{}: ok", config.display()).map_err(|e| io_failure(config, e));
    }
    let dir = dir.unwrap_or_else(|| resolved.config.run.output_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let study_path = dir.join("study.json");
    let mut study = Study::new(
        resolved.space.clone(),
        resolved.options.clone(),
        resolved.config.run.seed,
    )?;

    let Some(mut objective) = resolved.objective else {
        if study_path.exists() && !force {
            return Err(Failure::new(
                EXIT_PROTOCOL,
                format!("{} already exists; pass --force to replace it", study_path.display()),
            ));
        }
        let _lock = StudyLock::acquire(&study_path, LOCK_TIMEOUT)?;
        save_study(&study_path, &study)?;
        return writeln!(
            out,
            "created {}; drive it with `bnopt suggest` and `bnopt tell`",
            study_path.display()
        )
        .map_err(|e| io_failure(&study_path, e));
    };

    study.run(&mut objective)?;
    save_study(&study_path, &study)?;
    let trace = trace_csv(&study).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    write_file(&dir.join("trace.csv"), &trace)?;
    if let Some((cfg, y)) = study.recommend() {
        let eval_index = study
            .observations
            .iter()
            .position(|o| std::ptr::eq(&o.config, cfg))
            .expect("recommendation comes from the history");
        let rec = Recommendation {
            config: cfg,
            observed: y,
            eval_index,
            true_value: objective.true_value(cfg).ok(),
        };
        let mut text = serde_json::to_string_pretty(&rec).expect("serializable");
        text.push('\n');
        write_file(&dir.join("recommendation.json"), text.as_bytes())?;
        writeln!(out, "best observed {y} at evaluation {eval_index}").map_err(|e| io_failure(&dir, e))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SuggestLine<'a> {
    token: &'a str,
    config: &'a Configuration,
    source: String,
}

fn cmd_suggest(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let _lock = StudyLock::acquire(path, LOCK_TIMEOUT)?;
    let mut study = load_study(path)?;
    let before = study.clone();
    let open = study.suggest()?;
    if study != before {
        save_study(path, &study)?;
    }
    if open.is_empty() {
        let _ = writeln!(err, "study is complete ({} evaluations)", study.observations.len());
    }
    for p in &open {
        let line = SuggestLine {
            token: &p.token,
            config: &p.config,
            source: source_label(p.source),
        };
        match writeln!(out, "{}", serde_json::to_string(&line).expect("serializable")) {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => break,
            r => r.map_err(|e| io_failure(path, e))?,
        }
    }
    Ok(())
}

fn cmd_tell(path: &Path, token: &str, y: &str, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let value: f64 = y.trim().parse().map_err(|_| {
        Failure::new(
            EXIT_CONFIG,
            format!("y: '{y}' is not a number (use nan for a failed evaluation)"),
        )
    })?;
    let _lock = StudyLock::acquire(path, LOCK_TIMEOUT)?;
    let mut study = load_study(path)?;
    let status = study.tell(token, value)?;
    save_study(path, &study)?;
    if !value.is_finite() {
        let _ = writeln!(
            err,
            "warning: non-finite result for token {token} recorded as a failed evaluation"
        );
    }
    let msg = match status {
        TellStatus::Recorded => "recorded",
        TellStatus::GenerationComplete if study.is_complete() => "recorded; study complete",
        TellStatus::GenerationComplete => "recorded; generation complete",
    };
    writeln!(out, "{msg}").map_err(|e| io_failure(path, e))
}

#[derive(Debug, Serialize)]
struct BenchmarkSummary {
    objective: String,
    noise_sd: f64,
    n_init: usize,
    n_adaptive: usize,
    replicates: usize,
    seed: u64,
    methods: Vec<ReportSummary>,
}

fn cmd_benchmark(config: &Path, dir: Option<PathBuf>, validate_only: bool, out: &mut dyn Write) -> CliResult {
    let resolved = RunConfig::load(config)?;
    let Some(objective) = resolved.objective.as_ref() else {
        return Err(Failure::new(
            EXIT_CONFIG,
            format!(
                "{}: objective.kind: benchmarks need a builtin objective",
                config.display()
            ),
        ));
    };
    if validate_only {
        return writeln!(out, "{}: ok", config.display()).map_err(|e| io_failure(config, e));
    }
    let run = &resolved.config.run;
    let dir = dir.unwrap_or_else(|| run.output_dir.clone());
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let mut csv_out = csv::Writer::from_writer(Vec::new());
    let to_io = |e: csv::Error| Failure::new(EXIT_IO, e.to_string());
    csv_out.write_record(TRACE_HEADER).map_err(to_io)?;
    let mut summaries = Vec::new();
    for &method in &resolved.methods {
        let report = run_benchmark(
            method,
            objective,
            run.n_init,
            run.n_adaptive,
            resolved.config.benchmark.replicates,
            run.seed,
            &resolved.options,
        )
        .map_err(|e| match e {
            crate::bench::BenchError::Study(s) => Failure::from(s),
            other => Failure::new(EXIT_NUMERIC, other.to_string()),
        })?;
        report.write_csv(&mut csv_out).map_err(to_io)?;
        let s = report.summary(objective);
        writeln!(
            out,
            "{}: mean final best {:.4}, median true at recommendation {:.4}",
            s.method, s.mean_final_best, s.final_true_at_recommendation.median
        )
        .map_err(|e| io_failure(&dir, e))?;
        summaries.push(s);
    }
    csv_out.flush().map_err(|e| io_failure(&dir, e))?;
    let bytes = csv_out.into_inner().map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    write_file(&dir.join("benchmark_trace.csv"), &bytes)?;
    let summary = BenchmarkSummary {
        objective: objective.name.clone(),
        noise_sd: objective.noise_sd,
        n_init: run.n_init,
        n_adaptive: run.n_adaptive,
        replicates: resolved.config.benchmark.replicates,
        seed: run.seed,
        methods: summaries,
    };
    let mut text = serde_json::to_string_pretty(&summary).expect("serializable");
    text.push('\n');
    write_file(&dir.join("summary.json"), text.as_bytes())
}

fn sensitivity_failure(e: sensitivity::SensitivityError) -> Failure {
    Failure::new(EXIT_CONFIG, e.to_string())
}

fn cmd_sensitivity(
    path: &Path,
    spec_path: &Path,
    dir: Option<PathBuf>,
    validate_only: bool,
    out: &mut dyn Write,
) -> CliResult {
    let spec = SensitivitySpec::load(spec_path)?;
    let study = load_study(path)?;
    let space = &study.space;
    for name in spec
        .main
        .iter()
        .map(|m| &m.variable)
        .chain(spec.interaction.iter().flat_map(|i| [&i.variable, &i.by]))
    {
        if space.quant_index(name).is_none() && space.branch_index(name).is_none() && space.nested_index(name).is_none()
        {
            return Err(sensitivity_failure(sensitivity::SensitivityError::UnknownVariable(
                name.clone(),
            )));
        }
    }
    if validate_only {
        return writeln!(out, "{}: ok", spec_path.display()).map_err(|e| io_failure(spec_path, e));
    }
    let (model, _) = study.fit_model(rng::derive(spec.seed, 0x5E45))?;
    let gp = sensitivity::PosteriorMean { gp: &model, space };
    let mut curves: Vec<EffectCurve> = Vec::new();
    for m in &spec.main {
        let grid = match &m.grid {
            Some(g) => g.clone(),
            None => sensitivity::default_grid(space, &m.variable, spec.grid_points).map_err(sensitivity_failure)?,
        };
        curves.push(
            sensitivity::main_effect(&gp, space, &m.variable, &grid, spec.n_mc, spec.seed)
                .map_err(sensitivity_failure)?,
        );
    }
    for i in &spec.interaction {
        let grid = match &i.grid {
            Some(g) => g.clone(),
            None => sensitivity::default_grid(space, &i.variable, spec.grid_points).map_err(sensitivity_failure)?,
        };
        let levels = match &i.levels {
            Some(l) => l.clone(),
            None => sensitivity::default_levels(space, &i.by, spec.levels).map_err(sensitivity_failure)?,
        };
        curves.extend(
            sensitivity::interaction_effect(&gp, space, &i.variable, &i.by, &grid, &levels, spec.n_mc, spec.seed)
                .map_err(sensitivity_failure)?,
        );
    }
    let dir = dir.unwrap_or_else(|| {
        path.parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf()
    });
    fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    sensitivity::write_csv(&curves, &mut w).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let target = dir.join("effects.csv");
    write_file(&target, &bytes)?;
    writeln!(out, "wrote {} curves to {}", curves.len(), target.display()).map_err(|e| io_failure(&target, e))
}
