//! `popa`: synthesize, enroll, monitor, identify and evaluate.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use popa_core::classify::{AlgorithmSpec, Dataset};
use popa_core::config::{Config, ConfigError};
use popa_core::eval::{cross_validate, permanence_eval, report_csv, EvalError};
use popa_core::features::{dataset_from_recordings, windows};
use popa_core::ingest::{self, IngestError, Pace, SessionRecording};
use popa_core::session::{self, deauth_line, identify, DeauthReason, Phase, Population, SessionError};
use popa_core::store::{self, StoreError, SubjectProfile};
use popa_core::synth::{self, SynthError};
use popa_core::SENSOR_COUNT;

#[derive(Debug, Parser)]
#[command(name = "popa", version, about = "Seat-pressure posture biometrics: synthesis, enrollment, monitoring and evaluation")]
struct Cli {
    /// Master seed [default: `seed` from the config, else 1]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// key=value config file overriding defaults [default: $POPA_CONFIG if set]
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for parallel evaluation
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic population: spec files plus recordings
    Synth(SynthArgs),
    /// Build a subject profile from the start of a recording
    Enroll(EnrollArgs),
    /// Run continuous authentication over a frame stream
    Monitor(MonitorArgs),
    /// Cross-validation or cross-session evaluation over a directory of recordings
    Evaluate(EvaluateArgs),
    /// One-to-n identification of each window of a recording
    Identify(IdentifyArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of subjects [default: `subjects` from the config, else 30]
    #[arg(long)]
    subjects: Option<usize>,
    /// Sessions per subject; sessions after the first are drifted
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    /// Length of each session in seconds
    #[arg(long = "duration-s", default_value_t = 600.0)]
    duration_s: f64,
    /// Per-session drift magnitude in ADC counts
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EnrollArgs {
    /// Recording CSV whose first `enroll_frames` frames form the profile
    #[arg(long = "in")]
    input: PathBuf,
    /// Profile directory (created if missing)
    #[arg(long)]
    profiles: PathBuf,
    /// Replace an existing profile for the same subject
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct MonitorArgs {
    /// Recording CSV to monitor
    #[arg(long = "in", conflicts_with = "stdin", required_unless_present = "stdin")]
    input: Option<PathBuf>,
    /// Read the recording CSV from standard input
    #[arg(long)]
    stdin: bool,
    /// Profile of the user being authenticated
    #[arg(long)]
    profile: PathBuf,
    /// Directory of other subjects' profiles used as impostor examples
    #[arg(long)]
    background: PathBuf,
    /// Pace frames at their recorded timestamps instead of as fast as possible
    #[arg(long)]
    realtime: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Cv,
    Permanence,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of recording CSVs
    #[arg(long)]
    data: PathBuf,
    /// rf, knn1, knn3, knn5 or svm (any knnK works) [default: `algorithm` from the config, else rf]
    #[arg(long)]
    algorithm: Option<String>,
    /// CV repeats [default: `repeats` from the config, else 10]
    #[arg(long)]
    repeats: Option<usize>,
    /// CV folds [default: `folds` from the config, else 10]
    #[arg(long)]
    folds: Option<usize>,
    /// cv: repeated stratified k-fold over all recordings; permanence: train
    /// on each subject's first session, test on its second
    #[arg(long, value_enum, default_value_t = Mode::Cv)]
    mode: Mode,
    /// Report CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    /// Recording CSV to identify
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory of enrolled profiles
    #[arg(long)]
    profiles: PathBuf,
    /// Window length in frames [default: `window_len` from the config, else 20]
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("recording has {frames} frames; enrollment needs {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("profile {} exists; pass --force to replace it", .0.display())]
    RefusingOverwrite(PathBuf),
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn read_recording(path: &Path) -> Result<SessionRecording, CliError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    Ok(ingest::parse_csv(io::BufReader::new(f))?)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

/// `*.csv` recordings in `dir`, in file-name order.
fn read_recordings(dir: &Path) -> Result<Vec<SessionRecording>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"));
    paths.sort();
    paths.iter().map(|p| read_recording(p)).collect()
}

fn warn_noncanonical(rec: &SessionRecording) {
    if !rec.is_canonical() {
        eprintln!(
            "warning: {}/{} has {} frames (canonical sessions have {})",
            rec.subject_id(),
            rec.session_id(),
            rec.len(),
            popa_core::CANONICAL_SESSION_FRAMES
        );
    }
}

fn cmd_synth(cfg: &Config, a: &SynthArgs) -> Result<(), CliError> {
    if a.sessions == 0 {
        return Err(CliError::Usage("--sessions must be at least 1".into()));
    }
    if !(a.duration_s > 0.0 && a.duration_s.is_finite()) || !(a.drift >= 0.0 && a.drift.is_finite()) {
        return Err(CliError::Usage("--duration-s must be positive and --drift non-negative".into()));
    }
    let mut params = cfg.population();
    if let Some(n) = a.subjects {
        params.n_subjects = n;
    }
    if params.n_subjects == 0 {
        return Err(CliError::Usage("--subjects must be at least 1".into()));
    }
    let specs = synth::generate_population(&params)?;
    create_dir(&a.out)?;
    for spec in &specs {
        write_file(&a.out.join(format!("{}.popa-spec", spec.subject_id)), &synth::write_spec(spec))?;
        let mut current = spec.clone();
        for m in 1..=a.sessions {
            if m > 1 {
                current = synth::apply_session_drift(&current, a.drift);
            }
            let rec = synth::simulate_session(&current, a.duration_s, m as u64)?;
            let path = a.out.join(format!("{}_session{m}.csv", spec.subject_id));
            write_file(&path, &ingest::write_csv(&rec))?;
        }
    }
    println!("wrote {} specs and {} recordings to {}", specs.len(), specs.len() * a.sessions, a.out.display());
    Ok(())
}

fn cmd_enroll(cfg: &Config, a: &EnrollArgs) -> Result<(), CliError> {
    let rec = read_recording(&a.input)?;
    let needed = cfg.enroll_frames;
    if rec.len() < needed {
        return Err(CliError::TooShort { frames: rec.len(), needed });
    }
    let profile = SubjectProfile::new(rec.truncated(needed), cfg.algorithm, cfg.seed)?;
    create_dir(&a.profiles)?;
    let target = a.profiles.join(profile.file_name());
    if target.exists() && !a.force {
        return Err(CliError::RefusingOverwrite(target));
    }
    let path = store::save_profile(&profile, &a.profiles)?;
    println!("{}", path.display());
    Ok(())
}

/// Impostor examples: every background profile except the monitored subject.
fn background_dataset(dir: &Path, exclude: &str) -> Result<Dataset, CliError> {
    let mut data = Dataset::new(SENSOR_COUNT);
    for p in store::load_all(dir)? {
        if p.subject_id != exclude {
            data.extend(&p.enrollment_dataset());
        }
    }
    Ok(data)
}

fn cmd_monitor(cfg: &Config, a: &MonitorArgs) -> Result<ExitCode, CliError> {
    let profile = store::load_profile(&a.profile)?;
    let stream = match &a.input {
        Some(path) => read_recording(path)?,
        None => ingest::parse_csv(io::stdin().lock())?,
    };
    let background = background_dataset(&a.background, &profile.subject_id)?;
    let config = session::SessionConfig {
        enroll_frames: profile.enrollment.len(),
        algorithm: profile.algorithm,
        seed: profile.seed,
        ..cfg.session()
    };
    let mut state = session::new_session(config, &background)?;
    for f in profile.enrollment.frames() {
        state.ingest_frame(*f)?;
    }

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let pace = if a.realtime { Pace::RealTime } else { Pace::AsFast };
    for frame in ingest::replay(&stream, pace) {
        if let Some(decision) = state.ingest_frame(*frame)? {
            writeln!(out, "{}", decision.log_line()).map_err(io_err(Path::new("<stdout>")))?;
            out.flush().map_err(io_err(Path::new("<stdout>")))?;
        }
        if let Phase::DeAuthenticated(reason) = state.phase() {
            writeln!(out, "{}", deauth_line(reason)).map_err(io_err(Path::new("<stdout>")))?;
            out.flush().map_err(io_err(Path::new("<stdout>")))?;
            return Ok(match reason {
                DeauthReason::ImpostorSuspected => ExitCode::from(2),
                DeauthReason::WalkedAway => ExitCode::from(3),
                DeauthReason::Manual => ExitCode::SUCCESS,
            });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(cfg: &Config, a: &EvaluateArgs) -> Result<(), CliError> {
    let algorithm = match &a.algorithm {
        Some(name) => AlgorithmSpec::from_name(name).ok_or_else(|| CliError::Usage(format!("unknown algorithm {name:?}")))?,
        None => cfg.algorithm,
    };
    let recordings = read_recordings(&a.data)?;
    recordings.iter().for_each(warn_noncanonical);
    let report = match a.mode {
        Mode::Cv => {
            let data = dataset_from_recordings(&recordings, &cfg.features);
            let repeats = a.repeats.unwrap_or(cfg.repeats);
            let folds = a.folds.unwrap_or(cfg.folds);
            cross_validate(&data, &algorithm, repeats, folds, cfg.seed)?
        }
        Mode::Permanence => {
            // Each subject's sessions in session-id order: first trains, second tests.
            let mut by_subject: BTreeMap<&str, Vec<&SessionRecording>> = BTreeMap::new();
            for r in &recordings {
                by_subject.entry(r.subject_id()).or_default().push(r);
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for sessions in by_subject.values_mut() {
                sessions.sort_by(|x, y| session_order(x.session_id(), y.session_id()));
                train.push(sessions[0].clone());
                if let Some(second) = sessions.get(1) {
                    test.push((*second).clone());
                }
            }
            permanence_eval(&train, &test, &algorithm, &cfg.features, cfg.seed)?
        }
    };
    write_file(&a.out, &report_csv(&report))?;
    println!(
        "{} {}: macro tpr={:.4} fpr={:.4} fnr={:.4}",
        algorithm.name(),
        match a.mode {
            Mode::Cv => "cv",
            Mode::Permanence => "permanence",
        },
        report.macro_tpr(),
        report.macro_fpr(),
        report.macro_fnr()
    );
    if report.fpr_undefined {
        eprintln!("warning: FPR undefined for a single-subject corpus");
    }
    Ok(())
}

/// Numeric session ids compare as numbers, others lexically after them.
fn session_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn cmd_identify(cfg: &Config, a: &IdentifyArgs) -> Result<(), CliError> {
    let window_len = a.window.unwrap_or(cfg.features.window_len);
    if window_len == 0 {
        return Err(CliError::Usage("--window must be positive".into()));
    }
    let profiles = store::load_all(&a.profiles)?;
    let mut data = Dataset::new(SENSOR_COUNT);
    for p in &profiles {
        data.extend(&p.enrollment_dataset());
    }
    let population = Population::train(&data, &cfg.algorithm, cfg.seed)?;
    let rec = read_recording(&a.input)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (i, w) in windows(rec.frames(), window_len, window_len).iter().enumerate() {
        let line = match identify(w, &population, cfg.tau_occupied) {
            Ok((subject, confidence)) => format!("{i},{subject},{confidence:.4}"),
            Err(SessionError::WindowVacant) => format!("{i},VACANT,0.0000"),
            Err(e) => return Err(e.into()),
        };
        writeln!(out, "{line}").map_err(io_err(Path::new("<stdout>")))?;
    }
    out.flush().map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    // Results do not depend on the thread count; a second initialization
    // (only possible in-process) keeps the existing pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    let mut cfg = Config::resolve(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(&cfg, a)?,
        Command::Enroll(a) => cmd_enroll(&cfg, a)?,
        Command::Monitor(a) => return cmd_monitor(&cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a)?,
        Command::Identify(a) => cmd_identify(&cfg, a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn numeric_sessions_sort_numerically() {
        let mut ids = vec!["10", "2", "b", "1", "a"];
        ids.sort_by(|x, y| session_order(x, y));
        assert_eq!(ids, vec!["1", "2", "10", "a", "b"]);
    }

}
