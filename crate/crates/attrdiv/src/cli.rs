//! The `attrdiv` command line.
//!
//! Exit codes: 0 success, 1 pipeline error, 2 usage or configuration
//! error, 3 a validation property failed. Every failure writes one line
//! `error[<Code>]: <message>` to stderr before anything else.

use std::ffi::OsString;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrdiv_core::attributes::{count_phrases, default_stoplist, select_top_attributes};
use attrdiv_core::divergence::{nway_divergence, pad, sad};
use attrdiv_core::scoring::{score_matrix, CenterPolicy, ScoreConfig};
use attrdiv_core::synth::{run_suite, Suite, SuiteOptions, SuiteOutcome};
use attrdiv_core::{AttributeError, DivergenceError, ScoreError, ScoreMode, SynthError};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{CenterPolicyArg, ConfigError, ModeArg, RunConfig};
use crate::io::{self, FormatError};
use crate::report::{emit_plot_data, render_report, worst_table, BundleLabels, EvaluationBundle, Format, ReportError, WORST_K};

#[derive(Debug, Parser)]
#[command(name = "attrdiv", version, about = "Attribute-level divergence between training and generated image sets")]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "ATTRDIV_THREADS", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select the most frequent caption phrases as target attributes.
    Attrs(AttrsArgs),
    /// Score images against attribute prompts (CLIPScore or HCS).
    Score(ScoreArgs),
    /// Divergences between training and generated score files.
    Eval(EvalArgs),
    /// Run the synthetic validation suites.
    Validate(ValidateArgs),
    /// Render a saved evaluation bundle.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AttrsArgs {
    /// Captions, JSON Lines.
    #[arg(long)]
    pub captions: PathBuf,
    /// Number of attributes to keep.
    #[arg(long)]
    pub top: Option<usize>,
    /// Attribute file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Prompt template containing `{attribute}`.
    #[arg(long)]
    pub template: Option<String>,
    /// Stop words, one per line (default: a built-in English list).
    #[arg(long)]
    pub stoplist: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Image embeddings.
    #[arg(long)]
    pub images: PathBuf,
    /// Attribute prompt embeddings; their ids name the attributes.
    #[arg(long)]
    pub texts: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Score file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse these centers (an HCS score file or a centers JSON), typically
    /// those of the training set when scoring generated images.
    #[arg(long)]
    pub centers: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub center_policy: Option<CenterPolicyArg>,
    /// L2-normalize embeddings before centering.
    #[arg(long)]
    pub l2_normalize: bool,
    /// Also write the centers used as JSON.
    #[arg(long)]
    pub save_centers: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Training-set scores (the reference distribution).
    #[arg(long)]
    pub train: PathBuf,
    /// Generated-set scores.
    #[arg(long)]
    pub gen: PathBuf,
    /// Also compute the paired-attribute divergence.
    #[arg(long)]
    pub pairs: bool,
    /// Also compute the divergence over k-attribute tuples.
    #[arg(long, value_name = "K")]
    pub nway: Option<usize>,
    /// Where to write the evaluation bundle.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    /// Cap on rows per KDE; larger inputs are subsampled.
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub subsample_seed: Option<u64>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Injection,
    Discernment,
    Skip,
    Stability,
    Overfit,
    All,
}

impl SuiteArg {
    fn suites(self) -> Vec<Suite> {
        match self {
            SuiteArg::Injection => vec![Suite::Injection],
            SuiteArg::Discernment => vec![Suite::Discernment],
            SuiteArg::Skip => vec![Suite::Skip],
            SuiteArg::Stability => vec![Suite::Stability],
            SuiteArg::Overfit => vec![Suite::Overfit],
            SuiteArg::All => Suite::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    /// Directory for `<suite>.csv` and `<suite>.json`.
    #[arg(long, default_value = "validation")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation bundle (JSON, as written by `eval`).
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub format: Option<String>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Format(FormatError),
    Report(ReportError),
    Attribute(AttributeError),
    Score(ScoreError),
    Divergence(DivergenceError),
    Synth(SynthError),
    Validation(String),
}

/// Name of an enum variant, from its `Debug` form.
fn variant<T: fmt::Debug>(e: &T) -> String {
    let s = format!("{e:?}");
    s.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            _ => 1,
        }
    }

    pub fn code(&self) -> String {
        match self {
            CliError::Usage(_) => "Usage".into(),
            CliError::Config(_) => "Config".into(),
            CliError::Format(e) => e.code().into(),
            CliError::Report(e) => e.code().into(),
            CliError::Attribute(e) => variant(e),
            CliError::Score(e) => variant(e),
            CliError::Divergence(DivergenceError::Density(e)) => variant(e),
            CliError::Divergence(e) => variant(e),
            CliError::Synth(SynthError::Divergence(e)) => variant(e),
            CliError::Synth(e) => variant(e),
            CliError::Validation(_) => "ValidationFailed".into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Validation(m) => f.write_str(m),
            CliError::Config(e) => e.fmt(f),
            CliError::Format(e) => e.fmt(f),
            CliError::Report(e) => e.fmt(f),
            CliError::Attribute(e) => e.fmt(f),
            CliError::Score(e) => e.fmt(f),
            CliError::Divergence(e) => e.fmt(f),
            CliError::Synth(e) => e.fmt(f),
        }
    }
}

macro_rules! from_err {
    ($($t:ty => $v:ident),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::$v(e)
            }
        })*
    };
}

from_err!(
    ConfigError => Config,
    FormatError => Format,
    ReportError => Report,
    AttributeError => Attribute,
    ScoreError => Score,
    DivergenceError => Divergence,
    SynthError => Synth,
);

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let summary: Vec<&str> = text
                .lines()
                .take_while(|l| !l.trim().is_empty() && !l.starts_with("Usage:"))
                .map(|l| l.trim().trim_start_matches("error: "))
                .collect();
            eprintln!("error[Usage]: {}", summary.join(" "));
            eprint!("{text}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // A pool may already exist when `run` is called twice in one process;
        // the first size then stays in effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(usize::from(n)).build_global();
    }
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Attrs(a) => cmd_attrs(a, config),
        Command::Score(a) => cmd_score(a, config),
        Command::Eval(a) => cmd_eval(a, config),
        Command::Validate(a) => cmd_validate(a, config),
        Command::Report(a) => cmd_report(a, config),
    }
}

fn parse_format(flag: Option<&str>, config: &RunConfig) -> Result<Format, CliError> {
    match flag {
        Some(s) => s.parse().map_err(|e: ReportError| CliError::Usage(e.to_string())),
        None => Ok(config.format),
    }
}

fn print(text: &str) -> Result<(), CliError> {
    io::emit(None, text.as_bytes()).map_err(Into::into)
}

pub fn cmd_attrs(a: AttrsArgs, mut config: RunConfig) -> Result<(), CliError> {
    if let Some(n) = a.top {
        config.n_attributes = n;
    }
    if let Some(t) = a.template {
        config.template = t;
    }
    config.validate()?;
    let captions = io::read_captions(&a.captions)?;
    let stoplist = match &a.stoplist {
        Some(p) => io::read_stoplist(p)?,
        None => default_stoplist(),
    };
    let freq = count_phrases(&captions, &stoplist)?;
    let sel = select_top_attributes(&freq, config.n_attributes, &config.template)?;
    if sel.underfull {
        eprintln!(
            "warning: only {} distinct phrases, fewer than the {} requested",
            sel.attributes.len(),
            config.n_attributes
        );
    }
    io::write_attributes(&sel.attributes, &a.out)?;
    let attrs = &sel.attributes;
    let width = attrs.counts().iter().map(|c| c.to_string().len()).max().unwrap_or(1).max(5);
    let mut s = format!("{:>4}  {:>width$}  phrase\n", "rank", "count");
    for (i, (p, c)) in attrs.phrases().iter().zip(attrs.counts()).enumerate() {
        let _ = writeln!(s, "{:>4}  {:>width$}  {}", i + 1, c, p);
    }
    print(&s)
}

pub fn cmd_score(a: ScoreArgs, mut config: RunConfig) -> Result<(), CliError> {
    if let Some(m) = a.mode {
        config.mode = m;
    }
    if let Some(p) = a.center_policy {
        config.center_policy = p;
    }
    if let Some(c) = &a.centers {
        config.center_policy = CenterPolicyArg::External;
        config.centers_file = Some(c.clone());
    }
    config.l2_normalize |= a.l2_normalize;
    config.validate()?;
    let mode = match config.mode {
        ModeArg::Hcs => ScoreMode::Hcs,
        ModeArg::Cs => ScoreMode::Cs,
    };
    if mode == ScoreMode::Cs && a.centers.is_some() {
        return Err(CliError::Usage("--centers only applies to --mode hcs".into()));
    }
    let centers = match config.center_policy {
        CenterPolicyArg::TrainImages => CenterPolicy::TrainImages,
        CenterPolicyArg::Pooled => CenterPolicy::Pooled,
        CenterPolicyArg::External => {
            CenterPolicy::Explicit(io::read_centers(config.centers_file.as_deref().expect("validated"))?)
        }
    };
    let images = io::read_embeddings(&a.images)?;
    let texts = io::read_embeddings(&a.texts)?;
    let sc = ScoreConfig { mode, centers, l2_normalize: config.l2_normalize };
    let scores = score_matrix(&images, &texts, &sc)?;
    io::write_scores(&scores, &a.out)?;
    if let Some(p) = &a.save_centers {
        match scores.centers() {
            Some(c) => io::write_centers(c, p)?,
            None => return Err(CliError::Usage("--save-centers only applies to --mode hcs".into())),
        }
    }
    print(&format!(
        "scored {} images x {} attributes ({})\n",
        scores.n_rows(),
        scores.n_attributes(),
        mode.as_str()
    ))
}

pub fn cmd_eval(a: EvalArgs, mut config: RunConfig) -> Result<(), CliError> {
    if let Some(m) = a.max_samples {
        config.kde.max_samples = Some(m);
    }
    if let Some(s) = a.subsample_seed {
        config.kde.subsample_seed = s;
    }
    let format = parse_format(a.format.as_deref(), &config)?;
    config.validate()?;
    let dc = config.divergence_config();
    let train = io::read_scores(&a.train)?;
    let gen = io::read_scores(&a.gen)?;

    let labels = BundleLabels { model: a.model, dataset: a.dataset, timestamp: a.timestamp, ..BundleLabels::current() };
    let mut bundle = EvaluationBundle::new(labels, sad(&train, &gen, &dc)?);
    if a.pairs {
        bundle.pad = Some(pad(&train, &gen, &dc)?);
    }
    if let Some(k) = a.nway {
        bundle.nway = Some(nway_divergence(&train, &gen, k, &dc)?);
    }

    let mut s = String::new();
    for r in std::iter::once(&bundle.sad).chain(&bundle.pad).chain(&bundle.nway) {
        let _ = writeln!(s, "{} total: {}", r.kind.label(), crate::report::fmt_num(r.total));
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
    }
    let _ = write!(s, "\nWorst {WORST_K} SaD attributes\n\n{}", worst_table(&bundle.sad, WORST_K));
    if let Some(p) = &bundle.pad {
        let _ = write!(s, "\nWorst {WORST_K} PaD pairs\n\n{}", worst_table(p, WORST_K));
    }
    if let Some(r) = &bundle.nway {
        let _ = write!(s, "\nWorst {WORST_K} {} tuples\n\n{}", r.kind.label(), worst_table(r, WORST_K));
    }
    if let Some(out) = &a.out {
        io::write_atomic(out, &render_report(&bundle, format)?)?;
    }
    print(&s)
}

fn check_line(outcome: &SuiteOutcome) -> String {
    let mut s = String::new();
    for c in &outcome.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            s,
            "{status} {} {} = {} ({} {})",
            outcome.suite.name(),
            c.name,
            crate::report::fmt_num(c.value),
            c.op,
            crate::report::fmt_num(c.threshold)
        );
    }
    s
}

pub fn cmd_validate(a: ValidateArgs, config: RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let dc = config.divergence_config();
    let mut opts = SuiteOptions::default();
    if let Some(seed) = a.seed {
        opts.seed = seed;
    }
    fs::create_dir_all(&a.out_dir)
        .map_err(|source| FormatError::IoFailure { path: a.out_dir.clone(), source })?;
    let mut failures = Vec::new();
    for suite in a.suite.suites() {
        let outcome = run_suite(suite, &opts, &dc)?;
        write_outcome(&a.out_dir, &outcome)?;
        print(&check_line(&outcome))?;
        for c in outcome.failures() {
            failures.push(format!(
                "{} {} = {} (need {} {})",
                suite.name(),
                c.name,
                crate::report::fmt_num(c.value),
                c.op,
                crate::report::fmt_num(c.threshold)
            ));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failures.join("; ")))
    }
}

fn write_outcome(dir: &Path, outcome: &SuiteOutcome) -> Result<(), CliError> {
    let name = outcome.suite.name();
    io::write_atomic(&dir.join(format!("{name}.csv")), &emit_plot_data(&outcome.series)?)?;
    let mut json = serde_json::to_vec_pretty(outcome).expect("outcome serializes");
    json.push(b'\n');
    io::write_atomic(&dir.join(format!("{name}.json")), &json)?;
    Ok(())
}

pub fn cmd_report(a: ReportArgs, config: RunConfig) -> Result<(), CliError> {
    let format = parse_format(a.format.as_deref(), &config)?;
    let bytes = fs::read(&a.bundle).map_err(|source| FormatError::IoFailure { path: a.bundle.clone(), source })?;
    let bundle: EvaluationBundle = serde_json::from_slice(&bytes).map_err(|e| FormatError::BadRecord {
        path: a.bundle.clone(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let out = render_report(&bundle, format)?;
    io::emit(a.out.as_deref(), &out)?;
    Ok(())
}
