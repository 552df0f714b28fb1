//! `oodcl` command line: `gen-data`, `run`, `score-dump` and `metrics`.
//!
//! Every file a command writes lands in the output directory (`--out`, or
//! the `OODCL_OUTPUT_ROOT` environment variable).

use std::ffi::OsString;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::data::{generate, write_csv_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{batch_from_rows, read_scores, write_scores, DetectionMetrics, ScoreRow};
use crate::ood::{parse_methods, LogitsDump};
use crate::protocol::{run, DataSource, ProtocolConfig};

pub const OUTPUT_ENV: &str = "OODCL_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "oodcl", version, about = "Out-of-distribution detection in unsupervised class-incremental learning")]
pub struct Cli {
    /// Output directory for every file a command writes.
    #[arg(long, global = true, env = OUTPUT_ENV, default_value = "oodcl-out")]
    pub out: PathBuf,

    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian-mixture dataset as train.csv / test.csv.
    GenData(SyntheticArgs),
    /// Run the detect-then-learn protocol and write the report.
    Run(RunArgs),
    /// Score a logits dump with logits-only methods.
    ScoreDump(ScoreDumpArgs),
    /// AUROC / AUPR / FPR95 of a scores file.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SyntheticArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub std: Option<f64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    #[default]
    All,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file (`[protocol]`, `[train]`, `[data]`, `[output]` sections); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Use the synthetic generator.
    #[arg(long, conflicts_with_all = ["cifar_dir", "data_dir"])]
    pub synthetic: bool,
    /// Directory holding CIFAR-100 `train.bin` and `test.bin`.
    #[arg(long, conflicts_with = "data_dir")]
    pub cifar_dir: Option<PathBuf>,
    /// Directory written by `gen-data`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,

    #[command(flatten)]
    pub synthetic_spec: SyntheticArgs,

    /// Classes per task.
    #[arg(long)]
    pub step_size: Option<usize>,
    /// Number of tasks (default: all classes).
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed; seeds are consecutive.
    #[arg(long)]
    pub seed_base: Option<u64>,
    /// Comma separated: msp, odin, energy, ours, ours-no-bc, ours-no-ce.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Exemplar budget (default: 4% of the training set).
    #[arg(long)]
    pub memory: Option<usize>,
    /// L2-normalise features before clustering.
    #[arg(long)]
    pub normalize_features: bool,
    /// Renormalise the task slice in confidence enhancement.
    #[arg(long)]
    pub ce_renormalize: bool,
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct ScoreDumpArgs {
    /// Logits dump (JSON lines).
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long, default_value = "ours")]
    pub methods: String,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// CSV with columns id,is_id,score.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub tpr: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    protocol: FileProtocol,
    #[serde(default)]
    train: FileTrain,
    #[serde(default)]
    data: FileData,
    #[serde(default)]
    output: FileOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileProtocol {
    step_size: Option<usize>,
    tasks: Option<usize>,
    seeds: Option<usize>,
    seed_base: Option<u64>,
    methods: Option<String>,
    hidden: Option<Vec<usize>>,
    memory_capacity: Option<usize>,
    normalize_features: Option<bool>,
    ce_renormalize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTrain {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    lr_decay: Option<f64>,
    lr_decay_every: Option<usize>,
    kd_temperature: Option<f64>,
    kd_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileData {
    source: Option<String>,
    dir: Option<PathBuf>,
    classes: Option<usize>,
    dim: Option<usize>,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    radius: Option<f64>,
    std: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOutput {
    format: Option<ReportFormat>,
}

fn read_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn apply_synthetic(mut spec: SyntheticSpec, a: &SyntheticArgs) -> SyntheticSpec {
    macro_rules! set {
        ($($f:ident <- $g:ident),*) => {$( if let Some(v) = a.$g { spec.$f = v; } )*};
    }
    set!(classes <- classes, dim <- dim, train_per_class <- train_per_class,
         test_per_class <- test_per_class, radius <- radius, std <- std, seed <- data_seed);
    spec
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("hidden width `{p}`: {e}")))
        })
        .collect()
}

/// Defaults, then the config file, then flags.
pub fn resolve_run_config(args: &RunArgs) -> Result<(ProtocolConfig, ReportFormat)> {
    let file = match &args.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let mut cfg = ProtocolConfig::default();

    let fp = &file.protocol;
    if let Some(v) = fp.step_size {
        cfg.step_size = v;
    }
    cfg.tasks = fp.tasks.or(cfg.tasks);
    if let Some(v) = &fp.hidden {
        cfg.hidden = v.clone();
    }
    if fp.memory_capacity.is_some() {
        cfg.memory_capacity = fp.memory_capacity;
    }
    if let Some(v) = fp.normalize_features {
        cfg.normalize_features = v;
    }
    let ft = &file.train;
    let t = &mut cfg.train;
    macro_rules! set_train {
        ($($f:ident),*) => {$( if let Some(v) = ft.$f { t.$f = v; } )*};
    }
    set_train!(epochs, batch_size, learning_rate, lr_decay, lr_decay_every, kd_temperature, kd_weight);

    let fd = &file.data;
    let mut spec = SyntheticSpec::default();
    macro_rules! set_spec {
        ($($f:ident),*) => {$( if let Some(v) = fd.$f { spec.$f = v; } )*};
    }
    set_spec!(classes, dim, train_per_class, test_per_class, radius, std, seed);
    let mut source = match fd.source.as_deref() {
        None | Some("synthetic") => DataSource::Synthetic(spec.clone()),
        Some(kind @ ("cifar100" | "csv")) => {
            let dir = fd
                .dir
                .clone()
                .ok_or_else(|| Error::Config(format!("data source {kind} needs `dir`")))?;
            if kind == "csv" {
                DataSource::Csv { dir }
            } else {
                DataSource::Cifar100 { dir }
            }
        }
        Some(other) => return Err(Error::Config(format!("unknown data source `{other}`"))),
    };

    // flags
    if args.synthetic {
        source = DataSource::Synthetic(spec.clone());
    } else if let Some(dir) = &args.cifar_dir {
        source = DataSource::Cifar100 { dir: dir.clone() };
    } else if let Some(dir) = &args.data_dir {
        source = DataSource::Csv { dir: dir.clone() };
    }
    if let DataSource::Synthetic(s) = &mut source {
        *s = apply_synthetic(s.clone(), &args.synthetic_spec);
    }
    cfg.source = source;

    if let Some(v) = args.step_size {
        cfg.step_size = v;
    }
    if args.tasks.is_some() {
        cfg.tasks = args.tasks;
    }
    let n_seeds = args.seeds.or(fp.seeds).unwrap_or(cfg.seeds.len());
    let base = args.seed_base.or(fp.seed_base).unwrap_or(0);
    cfg.seeds = (0..n_seeds as u64).map(|i| base + i).collect();
    if let Some(m) = args.methods.as_deref().or(fp.methods.as_deref()) {
        cfg.scorers = parse_methods(m)?;
    }
    if args.ce_renormalize || fp.ce_renormalize.unwrap_or(false) {
        for s in &mut cfg.scorers {
            s.ce_renormalize_task = true;
        }
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(h) = &args.hidden {
        cfg.hidden = parse_widths(h)?;
    }
    if args.memory.is_some() {
        cfg.memory_capacity = args.memory;
    }
    if args.normalize_features {
        cfg.normalize_features = true;
    }
    let format = args.format.or(file.output.format).unwrap_or_default();
    cfg.validate()?;
    if let DataSource::Synthetic(s) = &cfg.source {
        s.validate()?;
    }
    Ok((cfg, format))
}

/// Writes every `(name, contents)` pair via a temporary file and rename, only
/// after all contents are ready.
fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut staged = Vec::new();
    for (name, text) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = std::fs::write(&tmp, text) {
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            return Err(Error::io(&tmp, e));
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, dest) in &staged {
        std::fs::rename(tmp, dest).map_err(|e| Error::io(dest, e))?;
    }
    Ok(staged.into_iter().map(|(_, d)| d).collect())
}

fn cmd_gen_data(out: &Path, args: &SyntheticArgs) -> Result<()> {
    let spec = apply_synthetic(SyntheticSpec::default(), args);
    let data = generate(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let written = write_csv_dataset(&data, out)?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_run(out: &Path, args: &RunArgs, verbose: bool) -> Result<()> {
    let (cfg, format) = resolve_run_config(args)?;
    if verbose {
        eprintln!(
            "running {} seeds, step size {}, methods {}",
            cfg.seeds.len(),
            cfg.step_size,
            cfg.scorers.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
        );
    }
    let report = run(&cfg)?;
    let table = report.summary_table();
    let mut files = Vec::new();
    if matches!(format, ReportFormat::Json | ReportFormat::All) {
        files.push(("report.json", report.to_json()?));
    }
    if matches!(format, ReportFormat::Csv | ReportFormat::All) {
        files.push(("steps.csv", report.steps_csv()));
    }
    files.push(("summary.txt", table.clone()));
    let written = write_outputs(out, &files)?;
    print!("{table}");
    if verbose {
        for p in written {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn cmd_score_dump(out: &Path, args: &ScoreDumpArgs) -> Result<()> {
    let methods = parse_methods(&args.methods)?;
    if methods.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    if let Some(bad) = methods.iter().find(|m| !m.works_on_logits()) {
        return Err(Error::UnsupportedInDumpMode(bad.name()));
    }
    let file = std::fs::File::open(&args.dump).map_err(|e| Error::io(&args.dump, e))?;
    let dump = LogitsDump::read(BufReader::new(file), &args.dump.display().to_string())?;
    let mut files = Vec::new();
    for m in &methods {
        let scores = dump.score(m)?;
        let rows: Vec<ScoreRow> = dump
            .rows
            .iter()
            .zip(scores)
            .map(|(r, score)| ScoreRow {
                id: r.id.clone(),
                is_id: r.is_id,
                score,
            })
            .collect();
        let mut buf = Vec::new();
        write_scores(&rows, &mut buf)?;
        let text = String::from_utf8(buf).expect("csv output is utf-8");
        files.push((format!("scores-{}.csv", m.name()), text));
    }
    let named: Vec<(&str, String)> = files.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    for p in write_outputs(out, &named)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_metrics(out: &Path, args: &MetricsArgs) -> Result<()> {
    let rows = read_scores(&args.scores)?;
    let batch = batch_from_rows(&rows)?;
    let mut m = DetectionMetrics::compute(&batch)?;
    if args.tpr != 0.95 {
        m.fpr95 = crate::metrics::fpr_at_tpr(&batch, args.tpr)?;
    }
    let json = serde_json::json!({
        "scores": args.scores,
        "tpr_target": args.tpr,
        "auroc": m.auroc,
        "aupr": m.aupr,
        "fpr_at_tpr": m.fpr95,
        "n_id": m.n_id,
        "n_ood": m.n_ood,
    });
    write_outputs(out, &[("metrics.json", format!("{}\n", serde_json::to_string_pretty(&json)?))])?;
    println!("AUROC {}\nAUPR  {}\nFPR@{} {}", m.auroc, m.aupr, args.tpr, m.fpr95);
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(&cli.out, a),
        Command::Run(a) => cmd_run(&cli.out, a, cli.verbose),
        Command::ScoreDump(a) => cmd_score_dump(&cli.out, a),
        Command::Metrics(a) => cmd_metrics(&cli.out, a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn main() -> i32 {
    run_cli(std::env::args_os())
}
