//! Subcommands: synth, fit, assign, evaluate, report, compare.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pheno_core::cohort::{Outcome, VitalChannel, N_OUTCOMES};
use pheno_core::preprocess::Preprocessor;
use pheno_core::synth::{generate, make_separable_preset, Separability};

use crate::config::{KChoice, ModelKind, RunConfig};
use crate::error::{CliError, Result};
use crate::formats;
use crate::models::ModelFile;
use crate::pipeline;
use crate::report;
use crate::split::Part;

#[derive(Debug, Parser)]
#[command(
    name = "pheno",
    version,
    about = "Temporal phenotype clustering of vital-sign trajectories"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort CSV and its `.truth.csv` sidecar.
    Synth(SynthArgs),
    /// Train a model on the training split of a cohort.
    Fit(FitArgs),
    /// Write each patient's final cluster.
    Assign(AssignArgs),
    /// Score the test split with training-split cluster profiles.
    Evaluate(EvaluateArgs),
    /// Render outcome-distribution and trajectory figures from profiles.
    Report(ReportArgs),
    /// Fit, assign and evaluate every model and tabulate the metrics.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key=value` configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed (default: config `seed`, then PHENO_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "easy", value_parser = parse_preset)]
    pub preset: Separability,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Overall outcome proportions: discharge,icu,cardiac_arrest,death.
    #[arg(long, value_parser = parse_imbalance)]
    pub imbalance: Option<[f64; N_OUTCOMES]>,
    /// Cohort CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub model: ModelKind,
    /// Cluster count, or `auto` for the elbow rule (tskm only).
    #[arg(long)]
    pub k: Option<KChoice>,
    /// Train AC-TPC with uniform class priors.
    #[arg(long)]
    pub unweighted: bool,
    /// Training fraction of the patient split.
    #[arg(long)]
    pub split: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Defaults to `<model-dir>/assignments.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Defaults to `<model-dir>/assignments.csv`.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    /// Planted phenotypes (`patient_id,phenotype_id`) for NMI against truth.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Defaults to the model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding `profiles.csv` and the trajectory CSVs.
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long, default_value = "RR", value_parser = parse_channel)]
    pub channel: VitalChannel,
    /// Defaults to the profiles directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Comma-separated model tags (default: all five).
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<ModelKind>>,
    #[arg(long)]
    pub k: Option<KChoice>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_preset(s: &str) -> std::result::Result<Separability, String> {
    Separability::parse(s).map_err(|e| e.to_string())
}

fn parse_channel(s: &str) -> std::result::Result<VitalChannel, String> {
    VitalChannel::from_name(s)
        .ok_or_else(|| format!("unknown channel `{s}` (expected one of HR, RR, DBP, SBP, SPO2, TEMP, AVPU, FIO2)"))
}

fn parse_imbalance(s: &str) -> std::result::Result<[f64; N_OUTCOMES], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{x}` is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected {N_OUTCOMES} proportions, got {}", v.len()))
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command; returns the lines destined for stdout.
pub fn execute(cmd: Command) -> Result<Vec<String>> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Assign(a) => cmd_assign(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_synth(a: &SynthArgs) -> Result<Vec<String>> {
    let seed = a.common.load()?.resolve_seed()?;
    if a.n == 0 {
        return Err(CliError::usage("--n must be positive"));
    }
    let mut cfg = make_separable_preset(a.preset, a.n, seed);
    if let Some(imb) = a.imbalance {
        cfg = cfg.with_imbalance(imb);
    }
    let synth = generate(&cfg)?;
    formats::save_cohort(&synth.cohort, &a.out)?;
    let truth_path = formats::truth_path(&a.out);
    let truth: Vec<(String, usize)> = synth
        .cohort
        .patients()
        .iter()
        .map(|p| p.patient_id().to_string())
        .zip(synth.phenotypes.iter().copied())
        .collect();
    formats::save_truth(&truth_path, &truth)?;
    let mut summary = format!("n={}", synth.cohort.len());
    for (o, a) in Outcome::ALL.iter().zip(synth.cohort.priors().alpha()) {
        let _ = write!(summary, " {o}={a:.4}");
    }
    Ok(vec![summary, show(&a.out), show(&truth_path)])
}

pub fn cmd_fit(a: &FitArgs) -> Result<Vec<String>> {
    let mut cfg = a.common.load()?;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(s) = a.split {
        cfg.split = s;
    }
    let kind = match (a.model, a.unweighted) {
        (ModelKind::Actpc, true) => ModelKind::ActpcUnweighted,
        (m, false) | (m @ ModelKind::ActpcUnweighted, true) => m,
        (m, true) => return Err(CliError::usage(format!("--unweighted applies to actpc, not {m}"))),
    };
    let seed = cfg.resolve_seed()?;
    let cohort = formats::load_cohort(&a.cohort)?;
    let out = pipeline::fit(kind, &cfg, seed, &cohort)?;
    write_fit(&a.out, &out)
}

fn write_fit(dir: &Path, out: &pipeline::FitOutput) -> Result<Vec<String>> {
    let model_path = dir.join("model.json");
    out.model.save(&model_path)?;
    formats::save_json(&dir.join("preprocess.json"), &out.preprocessor)?;
    let stages: Vec<(&str, &[f64])> = out.losses.iter().map(|(s, l)| (*s, l.as_slice())).collect();
    formats::save_loss_history(&dir.join("loss_history.csv"), &stages)?;
    formats::save_split(&dir.join("split.csv"), &out.split)?;
    if let Some(curve) = &out.elbow_curve {
        let rows: Vec<(String, f64)> = curve.iter().map(|(k, i)| (k.to_string(), *i)).collect();
        let mut text = String::from("k,inertia\n");
        for (k, i) in rows {
            let _ = writeln!(text, "{k},{i}");
        }
        formats::write_text(&dir.join("inertia_curve.csv"), &text)?;
    }
    Ok(vec![show(&model_path)])
}

fn load_fit_dir(dir: &Path) -> Result<(ModelFile, Preprocessor)> {
    Ok((
        ModelFile::load(&dir.join("model.json"))?,
        formats::load_json(&dir.join("preprocess.json"))?,
    ))
}

pub fn cmd_assign(a: &AssignArgs) -> Result<Vec<String>> {
    let (model, pre) = load_fit_dir(&a.model_dir)?;
    let cohort = formats::load_cohort(&a.cohort)?;
    let rows = pipeline::assign(&model, &pre, &cohort)?;
    let out = a.out.clone().unwrap_or_else(|| a.model_dir.join("assignments.csv"));
    formats::save_assignments(&out, &rows)?;
    Ok(vec![show(&out)])
}

fn write_evaluation(dir: &Path, ev: &pipeline::Evaluation) -> Result<Vec<String>> {
    let metrics = dir.join("metrics.json");
    formats::save_json(&metrics, &ev.report)?;
    formats::save_profiles(dir, &pheno_core::preprocess::GridSpec::visualization(), &ev.profiles)?;
    Ok(vec![show(&metrics), show(&dir.join("profiles.csv"))])
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<Vec<String>> {
    let (model, pre) = load_fit_dir(&a.model_dir)?;
    let cohort = formats::load_cohort(&a.cohort)?;
    let assignments = formats::load_assignments(
        &a.assignments
            .clone()
            .unwrap_or_else(|| a.model_dir.join("assignments.csv")),
    )?;
    let split: Vec<(String, Part)> = formats::load_split(&a.model_dir.join("split.csv"))?;
    let clusters = pipeline::align(&cohort, &assignments, "assignments")?;
    let parts = pipeline::align(&cohort, &split, "split")?;
    let truth = match &a.truth {
        Some(p) => Some(pipeline::align(&cohort, &formats::load_truth(p)?, "truth file")?),
        None => None,
    };
    let ev = pipeline::evaluate(model.kind.tag(), &pre, &cohort, &parts, &clusters, truth.as_deref())?;
    write_evaluation(a.out.as_deref().unwrap_or(&a.model_dir), &ev)
}

pub fn cmd_report(a: &ReportArgs) -> Result<Vec<String>> {
    let (profiles, hours) = formats::load_profiles(&a.profiles)?;
    if profiles.is_empty() {
        return Err(CliError::validation("profiles.csv lists no clusters"));
    }
    let dir = a.out.clone().unwrap_or_else(|| a.profiles.clone());
    let ordered = report::ordered(&profiles);

    let dist_csv = dir.join("outcome_distribution.csv");
    let mut text = String::from("cluster,size,p_discharge,p_icu,p_cardiac_arrest,p_death\n");
    for p in &ordered {
        let _ = write!(text, "{},{}", p.cluster, p.size);
        for v in &p.outcome_distribution {
            let _ = write!(text, ",{v}");
        }
        text.push('\n');
    }
    formats::write_text(&dist_csv, &text)?;
    let dist_svg = dir.join("outcome_distribution.svg");
    formats::write_text(&dist_svg, &report::outcome_svg(&profiles))?;

    let name = a.channel.name();
    let traj_csv = dir.join(format!("trajectory_{name}.csv"));
    let mut text = String::from("hours_to_outcome");
    for p in &ordered {
        let _ = write!(text, ",cluster_{}", p.cluster);
    }
    text.push('\n');
    for (i, h) in hours.iter().enumerate() {
        let _ = write!(text, "{h}");
        for p in &ordered {
            let _ = write!(text, ",{}", p.mean_trajectory.get(i, a.channel.index()));
        }
        text.push('\n');
    }
    formats::write_text(&traj_csv, &text)?;
    let traj_svg = dir.join(format!("trajectory_{name}.svg"));
    formats::write_text(&traj_svg, &report::trajectory_svg(&profiles, &hours, a.channel))?;
    Ok([dist_svg, dist_csv, traj_svg, traj_csv]
        .iter()
        .map(|p| show(p))
        .collect())
}

pub fn cmd_compare(a: &CompareArgs) -> Result<Vec<String>> {
    let mut cfg = a.common.load()?;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(s) = a.split {
        cfg.split = s;
    }
    let seed = cfg.resolve_seed()?;
    let cohort = formats::load_cohort(&a.cohort)?;
    let truth = match &a.truth {
        Some(p) => Some(pipeline::align(&cohort, &formats::load_truth(p)?, "truth file")?),
        None => None,
    };
    let models = a.models.clone().unwrap_or_else(|| ModelKind::ALL.to_vec());
    let mut table = String::from("model,auroc,auprc,nmi,nmi_truth,n_clusters,n_test\n");
    let mut lines = Vec::new();
    for kind in models {
        let dir = a.out.join(kind.tag());
        let fit = pipeline::fit(kind, &cfg, seed, &cohort)?;
        write_fit(&dir, &fit)?;
        let rows = pipeline::assign(&fit.model, &fit.preprocessor, &cohort)?;
        formats::save_assignments(&dir.join("assignments.csv"), &rows)?;
        let clusters = pipeline::align(&cohort, &rows, "assignments")?;
        let parts = pipeline::align(&cohort, &fit.split, "split")?;
        let ev = pipeline::evaluate(
            kind.tag(),
            &fit.preprocessor,
            &cohort,
            &parts,
            &clusters,
            truth.as_deref(),
        )?;
        write_evaluation(&dir, &ev)?;
        let r = &ev.report;
        let nt = r.nmi_truth.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            table,
            "{},{},{},{},{nt},{},{}",
            r.model_tag, r.auroc, r.auprc, r.nmi, r.n_clusters, r.n_patients
        );
        lines.push(show(&dir.join("metrics.json")));
    }
    let path = a.out.join("comparison.csv");
    formats::write_text(&path, &table)?;
    lines.push(show(&path));
    Ok(lines)
}
