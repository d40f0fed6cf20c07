//! `hypermml`: synthetic data, training, evaluation, reports and plots.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
//! missing paths, schema or shape mismatches). Failures print a single
//! `error[<kind>]: <message>` line on stderr.

mod plot;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hypermml::data::{
    affec_from_trials, eav_from_trials, eav_stub_trials, load_manifest, load_trials, make_synthetic_dataset,
    save_manifest, save_trials, Dataset, EavStubConfig, SynthConfig, MANIFEST_FILE, TRIALS_FILE,
};
use hypermml::report::{ablation_table, merge_subject_rows, pct, subject_table, AblationReport, EvalReport};
use hypermml::spectral::band_features;
use hypermml::trainer::{
    evaluate, export_embeddings, gradient_check, run_ablation, train_with, write_history, Checkpoint, EvalTarget,
    Modality, SplitSpec, TrainConfig, DEFAULT_VARIANTS, GRADCHECK_MODULES,
};

#[derive(Parser)]
#[command(
    name = "hypermml",
    version,
    about = "Multimodal emotion recognition with EEG band attention and hypergraph fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a class-conditioned synthetic dataset.
    Synth(SynthArgs),
    /// Write synthetic unsegmented trials in the EAV export layout.
    EavStub(EavStubArgs),
    /// Segment a trial export (EAV or AFFEC layout) into a dataset.
    ImportTrials(ImportArgs),
    /// Train a model and write a checkpoint with its history.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print the per-subject table.
    Eval(EvalArgs),
    /// Train component and modality ablations under shared seeds.
    Ablate(AblateArgs),
    /// Aggregate per-subject and ablation tables from run directories.
    Report(ReportArgs),
    /// Render the confusion matrix of a report as SVG or PNG.
    PlotConfusion(PlotArgs),
    /// Dump fused and per-modality embeddings as JSON lines.
    ExportEmbeddings(ExportArgs),
    /// Dump per-band DE and PSD features as CSV.
    Features(FeaturesArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Distance of the class means from the origin.
    #[arg(long, default_value_t = 5.0)]
    sep: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    dialogues: usize,
    #[arg(long, default_value_t = 4)]
    segments: usize,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    window_len: usize,
    #[arg(long, default_value_t = 128.0)]
    rate: f64,
}

#[derive(Args)]
struct EavStubArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    subjects: usize,
    #[arg(long, default_value_t = 30)]
    channels: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 20.0)]
    trial_seconds: f64,
    #[arg(long, default_value_t = 100.0)]
    rate: f64,
    #[arg(long, default_value_t = 3.0)]
    sep: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct ImportArgs {
    /// Directory holding `trials.json`.
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `eav` cuts consecutive windows, `affec` overlapping ones.
    #[arg(long, default_value = "eav")]
    layout: String,
    #[arg(long, default_value_t = 5.0)]
    window_seconds: f64,
    /// Overlapping windows per trial (affec).
    #[arg(long, default_value_t = 5)]
    windows: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON training configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; defaults to the configuration's `data`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// `all:<fraction>` or `subject:<id>:<fraction>`.
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated subset of eeg, audio, video.
    #[arg(long)]
    modalities: Option<String>,
    /// Comma-separated ablation flags.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `test`, `train`, `all`, or a split spec whose held-out side is used.
    #[arg(long, default_value = "test")]
    split: String,
    /// Report path; defaults to `<ckpt>/report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated variants such as `full`, `no_intra_mca+no_inter_mca`, `modality:eeg/audio`.
    #[arg(long)]
    variants: Option<String>,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "42")]
    seeds: String,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories or report files.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Also write the aggregated rows as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    /// `.svg` or `.png`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    split: String,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// abema, encoders, hypergraph, classifier or all.
    #[arg(long)]
    module: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or_default();
            eprintln!("error[usage]: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
        Err(e) => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let (kind, code) = classify(&e);
            eprintln!("error[{kind}]: {}", one_line(&e));
            ExitCode::from(code)
        }
    }
}

/// Usage problems exit with 2, everything else with 1.
fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    use hypermml::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Argument(_) | E::Config(_) | E::Lookup { .. } | E::Stratification(_) => ("usage", 2),
                E::Schema { .. } | E::Json(_) | E::Shape(_) => ("schema", 2),
                E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ("missing-path", 2),
                E::Io { .. } => ("io", 1),
                E::Divergence { .. } | E::Numeric(_) => ("numeric", 1),
            };
        }
        if cause.downcast_ref::<Usage>().is_some() {
            return ("usage", 2);
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound { ("missing-path", 2) } else { ("io", 1) };
        }
    }
    ("runtime", 1)
}

/// Joins the cause chain, skipping causes whose text a parent already shows.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.ends_with(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => synth(a)?,
        Command::EavStub(a) => eav_stub(a)?,
        Command::ImportTrials(a) => import_trials(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Ablate(a) => ablate(a)?,
        Command::Report(a) => report(a)?,
        Command::PlotConfusion(a) => plot_confusion(a)?,
        Command::ExportEmbeddings(a) => export(a)?,
        Command::Features(a) => features(a)?,
        Command::Gradcheck(a) => return gradcheck(a),
    }
    Ok(ExitCode::SUCCESS)
}

/// Loads a dataset directory, segmenting a bare EAV trial export on the fly.
fn load_data(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(usage(format!("data directory {} does not exist", dir.display())));
    }
    if dir.join(MANIFEST_FILE).exists() || !dir.join(TRIALS_FILE).exists() {
        return Ok(load_manifest(dir)?);
    }
    let export = load_trials(dir)?;
    Ok(eav_from_trials(&export.trials, export.sampling_rate_hz, 5.0, &export.class_names)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_subjects: a.subjects,
        dialogues_per_subject: a.dialogues,
        segments_per_dialogue: a.segments,
        num_classes: a.classes,
        channels: a.channels,
        window_len: a.window_len,
        sampling_rate_hz: a.rate,
        class_separation: a.sep,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let ds = make_synthetic_dataset(&cfg)?;
    save_manifest(&ds, &a.out)?;
    println!("wrote {} segments from {} subjects to {}", ds.len(), ds.manifest.subjects.len(), a.out.display());
    Ok(())
}

fn eav_stub(a: EavStubArgs) -> Result<()> {
    let cfg = EavStubConfig {
        num_subjects: a.subjects,
        channels: a.channels,
        trials_per_subject: a.trials,
        trial_seconds: a.trial_seconds,
        sampling_rate_hz: a.rate,
        class_separation: a.sep,
        seed: a.seed,
        ..EavStubConfig::default()
    };
    let export = eav_stub_trials(&cfg)?;
    save_trials(&export, &a.out)?;
    println!("wrote {} trials to {}", export.trials.len(), a.out.display());
    Ok(())
}

fn import_trials(a: ImportArgs) -> Result<()> {
    let export = load_trials(&a.raw)?;
    let ds = match a.layout.as_str() {
        "eav" => eav_from_trials(&export.trials, export.sampling_rate_hz, a.window_seconds, &export.class_names)?,
        "affec" => {
            let len = (a.window_seconds * export.sampling_rate_hz).round() as usize;
            affec_from_trials(&export.trials, export.sampling_rate_hz, len, a.windows, &export.class_names)?
        }
        other => return Err(usage(format!("unknown layout `{other}`; expected eav or affec"))),
    };
    save_manifest(&ds, &a.out)?;
    println!("wrote {} segments from {} trials to {}", ds.len(), export.trials.len(), a.out.display());
    Ok(())
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    let Some(path) = path else { return Ok(TrainConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| hypermml::Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| hypermml::Error::Schema { path: path.into(), msg: e.to_string() }.into())
}

fn comma_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = read_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(s) = &a.split {
        cfg.split = s.parse::<SplitSpec>()?;
    }
    if let Some(m) = &a.modalities {
        cfg.modalities = comma_list(m).map(str::parse).collect::<hypermml::Result<Vec<Modality>>>()?;
    }
    if let Some(flags) = &a.ablate {
        for f in comma_list(flags) {
            cfg.ablation.set(f)?;
        }
    }
    let data = match (&a.data, &cfg.data) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => return Err(usage("no dataset: pass --data or set `data` in the config")),
    };
    cfg.data = Some(data.display().to_string());
    cfg.validate()?;
    let ds = load_data(&data)?;
    let split = hypermml::trainer::resolve_split(&cfg, &ds)?;
    if !a.quiet {
        eprintln!(
            "training on {} segments ({} held out), {} epochs, seed {}",
            split.train.len(),
            split.test.len(),
            cfg.epochs,
            cfg.seed
        );
    }
    let quiet = a.quiet;
    let ckpt = train_with(&cfg, &ds, &split, |r| {
        if !quiet {
            let eval = r.eval_accuracy.map_or_else(|| "-".to_string(), pct);
            eprintln!(
                "epoch {:>4}  loss {:.4}  train acc {}  eval acc {}",
                r.epoch,
                r.train_loss,
                pct(r.train_accuracy),
                eval
            );
        }
    })?;
    ckpt.save(&a.out)?;
    write_history(a.out.join("history.jsonl"), &ckpt.history)?;
    let last = ckpt.history.last().context("training produced no epochs")?;
    println!(
        "saved checkpoint to {} (train acc {}, eval acc {})",
        a.out.display(),
        pct(last.train_accuracy),
        last.eval_accuracy.map_or_else(|| "-".to_string(), pct)
    );
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<String> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    Ok(text)
}

/// Tables are rendered from the serialized report, never from live metrics.
fn print_eval(json: &str) -> Result<()> {
    let r: EvalReport = serde_json::from_str(json)?;
    print!("{}", subject_table(&r.per_subject));
    println!(
        "overall: acc {}  weighted F1 {}  macro F1 {}  (n = {})",
        pct(r.overall.accuracy),
        pct(r.overall.weighted_f1),
        pct(r.overall.macro_f1),
        r.overall.count
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let ds = load_data(&a.data)?;
    let target: EvalTarget = a.split.parse()?;
    let report = evaluate(&ckpt, &ds, &target)?;
    let out = a.out.unwrap_or_else(|| a.ckpt.join("report.json"));
    let json = write_json(&out, &report)?;
    print_eval(&json)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = read_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let variants: Vec<String> = match &a.variants {
        Some(v) => comma_list(v).map(String::from).collect(),
        None => DEFAULT_VARIANTS.iter().map(|s| s.to_string()).collect(),
    };
    let seeds = comma_list(&a.seeds)
        .map(|s| s.parse::<u64>().map_err(|_| usage(format!("seed `{s}` is not an integer"))))
        .collect::<Result<Vec<_>>>()?;
    let ds = load_data(&a.data)?;
    let report = run_ablation(&cfg, &ds, &variants, &seeds)?;
    let json = write_json(&a.out.join("ablation.json"), &report)?;
    let back: AblationReport = serde_json::from_str(&json)?;
    print!("{}", ablation_table(&back.rows));
    Ok(())
}

enum Loaded {
    Eval(EvalReport),
    Ablation(AblationReport),
}

fn load_report(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| hypermml::Error::Io { path: path.into(), source: e })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| hypermml::Error::Schema { path: path.into(), msg: e.to_string() })?;
    let schema = |e: serde_json::Error| hypermml::Error::Schema { path: path.into(), msg: e.to_string() };
    if value.get("rows").is_some() {
        Ok(Loaded::Ablation(serde_json::from_value(value).map_err(schema)?))
    } else {
        Ok(Loaded::Eval(serde_json::from_value(value).map_err(schema)?))
    }
}

fn report(a: ReportArgs) -> Result<()> {
    let mut evals = Vec::new();
    let mut ablations = Vec::new();
    for run in &a.runs {
        let files: Vec<PathBuf> = if run.is_dir() {
            ["report.json", "ablation.json"].iter().map(|f| run.join(f)).filter(|p| p.exists()).collect()
        } else {
            vec![run.clone()]
        };
        if files.is_empty() {
            return Err(usage(format!("{} holds neither report.json nor ablation.json", run.display())));
        }
        for f in files {
            match load_report(&f)? {
                Loaded::Eval(r) => evals.push(r),
                Loaded::Ablation(r) => ablations.push(r),
            }
        }
    }
    let subjects = merge_subject_rows(&evals);
    if !subjects.is_empty() {
        print!("{}", subject_table(&subjects));
    }
    let ablation_rows: Vec<_> = ablations.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    if !ablation_rows.is_empty() {
        if !subjects.is_empty() {
            println!();
        }
        print!("{}", ablation_table(&ablation_rows));
    }
    if let Some(out) = &a.out {
        write_json(out, &serde_json::json!({ "per_subject": subjects, "ablation": ablation_rows }))?;
    }
    Ok(())
}

fn plot_confusion(a: PlotArgs) -> Result<()> {
    let Loaded::Eval(r) = load_report(&a.report)? else {
        return Err(usage(format!("{} is an ablation report, not an evaluation report", a.report.display())));
    };
    match a.out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("svg") => fs::write(&a.out, hypermml::report::confusion_svg(&r)?)
            .with_context(|| format!("writing {}", a.out.display()))?,
        Some("png") => plot::confusion_png(&r)?.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?,
        _ => return Err(usage(format!("{}: output must end in .svg or .png", a.out.display()))),
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let ds = load_data(&a.data)?;
    let rows = export_embeddings(&ckpt, &ds, &a.split.parse()?)?;
    let mut f =
        std::io::BufWriter::new(fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    for r in &rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    println!("wrote {} embeddings to {}", rows.len(), a.out.display());
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let edges = TrainConfig::default().band_edges;
    let mut f =
        std::io::BufWriter::new(fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    writeln!(f, "subject,dialogue,position,label,channel,band,de,psd")?;
    for s in &ds.segments {
        for bf in band_features(&s.eeg, ds.manifest.sampling_rate_hz, &edges)? {
            for (c, (de, psd)) in bf.de.iter().zip(&bf.psd).enumerate() {
                writeln!(
                    f,
                    "{},{},{},{},{c},{},{de},{psd}",
                    s.subject_id,
                    s.dialogue_id,
                    s.position,
                    s.label.class_index,
                    bf.band.name()
                )?;
            }
        }
    }
    f.flush()?;
    println!("wrote features of {} segments to {}", ds.len(), a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let modules: Vec<&str> = if a.module == "all" { GRADCHECK_MODULES.to_vec() } else { vec![a.module.as_str()] };
    let mut ok = true;
    for m in modules {
        let r = gradient_check(m, a.seed)?;
        for g in &r.groups {
            let mark = if g.relative_error < g.tolerance { "ok" } else { "FAIL" };
            println!("{m:<10} {:<40} {:>6} {:.3e} < {:.0e} {mark}", g.name, g.scalars, g.relative_error, g.tolerance);
        }
        println!("{m}: max relative error {:.3e}", r.max_error());
        ok &= r.passed();
    }
    if ok {
        Ok(ExitCode::SUCCESS)
    } else {
        bail!("gradient check above tolerance")
    }
}
