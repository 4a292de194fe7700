//! `sgrisk`: generate clips, build scene graphs, train and evaluate the
//! risk model, run ablations and transfer tests, and export attention.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid configuration or
//! arguments, 3 malformed input line, 4 training aborted, 5 vocabulary
//! mismatch, 6 unknown clip id.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sgrisk_core::model::{Checkpoint, ModelConfig, PoolKind, TemporalMode};
use sgrisk_core::pipeline::{
    ablation_csv, ablation_sweep, build_graph_records, cross_validate, evaluate, explain_clip,
    load_graph_records, prepare_records, stratified_split, train, transfer_evaluate,
    AblationAxes, EvalReport, GnnAxis, TransferReport,
};
use sgrisk_core::scenegen::{generate_dataset, write_dataset, DomainShift, ScenarioSpec};
use sgrisk_core::scenegraph::{
    detections_to_clips, read_clips, read_detections, read_homography, write_graph_records,
    GraphRecord, RiskLabel,
};
use sgrisk_core::Error;

use config::RunConfigFile;

#[derive(Parser)]
#[command(name = "sgrisk", version, about = "Scene-graph risk assessment for lane-change clips")]
struct Cli {
    /// Seed for generation and training; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// JSON run configuration with optional sections generator, graph, model, train.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic clip dataset.
    Gen(GenArgs),
    /// Convert clips (or detections plus a homography) to graph sequences.
    BuildGraphs(BuildArgs),
    /// Train on one stratified split and save the selected checkpoint.
    Train(TrainArgs),
    /// Repeated stratified splits; per-split and mean metrics.
    Xval(XvalArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Cross-validate every cell of an ablation grid.
    Ablate(AblateArgs),
    /// Compare in-domain and shifted-domain accuracy without retraining.
    Transfer(TransferArgs),
    /// Export node and frame attention for one clip.
    Explain(ExplainArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of clips.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    risky_fraction: Option<f64>,
    /// ScenarioSpec JSON replacing the config file's generator section.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Apply the dense-traffic domain shift.
    #[arg(long)]
    shifted: bool,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Treat the input as per-frame detections projected with this homography.
    #[arg(long)]
    homography: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    splits: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Train on every clip instead of holding out a test side.
    #[arg(long)]
    full: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct XvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated spatial settings: none, 1, 2, 3.
    #[arg(long, value_delimiter = ',')]
    gnn: Vec<String>,
    /// Comma-separated pooling variants: none, topk, sagpool.
    #[arg(long, value_delimiter = ',')]
    pooling: Vec<String>,
    /// Comma-separated temporal modes: mean, lstm_last, lstm_attn.
    #[arg(long, value_delimiter = ',')]
    temporal: Vec<String>,
    /// Sweep around the config file's model instead of the 64-unit
    /// single-layer reference.
    #[arg(long)]
    from_config: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TransferArgs {
    /// Trained checkpoint. Without it a model is trained on one split of
    /// --data and the in-domain score comes from that split's test side.
    #[arg(long = "from")]
    checkpoint: Option<PathBuf>,
    /// In-domain dataset.
    #[arg(long)]
    data: PathBuf,
    /// Shifted-domain dataset.
    #[arg(long)]
    on: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    clip_id: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write a flat per-node table.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug)]
struct UnknownClip(String);

impl std::fmt::Display for UnknownClip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no clip with id `{}` in the dataset", self.0)
    }
}

impl std::error::Error for UnknownClip {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UnknownClip>().is_some() {
        return 6;
    }
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Config(_) | Error::Usage(_)) => 2,
        Some(Error::Parse { .. }) => 3,
        Some(Error::Training(_)) => 4,
        Some(Error::Vocabulary(_) | Error::Transfer(_)) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SGRISK_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .context("starting worker threads")?;
    let base = match &cli.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    }
    .with_seed(cli.seed);
    match cli.command {
        Command::Gen(a) => cmd_gen(base, cli.seed, a),
        Command::BuildGraphs(a) => cmd_build_graphs(base, a),
        Command::Train(a) => cmd_train(base, a),
        Command::Xval(a) => cmd_xval(base, a),
        Command::Eval(a) => cmd_eval(base, a),
        Command::Ablate(a) => cmd_ablate(base, a),
        Command::Transfer(a) => cmd_transfer(base, a),
        Command::Explain(a) => cmd_explain(base, a),
    }
}

fn apply(cfg: &mut RunConfigFile, o: &Overrides) -> Result<()> {
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = o.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(s) = o.splits {
        cfg.train.n_splits = s;
    }
    cfg.validate()?;
    Ok(())
}

/// `<stem>.<suffix>` beside a single output file.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn auc_text(auc: Option<f64>) -> String {
    auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "undefined".into())
}

fn cmd_gen(mut cfg: RunConfigFile, seed: Option<u64>, a: GenArgs) -> Result<()> {
    if let Some(p) = &a.spec {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        cfg.generator = serde_json::from_str::<ScenarioSpec>(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        if let Some(s) = seed {
            cfg.generator.seed = s;
        }
    }
    if let Some(n) = a.n {
        cfg.generator.n_clips = n;
    }
    if let Some(f) = a.risky_fraction {
        cfg.generator.risky_fraction = f;
    }
    if a.shifted {
        cfg.generator.domain_shift = Some(DomainShift::DenseTraffic);
    }
    cfg.generator.validate()?;
    let (clips, manifest) = generate_dataset(&cfg.generator)?;
    write_dataset(&a.out, &clips, &manifest)?;
    cfg.snapshot(&sibling(&a.out, "config.json"))?;
    println!(
        "generated {} clips ({} risky, fraction {:.4}) -> {}",
        manifest.n_clips,
        manifest.n_risky,
        manifest.risky_fraction,
        a.out.display()
    );
    Ok(())
}

fn cmd_build_graphs(cfg: RunConfigFile, a: BuildArgs) -> Result<()> {
    cfg.graph.validate()?;
    let clips = match &a.homography {
        Some(h) => detections_to_clips(&read_detections(&a.input)?, &read_homography(h)?)?,
        None => read_clips(&a.input)?,
    };
    let records = build_graph_records(&clips, &cfg.graph)?;
    write_graph_records(&a.out, &records)?;
    cfg.snapshot(&sibling(&a.out, "config.json"))?;
    println!("built graphs for {} clips -> {}", records.len(), a.out.display());
    Ok(())
}

fn load(cfg: &RunConfigFile, path: &Path) -> Result<Vec<GraphRecord>> {
    load_graph_records(path, &cfg.graph).with_context(|| format!("loading {}", path.display()))
}

fn write_log(path: &Path, log: &[sgrisk_core::pipeline::EpochLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("writing {}", path.display()))?);
    for l in log {
        serde_json::to_writer(&mut f, l)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn cmd_train(mut cfg: RunConfigFile, a: TrainArgs) -> Result<()> {
    apply(&mut cfg, &a.overrides)?;
    let records = load(&cfg, &a.data)?;
    let data = prepare_records(&records, &cfg.model.vocab)?;
    let labels: Vec<RiskLabel> = records.iter().map(|r| r.label).collect();
    let seed = cfg.train.seed;
    let (train_idx, test_idx) = if a.full {
        ((0..data.len()).collect(), Vec::new())
    } else {
        let s = stratified_split(&labels, cfg.train.split_ratio, seed)?;
        (s.train, s.test)
    };
    ensure_dir(&a.out_dir)?;
    cfg.snapshot(&a.out_dir.join("config.json"))?;
    let outcome = train(&cfg.model, &cfg.train, &data, &train_idx, seed)?;
    Checkpoint::from_model(&outcome.model, outcome.meta.clone()).save(&a.out_dir.join("checkpoint.json"))?;
    write_log(&a.out_dir.join("train_log.jsonl"), &outcome.log)?;
    println!(
        "trained {} clips, selected epoch {} (selection loss {:.5})",
        train_idx.len(),
        outcome.meta.epoch,
        outcome.meta.val_loss.unwrap_or(f64::NAN)
    );
    if !test_idx.is_empty() {
        let ev = evaluate(&outcome.model, &data, &test_idx)?;
        write_json(&a.out_dir.join("metrics.json"), &ev)?;
        println!("test accuracy {:.4}, AUC {} on {} clips", ev.accuracy, auc_text(ev.auc), ev.n);
    }
    Ok(())
}

fn cmd_xval(mut cfg: RunConfigFile, a: XvalArgs) -> Result<()> {
    apply(&mut cfg, &a.overrides)?;
    let records = load(&cfg, &a.data)?;
    let data = prepare_records(&records, &cfg.model.vocab)?;
    ensure_dir(&a.out_dir)?;
    cfg.snapshot(&a.out_dir.join("config.json"))?;
    let cv = cross_validate(&cfg.model, &cfg.train, &data)?;
    fs::write(a.out_dir.join("metrics.csv"), cv.report.to_csv())?;
    write_json(&a.out_dir.join("metrics.json"), &cv.report)?;
    println!(
        "{} splits: accuracy {:.4} ± {:.4}, AUC {}",
        cv.report.splits.len(),
        cv.report.mean_accuracy,
        cv.report.std_accuracy,
        auc_text(cv.report.mean_auc)
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, sgrisk_core::RiskModel)> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = ck.to_model::<f64>()?;
    Ok((ck, model))
}

fn cmd_eval(cfg: RunConfigFile, a: EvalArgs) -> Result<()> {
    cfg.graph.validate()?;
    let (_, model) = load_checkpoint(&a.checkpoint)?;
    let records = load(&cfg, &a.data)?;
    let data = prepare_records(&records, &model.config().vocab)?;
    let ev: EvalReport = evaluate(&model, &data, &(0..data.len()).collect::<Vec<_>>())?;
    if let Some(out) = &a.out {
        write_json(out, &ev)?;
        cfg.snapshot(&sibling(out, "config.json"))?;
    }
    println!("accuracy {:.4}, AUC {} on {} clips", ev.accuracy, auc_text(ev.auc), ev.n);
    Ok(())
}

fn parse_axis<T: serde::de::DeserializeOwned>(name: &str, values: &[String]) -> Result<Vec<T>> {
    values
        .iter()
        .map(|v| {
            serde_json::from_value(serde_json::Value::String(v.trim().to_string()))
                .map_err(|_| Error::Config(format!("invalid {name} axis value `{v}`")).into())
        })
        .collect()
}

fn cmd_ablate(mut cfg: RunConfigFile, a: AblateArgs) -> Result<()> {
    apply(&mut cfg, &a.overrides)?;
    let mut axes = AblationAxes {
        gnn: parse_axis::<GnnAxis>("gnn", &a.gnn)?,
        pooling: parse_axis::<PoolKind>("pooling", &a.pooling)?,
        temporal: parse_axis::<TemporalMode>("temporal", &a.temporal)?,
    };
    if axes == AblationAxes::default() {
        axes.gnn = vec![GnnAxis::None, GnnAxis::Layers(1)];
        axes.temporal = vec![TemporalMode::Mean, TemporalMode::LstmLast];
    }
    let base = if a.from_config { cfg.model.clone() } else { ModelConfig::ablation_base() };
    cfg.model = base.clone();
    let records = load(&cfg, &a.data)?;
    let data = prepare_records(&records, &base.vocab)?;
    ensure_dir(&a.out_dir)?;
    cfg.snapshot(&a.out_dir.join("config.json"))?;
    let rows = ablation_sweep(&base, &cfg.train, &data, &axes)?;
    fs::write(a.out_dir.join("ablation.csv"), ablation_csv(&rows))?;
    write_json(&a.out_dir.join("ablation.json"), &rows)?;
    for r in &rows {
        println!(
            "{:<28} accuracy {:.4} ± {:.4}, AUC {}",
            r.label,
            r.report.mean_accuracy,
            r.report.std_accuracy,
            auc_text(r.report.mean_auc)
        );
    }
    Ok(())
}

fn cmd_transfer(mut cfg: RunConfigFile, a: TransferArgs) -> Result<()> {
    apply(&mut cfg, &a.overrides)?;
    let in_domain = load(&cfg, &a.data)?;
    let shifted = load(&cfg, &a.on)?;
    ensure_dir(&a.out_dir)?;
    let (model, held_out) = match &a.checkpoint {
        Some(p) => {
            let (ck, model) = load_checkpoint(p)?;
            cfg.model = ck.architecture;
            (model, in_domain)
        }
        None => {
            let data = prepare_records(&in_domain, &cfg.model.vocab)?;
            let labels: Vec<RiskLabel> = in_domain.iter().map(|r| r.label).collect();
            let split = stratified_split(&labels, cfg.train.split_ratio, cfg.train.seed)?;
            let outcome = train(&cfg.model, &cfg.train, &data, &split.train, cfg.train.seed)?;
            Checkpoint::from_model(&outcome.model, outcome.meta.clone()).save(&a.out_dir.join("checkpoint.json"))?;
            let test = split.test.iter().map(|&i| in_domain[i].clone()).collect();
            (outcome.model, test)
        }
    };
    cfg.snapshot(&a.out_dir.join("config.json"))?;
    let report: TransferReport = transfer_evaluate(&model, &held_out, &shifted)?;
    write_json(&a.out_dir.join("transfer.json"), &report)?;
    println!("in-domain accuracy {:.4} ({} clips)", report.in_domain.accuracy, report.in_domain.n);
    println!("shifted accuracy   {:.4} ({} clips)", report.shifted.accuracy, report.shifted.n);
    println!("accuracy drop      {:.4}", report.accuracy_drop);
    Ok(())
}

fn cmd_explain(cfg: RunConfigFile, a: ExplainArgs) -> Result<()> {
    cfg.graph.validate()?;
    let (_, model) = load_checkpoint(&a.checkpoint)?;
    let records = load(&cfg, &a.dataset)?;
    let rec = records
        .iter()
        .find(|r| r.clip_id == a.clip_id)
        .ok_or_else(|| UnknownClip(a.clip_id.clone()))?;
    let clip = prepare_records(std::slice::from_ref(rec), &model.config().vocab)?
        .pop()
        .expect("one record");
    let export = explain_clip(&model, &clip)?;
    write_json(&a.out, &export)?;
    if let Some(csv) = &a.csv {
        fs::write(csv, export.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    cfg.snapshot(&sibling(&a.out, "config.json"))?;
    println!(
        "clip {}: P(risky) {:.4}, true label {:?}, {} frames",
        export.clip_id,
        export.predicted[1],
        rec.label,
        export.frames.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: Error| exit_code(&anyhow::Error::new(e).context("while running"));
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::Parse { line: 4, msg: "x".into() }), 3);
        assert_eq!(code(Error::Training("nan".into())), 4);
        assert_eq!(code(Error::Vocabulary("bus".into())), 5);
        assert_eq!(code(Error::Transfer("x".into())), 5);
        assert_eq!(code(Error::Geometry("x".into())), 1);
        assert_eq!(exit_code(&anyhow::Error::new(UnknownClip("c".into()))), 6);
    }
}
