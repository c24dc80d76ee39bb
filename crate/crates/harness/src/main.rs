use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fovdef_core::checkpoint::Checkpoint;
use fovdef_core::classify::{train_classifier, AnyClassifier};
use fovdef_core::img::Image;
use fovdef_core::recon::{train_reconstructor, ReconModel};
use fovdef_core::saccade::{train_saccade, AgentConfig, SaccadeAgent};

use fovdef_harness::archive::{generate_archive, Archive};
use fovdef_harness::config::RunConfig;
use fovdef_harness::dataset::{ingest_dataset, Dataset};
use fovdef_harness::error::{Error, Result};
use fovdef_harness::evalloop::{evaluate, EvalOptions, EvalReport, ModeSpec};
use fovdef_harness::metrics::write_jsonl;
use fovdef_harness::pipeline::{load_classifier, load_defender};
use fovdef_harness::report::write_report_bundle;
use fovdef_harness::synth::write_png_tree;

#[derive(Parser)]
#[command(
    name = "fovdef",
    version,
    about = "Glimpse-and-reconstruct preprocessing defense: training, attacks, evaluation"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root holding split folders (overrides FOVDEF_DATA_ROOT)
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic shape benchmark as PNG class folders
    SynthData {
        /// Split folder to create under the data root
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, default_value_t = 60)]
        per_class: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a classifier on a split
    TrainClassifier {
        #[arg(long, default_value = "train")]
        split: String,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        /// Metrics JSONL path (defaults next to the checkpoint)
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Train the glimpse reconstructor on a split
    TrainRecon {
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Train the saccade policy against a reconstructor and classifier
    TrainPolicy {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Attack a split with a surrogate classifier into an archive
    AttackGen {
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Archive output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Score defense modes on clean images and attack archives
    Evaluate {
        /// Target classifier checkpoint
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        /// Policy checkpoint, required for the learned mode
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Archive directories, repeatable
        #[arg(long = "archive")]
        archives: Vec<PathBuf>,
        /// Comma-separated defense modes
        #[arg(long, value_delimiter = ',', default_value = "undefended,random")]
        modes: Vec<String>,
        /// Report JSON output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Render CSV, markdown and plots from evaluation reports
    Report {
        /// Report JSON files, repeatable
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code().into());
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let root = cfg.resolve_data_root(cli.data_root.as_deref());
    match cli.cmd {
        Cmd::SynthData {
            split,
            per_class,
            seed,
        } => synth_data(&root, &split, per_class, seed),
        Cmd::TrainClassifier {
            split,
            out,
            metrics,
        } => train_classifier_cmd(&cfg, &root, &split, &out, metrics.as_deref()),
        Cmd::TrainRecon {
            split,
            out,
            metrics,
        } => train_recon_cmd(&cfg, &root, &split, &out, metrics.as_deref()),
        Cmd::TrainPolicy {
            recon,
            classifier,
            split,
            out,
            metrics,
        } => train_policy_cmd(&cfg, &root, &split, &recon, &classifier, &out, metrics.as_deref()),
        Cmd::AttackGen {
            surrogate,
            split,
            out,
        } => attack_gen_cmd(&cfg, &root, &split, &surrogate, &out),
        Cmd::Evaluate {
            target,
            recon,
            policy,
            split,
            archives,
            modes,
            out,
        } => evaluate_cmd(
            &cfg,
            &root,
            &split,
            &target,
            &recon,
            policy.as_deref(),
            &archives,
            &modes,
            &out,
        ),
        Cmd::Report { inputs, out_dir } => report_cmd(&inputs, &out_dir),
    }
}

fn ingest_split(root: &Path, split: &str, cap: Option<usize>) -> Result<Dataset> {
    let dir = root.join(split);
    let (dataset, warnings) = ingest_dataset(&dir, cap)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(dataset)
}

fn tensors(dataset: &Dataset) -> (Vec<Image>, Vec<usize>) {
    let images = dataset.samples.iter().map(|s| s.image.clone()).collect();
    let labels = dataset.samples.iter().map(|s| s.label).collect();
    (images, labels)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    Ok(())
}

fn metrics_path(out: &Path, explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => out.with_extension("metrics.jsonl"),
    }
}

fn synth_data(root: &Path, split: &str, per_class: usize, seed: u64) -> Result<()> {
    let dir = root.join(split);
    let count = write_png_tree(&dir, per_class, seed)?;
    println!("wrote {count} images to {}", dir.display());
    Ok(())
}

fn train_classifier_cmd(
    cfg: &RunConfig,
    root: &Path,
    split: &str,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<()> {
    let dataset = ingest_split(root, split, None)?;
    let (c, h, w) = dataset.dims()?;
    let grid = cfg.grid(h, w)?;
    let spec = cfg.classifier_spec(c, dataset.num_classes())?;
    let mut model = AnyClassifier::build(spec, grid)?;
    let (images, labels) = tensors(&dataset);
    let history = train_classifier(&mut model, &images, &labels, &cfg.classifier_train())?;
    ensure_parent(out)?;
    model.to_checkpoint()?.save(out)?;
    write_jsonl(&metrics_path(out, metrics), &history)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "trained {} epochs, final accuracy {:.1}%, saved {}",
        history.len(),
        100.0 * last.accuracy,
        out.display()
    );
    Ok(())
}

fn train_recon_cmd(
    cfg: &RunConfig,
    root: &Path,
    split: &str,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<()> {
    let dataset = ingest_split(root, split, None)?;
    let (c, h, w) = dataset.dims()?;
    let grid = cfg.grid(h, w)?;
    let mut model = ReconModel::new(cfg.recon_config(c), grid)?;
    let (images, _) = tensors(&dataset);
    let history = train_reconstructor(&mut model, &cfg.sample_config()?, &images, &cfg.recon_train())?;
    ensure_parent(out)?;
    model.to_checkpoint()?.save(out)?;
    write_jsonl(&metrics_path(out, metrics), &history)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "trained {} epochs, final loss {:.4}, final reconstruction similarity {:.4}, saved {}",
        history.len(),
        last.mean_loss,
        last.mean_ssim_final,
        out.display()
    );
    Ok(())
}

fn train_policy_cmd(
    cfg: &RunConfig,
    root: &Path,
    split: &str,
    recon_path: &Path,
    classifier_path: &Path,
    out: &Path,
    metrics: Option<&Path>,
) -> Result<()> {
    let recon_ckpt = Checkpoint::load(recon_path)?;
    let grid = recon_ckpt.grid;
    let recon = ReconModel::from_checkpoint(&recon_ckpt, &grid)?;
    let classifier = AnyClassifier::from_checkpoint(&Checkpoint::load(classifier_path)?, &grid)?;
    let dataset = ingest_split(root, split, None)?;
    let mut agent = SaccadeAgent::new(AgentConfig::for_recon(
        &recon,
        cfg.policy.trunk,
        cfg.policy.seed,
    ))?;
    let (images, labels) = tensors(&dataset);
    let history = train_saccade(
        &mut agent,
        &recon,
        &classifier,
        &images,
        &labels,
        &cfg.sample_config()?,
        &cfg.policy_train(),
    )?;
    ensure_parent(out)?;
    agent.to_checkpoint(grid)?.save(out)?;
    write_jsonl(&metrics_path(out, metrics), &history)?;
    let last = history.last().expect("at least one batch");
    println!(
        "trained {} update batches, final mean return {:.3}, saved {}",
        history.len(),
        last.mean_return,
        out.display()
    );
    Ok(())
}

fn attack_gen_cmd(
    cfg: &RunConfig,
    root: &Path,
    split: &str,
    surrogate_path: &Path,
    out: &Path,
) -> Result<()> {
    let dataset = ingest_split(root, split, cfg.eval.per_class_cap)?;
    let (_, h, w) = dataset.dims()?;
    let grid = cfg.grid(h, w)?;
    let surrogate = load_classifier(surrogate_path, &grid)?;
    let attack = cfg.attack_info()?;
    let archive = generate_archive(&surrogate, &dataset, &attack, out)?;
    let m = &archive.manifest;
    println!(
        "attacked {} images with {} (epsilon {:.4}) via {}, archive at {}",
        m.entries.len(),
        m.attack.kind,
        m.attack.epsilon,
        m.surrogate,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    cfg: &RunConfig,
    root: &Path,
    split: &str,
    target_path: &Path,
    recon_path: &Path,
    policy_path: Option<&Path>,
    archive_dirs: &[PathBuf],
    mode_names: &[String],
    out: &Path,
) -> Result<()> {
    let dataset = ingest_split(root, split, cfg.eval.per_class_cap)?;
    let (_, h, w) = dataset.dims()?;
    let grid = cfg.grid(h, w)?;
    let defender = load_defender(recon_path, policy_path, &grid)?;
    let target = load_classifier(target_path, &grid)?;
    let mut archives = Vec::with_capacity(archive_dirs.len());
    for dir in archive_dirs {
        archives.push(Archive::open(dir)?);
    }
    let mut modes = Vec::with_capacity(mode_names.len());
    for name in mode_names {
        modes.push(ModeSpec {
            name: name.clone(),
            cfg: cfg.defense(cfg.mode_by_name(name)?)?,
        });
    }
    let opts = EvalOptions {
        filter_clean_correct: cfg.eval.filter_clean_correct,
    };
    let report = evaluate(&dataset, &archives, &defender, &modes, &target, &opts)?;
    ensure_parent(out)?;
    report.save(out)?;
    for row in &report.rows {
        println!(
            "{} | {} eps={:.4} | {}: {:.2}% [{:.2}, {:.2}]",
            report.target,
            row.attack,
            row.epsilon,
            row.defense,
            row.accuracy.percent,
            row.accuracy.wilson_low,
            row.accuracy.wilson_high
        );
    }
    println!(
        "evaluated {} images in {:.1}s, report at {}",
        report.sample_count,
        report.runtime_seconds,
        out.display()
    );
    Ok(())
}

fn report_cmd(inputs: &[PathBuf], out_dir: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::config("report needs at least one --input file"));
    }
    let mut reports = Vec::with_capacity(inputs.len());
    for path in inputs {
        reports.push(EvalReport::load(path)?);
    }
    let written = write_report_bundle(&reports, out_dir)?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
