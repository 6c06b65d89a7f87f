//! Command-line front end for the pointcap pipeline: synthetic scene
//! bundles, hierarchical caption records, offset pseudo-labels, score
//! calibration, and evaluation.
//!
//! Exit codes: 0 on success, 2 when the inputs fail validation (bad files,
//! inconsistent shapes, malformed bundles), 1 on internal errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pointcap::association::{
    associate_scene, associate_view, association_stats, entity_pairs, filter_entity_pairs,
    AssociationStats,
};
use pointcap::calibration::{calibrate, calibrate_proposal, ScoreMatrix};
use pointcap::instance::{
    group_base, group_novel, load_proposals, pseudo_offsets, save_proposals, score_filter,
    shift_points, OffsetField, Proposal, ProposalSet,
};
use pointcap::metrics::{
    harmonic, instance_ap, offset_mae, panoptic_quality, semantic_miou, MetricsReport,
    SemanticSummary,
};
use pointcap::objective::gradient_check;
use pointcap::scene::{
    load_caption_records, load_scene, read_f32_array, read_u32_array, save_caption_records,
    save_scene, write_f32_array, write_u32_array,
};
use pointcap::synth::{gen_scene, SynthSpec};
use pointcap::{CaptionRecord, PipelineConfig, IGNORE_LABEL};

#[derive(Parser)]
#[command(
    name = "pointcap",
    version,
    about = "Point-caption association, pseudo-labels, and open-world evaluation"
)]
struct Cli {
    /// Worker threads for parallel stages; 0 uses one per core. Outputs do
    /// not depend on this setting.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene bundles with withheld ground truth
    Synth(SynthArgs),
    /// Build scene-, view-, and entity-level caption records for a bundle
    Associate(AssociateArgs),
    /// Summarize a caption record file per level
    Stats(StatsArgs),
    /// Group offset-shifted points into proposals and mint offset targets
    PseudoLabel(PseudoLabelArgs),
    /// Blend base and novel probability rows by a per-row novel probability
    Calibrate(CalibrateArgs),
    /// Score predictions in a bundle against its ground truth
    Metrics(MetricsArgs),
    /// Check analytic objective gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory that receives one `scene_NNNN` bundle per scene
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of scenes; scene k uses seed `seed + k`
    #[arg(long, default_value_t = 1)]
    scenes: u64,
    /// Base random seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    points_per_instance: usize,
    #[arg(long, default_value_t = 2)]
    instances_per_class: usize,
    /// Camera ring size
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 128)]
    image_width: usize,
    #[arg(long, default_value_t = 96)]
    image_height: usize,
    /// Sigma of the Gaussian noise applied to the stand-in predicted offsets
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
}

#[derive(Args)]
struct AssociateArgs {
    /// Scene bundle directory (manifest.json plus arrays)
    #[arg(long)]
    bundle: PathBuf,
    /// Output record file; defaults to captions.jsonl inside the bundle
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pipeline configuration JSON; defaults apply to fields left out
    #[arg(long)]
    config: Option<PathBuf>,
    /// Newline-separated multi-word terms to fuse during word extraction
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Pair every view with every other view instead of only consecutive
    /// overlapping views
    #[arg(long)]
    all_pairs: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// Caption record file (JSON lines)
    #[arg(long)]
    captions: PathBuf,
    /// Also write the statistics as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PseudoLabelArgs {
    /// Scene bundle directory
    #[arg(long)]
    bundle: PathBuf,
    /// Predicted per-point offsets (flat xyz f32); defaults to
    /// pred_offsets.f32 inside the bundle
    #[arg(long)]
    offsets: Option<PathBuf>,
    /// Per-point class probability rows (flat row-major f32). Enables
    /// base-class grouping, score filtering, and proposal classification.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Number of leading base classes in the score rows; required with
    /// --scores
    #[arg(long)]
    num_base: Option<usize>,
    /// Pipeline configuration JSON
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the bundle
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Base-classifier probability rows (flat row-major f32)
    #[arg(long)]
    base: PathBuf,
    /// Novel-classifier probability rows, same shape
    #[arg(long)]
    novel: PathBuf,
    /// Per-row probability of belonging to a novel class (f32)
    #[arg(long)]
    prob: PathBuf,
    #[arg(long)]
    num_classes: usize,
    /// Output file for the blended rows (f32)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Task {
    Sem,
    Inst,
    Pq,
    Offsets,
}

#[derive(Args)]
struct MetricsArgs {
    /// Scene bundle directory holding the ground-truth files
    #[arg(long)]
    bundle: PathBuf,
    /// Metric family to compute
    #[arg(long, value_enum)]
    task: Task,
    /// Prediction file. Defaults per task: proposals.jsonl (inst, pq) and
    /// pred_offsets.f32 (offsets) inside the bundle; required for sem.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Number of leading base classes; required for sem and offsets
    #[arg(long)]
    num_base: Option<usize>,
    /// Total classes; defaults to the largest ground-truth label plus one
    #[arg(long)]
    num_classes: Option<usize>,
    /// IoU threshold for instance matching
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Also write the report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: {err}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .chain()
                .any(|cause| cause.downcast_ref::<pointcap::Error>().is_some());
            if validation {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Associate(args) => cmd_associate(args),
        Command::Stats(args) => cmd_stats(args),
        Command::PseudoLabel(args) => cmd_pseudo_label(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// A user-facing input problem, reported with the validation exit code.
fn usage(field: &str, reason: impl Into<String>) -> anyhow::Error {
    pointcap::Error::validation(field, reason).into()
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let config = match path {
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|source| pointcap::Error::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str::<PipelineConfig>(&raw).map_err(|source| {
                pointcap::Error::Json {
                    path: p.to_path_buf(),
                    source,
                }
            })?
        }
        None => PipelineConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn load_lexicon(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|source| pointcap::Error::Io {
                path: p.to_path_buf(),
                source,
            })?;
            Ok(raw
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect())
        }
        None => Ok(Vec::new()),
    }
}

/// Echo the settings that shape a command's outputs, so runs can be compared
/// and reproduced. Thread counts and filesystem paths are deliberately left
/// out: they must never change the bytes a command writes.
fn write_run_echo(dir: &Path, command: &str, extra: serde_json::Value) -> Result<()> {
    let mut value = json!({ "command": command });
    if let (Some(obj), Some(add)) = (value.as_object_mut(), extra.as_object()) {
        for (k, v) in add {
            obj.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join(format!("run_{}.json", command.replace('-', "_")));
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_scores(path: &Path, rows: usize) -> Result<ScoreMatrix> {
    let raw = read_f32_array(path)?;
    if rows == 0 || raw.len() % rows != 0 {
        return Err(usage(
            "scores",
            format!(
                "{} holds {} values, not divisible into {} rows",
                path.display(),
                raw.len(),
                rows
            ),
        ));
    }
    let data: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
    Ok(ScoreMatrix::new(rows, raw.len() / rows, data)?)
}

fn print_stats_table(stats: &AssociationStats) {
    println!(
        "{:<8} {:>8} {:>12} {:>12}",
        "level", "records", "mean words", "mean points"
    );
    for (name, level) in [
        ("scene", &stats.scene),
        ("view", &stats.view),
        ("entity", &stats.entity),
    ] {
        println!(
            "{:<8} {:>8} {:>12.1} {:>12.1}",
            name, level.count, level.mean_caption_words, level.mean_point_count
        );
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let base_spec = SynthSpec {
        seed: args.seed,
        points_per_instance: args.points_per_instance,
        instances_per_class: args.instances_per_class,
        num_frames: args.frames,
        image_width: args.image_width,
        image_height: args.image_height,
        offset_noise_sigma: args.noise_sigma,
        ..SynthSpec::default()
    };
    base_spec.validate()?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    for k in 0..args.scenes {
        let spec = SynthSpec {
            seed: args.seed + k,
            ..base_spec.clone()
        };
        let scene = gen_scene(&spec)?;
        let dir = args.out_dir.join(format!("scene_{k:04}"));
        save_scene(&dir, &scene.cloud, &scene.frames)?;
        write_u32_array(&dir.join("gt_sem.u32"), &scene.gt_sem)?;
        write_f32_array(&dir.join("gt_offsets.f32"), &scene.gt_offsets.to_flat_f32())?;
        write_f32_array(
            &dir.join("pred_offsets.f32"),
            &scene.noisy_offsets.to_flat_f32(),
        )?;
        save_proposals(&scene.gt_instances, &dir.join("gt_instances.jsonl"))?;
        write_f32_array(&dir.join("scores.f32"), &oracle_scores(&scene.gt_sem, &spec))?;
        println!(
            "scene_{k:04}: {} points, {} frames, {} instances",
            scene.num_points(),
            scene.frames.len(),
            scene.gt_instances.len()
        );
    }

    write_run_echo(
        &args.out_dir,
        "synth",
        json!({ "scenes": args.scenes, "spec": base_spec }),
    )?;
    Ok(())
}

/// Stand-in semantic probabilities: 0.9 on the true class, the rest spread
/// uniformly. Rows stay stochastic after the f32 round trip well within the
/// calibration tolerance.
fn oracle_scores(gt_sem: &[u32], spec: &SynthSpec) -> Vec<f32> {
    let classes = spec.num_classes();
    let off = 0.1 / (classes - 1) as f64;
    let mut out = vec![0.0f32; gt_sem.len() * classes];
    for (i, &label) in gt_sem.iter().enumerate() {
        for c in 0..classes {
            out[i * classes + c] = if c as u32 == label { 0.9 } else { off as f32 };
        }
    }
    out
}

// ---------------------------------------------------------------------------
// associate
// ---------------------------------------------------------------------------

fn cmd_associate(args: AssociateArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let lexicon = load_lexicon(args.lexicon.as_deref())?;
    let (cloud, frames) = load_scene(&args.bundle)?;

    let mut records: Vec<CaptionRecord> = Vec::new();
    records.push(associate_scene(&cloud, &frames, &lexicon));
    let views = associate_view(&cloud, &frames, &config);
    let candidates = entity_pairs(cloud.len(), &views, &lexicon, args.all_pairs)?;
    records.extend(filter_entity_pairs(&candidates, &config));
    records.extend(views);

    let out = args
        .out
        .unwrap_or_else(|| args.bundle.join("captions.jsonl"));
    save_caption_records(&records, &out)?;

    let stats = association_stats(&records);
    print_stats_table(&stats);
    println!("wrote {} records to {}", records.len(), out.display());

    let echo_dir = out.parent().unwrap_or(&args.bundle);
    write_run_echo(
        echo_dir,
        "associate",
        json!({ "config": config, "all_pairs": args.all_pairs, "lexicon_terms": lexicon.len() }),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let records = load_caption_records(&args.captions)?;
    let stats = association_stats(&records);
    print_stats_table(&stats);
    if let Some(path) = args.json {
        let mut text = serde_json::to_string_pretty(&stats)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// pseudo-label
// ---------------------------------------------------------------------------

fn cmd_pseudo_label(args: PseudoLabelArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let (cloud, _frames) = load_scene(&args.bundle)?;
    let n = cloud.len();

    let offsets_path = args
        .offsets
        .unwrap_or_else(|| args.bundle.join("pred_offsets.f32"));
    let offsets = OffsetField::from_flat_f32(&read_f32_array(&offsets_path)?)?;
    if offsets.len() != n {
        return Err(usage(
            "offsets",
            format!(
                "{} holds {} offsets for {} points",
                offsets_path.display(),
                offsets.len(),
                n
            ),
        ));
    }
    let shifted = shift_points(cloud.points(), &offsets)?;

    let novel = group_novel(&shifted, cloud.unlabeled_mask(), config.grouping_radius)?;
    let novel_count = novel.len();

    let scores = match &args.scores {
        Some(path) => Some(read_scores(path, n)?),
        None => None,
    };
    let (mut proposals, base_count) = match &scores {
        Some(matrix) => {
            let num_base = args
                .num_base
                .ok_or_else(|| usage("num_base", "--num-base is required with --scores"))?;
            if num_base > matrix.classes() {
                return Err(usage(
                    "num_base",
                    format!("{} exceeds the {} score columns", num_base, matrix.classes()),
                ));
            }
            let base_classes: Vec<usize> = (0..num_base).collect();
            let base = group_base(
                &shifted,
                matrix,
                &base_classes,
                config.tau_soft,
                config.grouping_radius,
            )?;
            let base_count = base.len();
            let mut all = base.into_proposals();
            all.extend(novel.into_proposals());
            (all, base_count)
        }
        None => (novel.into_proposals(), 0),
    };

    let z: Vec<f64> = match &scores {
        Some(matrix) => (0..n)
            .map(|i| matrix.row(i).iter().copied().fold(f64::MIN, f64::max))
            .collect(),
        None => vec![1.0; n],
    };
    let grouped = ProposalSet::new(n, std::mem::take(&mut proposals))?;
    let refined = score_filter(&grouped, &z, config.eta, config.min_proposal_points)?;

    let refined = match &scores {
        Some(matrix) => {
            let classified: Vec<Proposal> = refined
                .proposals()
                .iter()
                .map(|p| {
                    let (class, confidence) = calibrate_proposal(matrix, &p.members)?;
                    Ok(Proposal {
                        members: p.members.clone(),
                        class: Some(class),
                        confidence: Some(confidence),
                    })
                })
                .collect::<Result<_>>()?;
            ProposalSet::new(n, classified)?
        }
        None => refined,
    };

    let labels = pseudo_offsets(cloud.points(), &refined)?;

    let out_dir = args.out_dir.unwrap_or_else(|| args.bundle.clone());
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_f32_array(
        &out_dir.join("pseudo_offsets.f32"),
        &labels.offsets.to_flat_f32(),
    )?;
    let mask: Vec<u32> = labels.mask.iter().map(|&m| u32::from(m)).collect();
    write_u32_array(&out_dir.join("pseudo_mask.u32"), &mask)?;
    save_proposals(&refined, &out_dir.join("proposals.jsonl"))?;

    println!(
        "grouped {} proposals ({} base, {} novel), refined to {}; {} points labeled",
        base_count + novel_count,
        base_count,
        novel_count,
        refined.len(),
        mask.iter().filter(|&&m| m == 1).count()
    );
    write_run_echo(
        &out_dir,
        "pseudo-label",
        json!({ "config": config, "num_base": args.num_base, "with_scores": scores.is_some() }),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let base_raw = read_f32_array(&args.base)?;
    if args.num_classes == 0 || base_raw.len() % args.num_classes != 0 {
        return Err(usage(
            "num_classes",
            format!(
                "{} holds {} values, not divisible into rows of {}",
                args.base.display(),
                base_raw.len(),
                args.num_classes
            ),
        ));
    }
    let rows = base_raw.len() / args.num_classes;
    let base = read_scores(&args.base, rows)?;
    let novel = read_scores(&args.novel, rows)?;
    let prob: Vec<f64> = read_f32_array(&args.prob)?
        .iter()
        .map(|&p| p as f64)
        .collect();

    let blended = calibrate(&base, &novel, &prob)?;
    let flat: Vec<f32> = blended.data().iter().map(|&v| v as f32).collect();
    write_f32_array(&args.out, &flat)?;
    println!(
        "blended {} rows over {} classes to {}",
        rows,
        args.num_classes,
        args.out.display()
    );
    if let Some(dir) = args.out.parent() {
        write_run_echo(dir, "calibrate", json!({ "num_classes": args.num_classes }))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

fn cmd_metrics(args: MetricsArgs) -> Result<()> {
    let (cloud, _frames) = load_scene(&args.bundle)?;
    let n = cloud.len();
    let gt_sem = read_u32_array(&args.bundle.join("gt_sem.u32"))?;
    if gt_sem.len() != n {
        return Err(usage(
            "gt_sem",
            format!("gt_sem.u32 holds {} labels for {} points", gt_sem.len(), n),
        ));
    }
    let num_classes = match args.num_classes {
        Some(c) => c,
        None => gt_sem
            .iter()
            .filter(|&&l| l != IGNORE_LABEL)
            .max()
            .map(|&m| m as usize + 1)
            .unwrap_or(0),
    };

    let mut report = MetricsReport::default();
    match args.task {
        Task::Sem => {
            let pred_path = args
                .pred
                .ok_or_else(|| usage("pred", "--pred is required for the sem task"))?;
            let pred = read_u32_array(&pred_path)?;
            let num_base = args
                .num_base
                .ok_or_else(|| usage("num_base", "--num-base is required for the sem task"))?;
            if num_base > num_classes {
                return Err(usage(
                    "num_base",
                    format!("{num_base} exceeds {num_classes} classes"),
                ));
            }
            let iou = semantic_miou(&pred, &gt_sem, num_classes)?;
            let base_classes: Vec<usize> = (0..num_base).collect();
            let novel_classes: Vec<usize> = (num_base..num_classes).collect();
            let summary = SemanticSummary {
                miou: iou.mean(),
                base_miou: iou.mean_over(&base_classes),
                novel_miou: iou.mean_over(&novel_classes),
                harmonic_miou: harmonic(
                    iou.mean_over(&base_classes),
                    iou.mean_over(&novel_classes),
                ),
            };
            println!(
                "miou {:.4}  base {:.4}  novel {:.4}  harmonic {:.4}",
                summary.miou, summary.base_miou, summary.novel_miou, summary.harmonic_miou
            );
            report.semantic = Some(summary);
        }
        Task::Inst | Task::Pq => {
            let pred_path = args
                .pred
                .unwrap_or_else(|| args.bundle.join("proposals.jsonl"));
            let predictions = load_proposals(&pred_path, n)?;
            let gt = load_proposals(&args.bundle.join("gt_instances.jsonl"), n)?;
            if args.task == Task::Inst {
                let result = instance_ap(&predictions, &gt, args.iou)?;
                println!(
                    "ap {:.4}  ar {:.4}  matched {}/{} with {} predictions at iou {}",
                    result.ap,
                    result.ar,
                    result.matched,
                    result.num_ground_truth,
                    result.num_predictions,
                    args.iou
                );
                report.instance = Some(result);
            } else {
                let result = panoptic_quality(&predictions, &gt)?;
                println!(
                    "pq {:.4}  sq {:.4}  rq {:.4}  ({} matched, {} extra, {} missed)",
                    result.pq,
                    result.sq,
                    result.rq,
                    result.matched,
                    result.unmatched_predictions,
                    result.unmatched_ground_truth
                );
                report.panoptic = Some(result);
            }
        }
        Task::Offsets => {
            let pred_path = args
                .pred
                .unwrap_or_else(|| args.bundle.join("pred_offsets.f32"));
            let predicted = OffsetField::from_flat_f32(&read_f32_array(&pred_path)?)?;
            let target =
                OffsetField::from_flat_f32(&read_f32_array(&args.bundle.join("gt_offsets.f32"))?)?;
            let num_base = args
                .num_base
                .ok_or_else(|| usage("num_base", "--num-base is required for the offsets task"))?;
            if num_base > num_classes {
                return Err(usage(
                    "num_base",
                    format!("{num_base} exceeds {num_classes} classes"),
                ));
            }
            let base_classes: Vec<usize> = (0..num_base).collect();
            let novel_classes: Vec<usize> = (num_base..num_classes).collect();
            let mae = offset_mae(&predicted, &target, &gt_sem, &base_classes, &novel_classes)?;
            println!("offset mae: base {:.6}  novel {:.6}", mae.base, mae.novel);
            report.offsets = Some(mae);
        }
    }

    if let Some(path) = args.json {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let report = gradient_check(args.trials, args.seed);
    println!(
        "checked {} gradient components over {} trials: max relative error {:.3e}",
        report.components, report.trials, report.max_rel_err
    );
    if report.max_rel_err >= args.tolerance {
        bail!(
            "gradient check failed: {:.3e} exceeds tolerance {:.1e}",
            report.max_rel_err,
            args.tolerance
        );
    }
    Ok(())
}
