//! The `edgeuda` command line.
//!
//! Exit codes: 0 success, 1 domain or runtime failure, 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::adapt::{evaluate, fit, run_self_training, CheckpointMeta};
use crate::config::{load_config, RunConfig};
use crate::edges::edge_union;
use crate::error::{Error, Result};
use crate::evalkit::{matches_reference_ordering, render_map, run_ablation, MapSource};
use crate::nn::{entropy_map, AblationVariant, ProbMap};
use crate::scenegen::{generate_dataset, Dataset, Split};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
/// Caps the worker pool used for data loading and evaluation.
pub const THREADS_ENV: &str = "EDGEUDA_THREADS";

#[derive(Parser, Debug)]
#[command(name = "edgeuda", version, about = "Edge-concatenated entropy-adversarial domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON run configuration; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set selftrain.lambda_conf=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the source/target toy dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (defaults to paths.data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write Canny edge ground truth for every labelled sample.
    ExtractEdges {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Warmup plus adversarial training; writes metrics and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pseudo-label self-training starting from a checkpoint.
    SelfTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class IoU of a checkpoint on a labelled split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "target-eval")]
        split: Split,
        /// CSV destination (defaults to eval_<split>.csv beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every unified-map variant and tabulate target mIoU.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated subset of entropy_only,fusion,edge_to_each,concat.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<AblationVariant>,
    },
    /// Export a sample and, given a checkpoint, its predictions as PPM.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "target-eval")]
        split: Split,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownKey(_) => EXIT_USAGE,
        _ => EXIT_DOMAIN,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    // A pool configured earlier in the process stays in place.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Messages go to stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("edgeuda: {e}");
            exit_code(&e)
        }
    }
}

fn config(args: &ConfigArgs) -> Result<RunConfig> {
    load_config(args.config.as_deref(), &args.overrides)
}

fn pick(flag: Option<PathBuf>, fallback: &Path) -> PathBuf {
    flag.unwrap_or_else(|| fallback.to_path_buf())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { cfg, out } => {
            let cfg = config(&cfg)?;
            let out = pick(out, &cfg.paths.data_dir);
            let manifest = generate_dataset(&cfg.scene, &cfg.shift, cfg.data, &out)?;
            println!("wrote {} samples to {}", manifest.samples.len(), out.display());
        }
        Command::ExtractEdges { cfg, data } => {
            let cfg = config(&cfg)?;
            let mut ds = Dataset::open(&pick(data, &cfg.paths.data_dir))?;
            let (h, w, c) = (ds.scene().height, ds.scene().width, ds.scene().num_classes);
            let mut jobs = Vec::new();
            for split in [Split::SourceTrain, Split::TargetEval] {
                for entry in ds.entries(split) {
                    jobs.push((entry.id.clone(), ds.load_labels(entry)?));
                }
            }
            for (id, labels) in &jobs {
                let edges = edge_union(labels, h, w, c, &cfg.canny)?;
                ds.attach_edges(id, &edges.data)?;
            }
            ds.save_manifest()?;
            println!("wrote {} edge maps", jobs.len());
        }
        Command::Train { cfg, data, out } => {
            let cfg = config(&cfg)?;
            let ds = Dataset::open(&pick(data, &cfg.paths.data_dir))?;
            let out = pick(out, &cfg.paths.out_dir);
            let report = fit(&cfg, &ds, &out)?;
            println!(
                "trained {} steps: target mIoU init {:.4} final {:.4} best {:.4}",
                report.steps,
                report.init_miou,
                report.final_miou(),
                report.best_miou
            );
        }
        Command::SelfTrain {
            cfg,
            checkpoint,
            data,
            out,
        } => {
            let cfg = config(&cfg)?;
            let ds = Dataset::open(&pick(data, &cfg.paths.data_dir))?;
            let (_, model) = CheckpointMeta::load_model(&checkpoint)?;
            let out = pick(out, &cfg.paths.out_dir);
            let s = run_self_training(&cfg, &ds, model, &out)?;
            println!(
                "self-training coverage {:?}: target mIoU {:.4} -> {:.4}",
                s.report.coverage, s.miou_before, s.miou_after
            );
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => {
            let ds = Dataset::open(&data)?;
            let (_, model) = CheckpointMeta::load_model(&checkpoint)?;
            let set: Vec<_> = ds
                .entries(split)
                .into_iter()
                .map(|e| Ok((ds.load_image(e)?, ds.load_labels(e)?)))
                .collect::<Result<_>>()?;
            if set.is_empty() {
                return Err(Error::Dataset {
                    path: data,
                    msg: format!("split {} is empty", split.name()),
                });
            }
            let report = evaluate(&model, &set)?;
            let mut csv = String::from("class,iou\n");
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "class  iou");
            for (c, iou) in report.per_class.iter().enumerate() {
                let cell = iou.map(|v| v.to_string()).unwrap_or_default();
                let shown = iou.map(|v| format!("{v:.4}")).unwrap_or_else(|| "absent".into());
                let _ = writeln!(stdout, "{c:<6} {shown}");
                csv.push_str(&format!("{c},{cell}\n"));
            }
            let _ = writeln!(stdout, "mIoU   {:.4}", report.miou);
            csv.push_str(&format!("mean,{}\n", report.miou));
            let path = out.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .unwrap_or(Path::new("."))
                    .join(format!("eval_{}.csv", split.name()))
            });
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
        Command::Ablate {
            cfg,
            data,
            out,
            variants,
        } => {
            let cfg = config(&cfg)?;
            let ds = Dataset::open(&pick(data, &cfg.paths.data_dir))?;
            let out = pick(out, &cfg.paths.out_dir);
            let variants = if variants.is_empty() { AblationVariant::ALL.to_vec() } else { variants };
            let rows = run_ablation(&cfg, &variants, &ds, &out)?;
            for r in &rows {
                println!("{:<13} mIoU {:.4}  params {}  {:.1}s", r.variant.name(), r.miou, r.param_count, r.wall_seconds);
            }
            if let Some(agrees) = matches_reference_ordering(&rows) {
                println!("concat > entropy_only > fusion: {}", if agrees { "yes" } else { "no" });
            }
        }
        Command::Render {
            data,
            split,
            index,
            checkpoint,
            out,
        } => render(&data, split, index, checkpoint.as_deref(), &out)?,
    }
    Ok(())
}

fn render(data: &Path, split: Split, index: usize, checkpoint: Option<&Path>, out: &Path) -> Result<()> {
    let ds = Dataset::open(data)?;
    let entries = ds.entries(split);
    let entry = *entries.get(index).ok_or_else(|| Error::Dataset {
        path: data.to_path_buf(),
        msg: format!("split {} has {} samples, index {index} requested", split.name(), entries.len()),
    })?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let scene = ds.scene();
    let (h, w) = (scene.height, scene.width);
    let palette = scene.palette();
    let image = ds.load_image(entry)?;
    let raster: Vec<u8> = (0..h * w)
        .flat_map(|i| (0..3).map(move |c| (c, i)))
        .map(|(c, i)| (image.channel(0, c)[i] * 255.0).round() as u8)
        .collect();
    let path = out.join(format!("{}_image.ppm", entry.id));
    crate::pnm::write(&path, &crate::pnm::encode_ppm(w, h, &raster))?;
    if entry.files.labels.is_some() {
        let labels = ds.load_labels(entry)?;
        let src = MapSource::Labels {
            labels: &labels,
            height: h,
            width: w,
            palette: &palette,
        };
        render_map(&src, &out.join(format!("{}_labels.ppm", entry.id)))?;
    }
    if let Some(ckpt) = checkpoint {
        let (_, model) = CheckpointMeta::load_model(ckpt)?;
        let pred = model.predict(&image)?;
        let labels = pred.labels();
        let src = MapSource::Labels {
            labels: &labels,
            height: h,
            width: w,
            palette: &palette,
        };
        render_map(&src, &out.join(format!("{}_pred.ppm", entry.id)))?;
        let probs = ProbMap::new(pred.ref_prob.clone())?;
        render_map(&MapSource::Entropy(&entropy_map(&probs)), &out.join(format!("{}_entropy.ppm", entry.id)))?;
        let edge = crate::evalkit::render_heat(pred.edge_prob.data(), h, w)?;
        crate::pnm::write(&out.join(format!("{}_edge_prob.ppm", entry.id)), &edge)?;
    }
    println!("rendered {} into {}", entry.id, out.display());
    Ok(())
}
