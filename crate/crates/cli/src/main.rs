//! Command-line runner: generate synthetic data, distill a student from a
//! cached teacher, evaluate embeddings, and sweep single knobs.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 constraint violation.

mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use simdistill_core::data::{
    generate, read_embeddings, read_labels, write_embeddings, write_labels, Dataset, SyntheticSpec,
};
use simdistill_core::distill::{
    embed_normalized, run, write_train_csv, DistillConfig, Method, RunOutput,
};
use simdistill_core::embedding::EmbeddingBatch;
use simdistill_core::eval::{
    cluster_alignment_accuracy, knn_classify, linear_probe, write_metrics_csv, ProbeConfig,
};
use simdistill_core::model::{load_checkpoint, save_checkpoint};

use config::FileConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }

    fn io(msg: impl Into<String>) -> Self {
        Self {
            code: 3,
            msg: msg.into(),
        }
    }
}

impl From<simdistill_core::Error> for CliError {
    fn from(e: simdistill_core::Error) -> Self {
        use simdistill_core::Error as E;
        let code = match &e {
            E::Io(_) | E::BadMagic { .. } | E::TruncatedFile | E::SizeMismatch => 3,
            E::InvalidSpec(_) => 2,
            _ => 4,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "simdistill",
    version,
    about = "Compress a frozen teacher embedding into a small student by matching similarity distributions over anchor queues"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic task and write train/val raw, label, and
    /// teacher-cache files
    GenData(GenDataArgs),
    /// Train a student against the cached teacher and write a checkpoint
    /// plus per-epoch metrics
    Distill(DistillArgs),
    /// Evaluate checkpointed student embeddings (or the raw teacher cache)
    Eval(EvalArgs),
    /// Re-run distillation across a list of values for one knob
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for the six data files
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value settings file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    val_count: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    raw_dim: Option<usize>,
    #[arg(long)]
    teacher_dim: Option<usize>,
    #[arg(long)]
    class_spread: Option<f64>,
    #[arg(long)]
    sample_noise: Option<f64>,
    #[arg(long)]
    teacher_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainFlags {
    /// Directory holding the gen-data outputs
    #[arg(long)]
    data: PathBuf,
    /// Flat key = value settings file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// ours-1q | ours-2q | reg | reg-bn | cc
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    /// Anchor queue capacity
    #[arg(long)]
    bank: Option<usize>,
    /// Key-encoder EMA momentum
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    sgd_momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Comma-separated epoch indices where the learning rate drops
    #[arg(long)]
    milestones: Option<String>,
    #[arg(long)]
    lr_factor: Option<f64>,
    /// Std of the additive input augmentation (default: derived from data)
    #[arg(long)]
    aug_sigma: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    student_dim: Option<usize>,
    /// Pseudo-class count for the cc baseline
    #[arg(long)]
    cc_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory for checkpoint.ckpt and train_metrics.csv
    #[arg(long)]
    out: PathBuf,
    /// Skip the per-epoch NN evaluation column
    #[arg(long)]
    no_epoch_eval: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory holding the gen-data outputs
    #[arg(long)]
    data: PathBuf,
    /// Student checkpoint to embed with (not needed with --use-teacher)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory for eval_metrics.csv
    #[arg(long)]
    out: PathBuf,
    /// nn | ca | linear | all
    #[arg(long)]
    metric: Option<String>,
    /// Evaluate the cached teacher embeddings instead of a student
    #[arg(long)]
    use_teacher: bool,
    /// Flat key = value settings file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    train: TrainFlags,
    /// Output directory for ablation.csv
    #[arg(long)]
    out: PathBuf,
    /// temperature | bank | momentum
    #[arg(long)]
    axis: String,
    /// Comma-separated values to sweep (defaults depend on the axis)
    #[arg(long)]
    values: Option<String>,
    /// Run the sweep values on worker threads (same outputs, value order)
    #[arg(long)]
    parallel: bool,
}

const TRAIN_RAW: &str = "train_raw.emb";
const TRAIN_LABELS: &str = "train_labels.lbl";
const TRAIN_TEACHER: &str = "train_teacher.emb";
const VAL_RAW: &str = "val_raw.emb";
const VAL_LABELS: &str = "val_labels.lbl";
const VAL_TEACHER: &str = "val_teacher.emb";

const GEN_KEYS: &[&str] = &[
    "classes",
    "train_count",
    "val_count",
    "latent_dim",
    "raw_dim",
    "teacher_dim",
    "class_spread",
    "sample_noise",
    "teacher_noise",
    "seed",
];

const TRAIN_KEYS: &[&str] = &[
    "method",
    "tau",
    "bank",
    "momentum",
    "epochs",
    "batch",
    "lr",
    "sgd_momentum",
    "weight_decay",
    "milestones",
    "lr_factor",
    "aug_sigma",
    "hidden_dim",
    "student_dim",
    "cc_k",
    "seed",
];

const EVAL_KEYS: &[&str] = &["metric", "seed"];

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Distill(args) => cmd_distill(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.msg);
            std::process::exit(e.code);
        }
    }
}

fn load_file_config(path: &Option<PathBuf>, allowed: &[&str]) -> Result<FileConfig, CliError> {
    match path {
        Some(p) => FileConfig::load(p, allowed),
        None => Ok(FileConfig::empty()),
    }
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    if out.exists() {
        return Ok(());
    }
    std::fs::create_dir(out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let cfg = load_file_config(&args.config, GEN_KEYS)?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        num_classes: cfg.pick(args.classes, "classes", d.num_classes)?,
        train_count: cfg.pick(args.train_count, "train_count", d.train_count)?,
        val_count: cfg.pick(args.val_count, "val_count", d.val_count)?,
        latent_dim: cfg.pick(args.latent_dim, "latent_dim", d.latent_dim)?,
        raw_dim: cfg.pick(args.raw_dim, "raw_dim", d.raw_dim)?,
        teacher_dim: cfg.pick(args.teacher_dim, "teacher_dim", d.teacher_dim)?,
        class_spread: cfg.pick(args.class_spread, "class_spread", d.class_spread)?,
        sample_noise: cfg.pick(args.sample_noise, "sample_noise", d.sample_noise)?,
        teacher_noise: cfg.pick(args.teacher_noise, "teacher_noise", d.teacher_noise)?,
        seed: cfg.pick(args.seed, "seed", d.seed)?,
    };
    let (train, val) = generate(&spec)?;
    ensure_out_dir(&args.out)?;

    write_embeddings(
        &args.out.join(TRAIN_RAW),
        &EmbeddingBatch::new(train.raw.clone())?,
    )?;
    write_labels(&args.out.join(TRAIN_LABELS), &train.labels)?;
    write_embeddings(&args.out.join(TRAIN_TEACHER), &train.teacher_cache)?;
    write_embeddings(
        &args.out.join(VAL_RAW),
        &EmbeddingBatch::new(val.raw.clone())?,
    )?;
    write_labels(&args.out.join(VAL_LABELS), &val.labels)?;
    write_embeddings(&args.out.join(VAL_TEACHER), &val.teacher_cache)?;

    let (_, teacher_nn) = knn_classify(
        &train.teacher_cache,
        &train.labels,
        &val.teacher_cache,
        &val.labels,
        1,
    )?;
    println!("teacher nn_acc {teacher_nn}");
    Ok(())
}

fn load_split(dir: &Path, raw: &str, labels: &str, teacher: &str) -> Result<Dataset, CliError> {
    let raw = read_embeddings(&dir.join(raw))?;
    let labels = read_labels(&dir.join(labels))?;
    let teacher_cache = read_embeddings(&dir.join(teacher))?;
    if raw.rows() != labels.len() || raw.rows() != teacher_cache.rows() {
        return Err(CliError {
            code: 4,
            msg: format!(
                "misaligned split: {} raw rows, {} labels, {} teacher rows",
                raw.rows(),
                labels.len(),
                teacher_cache.rows()
            ),
        });
    }
    if !teacher_cache.is_normalized() {
        return Err(CliError {
            code: 4,
            msg: "teacher cache file is not marked normalized".into(),
        });
    }
    Ok(Dataset {
        raw: raw.into_inner(),
        labels,
        teacher_cache,
    })
}

fn load_datasets(dir: &Path) -> Result<(Dataset, Dataset), CliError> {
    let train = load_split(dir, TRAIN_RAW, TRAIN_LABELS, TRAIN_TEACHER)?;
    let val = load_split(dir, VAL_RAW, VAL_LABELS, VAL_TEACHER)?;
    Ok((train, val))
}

fn parse_milestones(s: &str) -> Result<Vec<usize>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| CliError::usage(format!("bad milestone '{tok}'")))
        })
        .collect()
}

fn build_distill_config(flags: &TrainFlags) -> Result<DistillConfig, CliError> {
    let cfg = load_file_config(&flags.config, TRAIN_KEYS)?;
    let d = DistillConfig::default();
    let method_str = cfg.pick(
        flags.method.clone(),
        "method",
        d.method.as_str().to_string(),
    )?;
    let method = Method::parse(&method_str).map_err(|e| CliError::usage(e.to_string()))?;
    let milestones = match cfg.pick(flags.milestones.clone(), "milestones", String::new())? {
        s if s.is_empty() => d.milestones.clone(),
        s => parse_milestones(&s)?,
    };
    Ok(DistillConfig {
        method,
        tau: cfg.pick(flags.tau, "tau", d.tau)?,
        bank_capacity: cfg.pick(flags.bank, "bank", d.bank_capacity)?,
        momentum_m: cfg.pick(flags.momentum, "momentum", d.momentum_m)?,
        epochs: cfg.pick(flags.epochs, "epochs", d.epochs)?,
        batch_size: cfg.pick(flags.batch, "batch", d.batch_size)?,
        seed: cfg.pick(flags.seed, "seed", d.seed)?,
        cc_k: cfg.pick(flags.cc_k, "cc_k", d.cc_k)?,
        lr: cfg.pick(flags.lr, "lr", d.lr)?,
        sgd_momentum: cfg.pick(flags.sgd_momentum, "sgd_momentum", d.sgd_momentum)?,
        weight_decay: cfg.pick(flags.weight_decay, "weight_decay", d.weight_decay)?,
        milestones,
        lr_factor: cfg.pick(flags.lr_factor, "lr_factor", d.lr_factor)?,
        aug_sigma: match flags.aug_sigma {
            Some(v) => Some(v),
            None => cfg.get::<f64>("aug_sigma")?,
        },
        hidden_dim: cfg.pick(flags.hidden_dim, "hidden_dim", d.hidden_dim)?,
        student_dim: cfg.pick(flags.student_dim, "student_dim", d.student_dim)?,
    })
}

fn cmd_distill(args: DistillArgs) -> Result<(), CliError> {
    let config = build_distill_config(&args.train)?;
    let (train, val) = load_datasets(&args.train.data)?;
    ensure_out_dir(&args.out)?;
    let out: RunOutput = run(&train, &val, &config, !args.no_epoch_eval)?;
    save_checkpoint(&out.net, &args.out.join("checkpoint.ckpt"))?;
    write_train_csv(&args.out.join("train_metrics.csv"), &out.records)?;
    println!("final nn_acc {}", out.nn_acc);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = load_file_config(&args.config, EVAL_KEYS)?;
    let metric = cfg.pick(args.metric.clone(), "metric", "all".to_string())?;
    if !["nn", "ca", "linear", "all"].contains(&metric.as_str()) {
        return Err(CliError::usage(format!(
            "metric must be nn, ca, linear, or all, got '{metric}'"
        )));
    }
    let seed = cfg.pick(args.seed, "seed", 0u64)?;
    let (train, val) = load_datasets(&args.data)?;

    let (train_emb, val_emb) = if args.use_teacher {
        (train.teacher_cache.clone(), val.teacher_cache.clone())
    } else {
        let path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::usage("either --checkpoint or --use-teacher is required"))?;
        let net = load_checkpoint(path)?;
        (
            embed_normalized(&net, train.raw.view())?,
            embed_normalized(&net, val.raw.view())?,
        )
    };

    let num_classes = train
        .labels
        .iter()
        .chain(&val.labels)
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(1);

    let mut rows: Vec<(&str, f64)> = Vec::new();
    if metric == "nn" || metric == "all" {
        let (_, acc) = knn_classify(&train_emb, &train.labels, &val_emb, &val.labels, 1)?;
        rows.push(("nn", acc));
    }
    if metric == "ca" || metric == "all" {
        let acc = cluster_alignment_accuracy(
            &train_emb,
            &train.labels,
            &val_emb,
            &val.labels,
            num_classes,
            seed,
        )?;
        rows.push(("ca", acc));
    }
    if metric == "linear" || metric == "all" {
        let probe = ProbeConfig {
            seed,
            ..ProbeConfig::default()
        };
        let acc = linear_probe(&train_emb, &train.labels, &val_emb, &val.labels, &probe)?;
        rows.push(("linear", acc));
    }

    ensure_out_dir(&args.out)?;
    write_metrics_csv(&args.out.join("eval_metrics.csv"), &rows)?;
    for (name, value) in &rows {
        println!("{name} {value}");
    }
    Ok(())
}

enum SweepAxis {
    Temperature,
    Bank,
    Momentum,
}

fn cmd_ablate(args: AblateArgs) -> Result<(), CliError> {
    let axis = match args.axis.as_str() {
        "temperature" => SweepAxis::Temperature,
        "bank" => SweepAxis::Bank,
        "momentum" => SweepAxis::Momentum,
        other => {
            return Err(CliError::usage(format!(
                "axis must be temperature, bank, or momentum, got '{other}'"
            )))
        }
    };
    let base = build_distill_config(&args.train)?;

    // each sweep value yields one config; the echoed string names the row
    let mut sweep: Vec<(String, DistillConfig)> = Vec::new();
    match axis {
        SweepAxis::Temperature | SweepAxis::Momentum => {
            let defaults: &[f64] = match axis {
                SweepAxis::Temperature => &[0.02, 0.04, 0.1, 0.5, 1.0],
                _ => &[0.0, 0.5, 0.999],
            };
            let values = parse_values(args.values.as_deref(), defaults)?;
            for v in values {
                let mut c = base.clone();
                match axis {
                    SweepAxis::Temperature => c.tau = v,
                    _ => c.momentum_m = v,
                }
                sweep.push((format!("{v}"), c));
            }
        }
        SweepAxis::Bank => {
            let values = parse_values(args.values.as_deref(), &[64.0, 256.0, 1024.0, 4096.0])?;
            for v in values {
                if v <= 0.0 || v.fract() != 0.0 {
                    return Err(CliError::usage(format!("bad bank size '{v}'")));
                }
                let mut c = base.clone();
                c.bank_capacity = v as usize;
                sweep.push((format!("{}", v as usize), c));
            }
        }
    }

    let (train, val) = load_datasets(&args.train.data)?;
    let mut results: Vec<(String, f64)> = Vec::with_capacity(sweep.len());
    if args.parallel {
        let outcomes: Vec<Result<f64, simdistill_core::Error>> = std::thread::scope(|scope| {
            let handles: Vec<_> = sweep
                .iter()
                .map(|(_, config)| {
                    let train = &train;
                    let val = &val;
                    scope.spawn(move || run(train, val, config, false).map(|o| o.nn_acc))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for ((value, _), outcome) in sweep.iter().zip(outcomes) {
            results.push((value.clone(), outcome?));
        }
    } else {
        for (value, config) in &sweep {
            let out = run(&train, &val, config, false)?;
            results.push((value.clone(), out.nn_acc));
        }
    }

    ensure_out_dir(&args.out)?;
    let mut csv = String::from("value,nn_acc\n");
    for (value, acc) in &results {
        csv.push_str(&format!("{value},{acc}\n"));
        println!("{value} {acc}");
    }
    std::fs::write(args.out.join("ablation.csv"), csv)
        .map_err(|e| CliError::io(format!("cannot write ablation.csv: {e}")))?;
    Ok(())
}

fn parse_values(raw: Option<&str>, defaults: &[f64]) -> Result<Vec<f64>, CliError> {
    match raw {
        None => Ok(defaults.to_vec()),
        Some(s) => {
            let parsed: Result<Vec<f64>, CliError> = s
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::usage(format!("bad sweep value '{tok}'")))
                })
                .collect();
            let parsed = parsed?;
            if parsed.is_empty() {
                return Err(CliError::usage("empty sweep value list"));
            }
            Ok(parsed)
        }
    }
}
