use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ulfine::checkpoint;
use ulfine::config::ExperimentConfig;
use ulfine::data::{self, EmbeddingSet};
use ulfine::error::{Error, Result};
use ulfine::metrics::{self, RunReport};
use ulfine::trainer::{self, Arm, RunOptions, FULL_SCALE_ITERATIONS};

#[derive(Parser)]
#[command(
    name = "ulfine",
    version,
    about = "Long-tailed semi-supervised fine-tuning over frozen embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed; wins over the config file and ULFINE_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the full-length iteration budget.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/test embeddings and text prototypes.
    Synth(Common),
    /// Build the long-tailed labeled/unlabeled split.
    Split(Common),
    /// Train one arm and write reports plus a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train several arms on one split and compare them.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of lp,lp_adapter,paf,dlf,full.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "lp,lp_adapter,paf,dlf,full"
        )]
        arms: Vec<String>,
    },
    /// Summarize report files.
    Report {
        /// `reports.jsonl` files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the last records as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn effective_config(c: &Common, base: Option<&str>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Ok(s) = std::env::var("ULFINE_SEED") {
        cfg.set("train.seed", s.trim())?;
    }
    if let Some(text) = base {
        cfg.apply_text(text)?;
    }
    if let Some(p) = &c.config {
        cfg.apply_file(p)?;
    }
    if c.full_scale {
        cfg.train.iterations = FULL_SCALE_ITERATIONS;
    }
    for kv in &c.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(c: &Common, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&c.out).map_err(|e| Error::Io {
        path: c.out.clone(),
        source: e,
    })?;
    let text = cfg.to_text();
    print!("# effective config\n{text}");
    let p = c.out.join("effective_config.txt");
    fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })
}

fn save_set(set: &EmbeddingSet, dir: &Path, name: &str) -> Result<()> {
    let p = dir.join(name);
    data::save_embeddings(set, &p)?;
    println!(
        "wrote {} ({} rows, D={})",
        p.display(),
        set.len(),
        set.dim()
    );
    Ok(())
}

fn emit(series: &[RunReport], dir: &Path, stem: &str) -> Result<()> {
    let files = metrics::emit_report(series, dir, stem)?;
    println!(
        "wrote {} and {}",
        files.jsonl.display(),
        files.csv.display()
    );
    Ok(())
}

fn synth(c: &Common) -> Result<()> {
    let cfg = effective_config(c, None)?;
    prepare_out(c, &cfg)?;
    let (train, test, means) = trainer::load_pools(&cfg)?;
    let text = trainer::load_text_prototypes(&cfg, &train, means.as_ref())?;
    save_set(&train, &c.out, "train.ulfe")?;
    save_set(&test, &c.out, "test.ulfe")?;
    save_set(&text.to_embedding_set()?, &c.out, "text_prototypes.ulfe")
}

fn split(c: &Common) -> Result<()> {
    let cfg = effective_config(c, None)?;
    prepare_out(c, &cfg)?;
    let d = trainer::prepare_data(&cfg)?;
    let labels = |y: &[usize]| y.iter().map(|&v| v as u32).collect::<Vec<_>>();
    let labeled = EmbeddingSet::from_matrix(&d.labeled_x, Some(labels(&d.labeled_y)), d.classes)?;
    let unlabeled = EmbeddingSet::from_matrix(&d.unlabeled_x, None, d.classes)?;
    let truth =
        EmbeddingSet::from_matrix(&d.unlabeled_x, Some(labels(&d.unlabeled_truth)), d.classes)?;
    save_set(&labeled, &c.out, "labeled.ulfe")?;
    save_set(&unlabeled, &c.out, "unlabeled.ulfe")?;
    save_set(&truth, &c.out, "unlabeled_truth.ulfe")?;
    let spec = cfg.long_tail_spec();
    println!("labeled counts:   {:?}", spec.labeled_counts()?);
    println!("unlabeled counts: {:?}", spec.unlabeled_counts()?);
    Ok(())
}

fn summarize(r: &RunReport) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "[{}] iter {:>6}  acc {:.4}  head {}  medium {}  tail {}  S {:.4}  mask {:.3}  false PL {} ({:.3})  loss {:.4}",
        r.arm,
        r.iteration,
        r.accuracy,
        opt(r.head_accuracy),
        opt(r.medium_accuracy),
        opt(r.tail_accuracy),
        r.stability,
        r.mask_pass_rate,
        r.pl_false_count,
        r.pl_false_confidence,
        r.loss.total
    );
}

fn train(c: &Common, resume: Option<&Path>) -> Result<()> {
    let (state, base) = match resume {
        Some(p) => {
            let (s, text) = checkpoint::load_checkpoint(p)?;
            (Some(s), Some(text))
        }
        None => (None, None),
    };
    let cfg = effective_config(c, base.as_deref())?;
    prepare_out(c, &cfg)?;
    let data = trainer::prepare_data(&cfg)?;
    let ckpt = c.out.join("checkpoint.ulfc");
    let opts = RunOptions {
        stop_after: None,
        abort_checkpoint: Some(ckpt.clone()),
    };
    let out = match trainer::run_with_data(&cfg, &data, state, &opts) {
        Ok(o) => o,
        Err(e) => {
            if e.is_numeric() {
                eprintln!("aborted; state dumped to {}", ckpt.display());
            }
            return Err(e);
        }
    };
    out.reports.iter().for_each(summarize);
    emit(&out.reports, &c.out, "reports")?;
    trainer::write_final_checkpoint(&out, &cfg, &ckpt)?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn eval(c: &Common, ckpt: &Path) -> Result<()> {
    let (state, text) = checkpoint::load_checkpoint(ckpt)?;
    let cfg = effective_config(c, Some(&text))?;
    prepare_out(c, &cfg)?;
    let data = trainer::prepare_data(&cfg)?;
    if state.params.classes() != data.classes || state.params.dim() != data.dim {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint is C={} D={}, data is C={} D={}",
            state.params.classes(),
            state.params.dim(),
            data.classes,
            data.dim
        )));
    }
    let report = trainer::evaluate(&state, &cfg.train, &data, &cfg.to_map())?;
    summarize(&report);
    emit(std::slice::from_ref(&report), &c.out, "eval")
}

fn ablate(c: &Common, arms: &[String]) -> Result<()> {
    let arms = arms
        .iter()
        .map(|a| a.parse())
        .collect::<Result<Vec<Arm>>>()?;
    let cfg = effective_config(c, None)?;
    prepare_out(c, &cfg)?;
    let report = trainer::ablation_matrix(&cfg, &arms)?;
    for (arm, series) in &report.runs {
        emit(series, &c.out, arm.name())?;
    }
    let last: Vec<RunReport> = report.rows.iter().map(|r| r.last.clone()).collect();
    emit(&last, &c.out, "ablation")?;
    print!("{}", report.table());
    Ok(())
}

fn report(inputs: &[PathBuf], csv: Option<&Path>) -> Result<()> {
    let mut last = Vec::new();
    for p in inputs {
        let series = metrics::load_reports(p)?;
        let Some(r) = series.last() else {
            return Err(Error::Malformed {
                path: p.clone(),
                reason: "no records".into(),
            });
        };
        println!("{}: {} records", p.display(), series.len());
        summarize(r);
        last.push(r.clone());
    }
    if let Some(p) = csv {
        fs::write(p, metrics::reports_to_csv(&last)).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(c) => synth(c),
        Command::Split(c) => split(c),
        Command::Train { common, resume } => train(common, resume.as_deref()),
        Command::Eval { common, checkpoint } => eval(common, checkpoint),
        Command::Ablate { common, arms } => ablate(common, arms),
        Command::Report { inputs, csv } => report(inputs, csv.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
