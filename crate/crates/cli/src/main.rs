//! Command-line entry points: data generation, training, evaluation,
//! ablations, late-fusion baselines and the gradient check.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use c2af_core::eval::{ablation_suite, emit_report, evaluate_checkpoint, run_full_gradcheck, GRADCHECK_TOL};
use c2af_core::{
    load_checkpoint, load_container, save_checkpoint, save_container, synth_generate, train_loop_with, AblationMode,
    ConfusionSpec, LateFusion, ReportFormat, SynthConfig, TrainConfig,
};

#[derive(Parser)]
#[command(name = "c2af", version, about = "Multi-view time-series classification with correlative channel-aware fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset container.
    Synth(SynthArgs),
    /// Train encoders and fusion heads; writes the best checkpoint and a JSON-lines log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split of a dataset.
    Eval(EvalArgs),
    /// Train each fusion mode under each seed and report per-mode means.
    Ablate(AblateArgs),
    /// Evaluate a late-fusion baseline from a checkpoint.
    Baseline(BaselineArgs),
    /// Finite-difference check of the full network at toy size.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Key-value config file; flags given on the command line override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    /// Per-view feature widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    noise: Option<f64>,
    /// Confused class pairs per view: views separated by `/`, pairs by `,`,
    /// classes by `-`, e.g. `0-1/2-3/4-5`. Empty for none.
    #[arg(long)]
    confusions: Option<ConfusionSpec>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "intra_only,inter_only,fusion_only,no_channel_fusion,complete")]
    modes: Vec<AblationMode>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    mode: LateFusion,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SynthConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let missing: Vec<&str> = [
                ("--classes", a.classes.is_none()),
                ("--views", a.views.is_none()),
                ("--samples", a.samples.is_none()),
                ("--length", a.length.is_none()),
                ("--dims", a.dims.is_none()),
                ("--noise", a.noise.is_none()),
                ("--seed", a.seed.is_none()),
            ]
            .into_iter()
            .filter_map(|(f, m)| m.then_some(f))
            .collect();
            if !missing.is_empty() {
                bail!("missing {} (or pass --config)", missing.join(", "));
            }
            SynthConfig::benchmark(0.0, 0)
        }
    };
    if a.config.is_none() {
        cfg.confusions = ConfusionSpec::default();
    }
    cfg.classes = a.classes.unwrap_or(cfg.classes);
    cfg.views = a.views.unwrap_or(cfg.views);
    cfg.samples = a.samples.unwrap_or(cfg.samples);
    cfg.length = a.length.unwrap_or(cfg.length);
    cfg.dims = a.dims.unwrap_or(cfg.dims);
    cfg.noise = a.noise.unwrap_or(cfg.noise);
    cfg.confusions = a.confusions.unwrap_or(cfg.confusions);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let ds = synth_generate(&cfg)?.dataset;
    save_container(&ds, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} samples (K={}, V={}, T={}) to {}",
        ds.len(),
        ds.classes(),
        ds.views(),
        ds.seq_len(),
        a.out.display()
    );
    Ok(())
}

fn read_config(path: &PathBuf) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TrainConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = read_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let ds = load_container(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let mut log = BufWriter::new(File::create(&a.log).with_context(|| format!("creating {}", a.log.display()))?);
    let mut io_err = None;
    let out = train_loop_with(&ds, &cfg, |rec| {
        if io_err.is_none() {
            io_err = writeln!(log, "{}", rec.to_json_line()).err();
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing the log");
    }
    log.flush()?;
    save_checkpoint(&out.best, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let primary = cfg.heads[0].name();
    let best = out.log.iter().find(|r| r.step == out.best_step()).expect("best step is logged");
    println!(
        "config {} seed {}: best {} accuracy {:.4} at step {} (checkpoint {})",
        cfg.fingerprint(),
        cfg.seed,
        primary,
        best.fused_accuracy[primary],
        best.step,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let t = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let ds = load_container(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let report = evaluate_checkpoint(&t, &ds, None)?;
    emit_report(&report, &a.report, a.format).with_context(|| format!("writing {}", a.report.display()))?;
    println!("{} accuracy {:.4} on {} samples", report.method, report.fused_accuracy, report.samples);
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = read_config(&a.config)?;
    let ds = load_container(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let report = ablation_suite(&ds, &cfg, &a.modes, &a.seeds)?;
    fs::write(&a.report, report.to_json()).with_context(|| format!("writing {}", a.report.display()))?;
    for (mode, s) in &report.summary {
        println!("{mode:<18} mean {:.4} over seeds {:?}", s.mean_accuracy, report.seeds);
    }
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let t = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let ds = load_container(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let report = evaluate_checkpoint(&t, &ds, Some(a.mode.name()))?;
    emit_report(&report, &a.report, a.format).with_context(|| format!("writing {}", a.report.display()))?;
    println!("{} accuracy {:.4} on {} samples", report.method, report.fused_accuracy, report.samples);
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let report = run_full_gradcheck(a.seed, a.eps)?;
    for p in &report.params {
        let flag = if p.max_rel_err < GRADCHECK_TOL { "ok  " } else { "FAIL" };
        println!("{flag} {:<32} {:>3}/{:<4} max rel err {:.3e}", p.name, p.checked, p.size, p.max_rel_err);
    }
    let worst = report.max_rel_err();
    let pass = worst < GRADCHECK_TOL;
    println!("{}: max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:e})", if pass { "PASS" } else { "FAIL" });
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a).map(|()| true),
        Command::Train(a) => train(a).map(|()| true),
        Command::Eval(a) => eval(a).map(|()| true),
        Command::Ablate(a) => ablate(a).map(|()| true),
        Command::Baseline(a) => baseline(a).map(|()| true),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
