use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bt_classifier::corpus::write_dataset;
use bt_classifier::harness::{
    collect_report, emit_report, Ablation, DataConfig, MockSettings, Pipeline, ReportFormat, RunConfig, Stage,
};
use bt_classifier::prompt::default_task;
use bt_classifier::synthetic::{generate, SyntheticConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "btc", version, about = "Few-shot classification with a black-box encoder")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Run config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Restrict to one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Use in-process mock backends.
    #[arg(long, global = true)]
    mock: bool,

    /// full, no_aug, cls_token, last_layer or teacher_only.
    #[arg(long, global = true)]
    ablation: Option<String>,

    /// Runs directory (stage commands) or output directory (report, toy-data).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the K-shot train/dev split.
    Sample,
    /// Grid-search and finetune the teacher.
    Teach,
    /// Pseudo-label, filter and balance the unlabeled pool.
    Pseudolabel,
    /// Extract pooled encoder features.
    Extract,
    /// Train the MLP head.
    Train,
    /// Score the dev-selected model on the test file.
    Eval,
    /// Every stage for every seed, then aggregate.
    RunAll,
    /// Aggregate finished runs into a table.
    Report {
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Comma-separated ablations to include; defaults to the configured one.
        #[arg(long)]
        ablations: Option<String>,
    },
    /// Write a synthetic train/test corpus and a mock-mode config.
    ToyData {
        #[arg(long, default_value = "sst-2")]
        task: String,
        #[arg(long, default_value_t = 540)]
        per_class: usize,
        #[arg(long, default_value_t = 200)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
    },
}

fn load_config(g: &Global) -> anyhow::Result<RunConfig> {
    let path = g.config.as_deref().context("--config is required for this command")?;
    let mut cfg = RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
    cfg.apply_env_overrides();
    if g.mock && cfg.mock.is_none() {
        cfg.mock = Some(MockSettings::default());
    }
    if let Some(a) = &g.ablation {
        cfg.ablation = a.parse()?;
    }
    if let Some(seed) = g.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &g.out {
        cfg.runs_dir = out.clone();
    }
    Ok(cfg)
}

fn run_stage(g: &Global, stage: Stage) -> anyhow::Result<()> {
    let pipeline = Pipeline::new(load_config(g)?)?;
    for &seed in &pipeline.cfg.seeds {
        let entry = pipeline.run_until(seed, stage)?;
        println!("seed {seed} {}: {entry}", stage.name());
    }
    Ok(())
}

fn report(g: &Global, format: &str, ablations: Option<&str>) -> anyhow::Result<()> {
    // --out names where the table goes, not where the runs live.
    let cfg = load_config(&Global { out: None, ..g.clone() })?;
    let format: ReportFormat = format.parse()?;
    let ablations: Vec<Ablation> = match ablations {
        Some(list) => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => vec![cfg.ablation],
    };
    let reports = ablations
        .into_iter()
        .map(|ablation| collect_report(&RunConfig { ablation, ..cfg.clone() }))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = g.out.clone().unwrap_or_else(|| cfg.runs_dir.clone());
    let path = dir.join(match format {
        ReportFormat::Csv => "report.csv",
        ReportFormat::Markdown => "report.md",
    });
    emit_report(&reports, format, &path)?;
    print!("{}", std::fs::read_to_string(&path)?);
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn toy_data(out: &Path, task: &str, per_class: usize, test_per_class: usize, seed: u64) -> anyhow::Result<()> {
    let spec = default_task(task)?;
    let cfg = SyntheticConfig {
        per_class,
        seed,
        ..SyntheticConfig::default()
    };
    let train = generate(&spec, &cfg, "train")?;
    let test = generate(&spec, &SyntheticConfig { per_class: test_per_class, ..cfg }, "test")?;
    write_dataset(&out.join("train.jsonl"), &train)?;
    write_dataset(&out.join("test.jsonl"), &test)?;
    let run = RunConfig {
        task: task.to_string(),
        data: DataConfig {
            train: "train.jsonl".into(),
            test: "test.jsonl".into(),
            unlabeled: None,
        },
        pool_cap: Some(1000),
        mock: Some(MockSettings::default()),
        ..RunConfig::default()
    };
    let path = out.join("config.json");
    std::fs::write(&path, config_json(&run)?)?;
    println!("wrote {} train, {} test examples and {}", train.len(), test.len(), path.display());
    Ok(())
}

fn config_json(cfg: &RunConfig) -> anyhow::Result<String> {
    let mut value = serde_json::to_value(cfg)?;
    // Paths are written relative to the config file; drop the default runs dir
    // so it too resolves next to the file.
    if let Some(map) = value.as_object_mut() {
        map.remove("runs_dir");
    }
    Ok(serde_json::to_string_pretty(&value)? + "\n")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let outcome = match &cli.command {
        Command::Sample => run_stage(g, Stage::Sample),
        Command::Teach => run_stage(g, Stage::Teach),
        Command::Pseudolabel => run_stage(g, Stage::Pseudolabel),
        Command::Extract => run_stage(g, Stage::Extract),
        Command::Train => run_stage(g, Stage::Train),
        Command::Eval => run_stage(g, Stage::Eval),
        Command::RunAll => (|| {
            let pipeline = Pipeline::new(load_config(g)?)?;
            let report = pipeline.run_all()?;
            for (seed, acc) in &report.per_seed {
                println!("seed {seed}: {acc:.4}");
            }
            println!("{} {}: {}", report.task, report.ablation, report.cell());
            Ok(())
        })(),
        Command::Report { format, ablations } => report(g, format, ablations.as_deref()),
        Command::ToyData {
            task,
            per_class,
            test_per_class,
            data_seed,
        } => match &g.out {
            Some(out) => toy_data(out, task, *per_class, *test_per_class, *data_seed),
            None => Err(anyhow::anyhow!("--out is required for toy-data")),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already spell out their causes, stage name included.
            match e.downcast_ref::<bt_classifier::Error>() {
                Some(inner) => eprintln!("error: {inner}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
