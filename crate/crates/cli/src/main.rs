use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rfn::data::{load_checkpoint, load_network, load_observations, save_checkpoint, save_network, save_observations, synth_network};
use rfn::diagnostics::{model_gradient_check, GRADCHECK_TOLERANCE};
use rfn::learn::{write_report, Metric, Predictions, ReportRow};
use rfn::model::ModelKind;
use rfn::rfn::Head;
use rfn::{Result, RfnError};
use rfn_cli::{edge_activations, evaluate_checkpoint, predict, prepare_for, threads_from_env, train_run, RunConfig};

#[derive(Parser)]
#[command(name = "rfn", version, about = "Relational fusion networks for road networks")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic network with speed and speed-limit observations.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a network and print its validation report.
    Build {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Encode a network's attributes into feature matrices (JSON).
    Encode {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
        /// Reuse the scaling stored in this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus its metric history.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Checkpoint path; the history goes next to it as `.history.tsv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score checkpoints; several checkpoints are summarized as mean and std.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Report file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-edge predictions, optionally with per-layer edge activations.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        network: PathBuf,
        /// Edge ids to predict (all edges when absent).
        edges: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        export_activations: Option<PathBuf>,
    },
    /// Compare a model's gradients with finite differences.
    Gradcheck { model: String },
}

fn config_or_default(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn pick_path(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| RfnError::config(format!("no {what} given; pass --{what} or set `{what}` in the config")))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| RfnError::io(path, e))
}

fn output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| RfnError::io("<stdout>", e)),
    }
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.tsv")
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = config_or_default(config.as_deref())?;
            let spec = rfn::data::SynthSpec { seed, ..cfg.synth };
            let data = synth_network(&spec)?;
            std::fs::create_dir_all(&out).map_err(|e| RfnError::io(&out, e))?;
            save_network(out.join("network.json"), &data.network)?;
            save_observations(out.join("speeds.csv"), &data.speeds)?;
            save_observations(out.join("limits.csv"), &data.limits)?;
            println!("{}", data.network.report(cfg.include_u_turns));
        }
        Command::Build { config, network } => {
            let cfg = config_or_default(config.as_deref())?;
            let net = load_network(pick_path(network, &cfg.network, "network")?)?;
            println!("{}", net.report(cfg.include_u_turns));
        }
        Command::Encode {
            config,
            network,
            checkpoint,
            out,
        } => {
            let cfg = config_or_default(config.as_deref())?;
            let net = load_network(pick_path(network, &cfg.network, "network")?)?;
            let prepared = match checkpoint {
                Some(c) => prepare_for(&load_checkpoint(c)?, &net)?,
                None => net.prepare(&cfg.category_vocabulary()?, None, cfg.include_u_turns)?,
            };
            let text = serde_json::to_string(&prepared.features).map_err(|e| RfnError::Format(e.to_string()))?;
            write_file(&out, &text)?;
            let (v, e, b) = prepared.features.widths();
            println!("node_width={v} edge_width={e} between_width={b}");
        }
        Command::Train {
            config,
            network,
            observations,
            out,
        } => {
            let cfg = config_or_default(config.as_deref())?;
            let net = load_network(pick_path(network, &cfg.network, "network")?)?;
            let rows = load_observations(pick_path(observations, &cfg.observations, "observations")?)?;
            let run = train_run(&cfg, &net, &rows, seed)?;
            save_checkpoint(&out, &run.checkpoint)?;
            write_file(&history_path(&out), &run.history.to_table())?;
            let metric = cfg.task.metric_name();
            println!("val_{metric}={} test_{metric}={}", run.val, run.test);
        }
        Command::Eval {
            config,
            checkpoint,
            network,
            observations,
            out,
        } => {
            let cfg = config_or_default(config.as_deref())?;
            let net = load_network(pick_path(network, &cfg.network, "network")?)?;
            let rows = load_observations(pick_path(observations, &cfg.observations, "observations")?)?;
            let threads = threads_from_env()?;
            let mut metrics: Vec<Metric> = Vec::new();
            let mut head: Option<(ModelKind, rfn::model::Task)> = None;
            for path in &checkpoint {
                let ckpt = load_checkpoint(path)?;
                let this = (ckpt.kind, ckpt.trained.task);
                if head.is_some_and(|h| h != this) {
                    return Err(RfnError::config(format!(
                        "{}: checkpoints in one report must share model kind and task",
                        path.display()
                    )));
                }
                head = Some(this);
                metrics.push(evaluate_checkpoint(&ckpt, &net, &rows, cfg.eval_split, cfg.split, threads)?);
            }
            let (kind, task) = head.expect("at least one checkpoint");
            let mut buf = Vec::new();
            write_report(&[ReportRow::summarize(kind, task, &metrics)], &mut buf).map_err(|e| RfnError::io("<report>", e))?;
            output(out.as_deref(), &String::from_utf8_lossy(&buf))?;
        }
        Command::Predict {
            checkpoint,
            network,
            edges,
            out,
            export_activations,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let net = prepare_for(&ckpt, &load_network(&network)?)?;
            let n = net.edge_count();
            if let Some(&bad) = edges.iter().find(|&&e| e >= n) {
                return Err(RfnError::Referential(format!("edge {bad} is not in {} ({n} edges)", network.display())));
            }
            let edges: Vec<usize> = if edges.is_empty() { (0..n).collect() } else { edges };
            let preds = predict(&ckpt, &net, threads_from_env()?)?;
            let mut text = String::from("edge_id,prediction\n");
            for &e in &edges {
                let value = match &preds {
                    Predictions::Speeds(s) => format!("{}", s[e]),
                    Predictions::Classes(c) => match &ckpt.classes {
                        Some(v) => v.labels[c[e]].clone(),
                        None => c[e].to_string(),
                    },
                };
                text.push_str(&format!("{e},{value}\n"));
            }
            output(out.as_deref(), &text)?;
            if let Some(path) = export_activations {
                let layers = edge_activations(&ckpt.trained, &net)?;
                let mut table = String::from("layer\tedge_id\tactivation\n");
                for (k, h) in layers.iter().enumerate() {
                    for &e in &edges {
                        let values: Vec<String> = h.row(e).iter().map(|v| format!("{v:e}")).collect();
                        table.push_str(&format!("{}\t{e}\t{}\n", k + 1, values.join("\t")));
                    }
                }
                write_file(&path, &table)?;
            }
        }
        Command::Gradcheck { model } => {
            let kind: ModelKind = model.parse()?;
            let mut worst = 0.0f64;
            for head in [Head::Regression, Head::Classification { classes: 3 }] {
                let r = model_gradient_check(kind, head, seed)?;
                println!(
                    "model={kind} head={} max_rel_error={:.3e} checked={} skipped_kinks={}",
                    if head == Head::Regression { "regression" } else { "classification" },
                    r.max_rel_error,
                    r.checked,
                    r.skipped_kinks
                );
                worst = worst.max(r.max_rel_error);
            }
            if !(worst < GRADCHECK_TOLERANCE) {
                return Err(RfnError::contract(format!(
                    "{kind}: max relative error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:e}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 2 } else { 1 })
        }
    }
}
