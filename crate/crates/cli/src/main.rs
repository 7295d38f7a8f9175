use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use xlr_core::corpus::{write_corpus, Split};
use xlr_core::pipeline::{
    self, checkpoint_load, checkpoint_save, evaluate, rerank_compare, write_eval_csv, write_losses_csv,
    write_rerank_csv, RunConfig, TrainState,
};

#[derive(Parser)]
#[command(name = "xlr", version, about = "Cross-lingual dense retrieval training pipeline")]
struct Cli {
    /// Run configuration (TOML). Defaults to the desk preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset used when no config file is given: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the benchmark corpus and write it to corpus.json.
    GenCorpus,
    /// Warm up the retriever and generator and build the generated-query pool.
    Warmup,
    /// Run training iterations from the latest checkpoint.
    Iterate {
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Evaluate the latest checkpoint on a split.
    Evaluate {
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Compare generator and cross-scorer re-ranking across data fractions and depths.
    RerankCompare {
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.25,0.1")]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "100")]
        depths: Vec<usize>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Print the evaluation history stored in the latest checkpoint.
    Report,
}

const WARMUP: &str = "warmup.ckpt";
const STATE: &str = "state.ckpt";

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::preset(&cli.preset)?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    for line in config.overrides() {
        eprintln!("override: {line}");
    }
    Ok(config)
}

fn latest_checkpoint(out: &Path) -> Result<PathBuf> {
    for name in [STATE, WARMUP] {
        let p = out.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    bail!("no checkpoint in {}; run warmup first", out.display())
}

fn load_state(out: &Path) -> Result<TrainState> {
    let path = latest_checkpoint(out)?;
    checkpoint_load(&path).with_context(|| format!("loading {}", path.display()))
}

fn parse_split(name: &str) -> Result<Split> {
    Ok(match name {
        "pretrain" => Split::Pretrain,
        "train" => Split::Train,
        "dev" => Split::Dev,
        other => bail!("unknown split {other}"),
    })
}

fn print_history(state: &TrainState) {
    for r in &state.history {
        let cells: Vec<String> = r
            .budgets
            .iter()
            .zip(&r.average)
            .map(|(b, v)| format!("R@{b}t={v:.4}"))
            .collect();
        println!("{} iter {} {}: {}", r.tag, r.iteration, r.split.name(), cells.join(" "));
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let out = cli.out_dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::GenCorpus => {
            let config = load_config(&cli)?;
            let corpus = pipeline::load_corpus(&config)?;
            write_corpus(&corpus, &out.join("corpus.json"))?;
            println!(
                "{} passages, {} pretrain / {} train / {} dev samples",
                corpus.passages.len(),
                corpus.pretrain.len(),
                corpus.train.len(),
                corpus.dev.len()
            );
        }
        Command::Warmup => {
            let config = load_config(&cli)?;
            let corpus = pipeline::load_corpus(&config)?;
            let mut state = pipeline::warmup(&config, &corpus)?;
            let report = evaluate(&state, &corpus, Split::Dev, &config.budgets)?;
            state.history.push(report);
            checkpoint_save(&state, &out.join(WARMUP))?;
            write_losses_csv(&state.losses, &out.join("losses.csv"))?;
            write_eval_csv(&state.history, &out.join("eval.csv"))?;
            print_history(&state);
        }
        Command::Iterate { n } => {
            let mut state = load_state(&out)?;
            if cli.config.is_some() || cli.seed.is_some() {
                eprintln!("note: iterate uses the configuration stored in the checkpoint");
            }
            let corpus = pipeline::load_corpus(&state.config)?;
            pipeline::train_iterations(&mut state, &corpus, *n)?;
            checkpoint_save(&state, &out.join(STATE))?;
            write_losses_csv(&state.losses, &out.join("losses.csv"))?;
            write_eval_csv(&state.history, &out.join("eval.csv"))?;
            print_history(&state);
        }
        Command::Evaluate { budgets, split } => {
            let state = load_state(&out)?;
            let corpus = pipeline::load_corpus(&state.config)?;
            let budgets = budgets.clone().unwrap_or_else(|| state.config.budgets.clone());
            let report = evaluate(&state, &corpus, parse_split(split)?, &budgets)?;
            for l in &report.per_language {
                let cells: Vec<String> = budgets.iter().zip(&l.recall).map(|(b, v)| format!("R@{b}t={v:.4}")).collect();
                println!("{:>6} ({} queries): {}", l.name, l.queries, cells.join(" "));
            }
            let cells: Vec<String> = budgets.iter().zip(&report.average).map(|(b, v)| format!("R@{b}t={v:.4}")).collect();
            println!("{:>6}: {}", "avg", cells.join(" "));
            write_eval_csv(std::slice::from_ref(&report), &out.join(format!("eval_{split}.csv")))?;
        }
        Command::RerankCompare { fractions, depths, budget } => {
            let config = load_config(&cli)?;
            let corpus = pipeline::load_corpus(&config)?;
            let budget = budget.unwrap_or(config.budgets[0]);
            let report = rerank_compare(&config, &corpus, fractions, depths, budget)?;
            write_rerank_csv(&report, &out.join("rerank.csv"))?;
            for r in &report.rows {
                println!(
                    "fraction {} depth {} {:?}: R@{}t {:.4} (retriever {:.4})",
                    r.fraction, r.depth, r.teacher, r.budget, r.recall, r.baseline
                );
            }
        }
        Command::Report => {
            let state = load_state(&out)?;
            println!("{} iteration(s) complete, tag {}", state.iteration, state.config.ablation.tag());
            print_history(&state);
        }
    }
    Ok(())
}
