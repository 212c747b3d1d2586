use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rls_prune::checkpoint;
use rls_prune::data::load_dataset;
use rls_prune::metrics::emit_metrics;
use rls_prune::train::limit_datasets;
use rls_prune::{Error, Result, TrainConfig, Trainer};

/// Train a network with RLS and prune it as it trains.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// key=value file; flags given on the command line win
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist, cifar10 or cifar10-format
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    /// fnn-mnist or minivgg
    #[arg(long)]
    arch: Option<String>,
    /// rls or momentum
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// One value, or a comma-separated value per learnable layer
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    xi: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    eps_h: Option<String>,
    #[arg(long)]
    momentum_lr: Option<String>,
    #[arg(long)]
    momentum_beta: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    /// Gate pruning on the epoch-mean loss (true/false)
    #[arg(long)]
    epoch_mean_trigger: Option<String>,
    #[arg(long)]
    train_limit: Option<String>,
    #[arg(long)]
    test_limit: Option<String>,
    #[arg(long)]
    metrics_out: Option<String>,
    /// Rewritten after every epoch
    #[arg(long)]
    checkpoint_out: Option<String>,
    /// Continue from a checkpoint; other settings override the stored ones
    #[arg(long)]
    resume: Option<String>,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        [
            ("dataset", &self.dataset),
            ("data-dir", &self.data_dir),
            ("arch", &self.arch),
            ("optimizer", &self.optimizer),
            ("epochs", &self.epochs),
            ("batch-size", &self.batch_size),
            ("lambda", &self.lambda),
            ("k", &self.k),
            ("alpha", &self.alpha),
            ("eta", &self.eta),
            ("xi", &self.xi),
            ("q", &self.q),
            ("seed", &self.seed),
            ("delta", &self.delta),
            ("eps-h", &self.eps_h),
            ("momentum-lr", &self.momentum_lr),
            ("momentum-beta", &self.momentum_beta),
            ("weight-decay", &self.weight_decay),
            ("epoch-mean-trigger", &self.epoch_mean_trigger),
            ("train-limit", &self.train_limit),
            ("test-limit", &self.test_limit),
            ("metrics-out", &self.metrics_out),
            ("checkpoint-out", &self.checkpoint_out),
            ("resume", &self.resume),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }
}

fn build_trainer(cli: &Cli) -> Result<Trainer> {
    let resumed = cli
        .resume
        .as_ref()
        .map(|p| checkpoint::load(&PathBuf::from(p)))
        .transpose()?;
    let mut config = resumed
        .as_ref()
        .map_or_else(TrainConfig::default, |t| t.config.clone());
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config.apply_text(&text)?;
    }
    for (key, value) in cli.overrides() {
        config.set(key, value)?;
    }
    config.validate()?;
    match resumed {
        Some(mut t) => {
            if config.arch != t.config.arch {
                return Err(Error::Config(
                    "cannot change the architecture of a resumed run".into(),
                ));
            }
            t.config = config;
            Ok(t)
        }
        None => Trainer::new(config),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut trainer = build_trainer(cli)?;
    let config = trainer.config.clone();
    let (train, test) = load_dataset(config.dataset, &config.data_dir)?;
    let (train, test) = limit_datasets(&config, train, test);
    eprintln!(
        "{} on {}: {} training / {} test samples, {} epochs from epoch {}",
        config.arch.name(),
        config.dataset.name(),
        train.len(),
        test.len(),
        config.epochs,
        trainer.epochs_done + 1
    );
    trainer.run_until(config.epochs, &train, &test, |t| {
        let e = t.metrics.epochs.last().expect("epoch finished");
        eprintln!(
            "epoch {:>4}  loss {:.6}  test {:.2}%  nodes {:.1}%  weights {:.1}%{}",
            e.epoch,
            e.train_loss,
            e.precision,
            e.total_nodes_pct,
            e.total_weights_pct,
            if e.prune_event { "  pruned" } else { "" }
        );
        if let Some(path) = &t.config.checkpoint_out {
            checkpoint::save(t, path)?;
        }
        if let Some(path) = &t.config.metrics_out {
            emit_metrics(&t.metrics, &t.report, &t.original_counts, path)?;
        }
        Ok(())
    })?;
    if let Some(path) = &config.metrics_out {
        emit_metrics(&trainer.metrics, &trainer.report, &trainer.original_counts, path)?;
    }
    print!("{}", trainer.metrics.summary_text(&trainer.original_counts, &trainer.report));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
