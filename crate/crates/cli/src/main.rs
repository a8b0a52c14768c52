use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use kwspot::service;
use kwspot::{
    cmd_eval, cmd_prepare, cmd_quantize, cmd_run, cmd_synth_dataset, cmd_synth_fixture, cmd_train,
    parse_ratio_override, RunConfig, DEFAULT_PORT,
};
use kwspot_core::model::TrainConfig;

#[derive(Parser)]
#[command(
    name = "kwspot",
    version,
    about = "Keyword spotting: prepare, train, quantize, evaluate, stream"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// Random seed
    #[arg(long, env = "KWSPOT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StreamArgs {
    /// Quantized model artifact
    model: PathBuf,
    #[arg(long, default_value_t = 250)]
    hop_ms: u32,
    /// Minimum confidence for a prediction to reach the interpreter
    #[arg(long, default_value_t = 0.60)]
    threshold: f64,
    /// Inactivity before returning to SLEEP
    #[arg(long, default_value_t = 10_000)]
    timeout_ms: u64,
    /// Memory budget for the inference arena
    #[arg(long, default_value_t = 196_608)]
    budget_bytes: usize,
}

impl StreamArgs {
    fn config(&self, port: u16) -> RunConfig {
        RunConfig {
            model_path: self.model.clone(),
            hop_ms: self.hop_ms,
            threshold: self.threshold,
            timeout_ms: self.timeout_ms,
            budget_bytes: self.budget_bytes,
            port,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Scan a dataset tree and write its train/test split manifest
    Prepare {
        dataset_root: PathBuf,
        #[arg(long, short, default_value = "manifest.json")]
        out: PathBuf,
        /// Test fraction per label
        #[arg(long, default_value_t = 0.2)]
        ratio: f64,
        /// Per-label test fraction, e.g. BLUE=0.22 (repeatable)
        #[arg(long = "label-ratio", value_name = "LABEL=RATIO")]
        label_ratio: Vec<String>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Train the float model on the manifest's training split
    Train {
        manifest: PathBuf,
        #[arg(long, short, default_value = "model.kwsf")]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Also write the per-epoch log here
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Quantize a float model to int8, calibrating on the training split
    Quantize {
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short, default_value = "model.kwsq")]
        out: PathBuf,
        #[arg(long, default_value_t = 196_608)]
        budget_bytes: usize,
    },
    /// Evaluate float and/or quantized models on the test split
    Eval {
        manifest: PathBuf,
        /// Model artifacts (float or quantized, repeatable)
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 196_608)]
        budget_bytes: usize,
    },
    /// Stream a WAV file, or raw PCM-16 on standard input (`-`), as JSON lines
    Run {
        #[command(flatten)]
        stream: StreamArgs,
        input: PathBuf,
    },
    /// Serve the detector over WebSocket on localhost
    Serve {
        #[command(flatten)]
        stream: StreamArgs,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Exit after the first client disconnects
        #[arg(long)]
        once: bool,
    },
    /// Write synthetic audio
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Ten-class synthetic dataset tree
    Dataset {
        root: PathBuf,
        #[arg(long, default_value_t = 40)]
        clips_per_class: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// WAV of a spoken-style command sequence
    Fixture {
        out: PathBuf,
        /// Comma-separated words
        #[arg(long, default_value = "wake up,blue,on,led")]
        words: String,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            dataset_root,
            out,
            ratio,
            label_ratio,
            seed,
        } => {
            let overrides = label_ratio
                .iter()
                .map(|s| parse_ratio_override(s))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let split = cmd_prepare(&dataset_root, &out, seed.seed, ratio, &overrides)?;
            for (label, (train, test)) in split.counts() {
                println!("{label:<10} train {train:>5}  test {test:>5}");
            }
            println!("wrote {}", out.display());
        }
        Command::Train {
            manifest,
            out,
            epochs,
            batch_size,
            learning_rate,
            log,
            seed,
        } => {
            let config = TrainConfig {
                epochs,
                batch_size,
                learning_rate,
                seed: seed.seed,
            };
            let mut lines = Vec::new();
            cmd_train(&manifest, &out, &config, &mut lines)?;
            std::io::stdout().write_all(&lines)?;
            if let Some(path) = log {
                std::fs::write(path, &lines)?;
            }
            println!("wrote {}", out.display());
        }
        Command::Quantize {
            model,
            manifest,
            out,
            budget_bytes,
        } => {
            let report = cmd_quantize(&model, &manifest, &out, budget_bytes)?;
            print!("{}", report.to_text());
            println!("wrote {}", out.display());
        }
        Command::Eval {
            manifest,
            models,
            out_dir,
            budget_bytes,
        } => {
            let outcome = cmd_eval(&manifest, &models, &out_dir, budget_bytes)?;
            for (kind, report) in &outcome.reports {
                println!("{kind}\n{}", report.to_text());
            }
            if let Some(a) = outcome.agreement {
                println!("argmax agreement {:.2}%", a * 100.0);
            }
            println!("wrote reports to {}", out_dir.display());
        }
        Command::Run { stream, input } => {
            let config = stream.config(DEFAULT_PORT);
            let stdout = std::io::stdout();
            cmd_run(&config, &input, &mut stdout.lock())?;
        }
        Command::Serve { stream, port, once } => {
            let config = stream.config(port);
            let model = config.load_model()?;
            let listener = service::bind(port)?;
            println!("listening on ws://{}", listener.local_addr()?);
            std::io::stdout().flush()?;
            service::serve(listener, model, config.detector(), once.then_some(1))?;
        }
        Command::Synth(SynthCommand::Dataset {
            root,
            clips_per_class,
            seed,
        }) => {
            let n = cmd_synth_dataset(&root, clips_per_class, seed.seed)?;
            println!("wrote {n} clips under {}", root.display());
        }
        Command::Synth(SynthCommand::Fixture { out, words, seed }) => {
            let words: Vec<&str> = words.split(',').map(str::trim).filter(|w| !w.is_empty()).collect();
            let n = cmd_synth_fixture(&out, &words, seed.seed)?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
