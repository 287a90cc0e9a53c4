//! `acsm` — train and run the hybrid code summarizer.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
//! divergence.

use std::io::Read;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use acsm_core::checkpoint::load_checkpoint;
use acsm_core::corpus::SplitSpec;
use acsm_core::error::{Error, ErrorCategory};
use acsm_core::pipeline::{self, PhaseSelect};
use acsm_core::training::TrainConfig;

#[derive(Parser)]
#[command(name = "acsm", version, about = "Hybrid sequence/AST code summarizer with actor-critic training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with one key=value pair per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single config key (repeatable), e.g. --set seed=7.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
                })?;
                TrainConfig::from_key_values(&text)?
            }
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}"))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    fn explicit(&self) -> bool {
        self.config.is_some() || !self.set.is_empty()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Shuffle, split and tokenize a JSONL corpus; build vocabularies.
    Prepare {
        /// Input corpus: JSON Lines with id/code/comment (+ optional ast).
        #[arg(long)]
        input: PathBuf,
        /// Output data directory.
        #[arg(long)]
        out: PathBuf,
        /// Shuffle seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split fractions as train,valid,test.
        #[arg(long, default_value = "0.6,0.2,0.2")]
        fractions: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run training phases, writing checkpoints and a JSONL log.
    Train {
        /// Prepared data directory (from `prepare`).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the training log.
        #[arg(long)]
        out: PathBuf,
        /// pretrain-actor | pretrain-critic | joint | all
        #[arg(long, default_value = "all")]
        phase: String,
        /// Resume from a checkpoint (later phases require one).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on the test split and write the report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report base path; writes <out>.txt and <out>.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a comment for one code snippet.
    Summarize {
        #[arg(long)]
        ckpt: PathBuf,
        /// Code file, or '-' for stdin.
        #[arg(long, default_value = "-")]
        code: String,
        /// Pre-parsed AST document (JSON) instead of the built-in parser.
        #[arg(long)]
        ast: Option<PathBuf>,
        /// Also print per-step top-k attention weights.
        #[arg(long)]
        dump_attention: bool,
    },
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64), Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "--fractions expects three comma-separated numbers, got {s:?}"
        )));
    }
    let mut vals = [0.0; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad fraction {p:?}")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Prepare { input, out, seed, fractions, config } => {
            let spec = SplitSpec::new(seed, parse_fractions(&fractions)?)?;
            let config = config.resolve()?;
            let manifest = pipeline::prepare(&input, &out, &spec, &config)?;
            println!(
                "prepared {} -> {} (train {}, valid {}, test {}; vocab code {}, ast {}, comment {})",
                input.display(),
                out.display(),
                manifest.counts.train,
                manifest.counts.valid,
                manifest.counts.test,
                manifest.vocab_sizes.code,
                manifest.vocab_sizes.ast,
                manifest.vocab_sizes.comment,
            );
            Ok(())
        }
        Command::Train { data, out, phase, resume, config } => {
            let phase: PhaseSelect = phase.parse()?;
            let explicit = config.explicit().then(|| config.resolve()).transpose()?;
            let final_path = pipeline::train(&data, &out, phase, explicit, resume.as_deref())?;
            println!("final checkpoint: {}", final_path.display());
            Ok(())
        }
        Command::Eval { ckpt, data, out } => {
            let report = pipeline::evaluate_checkpoint(&ckpt, &data)?;
            let table = report.render_table();
            print!("{table}");
            let txt_path = out.with_extension("txt");
            let json_path = out.with_extension("json");
            std::fs::write(&txt_path, &table)?;
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            std::fs::write(&json_path, json)?;
            println!("report written to {} and {}", txt_path.display(), json_path.display());
            Ok(())
        }
        Command::Summarize { ckpt, code, ast, dump_attention } => {
            let code_text = if code == "-" {
                let mut buf = String::new();
                std::io::stdin().read_to_string(&mut buf)?;
                buf
            } else {
                std::fs::read_to_string(&code).map_err(|e| {
                    Error::InvalidData(format!("cannot read code file {code:?}: {e}"))
                })?
            };
            if code_text.trim().is_empty() {
                return Err(Error::InvalidData("empty code input".into()));
            }
            let ast_json = match &ast {
                Some(path) => Some(std::fs::read_to_string(path).map_err(|e| {
                    Error::InvalidData(format!("cannot read ast file {}: {e}", path.display()))
                })?),
                None => None,
            };
            let ck = load_checkpoint(&ckpt)?;
            let summary =
                pipeline::summarize(&ck, code_text.trim(), ast_json.as_deref(), dump_attention)?;
            println!("{}", summary.comment);
            if let Some(dump) = summary.attention {
                print!("{dump}");
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        let code = match e.category() {
            ErrorCategory::Usage => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numeric => 3,
        };
        std::process::exit(code);
    }
}
