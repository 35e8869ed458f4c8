//! Command-line interface.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::*;
pub use config::RunConfig;

use crate::data::SampleOptions;
use crate::error::{Error, Result};
use crate::numerics::Scalar;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIVERGENCE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lnabl", version, about = "Train small GPTs and remove their LayerNorms by fine-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corpus files, a corpus cache, or `synthetic` (repeatable)
    #[arg(long)]
    pub corpus: Vec<PathBuf>,
    /// Override any configuration key
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a baseline model from scratch with standard LayerNorm
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Average per-token standard deviations at every norm site
    CollectSigma {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n_prompts: Option<usize>,
    },
    /// Fine-tune under a removal schedule and export a norm-free model
    RemoveLn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// v1..v5, a schedule file, or `none`
        #[arg(long)]
        schedule: Option<String>,
        /// Multiply schedule steps by this factor
        #[arg(long)]
        scale: Option<f64>,
        /// Sigma statistics file (collected from the checkpoint when absent)
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Validation loss of a checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sample text from a checkpoint
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "")]
        prompt: String,
        #[arg(long, default_value_t = 200)]
        n_tokens: usize,
        /// 0 or below samples greedily
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        top_k: usize,
    },
    /// Fold a fully frozen checkpoint into a norm-free one
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Re-emit a metrics log for plotting
    Curves {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        ema: f64,
    },
}

fn build_config(common: &Common, default_out: &str, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        out: PathBuf::from(default_out),
        ..Default::default()
    };
    if let Some(p) = &common.config {
        cfg.apply_file(p)?;
    }
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if !common.corpus.is_empty() {
        cfg.corpus = common.corpus.clone();
    }
    for (k, v) in extra {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ckpt(p: &std::path::Path) -> Option<String> {
    Some(p.display().to_string())
}

fn execute<F: Scalar>(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Pretrain { common } => {
            let cfg = build_config(common, "runs/pretrain", &[])?;
            let r = cmd_pretrain::<F>(&cfg)?;
            println!("run directory: {}", r.dir.display());
            if let Some(v) = r.best_val {
                println!("best val loss: {v:.6}");
            }
            if let Some(v) = r.final_val {
                println!("final val loss: {v:.6}");
            }
        }
        Command::CollectSigma {
            common,
            checkpoint,
            n_prompts,
        } => {
            let cfg = build_config(
                common,
                "runs/sigma",
                &[
                    ("checkpoint", ckpt(checkpoint)),
                    ("sigma_prompts", n_prompts.map(|n| n.to_string())),
                ],
            )?;
            let (path, stats) = cmd_collect_sigma::<F>(&cfg)?;
            print!("{}", stats.to_text());
            println!("wrote {} ({} sites)", path.display(), stats.len());
        }
        Command::RemoveLn {
            common,
            checkpoint,
            schedule,
            scale,
            stats,
        } => {
            let cfg = build_config(
                common,
                "runs/remove-ln",
                &[
                    ("checkpoint", ckpt(checkpoint)),
                    ("schedule", schedule.clone()),
                    ("scale", scale.map(|s| s.to_string())),
                    ("stats", stats.as_deref().and_then(ckpt)),
                ],
            )?;
            let r = cmd_remove_ln::<F>(&cfg)?;
            print!("{}", r.summary_table());
            println!("run directory: {}", r.dir.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = build_config(common, "runs/eval", &[("checkpoint", ckpt(checkpoint))])?;
            let r = cmd_eval::<F>(&cfg)?;
            println!("{r}");
            println!("{}", r.machine_line());
            println!("norm ops executed: {}", r.trace.norm_ops);
        }
        Command::Generate {
            common,
            checkpoint,
            prompt,
            n_tokens,
            temperature,
            top_k,
        } => {
            let cfg = build_config(common, "runs/generate", &[("checkpoint", ckpt(checkpoint))])?;
            let opts = SampleOptions {
                temperature: *temperature,
                top_k: *top_k,
                seed: cfg.train.seed,
            };
            let text = cmd_generate::<F>(&cfg, prompt, *n_tokens, &opts)?;
            println!("{}{}", prompt, String::from_utf8_lossy(&text));
        }
        Command::Export { common, checkpoint } => {
            let cfg = build_config(common, "runs/export", &[("checkpoint", ckpt(checkpoint))])?;
            let path = cmd_export::<F>(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Curves { metrics, ema } => print!("{}", cmd_curves(metrics, *ema)?),
    }
    Ok(())
}

/// Whether `LNABL_PRECISION` selects 64-bit arithmetic.
pub fn use_f64() -> Result<bool> {
    match std::env::var("LNABL_PRECISION").as_deref() {
        Err(_) | Ok("") | Ok("f32") => Ok(false),
        Ok("f64") => Ok(true),
        Ok(other) => Err(Error::Config(format!("LNABL_PRECISION must be f32 or f64, not `{other}`"))),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) => EXIT_DIVERGENCE,
        _ => EXIT_USAGE,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = use_f64().and_then(|wide| {
        if wide {
            execute::<f64>(&cli.command)
        } else {
            execute::<f32>(&cli.command)
        }
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
