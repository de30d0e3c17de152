use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use spotter_core::data::write_generated;
use spotter_core::harness::{cmd_eval, cmd_infer, cmd_line_sensitivity, cmd_train, Protocol, RunConfig};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "spotter", version, about = "Train, run and score the point-query text spotter")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Detection,
    E2e,
    Line,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Detection => Protocol::Detection,
            ProtocolArg::E2e => Protocol::E2e,
            ProtocolArg::Line => Protocol::Line,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run config (the toy config when omitted).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Spot text in every PNG of a directory and print JSON results.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        svg_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        threshold: f64,
    },
    /// Score a checkpoint against an annotation file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        /// One word per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        threshold: f64,
    },
    /// Retrain in line mode over a grid of label perturbations.
    LineSensitivity {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        shift: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        shrink: Vec<f64>,
    },
    /// Write synthetic scenes, annotations.json and seeds.json.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run config whose generator and vocabulary are used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(RunConfig::from_json(&text)?)
        }
        None => Ok(RunConfig::toy()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, out_dir, iterations } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            if let Some(n) = iterations {
                cfg.iterations = n;
            }
            let out = cmd_train(&cfg)?;
            if let Some(last) = out.losses.last() {
                eprintln!("final loss {:.4} after {} steps", last.total, out.losses.len());
            }
            println!("{}", out.checkpoint.display());
        }
        Command::Infer { ckpt, images, svg_out, threshold } => {
            let r = cmd_infer(&ckpt, &images, svg_out.as_deref(), threshold)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Eval { ckpt, data, protocol, lexicon, threshold } => {
            let v = cmd_eval(&ckpt, &data, protocol.into(), lexicon.as_deref(), threshold)?;
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
        Command::LineSensitivity { config, shift, shrink } => {
            let cfg = load_config(config.as_deref())?;
            println!("shift,shrink,none_f1");
            for r in cmd_line_sensitivity(&cfg, &shift, &shrink)? {
                println!("{},{},{}", r.shift, r.shrink, r.none_f1);
            }
        }
        Command::Generate { out, count, seed, config } => {
            let cfg = load_config(config.as_deref())?;
            let ds = write_generated(&cfg.data.generator, &cfg.glyphs()?, count, seed, &out)?;
            eprintln!("wrote {} scenes to {}", ds.samples.len(), out.display());
        }
    }
    Ok(())
}
