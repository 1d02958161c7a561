mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;

/// Satellite-assisted occupancy toolkit.
#[derive(Debug, Parser)]
#[command(name = "satocc", version)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut heading-aligned satellite slices for every pose.
    Curate {
        #[arg(long)]
        mosaic: Option<PathBuf>,
        #[arg(long)]
        poses: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project occupancy grids to height, semantic and dynamic BEV maps.
    Genlabels {
        #[arg(long)]
        occ: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pooled per-class IoU and mIoU of predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Aggregate 17 comma-separated per-class IoUs instead of grids.
        #[arg(long, conflicts_with_all = ["pred", "gt"])]
        from_per_class: Option<String>,
        #[arg(long)]
        observe_mask: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property suites; exit 0 iff all pass.
    Verify {
        /// Adjoint transforms use a shifted rig (negative control).
        #[arg(long)]
        perturb_geometry: bool,
        /// Run only these suites.
        #[arg(long)]
        suite: Vec<String>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative timing of splat against gather.
    Bench {
        #[arg(long, default_value_t = 5)]
        iters: usize,
    },
    /// Run the fusion operators on a synthetic scene and save the dynamic map.
    DemoFuse {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Print the effective configuration.
    Config,
}

/// Failure reported as one JSON line on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    #[serde(skip)]
    pub code: u8,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self { kind: kind.into(), message: message.into(), code: 2 }
    }
}

impl From<satocc::Error> for CliError {
    fn from(e: satocc::Error) -> Self {
        Self::new(e.kind(), e.to_string())
    }
}

fn merge(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let p = &mut cfg.paths;
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    match &cli.command {
        Command::Curate { mosaic, poses, out } => {
            set(&mut p.mosaic, mosaic);
            set(&mut p.poses, poses);
            set(&mut p.out, out);
        }
        Command::Genlabels { occ, out } => {
            set(&mut p.occ, occ);
            set(&mut p.out, out);
        }
        Command::Eval { pred, gt, observe_mask, out, .. } => {
            set(&mut p.pred, pred);
            set(&mut p.gt, gt);
            set(&mut p.out, out);
            cfg.observe_mask |= observe_mask;
        }
        Command::Verify { out, .. } => set(&mut p.out, out),
        Command::DemoFuse { out, .. } => set(&mut p.out, out),
        Command::Bench { .. } | Command::Config => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let cfg = merge(&cli)?;
    match cli.command {
        Command::Curate { .. } => commands::curate(&cfg),
        Command::Genlabels { .. } => commands::genlabels(&cfg),
        Command::Eval { from_per_class: Some(values), .. } => commands::eval_per_class(&values),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Verify { perturb_geometry, suite, .. } => commands::verify(&cfg, perturb_geometry, &suite),
        Command::Bench { iters } => commands::bench(&cfg, iters),
        Command::DemoFuse { size, steps, .. } => commands::demo_fuse(&cfg, size, steps),
        Command::Config => {
            println!("{}", cfg.to_json());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("error serializes"));
            ExitCode::from(e.code)
        }
    }
}
