use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use skt_hang::stages::CloudSource;
use skt_hang::{run, CliError, Command, PipelineConfig};

#[derive(Parser)]
#[command(name = "skt-hang", version, about = "Semantic keypoint trajectory synthesis for hanging objects")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, default_value = "configs/desk.toml")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "SKT_HANG_SEED")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores); overrides the configuration.
    #[arg(long, global = true, env = "SKT_HANG_WORKERS")]
    workers: Option<usize>,
    /// Rerun stages even when their manifests are up to date.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Support items, evaluation objects and partial point clouds.
    GenScenes,
    /// Contacts, planned trajectories and affordance maps.
    GenGt,
    /// Train/val/test split and the template trajectory database.
    BuildTemplates,
    /// Trains the network; writes best.ckpt, last.ckpt and train_log.csv.
    Train,
    /// Predicts an SKT for one cloud.
    Predict {
        /// A point-cloud JSON file.
        #[arg(long, conflicts_with = "item")]
        cloud: Option<PathBuf>,
        /// Dataset item id, e.g. hard-003.
        #[arg(long)]
        item: Option<String>,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Defaults to eval.checkpoint from the configuration.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the waypoints as PLY.
        #[arg(long)]
        ply: Option<PathBuf>,
    },
    /// Success rates, ablations, cross-object table and timing.
    Eval,
    /// Composite PLY of a cloud, its predicted affordance and trajectories.
    ExportViz {
        #[arg(long)]
        item: String,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs gen-scenes through eval.
    All,
}

fn command(cmd: Cmd) -> Result<Command, CliError> {
    Ok(match cmd {
        Cmd::GenScenes => Command::GenScenes,
        Cmd::GenGt => Command::GenGt,
        Cmd::BuildTemplates => Command::BuildTemplates,
        Cmd::Train => Command::Train,
        Cmd::Eval => Command::Eval,
        Cmd::All => Command::All,
        Cmd::ExportViz { item, view, out } => Command::ExportViz { item, view, out },
        Cmd::Predict {
            cloud,
            item,
            view,
            checkpoint,
            out,
            ply,
        } => {
            let cloud = match (cloud, item) {
                (Some(path), None) => CloudSource::File(path),
                (None, Some(id)) => CloudSource::Item { id, view },
                _ => {
                    return Err(CliError::ConfigInvalid {
                        field: "predict".into(),
                        reason: "give exactly one of --cloud or --item".into(),
                    })
                }
            };
            Command::Predict {
                cloud,
                checkpoint,
                out,
                ply,
            }
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = (|| {
        let mut cfg = PipelineConfig::load(&cli.config)?;
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(w) = cli.workers {
            cfg.workers = w;
        }
        run(&command(cli.command)?, &cfg, cli.force)
    })();
    match result {
        Ok(outcomes) => {
            for o in outcomes {
                println!("{:<10} {}{}", o.stage, if o.skipped { "skipped: " } else { "" }, o.summary);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
