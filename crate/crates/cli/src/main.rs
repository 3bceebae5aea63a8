use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "spl", version, about = "Inpainting with distilled semantic priors")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML config layered over the preset it names (desk by default).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `section.key=value` override; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "spl-out")]
    pub out: PathBuf,
    /// Seed for the command's randomness; recorded in the outputs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus a per-step loss log.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint over a fixed image/mask pairing, by mask ratio.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image directory; the configured training images otherwise.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Mask directory; generated evaluation masks otherwise.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Pairing manifest; built from the pairing seed otherwise.
        #[arg(long)]
        pairing: Option<PathBuf>,
    },
    /// Fill the holes of one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
    },
    /// Cluster the learned priors of one image and colour the clusters.
    VisualizePriors {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Mask applied before encoding; none by default.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = spl_core::viz::DEFAULT_K)]
        k: usize,
    },
    /// Generate irregular masks as PNG files.
    MakeMasks {
        #[arg(long)]
        count: usize,
        /// Ratio bucket label such as `20%-30%`; repeatable, all six by default.
        #[arg(long = "bucket")]
        buckets: Vec<String>,
        /// Side length; the configured image size by default.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Write a one-mask-per-image evaluation manifest.
    MakePairing {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        masks: PathBuf,
    },
    /// Train the base config and one ablated variant, then compare them on
    /// the same pairing.
    Ablate {
        /// `wo-S`, `concat` or `alt-teacher`.
        name: String,
        /// Registry teacher for `alt-teacher`; the first other entry by default.
        #[arg(long)]
        teacher: Option<String>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Train { resume } => commands::train(g, resume.as_deref()),
        Command::Eval {
            checkpoint,
            images,
            masks,
            pairing,
        } => commands::eval(g, &checkpoint, images.as_deref(), masks.as_deref(), pairing.as_deref()),
        Command::Infer { checkpoint, image, mask } => commands::infer(g, &checkpoint, &image, &mask),
        Command::VisualizePriors {
            checkpoint,
            image,
            mask,
            k,
        } => commands::visualize_priors(g, &checkpoint, &image, mask.as_deref(), k),
        Command::MakeMasks { count, buckets, size } => commands::make_masks(g, count, &buckets, size),
        Command::MakePairing { images, masks } => commands::make_pairing(g, &images, &masks),
        Command::Ablate { name, teacher } => commands::ablate(g, &name, teacher.as_deref()),
    };
    if let Err(e) = result {
        log::error!("{e}");
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
