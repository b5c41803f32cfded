use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use contextdesc::losses::Streams;
use contextdesc::matching::DEFAULT_THRESHOLD_PX;
use contextdesc_cli::commands::{
    cmd_augment, cmd_eval, cmd_gen, cmd_gradcheck, cmd_train, cmd_verify, AugmentArgs, EvalArgs, GenArgs,
    GradcheckArgs, TrainArgs, VerifyArgs,
};

#[derive(Parser)]
#[command(name = "contextdesc", version, about = "Context-augmented local descriptors on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_streams(s: &str) -> Result<Streams, String> {
    s.parse().map_err(|e| format!("{e}"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes as `scene_NNN` directories.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Base scene seed; scene i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory of scenes.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training seed; also seeds the model initialisation.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Model file; the log and metadata are written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Write augmented descriptors for both views of one scene.
    Augment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// raw, +geo, +vis or +both.
        #[arg(long, value_parser = parse_streams, default_value = "+both")]
        streams: Streams,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match and score one scene or every scene under a directory.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        /// Directory holding `desc_a.ctxm` and `desc_b.ctxm` (per scene name when evaluating a root).
        #[arg(long)]
        desc: Option<PathBuf>,
        /// Augment on the fly with this model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_parser = parse_streams, default_value = "+both")]
        streams: Streams,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        mutual: bool,
        /// Comma-separated keypoint counts.
        #[arg(long, value_delimiter = ',')]
        densities: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD_PX)]
        threshold_px: f64,
        /// Seed of the density subsampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients with central finite differences.
    Gradcheck {
        /// First seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Corrupt the tanh derivative rule.
        #[arg(long)]
        fault: bool,
        /// Skip the finite-difference step sweep.
        #[arg(long)]
        no_sweep: bool,
    },
    /// Check every scene invariant.
    Verify {
        #[arg(long)]
        scenes: PathBuf,
    },
}

fn run(cmd: Command, out: &mut dyn Write) -> Result<bool> {
    match cmd {
        Command::Gen { config, seed, count, out: dir } => cmd_gen(&GenArgs { config, seed, count, out: dir }, out),
        Command::Train { config, seed, scenes, out: model, max_steps } => {
            cmd_train(&TrainArgs { config, seed, scenes, out: model, max_steps }, out)
        }
        Command::Augment { model, scene, streams, out: dir } => {
            cmd_augment(&AugmentArgs { model, scene, streams, out: dir }, out)
        }
        Command::Eval { scene, desc, model, streams, ratio, mutual, densities, threshold_px, seed, out: csv } => cmd_eval(
            &EvalArgs {
                scene,
                descriptors: desc,
                model,
                streams,
                ratio,
                mutual,
                densities,
                threshold_px,
                seed,
                out: csv,
            },
            out,
        ),
        Command::Gradcheck { seed, seeds, fault, no_sweep } => {
            cmd_gradcheck(&GradcheckArgs { seed, seeds, fault, sweep: !no_sweep }, out)
        }
        Command::Verify { scenes } => cmd_verify(&VerifyArgs { scenes }, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli.command, &mut lock) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: invariant violations reported above");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
