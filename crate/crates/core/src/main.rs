use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use multisense::runner::{exit_code, run, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "multisense", version, about = "Train and evaluate multimodal object-recognition models")]
struct Cli {
    /// Print the default experiment config as TOML and exit.
    #[arg(long)]
    print_default_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments described by a TOML config file.
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pixels per confusion-matrix cell in the heatmap images.
        #[arg(long)]
        heatmap_zoom: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.print_default_config {
        print!("{}", ExperimentConfig::default().to_toml());
        return ExitCode::SUCCESS;
    }
    let Some(Command::Run { config, seed, out, heatmap_zoom }) = cli.command else {
        eprintln!("nothing to do; try `multisense run <config>` or --print-default-config");
        return ExitCode::from(2);
    };
    let result = ExperimentConfig::load(&config).and_then(|mut cfg| {
        Overrides { seed, out_dir: out, heatmap_zoom }.apply(&mut cfg);
        cfg.validate()?;
        run(&cfg).map(|rows| (cfg, rows))
    });
    match result {
        Ok((cfg, rows)) => {
            for r in rows {
                println!("{:<20} accuracy {:.4}  f1 {:.4}", r.model.name(), r.report.accuracy, r.report.f1_weighted);
            }
            println!("results written to {}", cfg.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
