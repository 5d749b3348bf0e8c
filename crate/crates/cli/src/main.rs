use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

mod commands;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "srn",
    version,
    about = "Scale-recurrent multi-scale image deblurring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic blurry/sharp dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// Image size as HxW, e.g. 96x96.
        #[arg(long, value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a model on the train split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `key = value` configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Deblur a single PPM image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Report PSNR and SSIM of restored images against their sharp references.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        /// Run one check only.
        #[arg(long)]
        module: Option<String>,
    },
    /// Print the parameter count of a model variant.
    Params {
        #[arg(long)]
        variant: String,
        #[arg(long, default_value_t = 3, value_parser = parse_kernel)]
        kernel: usize,
        #[arg(long)]
        base_channels: Option<usize>,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let dim = |v: &str| match v.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("invalid dimension `{v}`")),
        Ok(n) => Ok(n),
    };
    Ok((dim(h)?, dim(w)?))
}

fn parse_kernel(s: &str) -> Result<usize, String> {
    match s {
        "3" => Ok(3),
        "5" => Ok(5),
        _ => Err(format!("kernel size must be 3 or 5, got `{s}`")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            out,
            count,
            size,
            seed,
        } => commands::synth(&out, count, size, seed),
        Command::Train {
            data,
            config,
            out,
            resume,
        } => commands::train(&data, &config, &out, resume.as_deref()),
        Command::Infer {
            ckpt,
            input,
            output,
        } => commands::infer(&ckpt, &input, &output),
        Command::Eval {
            ckpt,
            data,
            split,
            csv,
        } => commands::eval(&ckpt, &data, &split, csv.as_deref()),
        Command::Gradcheck { module } => commands::gradcheck(module.as_deref()),
        Command::Params {
            variant,
            kernel,
            base_channels,
        } => commands::params(&variant, kernel, base_channels),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("96x128"), Ok((96, 128)));
        assert_eq!(parse_size("7X5"), Ok((7, 5)));
        assert!(parse_size("96").is_err());
        assert!(parse_size("0x4").is_err());
        assert!(parse_size("ax4").is_err());
    }

    #[test]
    fn command_line_shape() {
        Cli::command().debug_assert();
        assert!(
            Cli::try_parse_from(["srn", "params", "--variant", "SR_EDRB3", "--kernel", "4"])
                .is_err()
        );
        assert!(Cli::try_parse_from(["srn", "gradcheck", "--bogus"]).is_err());
    }
}
