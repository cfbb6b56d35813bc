use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use iftrack_cli::render::Palette;
use iftrack_cli::{run, Command, Overrides, RunConfig};
use iftrack_core::analysis::TestKind;
use iftrack_core::infodyn::EntropyMode;

/// Information-flow trajectory analysis of stepwise reasoning traces.
///
/// The scoring endpoint's API key is read from IFTRACK_API_KEY.
#[derive(Parser, Debug)]
#[command(name = "iftrack", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    grid_nx: Option<usize>,
    #[arg(long)]
    grid_ny: Option<usize>,
    #[arg(long, value_parser = parse_mode)]
    entropy_mode: Option<EntropyMode>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    quantile: Option<f64>,
    /// Later-stage window for cohort cosines, as `A,B`.
    #[arg(long, value_parser = parse_window)]
    tau_window: Option<(f64, f64)>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cohort filter such as `reasoning_type=analytic` or `extraversion>=4`;
    /// repeat to combine.
    #[arg(long = "filter")]
    filters: Vec<String>,
    #[arg(long, value_parser = parse_test)]
    test: Option<TestKind>,
    #[arg(long)]
    bootstrap_n: Option<usize>,
    #[arg(long, value_enum)]
    palette: Option<Palette>,
}

fn parse_mode(s: &str) -> Result<EntropyMode, String> {
    s.parse().map_err(|e: iftrack_core::Error| e.to_string())
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected A,B")?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_test(s: &str) -> Result<TestKind, String> {
    match s {
        "welch" => Ok(TestKind::Welch),
        "mann-whitney" | "mann_whitney" => Ok(TestKind::MannWhitney),
        _ => Err(format!("unknown test {s:?} (welch, mann-whitney)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    cfg.apply(Overrides {
        input: cli.input,
        embeddings: cli.embeddings,
        output: cli.output,
        grid_nx: cli.grid_nx,
        grid_ny: cli.grid_ny,
        entropy_mode: cli.entropy_mode,
        theta: cli.theta,
        quantile: cli.quantile,
        tau_window: cli.tau_window,
        seed: cli.seed,
        filters: cli.filters,
        test: cli.test,
        bootstrap_n: cli.bootstrap_n,
        palette: cli.palette,
    });
    match run(cli.command, &cfg) {
        Ok(m) => {
            println!(
                "{}: {} output(s) under {}",
                m.command,
                m.outputs.len(),
                cfg.output.display()
            );
            for (k, v) in &m.warnings {
                eprintln!("warning: {k}: {v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
