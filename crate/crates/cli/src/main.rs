//! `scoresens`: configuration-driven sensitivity experiments.
//!
//! Exit status: 0 on success, 2 for configuration errors (nothing is
//! written), 3 for numerical failures, 1 for anything else.

mod config;
mod experiment;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Need, SchemaError};
use experiment::Experiment;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "SCORESENS_OUT";
const DEFAULT_OUT: &str = "scoresens-out";

#[derive(Debug, Parser)]
#[command(name = "scoresens", version, about = "Score-based sensitivity analysis experiments")]
struct Cli {
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, then
    /// $SCORESENS_OUT, then ./scoresens-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Everything the config asks for, plus a manifest and a report.
    Run { config: PathBuf },
    /// Writes sample.csv with columns x_1..x_n, y.
    Simulate {
        config: PathBuf,
        /// Rows; defaults to samples.simulate.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Writes sensitivities.csv.
    Sensitivity { config: PathBuf },
    /// Writes murphy.csv and murphy.svg.
    Murphy { config: PathBuf },
    /// Writes interactions.csv.
    Interaction { config: PathBuf },
    /// Trains one net per subset: nets/net_<subset>.json and nets/loss_<subset>.csv.
    Train { config: PathBuf },
    /// Summarizes an output directory into report.md.
    Report { dir: Option<PathBuf> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<SchemaError>().is_some() {
        2
    } else if e.chain().any(|c| c.is::<scoresens::Error>()) {
        3
    } else {
        1
    }
}

fn load(cli: &Cli, path: &Path, need: Need) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    // Relative CSV inputs resolve against the config's directory.
    if let Some(p) = &cfg.eval_csv {
        if p.is_relative() && !p.is_file() {
            cfg.eval_csv = Some(path.parent().unwrap_or(Path::new(".")).join(p));
        }
    }
    cfg.validate(need)?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn file_label(s: &scoresens::Subset) -> String {
    s.labels().iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-")
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let (need, path) = match &cli.command {
        Command::Run { config } => (Need::Run, config),
        Command::Simulate { config, .. } => (Need::Simulate, config),
        Command::Sensitivity { config } => (Need::Sensitivity, config),
        Command::Murphy { config } => (Need::Murphy, config),
        Command::Interaction { config } => (Need::Interaction, config),
        Command::Train { config } => (Need::Train, config),
        Command::Report { dir } => {
            let dir = dir.clone().unwrap_or_else(|| out_dir(cli, None));
            let md = output::report(&dir)?;
            let path = dir.join("report.md");
            output::write_all(&dir, &[(path.clone(), md)])?;
            return Ok(vec![path]);
        }
    };
    let cfg = load(cli, path, need)?;
    let dir = out_dir(cli, Some(&cfg));
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    let mut net_seeds = BTreeMap::new();
    match &cli.command {
        Command::Simulate { n, .. } => {
            let mut cfg = cfg.clone();
            if let Some(n) = n {
                cfg.samples.simulate = *n;
            }
            let sample = experiment::simulate(&cfg)?;
            files.push((dir.join("sample.csv"), output::sample_csv(&sample)?));
        }
        Command::Train { .. } => {
            let subsets = cfg.needed_subsets(Need::Train);
            for (s, run) in experiment::train_nets(&cfg, &subsets)? {
                let label = file_label(&s);
                net_seeds.insert(s.to_string(), experiment::net_seed(&cfg, &s));
                files.push((
                    dir.join("nets").join(format!("net_{label}.json")),
                    run.net.to_json()? + "\n",
                ));
                files.push((
                    dir.join("nets").join(format!("loss_{label}.csv")),
                    output::loss_csv(&run.losses)?,
                ));
            }
        }
        _ => {
            let exp = Experiment::prepare(&cfg, need)?;
            for s in exp.traces.keys() {
                net_seeds.insert(s.to_string(), experiment::net_seed(&cfg, s));
            }
            let all = need == Need::Run;
            if (all && !cfg.subsets.is_empty()) || need == Need::Sensitivity {
                files.push((
                    dir.join("sensitivities.csv"),
                    output::sensitivities_csv(&cfg, &exp.sensitivities()?)?,
                ));
            }
            if (all && !cfg.interactions.is_empty()) || need == Need::Interaction {
                files.push((
                    dir.join("interactions.csv"),
                    output::interactions_csv(&exp.interactions()?)?,
                ));
            }
            if all || need == Need::Murphy {
                if let Some(curve) = exp.murphy()? {
                    files.push((dir.join("murphy.csv"), output::murphy_csv(&curve)?));
                    if cfg.murphy.as_ref().is_some_and(|m| m.svg) {
                        let title = format!("{}: {} Murphy diagram", cfg.model.id(), cfg.functional);
                        files.push((dir.join("murphy.svg"), output::murphy_svg(&curve, &title)));
                    }
                }
            }
            if all {
                for (s, losses) in &exp.traces {
                    files.push((
                        dir.join("nets").join(format!("loss_{}.csv", file_label(s))),
                        output::loss_csv(losses)?,
                    ));
                }
            }
        }
    }
    let command = format!("{:?}", need).to_lowercase();
    let manifest = output::manifest(&cfg, &command, net_seeds, &files)?;
    files.push((dir.join("run-manifest.json"), manifest));
    output::write_all(&dir, &files)?;
    let mut written: Vec<PathBuf> = files.into_iter().map(|(p, _)| p).collect();
    if need == Need::Run && dir.join("sensitivities.csv").is_file() {
        let path = dir.join("report.md");
        output::write_all(&dir, &[(path.clone(), output::report(&dir)?)])?;
        written.push(path);
    }
    Ok(written)
}
