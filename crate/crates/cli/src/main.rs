use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use coopmcts::datagen::{self, DatagenConfig};
use coopmcts::experiment::{self, ExperimentSpec, PriorSet};
use coopmcts::mcts::{search, ActionPrior, Integration, MdnPrior, Strategy};
use coopmcts::mdn::{load_weights, save_weights, MdnMetadata, MdnWeights};
use coopmcts::scene::{load_scenario, Scenario};

#[derive(Parser)]
#[command(name = "coopmcts", version, about = "Cooperative multi-agent MCTS planner for urban driving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Baseline,
    Mdn,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegrationArg {
    Root,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search on a scenario's initial scene and print the result JSON.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum, default_value = "baseline")]
        strategy: StrategyArg,
        #[arg(long)]
        mdn_weights: Option<PathBuf>,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long, value_enum, default_value = "root")]
        integration: IntegrationArg,
        #[arg(long, value_enum, default_value = "off")]
        selection: Switch,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment spec and write CSV, JSON and SVG reports.
    Evaluate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a training dataset from baseline searches.
    Datagen {
        /// Scenario file or directory of scenario files.
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long, default_value_t = 85)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        iterations: Option<usize>,
        /// Downsample to equal counts per semantic action class.
        #[arg(long)]
        balance: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit K=2 and K=3 mixture labels in place, dropping degenerate records.
    FitLabels {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-render reports from a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a randomly initialized weights file.
    InitWeights {
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            let msg = serde_json::json!({ "error": e.to_string(), "chain": chain });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan {
            scenario,
            iterations,
            strategy,
            mdn_weights,
            components,
            integration,
            selection,
            seed,
            out,
        } => {
            let sc = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let mut config = sc.search.clone();
            if let Some(n) = iterations {
                config.iterations = n;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            config.integration = match integration {
                IntegrationArg::Root => Integration::Root,
                IntegrationArg::All => Integration::All,
            };
            config.use_selection_bias = matches!(selection, Switch::On);
            let prior: Option<Box<dyn ActionPrior>> = match strategy {
                StrategyArg::Baseline => {
                    config.strategy = Strategy::Baseline;
                    None
                }
                StrategyArg::Mdn => {
                    let Some(path) = mdn_weights else {
                        bail!("--strategy mdn needs --mdn-weights");
                    };
                    let w = load_weights(&path).with_context(|| format!("loading {}", path.display()))?;
                    let k = w.metadata().components;
                    if let Some(c) = components {
                        if c != k {
                            bail!("--components {c} but {} has {k} components", path.display());
                        }
                    }
                    config.strategy = Strategy::Mdn;
                    config.components = k;
                    Some(Box::new(MdnPrior::new(Arc::new(w))))
                }
            };
            let result = search(&sc.scene, &[], &config, &sc.reward, prior.as_deref()).context("search failed")?;
            let text = result.to_json();
            match out {
                Some(p) => std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => writeln!(std::io::stdout(), "{text}").context("writing stdout")?,
            }
        }
        Command::Evaluate { spec, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            let scenarios = spec.load_scenarios()?;
            let priors = load_priors(&spec)?;
            let table = experiment::run_experiment(&spec, &scenarios, &priors)?;
            for p in experiment::report(&table, &out)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Datagen {
            scenarios,
            runs,
            seed,
            iterations,
            balance,
            out,
        } => {
            let scs = load_scenarios(&scenarios)?;
            let config = DatagenConfig {
                runs,
                seed,
                iterations,
                ..DatagenConfig::default()
            };
            let mut records = datagen::generate(&scs, &config)?;
            if balance {
                let before = records.len();
                records = datagen::balance_classes(&records);
                log::info!("balanced {before} records down to {}", records.len());
            }
            let bounds = scs[0].search.action_bounds;
            let echo = serde_json::json!({
                "datagen": config,
                "scenarios": scs.iter().map(|s| s.name.clone()).collect::<Vec<_>>(),
                "balanced": balance,
            });
            let m = datagen::write_dataset(&out, &records, &config.features, &bounds, echo)?;
            log::info!("wrote {} records ({} failed) to {}", m.records, m.failed_records, out.display());
        }
        Command::FitLabels { dataset, seed } => {
            let (manifest, records) = datagen::read_dataset(&dataset)?;
            let (kept, dropped) = datagen::fit_all_labels(&records, seed);
            for reason in &dropped {
                log::warn!("dropped {reason}");
            }
            datagen::write_dataset(
                &dataset,
                &kept,
                &manifest.features,
                &manifest.action_bounds,
                manifest.config,
            )?;
            log::info!("labelled {} records, dropped {}", kept.len(), dropped.len());
        }
        Command::Report { input, out } => {
            let table = experiment::read_table(&input)?;
            if table.rows.is_empty() {
                bail!("{} holds no result rows", input.display());
            }
            for p in experiment::report(&table, &out)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::InitWeights { components, seed, out } => {
            let w = MdnWeights::random(MdnMetadata::new(components), seed)?;
            save_weights(&w, &out)?;
        }
    }
    Ok(())
}

fn load_priors(spec: &ExperimentSpec) -> Result<PriorSet> {
    let mut priors = PriorSet::new();
    for (key, path) in &spec.weights {
        let k: usize = key.parse().with_context(|| format!("weights key {key:?} is not a component count"))?;
        if !path.exists() {
            log::warn!("weights for K={k} missing at {}", path.display());
            continue;
        }
        let w = load_weights(path).with_context(|| format!("loading {}", path.display()))?;
        if w.metadata().components != k {
            bail!("{} has {} components, listed under {k}", path.display(), w.metadata().components);
        }
        priors.insert(k, Arc::new(MdnPrior::new(Arc::new(w))));
    }
    Ok(priors)
}

fn load_scenarios(path: &Path) -> Result<Vec<Scenario>> {
    let files = if path.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        bail!("no scenario files in {}", path.display());
    }
    files
        .iter()
        .map(|f| load_scenario(f).with_context(|| format!("loading {}", f.display())))
        .collect()
}
