use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsim_core::config::{DatasetScheme, GraphMethod, SamplerKind};
use fedsim_core::datagen::save_dataset;
use fedsim_core::engine::build_dataset;
use fedsim_core::graph::{edge_prediction_scores, write_edge_list};
use fedsim_core::runner::{load_config, run_config, run_matrix, MatrixConfig};
use fedsim_core::{AvailabilityMode, Error, Experiment, ExperimentConfig, ExperimentSeeds, SamplerConfig};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated learning with graph-based client sampling")]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        /// Experiment configuration (TOML). Defaults are used without one.
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every sampler under every availability setting for every seed.
    Matrix {
        config: PathBuf,
        /// Output directory, overriding the file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the client graph and write it as an edge list.
    Graph {
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Destination file; standard output when absent.
        #[arg(long)]
        edges: Option<PathBuf>,
        /// Also score the graph's edges against the one built from the true
        /// client features.
        #[arg(long)]
        score: bool,
    },
    /// Write the availability trace `round,client_id,active`.
    Availability {
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Destination file; standard output when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Generate the configured dataset and save it in binary form.
    Data {
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        dump: PathBuf,
    },
}

/// Command-line values that take precedence over the configuration file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    /// Clients sampled per round.
    #[arg(long)]
    sample: Option<usize>,
    /// Sets the data, training and availability seeds at once.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = parse_sampler)]
    sampler: Option<SamplerKind>,
    /// Diversity weight of the graph-based sampler.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<DatasetScheme>,
    #[arg(long, value_parser = parse_graph)]
    graph: Option<GraphMethod>,
    /// Availability mode (IDL, MDF, LDF, YMF, YC, LN, SLN).
    #[arg(long)]
    mode: Option<AvailabilityMode>,
    /// Availability strength.
    #[arg(long)]
    beta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value `{s}`"))
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    parse_enum(s)
}

fn parse_scheme(s: &str) -> Result<DatasetScheme, String> {
    parse_enum(s)
}

fn parse_graph(s: &str) -> Result<GraphMethod, String> {
    parse_enum(s)
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.clients {
            cfg.num_clients = v;
        }
        if let Some(v) = self.sample {
            cfg.clients_per_round = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.seeds = ExperimentSeeds::uniform(v);
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.sampler {
            cfg.sampler.kind = v;
        }
        if let Some(v) = self.alpha {
            cfg.sampler.alpha = v;
        }
        if let Some(v) = self.scheme {
            cfg.dataset.scheme = v;
        }
        if let Some(v) = self.graph {
            cfg.graph.method = v;
        }
        if let Some(v) = self.mode {
            cfg.availability.mode = v;
        }
        if let Some(v) = self.beta {
            cfg.availability.beta = v;
        }
        if let Some(v) = &self.out {
            cfg.output.dir = Some(v.clone());
        }
    }
}

fn config(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::new(DatasetScheme::Synthetic, SamplerConfig::fedgs(1.0)),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_out(w: &mut dyn Write, text: &str) -> Result<(), Error> {
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::Parse(format!("writing output: {e}")))
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config: path, overrides } => {
            let cfg = config(path.as_deref(), &overrides)?;
            let outcome = run_config(&cfg)?;
            let s = &outcome.summary;
            println!(
                "{} under {}: min test loss {:.6} (round {}), final test loss {:.6}, count variance {:.4}",
                s.sampler,
                s.availability,
                s.min_test_loss,
                s.min_test_loss_round.map_or("-".to_string(), |r| r.to_string()),
                s.final_test_loss,
                s.final_counts_variance
            );
        }
        Command::Matrix { config: path, out } => {
            let mut m = MatrixConfig::load(&path)?;
            if out.is_some() {
                m.output_dir = out;
            }
            for cell in run_matrix(&m)? {
                println!(
                    "{} {} seed {}: min test loss {:.6}, count variance {:.4}",
                    cell.sampler, cell.availability, cell.seed, cell.summary.min_test_loss, cell.summary.final_counts_variance
                );
            }
        }
        Command::Graph {
            config: path,
            overrides,
            edges,
            score,
        } => {
            let cfg = config(path.as_deref(), &overrides)?;
            let exp = Experiment::prepare(&cfg)?;
            write_out(&mut *sink(edges.as_deref())?, &write_edge_list(exp.graph()))?;
            if score {
                let mut oracle_cfg = cfg.clone();
                oracle_cfg.graph.method = GraphMethod::Oracle;
                let oracle = Experiment::prepare(&oracle_cfg)?;
                let s = edge_prediction_scores(exp.graph(), oracle.graph())?;
                eprintln!("precision {:.4} recall {:.4} f1 {:.4}", s.precision, s.recall, s.f1);
            }
        }
        Command::Availability {
            config: path,
            overrides,
            trace,
        } => {
            let cfg = config(path.as_deref(), &overrides)?;
            let dataset = build_dataset(&cfg.dataset, cfg.num_clients, cfg.seeds.data)?;
            let exp = Experiment::from_dataset(&cfg, &dataset)?;
            let mut w = sink(trace.as_deref())?;
            exp.availability().write_trace_csv(&mut w, cfg.rounds)?;
        }
        Command::Data {
            config: path,
            overrides,
            dump,
        } => {
            let cfg = config(path.as_deref(), &overrides)?;
            let dataset = build_dataset(&cfg.dataset, cfg.num_clients, cfg.seeds.data)?;
            save_dataset(&dump, &dataset)?;
            println!(
                "{} clients, {} training examples, {} test examples",
                dataset.num_clients(),
                dataset.total_examples(),
                dataset.test_set.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(3),
                Error::Config { .. } | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
