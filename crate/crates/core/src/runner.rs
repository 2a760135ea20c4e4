//! Configuration files, result files and multi-run comparisons.
//!
//! A run writes into its output directory:
//!
//! * `rounds.csv`: one row per round with the active-set size, the selected
//!   clients, the objective, the diversity score, the count variance and the
//!   train and test losses;
//! * `summary.json`: the [`RunSummary`];
//! * `counts.csv`: final participation count per client;
//! * `availability.csv` (optional): the active-set trace;
//! * `config.toml`: the configuration with all defaults filled in.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{AvailabilityConfig, ExperimentConfig, SamplerConfig};
use crate::domain::ExperimentSeeds;
use crate::engine::{Experiment, ExperimentOutcome, RoundRecord, RunSummary};
use crate::error::{Error, Result};

pub const ROUNDS_HEADER: [&str; 8] = [
    "t",
    "num_active",
    "selected",
    "objective",
    "g",
    "var_v",
    "train_loss",
    "test_loss",
];

/// Parses and validates a TOML experiment configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Serialises a configuration with every field spelled out.
pub fn config_to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Parse(e.to_string()))
}

/// Rounds `x` to 12 significant digits and prints the shortest decimal that
/// reads back as the rounded value.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    rounded.to_string()
}

/// One row of `rounds.csv`, as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub num_active: usize,
    pub selected: Vec<usize>,
    pub objective: Option<f64>,
    pub diversity: f64,
    pub counts_variance: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

pub fn write_rounds_csv<W: Write>(w: W, records: &[RoundRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Parse(format!("writing rounds: {e}"));
    out.write_record(ROUNDS_HEADER).map_err(csv_err)?;
    for r in records {
        let selected: Vec<String> = r.selected.iter().map(usize::to_string).collect();
        out.write_record([
            r.round.to_string(),
            r.num_active.to_string(),
            selected.join(";"),
            r.objective.map(format_sig).unwrap_or_default(),
            format_sig(r.diversity),
            format_sig(r.counts_variance),
            format_sig(r.train_loss),
            format_sig(r.test_loss),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Parse(format!("writing rounds: {e}")))?;
    Ok(())
}

pub fn read_rounds_csv<R: Read>(r: R) -> Result<Vec<RoundRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if header.iter().ne(ROUNDS_HEADER) {
        return Err(Error::Parse(format!("unexpected rounds header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let bad = |what: &str| Error::Parse(format!("row {}: bad {what}", line + 1));
        let num = |i: usize, what: &str| -> Result<f64> { rec[i].parse().map_err(|_| bad(what)) };
        let selected = if rec[2].is_empty() {
            Vec::new()
        } else {
            rec[2]
                .split(';')
                .map(|s| s.parse().map_err(|_| bad("selected")))
                .collect::<Result<_>>()?
        };
        rows.push(RoundRow {
            round: rec[0].parse().map_err(|_| bad("t"))?,
            num_active: rec[1].parse().map_err(|_| bad("num_active"))?,
            selected,
            objective: if rec[3].is_empty() { None } else { Some(num(3, "objective")?) },
            diversity: num(4, "g")?,
            counts_variance: num(5, "var_v")?,
            train_loss: num(6, "train_loss")?,
            test_loss: num(7, "test_loss")?,
        });
    }
    Ok(rows)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Creates the output directory and checks it is writable, so that a bad
/// path fails before any training happens.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-check");
    File::create(&probe).map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// Writes every result file of a finished (or diverged) run.
pub fn write_results(dir: &Path, experiment: &Experiment, outcome: &ExperimentOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = experiment.config();

    let path = dir.join("rounds.csv");
    write_rounds_csv(create(&path)?, &outcome.records)?;

    let path = dir.join("summary.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &outcome.summary).map_err(|e| Error::Parse(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("config.toml");
    fs::write(&path, config_to_toml(cfg)?).map_err(|e| Error::io(&path, e))?;

    if cfg.output.counts_histogram {
        let path = dir.join("counts.csv");
        let mut w = create(&path)?;
        let mut text = String::from("client,count\n");
        for (k, c) in outcome.summary.final_counts.iter().enumerate() {
            text.push_str(&format!("{k},{c}\n"));
        }
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
    }
    if cfg.output.availability_trace {
        let path = dir.join("availability.csv");
        experiment.availability().write_trace_csv(create(&path)?, cfg.rounds)?;
    }
    Ok(())
}

/// Prepares, runs and (when an output directory is configured) records an
/// experiment. A diverged run still writes its partial logs before the
/// divergence is returned as an error.
pub fn run_config(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if let Some(dir) = &cfg.output.dir {
        prepare_output_dir(dir)?;
    }
    let experiment = Experiment::prepare(cfg)?;
    let outcome = experiment.run()?;
    if let Some(dir) = &cfg.output.dir {
        write_results(dir, &experiment, &outcome)?;
        info!("results written to {}", dir.display());
    }
    outcome.check()?;
    Ok(outcome)
}

/// A grid of runs: every sampler under every availability setting for every
/// seed, all sharing the `base` settings.
///
/// ```toml
/// seeds = [0, 1, 2]
/// output_dir = "out/matrix"
///
/// [base]
/// rounds = 200
/// dataset = { scheme = "synthetic" }
///
/// [[samplers]]
/// kind = "fedgs"
/// alpha = 1.0
///
/// [[samplers]]
/// kind = "uniform"
///
/// [[availability]]
/// mode = "IDL"
///
/// [[availability]]
/// mode = "MDF"
/// beta = 0.7
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Experiment settings shared by all cells, without `sampler`,
    /// `availability` and `seeds`.
    pub base: toml::Table,
    pub samplers: Vec<SamplerConfig>,
    #[serde(default = "ideal_only")]
    pub availability: Vec<AvailabilityConfig>,
}

fn ideal_only() -> Vec<AvailabilityConfig> {
    vec![AvailabilityConfig::default()]
}

/// One cell of a matrix run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub sampler: String,
    pub availability: String,
    pub seed: u64,
    pub summary: RunSummary,
}

impl MatrixConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let m: MatrixConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if m.seeds.is_empty() || m.samplers.is_empty() || m.availability.is_empty() {
            return Err(Error::config("matrix", "seeds, samplers and availability must be nonempty"));
        }
        for key in ["sampler", "availability", "seeds"] {
            if m.base.contains_key(key) {
                return Err(Error::config(format!("base.{key}"), "is set per cell by the matrix"));
            }
        }
        for cell in m.cells() {
            cell?.1.validate()?;
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every cell's label and configuration, seeds varying fastest.
    pub fn cells(&self) -> impl Iterator<Item = Result<(String, ExperimentConfig)>> + '_ {
        self.samplers.iter().flat_map(move |s| {
            self.availability.iter().flat_map(move |a| {
                self.seeds.iter().map(move |&seed| {
                    let mut table = self.base.clone();
                    table.insert("sampler".into(), to_value(s)?);
                    table.insert("availability".into(), to_value(a)?);
                    table.insert("seeds".into(), to_value(&ExperimentSeeds::uniform(seed))?);
                    let mut cfg: ExperimentConfig = toml::Value::Table(table)
                        .try_into()
                        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
                    let label = format!("{}_{}_seed{seed}", sampler_label(s), a.label());
                    cfg.output.dir = self.output_dir.as_ref().map(|d| d.join(&label));
                    if cfg.name.is_none() {
                        cfg.name = Some(label.clone());
                    }
                    Ok((label, cfg))
                })
            })
        })
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<toml::Value> {
    toml::Value::try_from(v).map_err(|e| Error::Parse(e.to_string()))
}

fn sampler_label(s: &SamplerConfig) -> String {
    match s.kind {
        crate::config::SamplerKind::Fedgs => format!("fedgs{}", s.alpha),
        k => k.name().to_string(),
    }
}

/// Runs every cell of the matrix in turn and writes `comparison.csv` (one
/// row per cell) to the output directory.
pub fn run_matrix(matrix: &MatrixConfig) -> Result<Vec<MatrixCell>> {
    let cells: Vec<(String, ExperimentConfig)> = matrix.cells().collect::<Result<_>>()?;
    if let Some(dir) = &matrix.output_dir {
        prepare_output_dir(dir)?;
    }
    let mut results = Vec::with_capacity(cells.len());
    for (label, cfg) in &cells {
        info!("matrix cell {label}");
        let outcome = run_config(cfg)?;
        results.push(MatrixCell {
            sampler: sampler_label(&cfg.sampler),
            availability: cfg.availability.label(),
            seed: cfg.seeds.data,
            summary: outcome.summary,
        });
    }
    if let Some(dir) = &matrix.output_dir {
        let path = dir.join("comparison.csv");
        write_comparison_csv(create(&path)?, &results)?;
    }
    Ok(results)
}

pub fn write_comparison_csv<W: Write>(w: W, cells: &[MatrixCell]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Parse(format!("writing comparison: {e}"));
    out.write_record([
        "sampler",
        "availability",
        "seed",
        "min_test_loss",
        "final_test_loss",
        "final_test_accuracy",
        "var_v",
        "count_spread",
        "mean_g",
        "skipped_rounds",
    ])
    .map_err(csv_err)?;
    for c in cells {
        let s = &c.summary;
        out.write_record([
            c.sampler.clone(),
            c.availability.clone(),
            c.seed.to_string(),
            format_sig(s.min_test_loss),
            format_sig(s.final_test_loss),
            format_sig(s.final_test_accuracy),
            format_sig(s.final_counts_variance),
            s.final_counts_spread.to_string(),
            format_sig(s.mean_diversity),
            s.skipped_rounds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Parse(format!("writing comparison: {e}")))?;
    Ok(())
}
