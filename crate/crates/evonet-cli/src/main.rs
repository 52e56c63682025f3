//! Command-line driver: train ancestors, evolve single lineages, run the
//! full factor sweep, and turn stored results into a merged CSV plus plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use evonet::genome::format::save_genome;
use evonet::harness::{
    self, cell_dir_name, ExperimentConfig, LineageData, SweepResult,
};
use evonet::nn::TrainBudget;

#[derive(Parser)]
#[command(
    name = "evonet",
    version,
    about = "Evolutionary synthesis of progressively sparser networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one generation-0 network and report its held-out accuracy
    TrainAncestor(TrainAncestorArgs),
    /// Run a single (m, cluster-factor) lineage and store its records
    Evolve(EvolveArgs),
    /// Run the full m × cluster-factor grid, one directory per cell
    Sweep(SweepArgs),
    /// Merge stored cell records into records.csv and SVG plots
    Report(ReportArgs),
}

/// Flags shared by every command that loads training data.
#[derive(Args)]
struct DataArgs {
    /// Directory holding the four gzipped IDX files
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Stratified fraction of the training split to use
    #[arg(long, value_name = "FRACTION")]
    subset_fraction: Option<f64>,
}

/// Flags shared by every command that trains networks.
#[derive(Args)]
struct BudgetArgs {
    /// Training epochs per network
    #[arg(long)]
    epochs: Option<u32>,
    /// Minibatch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Learning-rate multiplier applied every decay interval
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Epochs between learning-rate decays
    #[arg(long)]
    decay_every: Option<u32>,
}

impl BudgetArgs {
    fn apply(&self, budget: &mut TrainBudget) {
        if let Some(v) = self.epochs {
            budget.epochs = v;
        }
        if let Some(v) = self.batch_size {
            budget.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            budget.learning_rate = v;
        }
        if let Some(v) = self.lr_decay {
            budget.lr_decay = v;
        }
        if let Some(v) = self.decay_every {
            budget.decay_every = v;
        }
    }
}

#[derive(Args)]
struct TrainAncestorArgs {
    /// Master seed the ancestor's RNG streams derive from
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parent count of the cell whose ancestor to reproduce
    #[arg(long, default_value_t = 1)]
    m: u32,
    /// Cluster factor of the cell whose ancestor to reproduce
    #[arg(long, default_value_t = 0.5)]
    rc: f64,
    /// Which of the cell's independently seeded ancestors to train
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Write the trained network as a checkpoint file
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct EvolveArgs {
    /// Number of parents mated per offspring
    #[arg(long)]
    m: u32,
    /// Cluster-level environmental factor
    #[arg(long)]
    rc: f64,
    /// Synapse-level environmental factor
    #[arg(long)]
    rs: Option<f64>,
    /// Generations limit (0 = ancestor only)
    #[arg(long)]
    generations: Option<u32>,
    /// Networks per generation (default: max(m, 1))
    #[arg(long)]
    population: Option<u32>,
    /// Master seed for every RNG stream in the lineage
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory the cell subdirectory is created in
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out_dir: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML experiment description; flags override its fields
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed (required: sweeps must be explicitly reproducible)
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving one subdirectory per cell
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Parent counts, comma-separated (e.g. 1,2,3,5)
    #[arg(long, value_delimiter = ',', value_name = "M,...")]
    m: Option<Vec<u32>>,
    /// Cluster factors, comma-separated (e.g. 0.5,0.55,0.6)
    #[arg(long, value_delimiter = ',', value_name = "RC,...")]
    rc: Option<Vec<f64>>,
    /// Synapse-level environmental factor
    #[arg(long)]
    rs: Option<f64>,
    /// Generations limit per lineage
    #[arg(long)]
    generations: Option<u32>,
    /// Networks per generation (default: max(m, 1) per cell)
    #[arg(long)]
    population: Option<u32>,
    /// Concurrent cells
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep directory holding the per-cell results
    #[arg(value_name = "SWEEP_DIR")]
    dir: PathBuf,
}

/// The subset of `ExperimentConfig` a declarative file may set. Everything
/// is optional here so a file can carry just the fields it cares about;
/// flags override whatever it sets.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    m_values: Option<Vec<u32>>,
    rc_grid: Option<Vec<f64>>,
    synapse_factor: Option<f64>,
    generations: Option<u32>,
    population: Option<u32>,
    budget: Option<TrainBudget>,
    master_seed: Option<u64>,
    out_dir: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    subset_fraction: Option<f64>,
    workers: Option<usize>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<FileConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }

    fn apply(self, config: &mut ExperimentConfig) {
        if let Some(v) = self.m_values {
            config.m_values = v;
        }
        if let Some(v) = self.rc_grid {
            config.rc_grid = v;
        }
        if let Some(v) = self.synapse_factor {
            config.synapse_factor = v;
        }
        if let Some(v) = self.generations {
            config.generations = v;
        }
        if let Some(v) = self.population {
            config.population = Some(v);
        }
        if let Some(v) = self.budget {
            config.budget = v;
        }
        if let Some(v) = self.master_seed {
            config.master_seed = v;
        }
        if let Some(v) = self.out_dir {
            config.out_dir = v;
        }
        if let Some(v) = self.data_dir {
            config.data_dir = v;
        }
        if let Some(v) = self.subset_fraction {
            config.subset_fraction = v;
        }
        if let Some(v) = self.workers {
            config.workers = v;
        }
    }
}

fn apply_data_args(args: &DataArgs, config: &mut ExperimentConfig) {
    if let Some(d) = &args.data_dir {
        config.data_dir = d.clone();
    }
    if let Some(f) = args.subset_fraction {
        config.subset_fraction = f;
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::TrainAncestor(args) => train_ancestor(args),
        Command::Evolve(args) => evolve(args),
        Command::Sweep(args) => sweep(args),
        Command::Report(args) => report(args),
    }
}

fn train_ancestor(args: TrainAncestorArgs) -> Result<ExitCode, String> {
    let mut config = ExperimentConfig::defaults(args.seed, PathBuf::from("."));
    config.m_values = vec![args.m];
    config.rc_grid = vec![args.rc];
    apply_data_args(&args.data, &mut config);
    args.budget.apply(&mut config.budget);

    let (train, test) = harness::load_training_data(&config).map_err(|e| e.to_string())?;
    eprintln!(
        "training ancestor {} of cell {} on {} images",
        args.index,
        cell_dir_name(args.m, args.rc),
        train.len()
    );
    let data = LineageData {
        train: &train,
        test: &test,
    };
    let (genome, accuracy) = harness::train_ancestor(&config, args.m, args.rc, args.index, data)
        .map_err(|e| e.to_string())?;
    let storage = evonet::genome::storage_size(&genome);
    println!(
        "accuracy {accuracy:.4} on {} test images; {} live synapses; {} bytes sparse",
        test.len(),
        storage.live_synapses,
        storage.bytes
    );
    if let Some(path) = &args.out {
        save_genome(&genome, path).map_err(|e| e.to_string())?;
        println!("checkpoint written to {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn evolve(args: EvolveArgs) -> Result<ExitCode, String> {
    let mut config = ExperimentConfig::defaults(args.seed, args.out_dir);
    config.m_values = vec![args.m];
    config.rc_grid = vec![args.rc];
    if let Some(rs) = args.rs {
        config.synapse_factor = rs;
    }
    if let Some(g) = args.generations {
        config.generations = g;
    }
    config.population = args.population;
    apply_data_args(&args.data, &mut config);
    args.budget.apply(&mut config.budget);

    let result = harness::run_sweep(&config).map_err(|e| e.to_string())?;
    let cell = &result.cells[0];
    if let Some(error) = &cell.error {
        return Err(format!("lineage failed: {error}"));
    }
    for r in &cell.records {
        println!(
            "gen {:>3}: accuracy {:.4}  live {:>6}  {:>8} bytes  modeled {:.3}s",
            r.generation, r.accuracy, r.live_synapses, r.storage_bytes, r.cumulative_train_seconds
        );
    }
    println!(
        "{} records in {}",
        cell.records.len(),
        config
            .out_dir
            .join(cell_dir_name(args.m, args.rc))
            .join("records.csv")
            .display()
    );
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: SweepArgs) -> Result<ExitCode, String> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let Some(seed) = args.seed.or(file.master_seed) else {
        return Err(
            "sweep requires --seed (or master_seed in --config): every sweep must be \
             explicitly seeded so its results are reproducible"
                .into(),
        );
    };
    let mut config = ExperimentConfig::defaults(seed, PathBuf::new());
    file.apply(&mut config);
    config.master_seed = seed;
    if let Some(dir) = args.out_dir {
        config.out_dir = dir;
    }
    if config.out_dir.as_os_str().is_empty() {
        return Err("sweep requires --out-dir (or out_dir in --config)".into());
    }
    if let Some(m) = args.m {
        config.m_values = m;
    }
    if let Some(rc) = args.rc {
        config.rc_grid = rc;
    }
    if let Some(rs) = args.rs {
        config.synapse_factor = rs;
    }
    if let Some(g) = args.generations {
        config.generations = g;
    }
    if let Some(p) = args.population {
        config.population = Some(p);
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    apply_data_args(&args.data, &mut config);
    args.budget.apply(&mut config.budget);

    let result = harness::run_sweep(&config).map_err(|e| e.to_string())?;
    let csv_path = config.out_dir.join("records.csv");
    harness::export_csv(&result, &csv_path).map_err(|e| e.to_string())?;

    let mut failures = 0;
    for cell in &result.cells {
        match &cell.error {
            None => println!(
                "cell {}: {} generations",
                cell_dir_name(cell.m, cell.cluster_factor),
                cell.records.len().saturating_sub(1)
            ),
            Some(error) => {
                failures += 1;
                println!(
                    "cell {}: FAILED — {error}",
                    cell_dir_name(cell.m, cell.cluster_factor)
                );
            }
        }
    }
    println!("merged records in {}", csv_path.display());
    if failures > 0 {
        eprintln!("{failures} cell(s) failed; rerun the same command to retry them");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs) -> Result<ExitCode, String> {
    let result: SweepResult = harness::load_sweep(&args.dir).map_err(|e| e.to_string())?;
    let csv_path = args.dir.join("records.csv");
    harness::export_csv(&result, &csv_path).map_err(|e| e.to_string())?;
    println!("wrote {}", csv_path.display());

    let plot_dir = args.dir.join("plots");
    let written = harness::plot::emit_plots(&result, &plot_dir).map_err(|e| e.to_string())?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
