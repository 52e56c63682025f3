//! Experiment orchestration: lineage evolution loops, the parent-count ×
//! cluster-factor sweep, per-generation records, CSV export, and SVG plots.
//!
//! A sweep cell is one lineage, identified by `(m, cluster factor)` and run
//! from a seed derived from the master seed and the cell identity alone —
//! never from scheduling order — so results are reproducible bit for bit at
//! any worker count. Completed cells leave a `DONE` marker and are skipped
//! (and re-read) on rerun.

pub mod plot;

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{load_idx, stratified_subset, DataError, Dataset, Split};
use crate::genome::{
    build_ancestor, format, storage_size, GenomeError, NetworkGenome,
};
use crate::nn::{evaluate, train, LayerSpec, NnError, TrainBudget};
use crate::rng::derive_seed;
use crate::synthesis::{
    synthesize_offspring, EnvironmentModel, MatingCoefficients, SynthesisError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Training(#[from] NnError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("genome persistence failed: {0}")]
    Format(#[from] format::FormatError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("population collapsed at generation {generation}: every offspring diverged")]
    PopulationCollapsed { generation: u32 },
    #[error("record file {path} is malformed: {detail}")]
    BadRecords { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_m_values() -> Vec<u32> {
    vec![1, 2, 3, 5]
}

/// Cluster factors 0.50 … 0.95 at 0.05 increments.
fn default_rc_grid() -> Vec<f64> {
    (0..10).map(|i| 0.50 + 0.05 * f64::from(i)).collect()
}

fn default_synapse_factor() -> f64 {
    0.70
}

fn default_generations() -> u32 {
    60
}

fn default_subset_fraction() -> f64 {
    0.1
}

fn default_workers() -> usize {
    1
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data/mnist")
}

/// Full description of a sweep (or of a single lineage, via one-element
/// grids). Loadable from a TOML file; every field has a CLI flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Parent counts to sweep.
    #[serde(default = "default_m_values")]
    pub m_values: Vec<u32>,
    /// Cluster-level environmental factors to sweep.
    #[serde(default = "default_rc_grid")]
    pub rc_grid: Vec<f64>,
    /// Synapse-level environmental factor (fixed across the sweep).
    #[serde(default = "default_synapse_factor")]
    pub synapse_factor: f64,
    /// Generations limit per lineage (0 = ancestor only).
    #[serde(default = "default_generations")]
    pub generations: u32,
    /// Networks trained per generation; defaults to max(m, 1) per cell.
    #[serde(default)]
    pub population: Option<u32>,
    #[serde(default)]
    pub budget: TrainBudget,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Stratified fraction of the training split used for all training.
    #[serde(default = "default_subset_fraction")]
    pub subset_fraction: f64,
    /// Concurrent sweep cells.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl ExperimentConfig {
    /// Library defaults for everything except the two fields with no sane
    /// default: the master seed and the output directory.
    pub fn defaults(master_seed: u64, out_dir: PathBuf) -> ExperimentConfig {
        ExperimentConfig {
            m_values: default_m_values(),
            rc_grid: default_rc_grid(),
            synapse_factor: default_synapse_factor(),
            generations: default_generations(),
            population: None,
            budget: TrainBudget::default(),
            master_seed,
            out_dir,
            data_dir: default_data_dir(),
            subset_fraction: default_subset_fraction(),
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.m_values.is_empty() || self.rc_grid.is_empty() {
            return Err(HarnessError::Config("empty m/factor grid".into()));
        }
        if self.m_values.iter().any(|&m| m == 0) {
            return Err(HarnessError::Config("parent count m must be ≥ 1".into()));
        }
        for &rc in &self.rc_grid {
            if !(0.0..=1.0).contains(&rc) {
                return Err(HarnessError::Config(format!(
                    "cluster factor {rc} outside [0, 1]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.synapse_factor) {
            return Err(HarnessError::Config(format!(
                "synapse factor {} outside [0, 1]",
                self.synapse_factor
            )));
        }
        if let Some(p) = self.population {
            let need = self.m_values.iter().copied().max().unwrap_or(1);
            if p < need {
                return Err(HarnessError::Config(format!(
                    "population {p} smaller than largest parent count {need}"
                )));
            }
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(HarnessError::Config(format!(
                "subset fraction {} outside (0, 1]",
                self.subset_fraction
            )));
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Population size for a cell with parent count `m`.
    pub fn population_for(&self, m: u32) -> u32 {
        self.population.unwrap_or(m.max(1))
    }

    /// Root of the per-cell RNG stream tree. Depends only on identities.
    pub fn cell_seed(&self, m: u32, rc: f64) -> u64 {
        derive_seed(
            self.master_seed,
            &[STREAM_CELL, u64::from(m), permille(rc), permille(self.synapse_factor)],
        )
    }

    /// Seed for the shared stratified training subset.
    pub fn subset_seed(&self) -> u64 {
        derive_seed(self.master_seed, &[STREAM_SUBSET])
    }
}

// Stream tags for seed derivation. A lineage's streams hang off its cell
// seed; the subset stream hangs off the master seed.
const STREAM_SUBSET: u64 = 1;
const STREAM_CELL: u64 = 2;
const STREAM_ANCESTOR_INIT: u64 = 3;
const STREAM_ANCESTOR_TRAIN: u64 = 4;
const STREAM_PARENT_CHOICE: u64 = 5;
const STREAM_SYNTHESIS: u64 = 6;
const STREAM_OFFSPRING_TRAIN: u64 = 7;

fn permille(x: f64) -> u64 {
    (x * 1000.0).round() as u64
}

/// Per-generation metrics for a lineage's representative network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u32,
    /// Index of the representative offspring within its generation.
    pub offspring: u32,
    /// Indices of its parents in the previous generation (empty at 0).
    pub parents: Vec<u32>,
    pub accuracy: f64,
    pub live_synapses: u64,
    pub storage_bytes: u64,
    /// Modeled cost of every training run performed in the lineage so far:
    /// 3 · (live multiply-accumulates per image) · images · epochs / 10⁹.
    /// A deterministic stand-in for wall time, so records reproduce bit for
    /// bit across machines; real wall time goes to the progress log only.
    pub cumulative_train_seconds: f64,
    pub cluster_factor: f64,
    pub synapse_factor: f64,
}

/// Survival tallies for one layer of the representative's synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSurvival {
    pub clusters_considered: u64,
    pub clusters_survived: u64,
    pub synapses_considered: u64,
    pub synapses_survived: u64,
}

/// Synthesis diagnostics for one recorded generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationDiagnostics {
    pub generation: u32,
    pub offspring: u32,
    pub layers: Vec<LayerSurvival>,
}

/// One sweep cell: a lineage, or the reason it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub m: u32,
    pub cluster_factor: f64,
    pub cell_seed: u64,
    pub records: Vec<GenerationRecord>,
    pub error: Option<String>,
}

/// All cells of a sweep plus the config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
}

/// Everything a lineage produces: records, synthesis diagnostics, and the
/// final representative genome.
#[derive(Debug, Clone)]
pub struct LineageRun {
    pub records: Vec<GenerationRecord>,
    pub diagnostics: Vec<GenerationDiagnostics>,
    pub representative: NetworkGenome,
}

/// Modeled seconds for one training run of `genome` over `images` examples:
/// counts live multiply-accumulates per image (convolution cost scales with
/// output positions), triples them for the backward pass and update, and
/// normalizes to a 10⁹ MAC/s reference machine. Exact in f64 for every
/// realistic size, hence bitwise reproducible.
pub fn train_cost_seconds(genome: &NetworkGenome, images: usize, epochs: u32) -> f64 {
    let shapes = genome.shapes();
    let live = genome.layer_live_counts();
    let mut macs: u64 = 0;
    let mut wl = 0;
    for (spec, shape) in genome.specs.iter().zip(&shapes) {
        match spec {
            LayerSpec::Conv2d { .. } => {
                macs += (shape.h * shape.w) as u64 * live[wl];
                wl += 1;
            }
            LayerSpec::Dense { .. } => {
                macs += live[wl];
                wl += 1;
            }
            _ => {}
        }
    }
    (3 * macs * images as u64 * u64::from(epochs)) as f64 / 1e9
}

/// Training data for a lineage: the training subset and the held-out split.
#[derive(Debug, Clone, Copy)]
pub struct LineageData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

/// Runs one lineage: trains `population_for(m)` ancestors, then per
/// generation synthesizes and retrains a full population, recording the
/// representative (the lowest-index offspring that trained without
/// diverging; index 0 in every healthy run). Stops at the generations limit
/// or when the representative degenerates (a weighted layer left with zero
/// live synapses severs the forward path — the terminal state is recorded).
///
/// Parent choice is uniform over the previous generation's survivors, never
/// informed by metrics. Divergent offspring are dropped from the parent
/// pool; the lineage fails only if an entire generation diverges or the
/// pool shrinks below m.
pub fn run_lineage(
    config: &ExperimentConfig,
    m: u32,
    rc: f64,
    data: LineageData<'_>,
) -> Result<LineageRun, HarnessError> {
    config.validate()?;
    let env = EnvironmentModel::constant(rc, config.synapse_factor)?;
    let coeffs = MatingCoefficients::uniform(m as usize)?;
    let cell = config.cell_seed(m, rc);
    let pop = config.population_for(m);
    if pop < m {
        return Err(HarnessError::Config(format!(
            "population {pop} smaller than parent count {m}"
        )));
    }
    let images = data.train.len();

    let mut cumulative = 0.0f64;
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();

    // Generation 0: independently initialized and trained ancestors.
    let mut population: Vec<NetworkGenome> = Vec::with_capacity(pop as usize);
    for i in 0..u64::from(pop) {
        let mut g = build_ancestor(derive_seed(cell, &[STREAM_ANCESTOR_INIT, i]));
        g.lineage_id = format!("m{m}_rc{}", permille(rc));
        train(
            &mut g,
            data.train,
            &config.budget,
            derive_seed(cell, &[STREAM_ANCESTOR_TRAIN, i]),
        )?;
        cumulative += train_cost_seconds(&g, images, config.budget.epochs);
        population.push(g);
    }
    let mut representative = population[0].clone();
    records.push(record_of(
        &representative,
        data.test,
        0,
        0,
        &[],
        cumulative,
        rc,
        config.synapse_factor,
    )?);

    for gen in 1..=config.generations {
        let mut next: Vec<NetworkGenome> = Vec::with_capacity(pop as usize);
        let mut survivors: Vec<u32> = Vec::with_capacity(pop as usize);
        let mut rep_parents: Vec<u32> = Vec::new();
        let mut rep_index: Option<u32> = None;
        let mut rep_stats: Vec<LayerSurvival> = Vec::new();
        if (population.len() as u32) < m {
            return Err(HarnessError::PopulationCollapsed { generation: gen });
        }
        for off in 0..u64::from(pop) {
            let mut choice_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cell,
                &[STREAM_PARENT_CHOICE, u64::from(gen), off],
            ));
            let picked =
                sample_indices(&mut choice_rng, population.len(), m as usize).into_vec();
            let parents: Vec<&NetworkGenome> = picked.iter().map(|&i| &population[i]).collect();

            let mut synth_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cell,
                &[STREAM_SYNTHESIS, u64::from(gen), off],
            ));
            let outcome = synthesize_offspring(&parents, &env, &coeffs, gen, &mut synth_rng)?;
            let mut child = outcome.offspring;

            let trained = match train(
                &mut child,
                data.train,
                &config.budget,
                derive_seed(cell, &[STREAM_OFFSPRING_TRAIN, u64::from(gen), off]),
            ) {
                Ok(_) => true,
                Err(NnError::Diverged { .. }) => false,
                Err(e) => return Err(e.into()),
            };
            // Diverged or not, the attempt consumed compute.
            cumulative += train_cost_seconds(&child, images, config.budget.epochs);

            if trained {
                if rep_index.is_none() {
                    rep_index = Some(off as u32);
                    rep_parents = picked.iter().map(|&i| i as u32).collect();
                    rep_stats = outcome
                        .layer_stats
                        .iter()
                        .map(|s| LayerSurvival {
                            clusters_considered: s.clusters_considered,
                            clusters_survived: s.clusters_survived,
                            synapses_considered: s.synapses_considered,
                            synapses_survived: s.synapses_survived,
                        })
                        .collect();
                    representative = child.clone();
                }
                survivors.push(off as u32);
                next.push(child);
            }
        }
        let Some(rep) = rep_index else {
            return Err(HarnessError::PopulationCollapsed { generation: gen });
        };
        records.push(record_of(
            &representative,
            data.test,
            gen,
            rep,
            &rep_parents,
            cumulative,
            rc,
            config.synapse_factor,
        )?);
        diagnostics.push(GenerationDiagnostics {
            generation: gen,
            offspring: rep,
            layers: rep_stats,
        });
        if representative.is_degenerate() {
            break;
        }
        // Survivor indices are positional; records refer to indices within
        // the previous generation's survivor list.
        population = next;
    }

    Ok(LineageRun {
        records,
        diagnostics,
        representative,
    })
}

#[allow(clippy::too_many_arguments)]
fn record_of(
    genome: &NetworkGenome,
    test: &Dataset,
    generation: u32,
    offspring: u32,
    parents: &[u32],
    cumulative: f64,
    rc: f64,
    rs: f64,
) -> Result<GenerationRecord, HarnessError> {
    let storage = storage_size(genome);
    Ok(GenerationRecord {
        generation,
        offspring,
        parents: parents.to_vec(),
        accuracy: evaluate(genome, test)?,
        live_synapses: storage.live_synapses,
        storage_bytes: storage.bytes,
        cumulative_train_seconds: cumulative,
        cluster_factor: rc,
        synapse_factor: rs,
    })
}

/// Trains ancestor `index` of the `(m, rc)` cell exactly as `run_lineage`
/// would — same derived seeds, same budget — and reports its held-out
/// accuracy. Lets the CLI reproduce and inspect any generation-0 network on
/// its own.
pub fn train_ancestor(
    config: &ExperimentConfig,
    m: u32,
    rc: f64,
    index: u64,
    data: LineageData<'_>,
) -> Result<(NetworkGenome, f64), HarnessError> {
    config.validate()?;
    let cell = config.cell_seed(m, rc);
    let mut g = build_ancestor(derive_seed(cell, &[STREAM_ANCESTOR_INIT, index]));
    g.lineage_id = format!("m{m}_rc{}", permille(rc));
    train(
        &mut g,
        data.train,
        &config.budget,
        derive_seed(cell, &[STREAM_ANCESTOR_TRAIN, index]),
    )?;
    let accuracy = evaluate(&g, data.test)?;
    Ok((g, accuracy))
}

/// Directory name for one sweep cell.
pub fn cell_dir_name(m: u32, rc: f64) -> String {
    format!("m{m}_rc{:03}", permille(rc))
}

/// Runs (or resumes) the full sweep. Each `(m, R^c)` cell runs once, in its
/// own subdirectory of `out_dir` holding `records.csv`, `diagnostics.json`,
/// the final representative genome, and a `DONE` marker. Cells with a
/// marker are loaded back instead of re-run — a rerun over a fully
/// completed directory touches no training data. Failed cells land in the
/// result with their error and no marker, so a rerun retries them.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult, HarnessError> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;

    struct Job {
        m: u32,
        rc: f64,
        dir: PathBuf,
    }
    let mut cells: Vec<CellResult> = Vec::new();
    let mut pending: VecDeque<Job> = VecDeque::new();
    for &m in &config.m_values {
        for &rc in &config.rc_grid {
            let dir = config.out_dir.join(cell_dir_name(m, rc));
            if dir.join("DONE").exists() {
                let records = read_records_csv(&dir.join("records.csv"))?;
                cells.push(CellResult {
                    m,
                    cluster_factor: rc,
                    cell_seed: config.cell_seed(m, rc),
                    records,
                    error: None,
                });
            } else {
                pending.push_back(Job { m, rc, dir });
            }
        }
    }

    if !pending.is_empty() {
        let (train, test) = load_training_data(config)?;
        let queue = Mutex::new(pending);
        let (tx, rx) = mpsc::channel::<CellResult>();
        let workers = config.workers.max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                let queue = &queue;
                let train = &train;
                let test = &test;
                let tx = tx.clone();
                scope.spawn(move || {
                    loop {
                        let job = match queue.lock().expect("queue lock").pop_front() {
                            Some(j) => j,
                            None => break,
                        };
                        let started = std::time::Instant::now();
                        let outcome = run_lineage(
                            config,
                            job.m,
                            job.rc,
                            LineageData { train, test },
                        )
                        .and_then(|run| persist_cell(&job.dir, &run).map(|()| run));
                        let cell = match outcome {
                            Ok(run) => {
                                eprintln!(
                                    "cell {}: {} generations in {:.1}s",
                                    cell_dir_name(job.m, job.rc),
                                    run.records.len(),
                                    started.elapsed().as_secs_f64()
                                );
                                CellResult {
                                    m: job.m,
                                    cluster_factor: job.rc,
                                    cell_seed: config.cell_seed(job.m, job.rc),
                                    records: run.records,
                                    error: None,
                                }
                            }
                            Err(e) => CellResult {
                                m: job.m,
                                cluster_factor: job.rc,
                                cell_seed: config.cell_seed(job.m, job.rc),
                                records: Vec::new(),
                                error: Some(e.to_string()),
                            },
                        };
                        if tx.send(cell).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            for cell in rx {
                if let Some(err) = &cell.error {
                    let dir = config.out_dir.join(cell_dir_name(cell.m, cell.cluster_factor));
                    let _ = fs::create_dir_all(&dir);
                    let _ = fs::write(dir.join("error.txt"), err);
                }
                cells.push(cell);
            }
        });
    }

    cells.sort_by_key(|c| (c.m, permille(c.cluster_factor)));
    Ok(SweepResult {
        config: config.clone(),
        cells,
    })
}

/// Loads the training subset and test split named by the config.
pub fn load_training_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset), HarnessError> {
    let d = &config.data_dir;
    let full = load_idx(
        &d.join("train-images-idx3-ubyte.gz"),
        &d.join("train-labels-idx1-ubyte.gz"),
        Split::Train,
    )?;
    let train = stratified_subset(&full, config.subset_fraction, config.subset_seed())?;
    let test = load_idx(
        &d.join("t10k-images-idx3-ubyte.gz"),
        &d.join("t10k-labels-idx1-ubyte.gz"),
        Split::Test,
    )?;
    Ok((train, test))
}

/// Rebuilds a sweep's results from the completed cell directories under
/// `out_dir`, so reporting can run long after (and independently of) the
/// sweep itself. Cells without a `DONE` marker are skipped with a note on
/// stderr. The attached config is a placeholder carrying only `out_dir`;
/// cell seeds are not recoverable from disk and read as 0.
pub fn load_sweep(out_dir: &Path) -> Result<SweepResult, HarnessError> {
    let mut cells: Vec<CellResult> = Vec::new();
    let entries = fs::read_dir(out_dir).map_err(io_err(out_dir))?;
    for entry in entries {
        let entry = entry.map_err(io_err(out_dir))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some((m, rc)) = parse_cell_dir(name) else { continue };
        if !entry.path().join("DONE").exists() {
            eprintln!("skipping incomplete cell {name}");
            continue;
        }
        let records = read_records_csv(&entry.path().join("records.csv"))?;
        cells.push(CellResult {
            m,
            cluster_factor: rc,
            cell_seed: 0,
            records,
            error: None,
        });
    }
    if cells.is_empty() {
        return Err(HarnessError::Config(format!(
            "no completed cells under {}",
            out_dir.display()
        )));
    }
    cells.sort_by_key(|c| (c.m, permille(c.cluster_factor)));
    Ok(SweepResult {
        config: ExperimentConfig::defaults(0, out_dir.to_path_buf()),
        cells,
    })
}

/// Parses `m{M}_rc{permille}` back into its cell identity.
fn parse_cell_dir(name: &str) -> Option<(u32, f64)> {
    let rest = name.strip_prefix('m')?;
    let (m, rc) = rest.split_once("_rc")?;
    let m = m.parse::<u32>().ok()?;
    let rc = rc.parse::<u32>().ok()?;
    Some((m, f64::from(rc) / 1000.0))
}

fn persist_cell(dir: &Path, run: &LineageRun) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_records_csv(&dir.join("records.csv"), &run.records)?;
    let diag = serde_json::to_vec_pretty(&run.diagnostics)
        .expect("diagnostics serialize infallibly");
    fs::write(dir.join("diagnostics.json"), diag).map_err(io_err(dir))?;
    format::save_genome(&run.representative, &dir.join("final.evng"))?;
    fs::write(dir.join("DONE"), b"ok\n").map_err(io_err(dir))?;
    Ok(())
}

/// Column order of every records CSV.
const CSV_HEADER: [&str; 10] = [
    "m",
    "cluster_factor",
    "synapse_factor",
    "generation",
    "offspring",
    "parents",
    "accuracy",
    "live_synapses",
    "storage_bytes",
    "cumulative_train_seconds",
];

/// Opens a CSV writer with the header already written, so files carry the
/// header even with zero rows.
fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(CSV_HEADER)?;
    Ok(w)
}

/// CSV row shape shared by per-cell and merged exports. Parent indices are
/// joined with `+` so the row stays flat.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    m: u32,
    cluster_factor: f64,
    synapse_factor: f64,
    generation: u32,
    offspring: u32,
    parents: String,
    accuracy: f64,
    live_synapses: u64,
    storage_bytes: u64,
    cumulative_train_seconds: f64,
}

impl CsvRow {
    fn from_record(m: u32, r: &GenerationRecord) -> CsvRow {
        CsvRow {
            m,
            cluster_factor: r.cluster_factor,
            synapse_factor: r.synapse_factor,
            generation: r.generation,
            offspring: r.offspring,
            parents: r
                .parents
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join("+"),
            accuracy: r.accuracy,
            live_synapses: r.live_synapses,
            storage_bytes: r.storage_bytes,
            cumulative_train_seconds: r.cumulative_train_seconds,
        }
    }

    fn into_record(self) -> Result<(u32, GenerationRecord), String> {
        let parents = if self.parents.is_empty() {
            Vec::new()
        } else {
            self.parents
                .split('+')
                .map(|p| p.parse::<u32>().map_err(|e| e.to_string()))
                .collect::<Result<Vec<u32>, String>>()?
        };
        Ok((
            self.m,
            GenerationRecord {
                generation: self.generation,
                offspring: self.offspring,
                parents,
                accuracy: self.accuracy,
                live_synapses: self.live_synapses,
                storage_bytes: self.storage_bytes,
                cumulative_train_seconds: self.cumulative_train_seconds,
                cluster_factor: self.cluster_factor,
                synapse_factor: self.synapse_factor,
            },
        ))
    }
}

fn write_records_csv(path: &Path, records: &[GenerationRecord]) -> Result<(), HarnessError> {
    // Per-cell files don't know their m; recover it from the directory name
    // written by the sweep, or 0 for standalone lineage runs. The merged
    // export always rewrites m from the cell identity.
    let m = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(parse_m_from_dir)
        .unwrap_or(0);
    let mut w = csv_writer(path)?;
    for r in records {
        w.serialize(CsvRow::from_record(m, r))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn parse_m_from_dir(name: &str) -> Option<u32> {
    name.strip_prefix('m')?
        .split('_')
        .next()?
        .parse::<u32>()
        .ok()
}

/// Reads a records CSV (per-cell or merged) back into memory.
pub fn read_records_csv(path: &Path) -> Result<Vec<GenerationRecord>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let (_, record) = row?.into_record().map_err(|detail| HarnessError::BadRecords {
            path: path.to_path_buf(),
            detail,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes every cell's records as one CSV: header plus one row per
/// generation record, cells ordered by (m, cluster factor), full-precision
/// floats (shortest round-trip form). Failed cells contribute no rows.
pub fn export_csv(result: &SweepResult, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let mut cells: Vec<&CellResult> = result.cells.iter().collect();
    cells.sort_by_key(|c| (c.m, permille(c.cluster_factor)));
    for cell in cells {
        for r in &cell.records {
            w.serialize(CsvRow::from_record(cell.m, r))?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads a merged CSV back into cell-grouped form, keyed by
/// (m, cluster factor permille).
pub fn import_csv(path: &Path) -> Result<Vec<(u32, Vec<GenerationRecord>)>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut cells: Vec<(u32, u64, Vec<GenerationRecord>)> = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let (m, record) = row?.into_record().map_err(|detail| HarnessError::BadRecords {
            path: path.to_path_buf(),
            detail,
        })?;
        let key = (m, permille(record.cluster_factor));
        match cells.last_mut() {
            Some((lm, lrc, recs)) if (*lm, *lrc) == key => recs.push(record),
            _ => cells.push((key.0, key.1, vec![record])),
        }
    }
    Ok(cells.into_iter().map(|(m, _, r)| (m, r)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::IMAGE_PIXELS;

    /// Tiny in-memory dataset: `n` images with deterministic pixel patterns,
    /// labels cycling through the classes.
    fn synthetic_dataset(n: usize, split: Split, salt: u64) -> Dataset {
        let mut images = Vec::with_capacity(n * IMAGE_PIXELS);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 10) as u8;
            labels.push(label);
            for p in 0..IMAGE_PIXELS {
                // Label-correlated blocks plus a pseudo-random ripple.
                let block = u64::from(label) * 78 + salt;
                let v = (i as u64 * 131 + p as u64 * 31 + block) % 97;
                let bright = if p / 78 == usize::from(label) { 60 } else { 0 };
                images.push((v.min(36) + bright) as f64 / 255.0);
            }
        }
        Dataset {
            images,
            labels,
            split,
        }
    }

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            m_values: vec![1],
            rc_grid: vec![0.7],
            synapse_factor: 0.7,
            generations: 2,
            population: None,
            budget: TrainBudget {
                epochs: 1,
                batch_size: 16,
                learning_rate: 0.05,
                lr_decay: 0.5,
                decay_every: 4,
            },
            master_seed: 77,
            out_dir: dir.join("out"),
            data_dir: dir.join("data"),
            subset_fraction: 1.0,
            workers: 1,
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let dir = tempfile::tempdir().unwrap();
        let ok = tiny_config(dir.path());
        assert!(ok.validate().is_ok());

        let mut c = ok.clone();
        c.rc_grid = vec![1.2];
        assert!(c.validate().is_err());

        let mut c = ok.clone();
        c.m_values = vec![0];
        assert!(c.validate().is_err());

        let mut c = ok.clone();
        c.m_values = vec![3];
        c.population = Some(2);
        assert!(c.validate().is_err(), "population below m must be rejected");

        let mut c = ok.clone();
        c.subset_fraction = 0.0;
        assert!(c.validate().is_err());

        let mut c = ok;
        c.workers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn population_defaults_to_parent_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config(dir.path());
        assert_eq!(c.population_for(1), 1);
        assert_eq!(c.population_for(3), 3);
        c.population = Some(5);
        assert_eq!(c.population_for(3), 5);
    }

    #[test]
    fn cost_model_counts_live_macs() {
        let g = build_ancestor(1);
        // Conv outputs are 28×28 and 10×10; dense layers cost one MAC per
        // live weight.
        let macs: u64 = 784 * 150 + 100 * 2400 + 48_000 + 10_080 + 840;
        let expect = (3 * macs * 600 * 2) as f64 / 1e9;
        assert_eq!(train_cost_seconds(&g, 600, 2), expect);

        let mut sparse = g.clone();
        sparse.masks.layers[0].fill(0);
        sparse.masks.layers[0][0] = 1;
        let macs: u64 = 784 * 1 + 100 * 2400 + 48_000 + 10_080 + 840;
        let expect = (3 * macs * 600 * 2) as f64 / 1e9;
        assert_eq!(train_cost_seconds(&sparse, 600, 2), expect);
    }

    #[test]
    fn zero_generation_lineage_is_the_ancestor_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.generations = 0;
        let train = synthetic_dataset(40, Split::Train, 3);
        let test = synthetic_dataset(20, Split::Test, 5);
        let run = run_lineage(
            &config,
            1,
            0.7,
            LineageData {
                train: &train,
                test: &test,
            },
        )
        .unwrap();
        assert_eq!(run.records.len(), 1);
        let r = &run.records[0];
        assert_eq!(r.generation, 0);
        assert!(r.parents.is_empty());
        assert_eq!(r.live_synapses, 61_470);
        assert_eq!(r.storage_bytes, 16 + 40 + 8 * 61_470);
        assert!(r.cumulative_train_seconds > 0.0);
        assert_eq!(run.representative.generation, 0);
    }

    #[test]
    fn lineage_records_are_contiguous_and_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.generations = 3;
        let train = synthetic_dataset(40, Split::Train, 3);
        let test = synthetic_dataset(20, Split::Test, 5);
        let run = run_lineage(
            &config,
            1,
            0.7,
            LineageData {
                train: &train,
                test: &test,
            },
        )
        .unwrap();
        assert!(run.records.len() >= 2);
        for (i, r) in run.records.iter().enumerate() {
            assert_eq!(r.generation, i as u32);
        }
        for pair in run.records.windows(2) {
            assert!(
                pair[1].live_synapses <= pair[0].live_synapses,
                "live synapses must not increase along the lineage"
            );
            assert!(
                pair[1].cumulative_train_seconds > pair[0].cumulative_train_seconds,
                "every generation adds training cost"
            );
        }
        assert_eq!(run.diagnostics.len(), run.records.len() - 1);
    }

    #[test]
    fn lineages_reproduce_bitwise_from_the_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.generations = 2;
        config.m_values = vec![2];
        config.population = Some(3);
        let train = synthetic_dataset(40, Split::Train, 3);
        let test = synthetic_dataset(20, Split::Test, 5);
        let data = LineageData {
            train: &train,
            test: &test,
        };
        let a = run_lineage(&config, 2, 0.7, data).unwrap();
        let b = run_lineage(&config, 2, 0.7, data).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.representative, b.representative);

        let mut other = config.clone();
        other.master_seed = 78;
        let c = run_lineage(&other, 2, 0.7, data).unwrap();
        assert_ne!(
            a.records, c.records,
            "a different master seed must change the lineage"
        );
    }

    #[test]
    fn multi_parent_lineage_obeys_parent_bookkeeping() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.generations = 2;
        config.population = Some(3);
        let train = synthetic_dataset(40, Split::Train, 3);
        let test = synthetic_dataset(20, Split::Test, 5);
        let run = run_lineage(
            &config,
            2,
            0.9,
            LineageData {
                train: &train,
                test: &test,
            },
        )
        .unwrap();
        for r in &run.records[1..] {
            assert_eq!(r.parents.len(), 2, "m parents per offspring");
            assert!(r.parents[0] != r.parents[1], "parents must be distinct");
            assert!(r.parents.iter().all(|&p| p < 3));
        }
    }

    fn sample_records() -> Vec<GenerationRecord> {
        (0..3)
            .map(|g| GenerationRecord {
                generation: g,
                offspring: 0,
                parents: if g == 0 { vec![] } else { vec![0, 2] },
                accuracy: 0.9 - 0.1 * f64::from(g) + 1.0 / 3.0 * 1e-7,
                live_synapses: 61470 >> g,
                storage_bytes: 56 + 8 * (61470 >> g),
                cumulative_train_seconds: 1.25 * f64::from(g + 1) + 0.1 / 3.0,
                cluster_factor: 0.7,
                synapse_factor: 0.7,
            })
            .collect()
    }

    #[test]
    fn csv_export_shape_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let result = SweepResult {
            config: config.clone(),
            cells: vec![CellResult {
                m: 2,
                cluster_factor: 0.7,
                cell_seed: 1,
                records: sample_records(),
                error: None,
            }],
        };
        let path = dir.path().join("records.csv");
        export_csv(&result, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4, "header plus one line per record");
        assert!(text.starts_with(
            "m,cluster_factor,synapse_factor,generation,offspring,parents,\
             accuracy,live_synapses,storage_bytes,cumulative_train_seconds"
        ));

        let cells = import_csv(&path).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].0, 2);
        assert_eq!(cells[0].1, sample_records(), "full-precision round trip");
    }

    #[test]
    fn empty_result_exports_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let result = SweepResult {
            config,
            cells: vec![],
        };
        let path = dir.path().join("empty.csv");
        export_csv(&result, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn per_cell_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m2_rc700").join("records.csv");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        let records = sample_records();
        write_records_csv(&path, &records).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), records);
    }

    fn write_synthetic_idx(dir: &Path) {
        use crate::dataio::{idx_image_bytes, idx_label_bytes};
        fs::create_dir_all(dir).unwrap();
        let train = synthetic_dataset(60, Split::Train, 3);
        let test = synthetic_dataset(30, Split::Test, 5);
        for (ds, img_name, lbl_name) in [
            (&train, "train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz"),
            (&test, "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"),
        ] {
            let pixels: Vec<u8> = ds.images.iter().map(|&v| (v * 255.0).round() as u8).collect();
            fs::write(dir.join(img_name), idx_image_bytes(&pixels, true)).unwrap();
            fs::write(dir.join(lbl_name), idx_label_bytes(&ds.labels, true)).unwrap();
        }
    }

    #[test]
    fn sweep_completes_resumes_and_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.generations = 1;
        config.rc_grid = vec![0.5, 0.9];
        write_synthetic_idx(&config.data_dir);

        let first = run_sweep(&config).unwrap();
        assert_eq!(first.cells.len(), 2);
        assert!(first.cells.iter().all(|c| c.error.is_none()));
        for cell in &first.cells {
            let cdir = config.out_dir.join(cell_dir_name(cell.m, cell.cluster_factor));
            assert!(cdir.join("DONE").exists());
            assert!(cdir.join("records.csv").exists());
            assert!(cdir.join("diagnostics.json").exists());
            assert!(cdir.join("final.evng").exists());
        }

        // Resume must re-read completed cells without touching the data
        // directory: point it somewhere nonexistent.
        let mut resumed_config = config.clone();
        resumed_config.data_dir = dir.path().join("missing");
        let resumed = run_sweep(&resumed_config).unwrap();
        assert_eq!(resumed.cells, first.cells);

        // A fresh run in a new directory reproduces the records bitwise.
        let mut again = config.clone();
        again.out_dir = dir.path().join("out2");
        let second = run_sweep(&again).unwrap();
        for (a, b) in first.cells.iter().zip(&second.cells) {
            assert_eq!(a.records, b.records);
        }
    }

    #[test]
    fn ancestor_card_matches_lineage_generation_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.generations = 0;
        let train = synthetic_dataset(40, Split::Train, 3);
        let test = synthetic_dataset(20, Split::Test, 5);
        let data = LineageData {
            train: &train,
            test: &test,
        };
        let run = run_lineage(&config, 1, 0.7, data).unwrap();
        let (genome, accuracy) = train_ancestor(&config, 1, 0.7, 0, data).unwrap();
        assert_eq!(genome, run.representative);
        assert_eq!(accuracy, run.records[0].accuracy);
    }

    #[test]
    fn load_sweep_rebuilds_results_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.generations = 1;
        config.rc_grid = vec![0.5, 0.9];
        write_synthetic_idx(&config.data_dir);

        let swept = run_sweep(&config).unwrap();
        let loaded = load_sweep(&config.out_dir).unwrap();
        assert_eq!(loaded.cells.len(), swept.cells.len());
        for (a, b) in loaded.cells.iter().zip(&swept.cells) {
            assert_eq!((a.m, a.cluster_factor), (b.m, b.cluster_factor));
            assert_eq!(a.records, b.records);
        }

        // Unrelated directories and incomplete cells are ignored.
        fs::create_dir_all(config.out_dir.join("m9_rc999")).unwrap();
        fs::create_dir_all(config.out_dir.join("notes")).unwrap();
        let again = load_sweep(&config.out_dir).unwrap();
        assert_eq!(again.cells.len(), swept.cells.len());

        let empty = dir.path().join("empty");
        fs::create_dir_all(&empty).unwrap();
        assert!(load_sweep(&empty).is_err(), "no cells means no report");
    }

    #[test]
    fn cell_dir_names_round_trip() {
        assert_eq!(cell_dir_name(3, 0.75), "m3_rc750");
        assert_eq!(parse_cell_dir("m3_rc750"), Some((3, 0.75)));
        assert_eq!(parse_cell_dir("m12_rc050"), Some((12, 0.05)));
        assert_eq!(parse_cell_dir("plots"), None);
        assert_eq!(parse_cell_dir("m_rc100"), None);
    }

    #[test]
    fn sweep_isolates_failing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.rc_grid = vec![0.7];
        // No data on disk: the sweep itself must fail before any cell runs
        // (data load), so instead break one cell via an impossible budget.
        write_synthetic_idx(&config.data_dir);
        config.budget.learning_rate = f64::NAN;
        let result = run_sweep(&config).unwrap();
        assert_eq!(result.cells.len(), 1);
        let cell = &result.cells[0];
        assert!(cell.error.is_some(), "cell failure must be reported");
        assert!(cell.records.is_empty());
        let cdir = config.out_dir.join(cell_dir_name(1, 0.7));
        assert!(!cdir.join("DONE").exists(), "failed cells take no marker");
        assert!(cdir.join("error.txt").exists());
    }
}
