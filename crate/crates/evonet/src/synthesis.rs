//! Offspring synthesis: mating parent genomes and environment-conditioned
//! stochastic survival sampling over clusters and synapses.
//!
//! The pipeline for one offspring is a pure function of its inputs and the
//! RNG stream: compute parent strengths → mate strengths and weights →
//! sample cluster survival → sample synapse survival within surviving
//! clusters → intersect with the mated support. Concurrent synthesis of
//! different offspring must use independent RNG streams (one per offspring,
//! derived from the master seed and the offspring index).
//!
//! Gamma-draw ordering is part of the determinism contract: first one draw
//! per cluster in partition order, then — for surviving clusters only, again
//! in partition order — one draw per member slot in coordinate order. Dead
//! clusters consume no synapse draws.

use rand::Rng;
use thiserror::Error;

use crate::genome::{
    compute_strengths, partition_clusters, ClusterPartition, NetworkGenome, StrengthReport,
};
use crate::nn::WeightStore;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("environmental factor {name} = {value} is outside [0, 1]")]
    FactorRange { name: &'static str, value: f64 },
    #[error("strength {0} is outside [0, 1]")]
    StrengthRange(f64),
    #[error("mating coefficients invalid: {0}")]
    BadCoefficients(String),
    #[error("synthesis requires at least one parent")]
    NoParents,
    #[error("parents have mismatched architectures: {0}")]
    MixedArchitectures(String),
    #[error("offspring generation {generation} requires parents from generation {}, found {found}", generation - 1)]
    ParentGeneration { generation: u32, found: u32 },
}

/// Environmental scarcity factors, as functions of the generation index.
/// Both lie in `[0, 1]`; higher values drop more aggressively. Only constant
/// schedules are provided: every reported experiment holds the environment
/// fixed over the lineage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentModel {
    cluster: f64,
    synapse: f64,
}

impl EnvironmentModel {
    /// A generation-independent environment. Rejects factors outside [0, 1].
    pub fn constant(cluster: f64, synapse: f64) -> Result<Self, SynthesisError> {
        for (name, value) in [("cluster", cluster), ("synapse", synapse)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthesisError::FactorRange { name, value });
            }
        }
        Ok(EnvironmentModel { cluster, synapse })
    }

    /// Cluster-level factor at a generation.
    pub fn cluster_factor(&self, _generation: u32) -> f64 {
        self.cluster
    }

    /// Synapse-level factor at a generation.
    pub fn synapse_factor(&self, _generation: u32) -> f64 {
        self.synapse
    }
}

/// Per-parent combination weights for mating, one set for cluster strengths
/// and one for synapse weights. Each set is nonnegative and sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MatingCoefficients {
    pub cluster: Vec<f64>,
    pub synapse: Vec<f64>,
}

impl MatingCoefficients {
    /// Uniform coefficients 1/m for both levels. With one parent this is the
    /// exact identity (alpha = 1).
    pub fn uniform(m: usize) -> Result<Self, SynthesisError> {
        if m == 0 {
            return Err(SynthesisError::BadCoefficients(
                "parent count must be positive".into(),
            ));
        }
        let a = vec![1.0 / m as f64; m];
        Ok(MatingCoefficients {
            cluster: a.clone(),
            synapse: a,
        })
    }

    /// Explicit coefficients; each set must be nonnegative and sum to 1
    /// within 1e-9.
    pub fn new(cluster: Vec<f64>, synapse: Vec<f64>) -> Result<Self, SynthesisError> {
        if cluster.is_empty() || cluster.len() != synapse.len() {
            return Err(SynthesisError::BadCoefficients(format!(
                "coefficient sets must be nonempty and equally sized, got {} and {}",
                cluster.len(),
                synapse.len()
            )));
        }
        for (name, set) in [("cluster", &cluster), ("synapse", &synapse)] {
            if set.iter().any(|&a| !a.is_finite() || a < 0.0) {
                return Err(SynthesisError::BadCoefficients(format!(
                    "{name} coefficients must be finite and nonnegative"
                )));
            }
            let sum: f64 = set.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SynthesisError::BadCoefficients(format!(
                    "{name} coefficients sum to {sum}, expected 1"
                )));
            }
        }
        Ok(MatingCoefficients { cluster, synapse })
    }

    pub fn parent_count(&self) -> usize {
        self.cluster.len()
    }
}

/// Probability that one survival test fails: `R · (1 − strength)`, the
/// chance that a uniform gamma in [0, 1) falls below the scaled deficit.
pub fn drop_probability(factor: f64, strength: f64) -> Result<f64, SynthesisError> {
    if !(0.0..=1.0).contains(&factor) {
        return Err(SynthesisError::FactorRange {
            name: "survival",
            value: factor,
        });
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(SynthesisError::StrengthRange(strength));
    }
    Ok(factor * (1.0 - strength))
}

fn check_parents(parents: &[&NetworkGenome]) -> Result<(), SynthesisError> {
    let first = parents.first().ok_or(SynthesisError::NoParents)?;
    for (k, p) in parents.iter().enumerate().skip(1) {
        if p.input != first.input || p.specs != first.specs {
            return Err(SynthesisError::MixedArchitectures(format!(
                "parent {k} differs from parent 0"
            )));
        }
    }
    Ok(())
}

/// Mates per-cluster strengths: the convex combination of the parents'
/// cluster strengths under the cluster-level coefficients.
pub fn mate_cluster_strengths(
    parent_strengths: &[&StrengthReport],
    coeffs: &MatingCoefficients,
) -> Result<Vec<f64>, SynthesisError> {
    let first = parent_strengths.first().ok_or(SynthesisError::NoParents)?;
    if parent_strengths.len() != coeffs.parent_count() {
        return Err(SynthesisError::BadCoefficients(format!(
            "{} coefficients for {} parents",
            coeffs.parent_count(),
            parent_strengths.len()
        )));
    }
    if parent_strengths
        .iter()
        .any(|s| s.cluster.len() != first.cluster.len())
    {
        return Err(SynthesisError::MixedArchitectures(
            "cluster counts differ".into(),
        ));
    }
    let mut mated = vec![0.0; first.cluster.len()];
    for (st, &a) in parent_strengths.iter().zip(&coeffs.cluster) {
        for (m, &s) in mated.iter_mut().zip(&st.cluster) {
            *m += a * s;
        }
    }
    Ok(mated)
}

/// Mates synapse weights and biases: per-coordinate convex combination under
/// the synapse-level coefficients, where a parent's dead synapse contributes
/// exactly zero.
pub fn mate_synapse_weights(
    parents: &[&NetworkGenome],
    coeffs: &MatingCoefficients,
) -> Result<WeightStore, SynthesisError> {
    check_parents(parents)?;
    if parents.len() != coeffs.parent_count() {
        return Err(SynthesisError::BadCoefficients(format!(
            "{} coefficients for {} parents",
            coeffs.parent_count(),
            parents.len()
        )));
    }
    let mut mated = WeightStore::zeros(&parents[0].specs);
    for (p, &a) in parents.iter().zip(&coeffs.synapse) {
        for (out, (params, mask)) in mated
            .layers
            .iter_mut()
            .zip(p.weights.layers.iter().zip(&p.masks.layers))
        {
            for ((o, &w), &m) in out.weights.iter_mut().zip(&params.weights).zip(mask) {
                if m != 0 {
                    *o += a * w;
                }
            }
            for (o, &b) in out.biases.iter_mut().zip(&params.biases) {
                *o += a * b;
            }
        }
    }
    Ok(mated)
}

/// Samples cluster survival: one gamma per cluster, in order; the cluster
/// survives iff `R^c · (1 − strength) ≤ gamma`.
///
/// Strengths must lie in [0, 1] and the factor is assumed pre-validated (see
/// [`EnvironmentModel::constant`]); violations panic.
pub fn sample_cluster_survival(
    mated_strengths: &[f64],
    cluster_factor: f64,
    rng: &mut impl Rng,
) -> Vec<u8> {
    mated_strengths
        .iter()
        .map(|&s| {
            let p = drop_probability(cluster_factor, s).expect("validated inputs");
            u8::from(p <= rng.gen::<f64>())
        })
        .collect()
}

/// Samples synapse survival within surviving clusters: for each surviving
/// cluster in partition order, one gamma per member slot in coordinate
/// order; the synapse survives iff `R^s · (1 − strength) ≤ gamma`. Dead
/// clusters consume no draws and their members are marked dead.
///
/// The result reflects sampling only; intersection with the mated support
/// happens in [`synthesize_offspring`].
pub fn sample_synapse_survival(
    synapse_strengths: &[Vec<f64>],
    partition: &ClusterPartition,
    cluster_indicators: &[u8],
    synapse_factor: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = synapse_strengths
        .iter()
        .map(|l| vec![0u8; l.len()])
        .collect();
    for (cluster, &alive) in partition.clusters.iter().zip(cluster_indicators) {
        if alive == 0 {
            continue;
        }
        let strengths = &synapse_strengths[cluster.layer][cluster.range.clone()];
        let ind = &mut out[cluster.layer][cluster.range.clone()];
        for (i, &s) in ind.iter_mut().zip(strengths) {
            let p = drop_probability(synapse_factor, s).expect("validated inputs");
            *i = u8::from(p <= rng.gen::<f64>());
        }
    }
    out
}

/// Per-layer synthesis diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDropStats {
    /// Clusters subjected to the survival test.
    pub clusters_considered: u64,
    /// Clusters whose indicator came up alive.
    pub clusters_survived: u64,
    /// Synapses with nonzero mated weight (the support).
    pub synapses_considered: u64,
    /// Synapses live in the offspring mask.
    pub synapses_survived: u64,
}

/// Everything produced by one synthesis: the untrained offspring plus the
/// raw survival indicators and drop diagnostics for auditing.
#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub offspring: NetworkGenome,
    /// Sampled cluster indicators, partition order.
    pub cluster_survival: Vec<u8>,
    /// Sampled synapse indicators, congruent with the weight arrays. Members
    /// of dead clusters are 0.
    pub synapse_survival: Vec<Vec<u8>>,
    pub layer_stats: Vec<LayerDropStats>,
}

/// Synthesizes one untrained offspring from parents of generation
/// `generation − 1`.
///
/// Cluster survival is driven by the mated parent cluster strengths; synapse
/// survival by |w| normalized within each cluster of the mated weights. The
/// offspring mask is the sampled indicators intersected with the mated
/// support, so a synapse dead in every parent can never resurrect. Weights
/// carry the mated values on live synapses and 0 elsewhere; the caller
/// retrains.
pub fn synthesize_offspring(
    parents: &[&NetworkGenome],
    env: &EnvironmentModel,
    coeffs: &MatingCoefficients,
    generation: u32,
    rng: &mut impl Rng,
) -> Result<SynthesisOutcome, SynthesisError> {
    check_parents(parents)?;
    if parents.len() != coeffs.parent_count() {
        return Err(SynthesisError::BadCoefficients(format!(
            "{} coefficients for {} parents",
            coeffs.parent_count(),
            parents.len()
        )));
    }
    for p in parents {
        if p.generation != generation.wrapping_sub(1) || generation == 0 {
            return Err(SynthesisError::ParentGeneration {
                generation,
                found: p.generation,
            });
        }
    }
    let template = parents[0];
    let partition = partition_clusters(template);

    // Eq-level pipeline: parent strengths → mated strengths/weights.
    let parent_strengths: Vec<StrengthReport> = parents
        .iter()
        .map(|p| compute_strengths(p, &partition))
        .collect();
    let strength_refs: Vec<&StrengthReport> = parent_strengths.iter().collect();
    let mated_cluster = mate_cluster_strengths(&strength_refs, coeffs)?;
    let mated_weights = mate_synapse_weights(parents, coeffs)?;

    // Support and within-cluster normalized strengths of the mated weights.
    let mut support: Vec<Vec<u8>> = mated_weights
        .layers
        .iter()
        .map(|l| l.weights.iter().map(|&w| u8::from(w != 0.0)).collect())
        .collect();
    let mated_genome = NetworkGenome::new(
        template.input,
        template.specs.clone(),
        mated_weights,
        crate::nn::SynapseMask {
            layers: std::mem::take(&mut support),
        },
        template.lineage_id.clone(),
        generation,
    )
    .expect("mated arrays are congruent by construction");
    let synapse_strengths = compute_strengths(&mated_genome, &partition).synapse;

    let rc = env.cluster_factor(generation);
    let rs = env.synapse_factor(generation);
    let cluster_survival = sample_cluster_survival(&mated_cluster, rc, rng);
    let synapse_survival =
        sample_synapse_survival(&synapse_strengths, &partition, &cluster_survival, rs, rng);

    // Offspring mask: sampled indicators ∧ mated support.
    let NetworkGenome {
        input,
        specs,
        weights: mated_weights,
        masks: support,
        lineage_id,
        ..
    } = mated_genome;
    let mut masks = support.clone();
    for (layer, ind) in masks.layers.iter_mut().zip(&synapse_survival) {
        for (m, &i) in layer.iter_mut().zip(ind) {
            *m &= i;
        }
    }
    let mut offspring = NetworkGenome::new(input, specs, mated_weights, masks, lineage_id, generation)
        .expect("offspring arrays are congruent by construction");
    offspring.apply_masks();

    let layer_stats = (0..offspring.masks.layers.len())
        .map(|wl| {
            let (considered, survived) = partition
                .layer_clusters(wl)
                .map(|c| {
                    let ci = partition
                        .clusters
                        .iter()
                        .position(|x| x == c)
                        .expect("cluster from this partition");
                    cluster_survival[ci]
                })
                .fold((0u64, 0u64), |(n, s), ind| (n + 1, s + u64::from(ind)));
            LayerDropStats {
                clusters_considered: considered,
                clusters_survived: survived,
                synapses_considered: support.layers[wl]
                    .iter()
                    .map(|&m| u64::from(m))
                    .sum(),
                synapses_survived: offspring.masks.layers[wl]
                    .iter()
                    .map(|&m| u64::from(m))
                    .sum(),
            }
        })
        .collect();

    Ok(SynthesisOutcome {
        offspring,
        cluster_survival,
        synapse_survival,
        layer_stats,
    })
}
