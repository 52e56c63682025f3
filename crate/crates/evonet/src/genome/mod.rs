//! Heritable network representation: architecture + weights + masks, the
//! cluster partition over synapses, and the normalized strength statistics
//! consumed by survival sampling.

pub mod format;

use std::ops::Range;

use thiserror::Error;

use crate::nn::{infer_shapes, init_weights, LayerSpec, Shape, SynapseMask, WeightStore};

#[derive(Debug, Error)]
pub enum GenomeError {
    #[error("invalid architecture: {0}")]
    Architecture(#[from] crate::nn::NnError),
    #[error("weights/masks not congruent with layer specs: {0}")]
    Incongruent(String),
}

/// A complete heritable network: layer specs (the structure), dense weights,
/// and binary synapse masks, tagged with lineage bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGenome {
    pub input: Shape,
    pub specs: Vec<LayerSpec>,
    pub weights: WeightStore,
    pub masks: SynapseMask,
    pub lineage_id: String,
    pub generation: u32,
}

impl NetworkGenome {
    /// Validates mutual congruence of specs, weights, and masks.
    pub fn new(
        input: Shape,
        specs: Vec<LayerSpec>,
        weights: WeightStore,
        masks: SynapseMask,
        lineage_id: impl Into<String>,
        generation: u32,
    ) -> Result<Self, GenomeError> {
        infer_shapes(input, &specs)?;
        let weighted: Vec<&LayerSpec> = specs.iter().filter(|s| s.is_weighted()).collect();
        if weights.layers.len() != weighted.len() || masks.layers.len() != weighted.len() {
            return Err(GenomeError::Incongruent(format!(
                "{} weighted specs vs {} weight arrays / {} mask arrays",
                weighted.len(),
                weights.layers.len(),
                masks.layers.len()
            )));
        }
        for (wl, spec) in weighted.iter().enumerate() {
            let wc = spec.weight_count().unwrap();
            let bc = spec.bias_count().unwrap();
            if weights.layers[wl].weights.len() != wc
                || weights.layers[wl].biases.len() != bc
                || masks.layers[wl].len() != wc
            {
                return Err(GenomeError::Incongruent(format!(
                    "weighted layer {wl}: expected {wc} weights / {bc} biases"
                )));
            }
            if masks.layers[wl].iter().any(|&m| m > 1) {
                return Err(GenomeError::Incongruent(format!(
                    "weighted layer {wl}: mask values must be 0 or 1"
                )));
            }
        }
        Ok(NetworkGenome {
            input,
            specs,
            weights,
            masks,
            lineage_id: lineage_id.into(),
            generation,
        })
    }

    /// Fresh genome with zero weights/biases and all-ones masks.
    pub fn with_zero_weights(
        input: Shape,
        specs: Vec<LayerSpec>,
        lineage_id: impl Into<String>,
        generation: u32,
    ) -> Result<Self, GenomeError> {
        let weights = WeightStore::zeros(&specs);
        let masks = SynapseMask::ones(&specs);
        NetworkGenome::new(input, specs, weights, masks, lineage_id, generation)
    }

    /// Per-layer output shapes. The architecture was validated at
    /// construction, so this cannot fail unless specs were mutated into an
    /// inconsistent state afterwards.
    pub fn shapes(&self) -> Vec<Shape> {
        infer_shapes(self.input, &self.specs).expect("architecture validated at construction")
    }

    /// Width of the final layer's output (the class count for classifiers).
    pub fn output_classes(&self) -> usize {
        self.shapes().last().expect("nonempty architecture").size()
    }

    /// Spec indices of the weighted layers, in order.
    pub fn weighted_spec_indices(&self) -> Vec<usize> {
        self.specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_weighted())
            .map(|(i, _)| i)
            .collect()
    }

    /// Total number of mask-1 synapses.
    pub fn live_synapses(&self) -> u64 {
        self.masks.live_count()
    }

    /// Live synapse count per weighted layer.
    pub fn layer_live_counts(&self) -> Vec<u64> {
        self.masks
            .layers
            .iter()
            .map(|l| l.iter().map(|&m| u64::from(m)).sum())
            .collect()
    }

    /// True when any weighted layer has no live synapses left, severing the
    /// forward signal path.
    pub fn is_degenerate(&self) -> bool {
        self.layer_live_counts().iter().any(|&c| c == 0)
    }

    /// Zeroes every weight behind a dead mask.
    pub fn apply_masks(&mut self) {
        for (params, mask) in self.weights.layers.iter_mut().zip(&self.masks.layers) {
            for (w, &m) in params.weights.iter_mut().zip(mask) {
                if m == 0 {
                    *w = 0.0;
                }
            }
        }
    }
}

/// The LeNet-5 variant used for ancestors: two conv/pool stages and three
/// dense layers, tanh activations, 28×28 single-channel input.
pub fn lenet5_specs() -> (Shape, Vec<LayerSpec>) {
    use crate::nn::ActKind::Tanh;
    (
        Shape::new(1, 28, 28),
        vec![
            LayerSpec::Conv2d {
                out_ch: 6,
                in_ch: 1,
                kh: 5,
                kw: 5,
                stride: 1,
                pad: 2,
            },
            LayerSpec::Activation(Tanh),
            LayerSpec::AvgPool2d { win: 2, stride: 2 },
            LayerSpec::Conv2d {
                out_ch: 16,
                in_ch: 6,
                kh: 5,
                kw: 5,
                stride: 1,
                pad: 0,
            },
            LayerSpec::Activation(Tanh),
            LayerSpec::AvgPool2d { win: 2, stride: 2 },
            LayerSpec::Dense {
                out_dim: 120,
                in_dim: 400,
            },
            LayerSpec::Activation(Tanh),
            LayerSpec::Dense {
                out_dim: 84,
                in_dim: 120,
            },
            LayerSpec::Activation(Tanh),
            LayerSpec::Dense {
                out_dim: 10,
                in_dim: 84,
            },
        ],
    )
}

/// Builds the untrained generation-0 network: LeNet-5 structure, seeded
/// uniform init, every synapse alive.
pub fn build_ancestor(seed: u64) -> NetworkGenome {
    let (input, specs) = lenet5_specs();
    let weights = init_weights(&specs, seed);
    let masks = SynapseMask::ones(&specs);
    NetworkGenome::new(input, specs, weights, masks, "", 0)
        .expect("built-in architecture is valid")
}

/// One synaptic cluster: a contiguous block of flat weight indices within a
/// weighted layer (a conv filter, or a dense neuron's fan-in vector).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// Weighted-layer ordinal.
    pub layer: usize,
    /// Cluster ordinal within its layer.
    pub index: usize,
    /// Flat weight indices the cluster covers.
    pub range: Range<usize>,
}

/// Disjoint grouping of every maskable synapse into clusters, ordered by
/// layer then cluster index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    pub clusters: Vec<Cluster>,
}

impl ClusterPartition {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Clusters belonging to one weighted layer.
    pub fn layer_clusters(&self, layer: usize) -> impl Iterator<Item = &Cluster> {
        self.clusters.iter().filter(move |c| c.layer == layer)
    }
}

/// Groups synapses into clusters: one cluster per conv filter (all kernels of
/// one output channel), one per dense output neuron's fan-in vector. Pool and
/// activation layers contribute nothing.
pub fn partition_clusters(genome: &NetworkGenome) -> ClusterPartition {
    let mut clusters = Vec::new();
    let mut wl = 0;
    for spec in &genome.specs {
        match *spec {
            LayerSpec::Conv2d {
                out_ch,
                in_ch,
                kh,
                kw,
                ..
            } => {
                let k = in_ch * kh * kw;
                for f in 0..out_ch {
                    clusters.push(Cluster {
                        layer: wl,
                        index: f,
                        range: f * k..(f + 1) * k,
                    });
                }
                wl += 1;
            }
            LayerSpec::Dense { out_dim, in_dim } => {
                for o in 0..out_dim {
                    clusters.push(Cluster {
                        layer: wl,
                        index: o,
                        range: o * in_dim..(o + 1) * in_dim,
                    });
                }
                wl += 1;
            }
            _ => {}
        }
    }
    ClusterPartition { clusters }
}

/// Normalized strengths: one value per cluster (partition order) and one per
/// synapse (congruent with the weight arrays). Everything lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthReport {
    /// Per-cluster strength: mean |live weight| divided by the layer's
    /// maximum such mean (0 for dead clusters).
    pub cluster: Vec<f64>,
    /// Per-synapse strength: |w| / max live |w| within its cluster (0 for
    /// dead synapses and dead clusters).
    pub synapse: Vec<Vec<f64>>,
}

/// Computes cluster and synapse strengths for survival sampling.
pub fn compute_strengths(genome: &NetworkGenome, partition: &ClusterPartition) -> StrengthReport {
    let n_layers = genome.weights.layers.len();
    // Mean absolute live weight per cluster.
    let mut means = vec![0.0f64; partition.len()];
    let mut layer_max = vec![0.0f64; n_layers];
    for (ci, cluster) in partition.clusters.iter().enumerate() {
        let w = &genome.weights.layers[cluster.layer].weights[cluster.range.clone()];
        let m = &genome.masks.layers[cluster.layer][cluster.range.clone()];
        let mut sum = 0.0;
        let mut live = 0u64;
        for (&wi, &mi) in w.iter().zip(m) {
            if mi != 0 {
                sum += wi.abs();
                live += 1;
            }
        }
        let mean = if live == 0 { 0.0 } else { sum / live as f64 };
        means[ci] = mean;
        if mean > layer_max[cluster.layer] {
            layer_max[cluster.layer] = mean;
        }
    }
    let cluster: Vec<f64> = partition
        .clusters
        .iter()
        .zip(&means)
        .map(|(c, &mean)| {
            if layer_max[c.layer] > 0.0 {
                mean / layer_max[c.layer]
            } else {
                0.0
            }
        })
        .collect();

    let mut synapse: Vec<Vec<f64>> = genome
        .weights
        .layers
        .iter()
        .map(|l| vec![0.0; l.weights.len()])
        .collect();
    for c in &partition.clusters {
        let w = &genome.weights.layers[c.layer].weights[c.range.clone()];
        let m = &genome.masks.layers[c.layer][c.range.clone()];
        let mut wmax = 0.0f64;
        for (&wi, &mi) in w.iter().zip(m) {
            if mi != 0 && wi.abs() > wmax {
                wmax = wi.abs();
            }
        }
        if wmax == 0.0 {
            continue; // dead cluster (or all live weights zero): strengths stay 0
        }
        let out = &mut synapse[c.layer][c.range.clone()];
        for ((s, &wi), &mi) in out.iter_mut().zip(w).zip(m) {
            if mi != 0 {
                *s = wi.abs() / wmax;
            }
        }
    }
    StrengthReport { cluster, synapse }
}

/// Live-synapse count and the size of the sparse on-disk encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageSize {
    pub live_synapses: u64,
    pub bytes: u64,
}

/// Measures architectural storage: live synapses plus the byte size of the
/// sparse encoding (one 4-byte coordinate and one 4-byte weight per live
/// synapse, plus per-layer and container headers).
pub fn storage_size(genome: &NetworkGenome) -> StorageSize {
    StorageSize {
        live_synapses: genome.live_synapses(),
        bytes: format::sparse_encoded_len(genome),
    }
}
