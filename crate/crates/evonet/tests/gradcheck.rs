//! Finite-difference verification of the analytic gradients on small
//! networks covering every layer kind (padded and unpadded convolution,
//! average pooling, tanh, dense), with and without masked positions.

use evonet::genome::NetworkGenome;
use evonet::nn::{
    init_weights, loss_and_grad, ActKind, Batch, LayerSpec, Shape, SynapseMask,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
const STEP: f64 = 1e-4;
/// Relative tolerance per coordinate.
const TOLERANCE: f64 = 1e-3;
/// Fraction of coordinates that must agree.
const REQUIRED_AGREEMENT: f64 = 0.99;

/// 368-parameter network touching every layer kind.
fn mixed_toy_net(seed: u64) -> NetworkGenome {
    let input = Shape::new(1, 8, 8);
    let specs = vec![
        LayerSpec::Conv2d {
            out_ch: 3,
            in_ch: 1,
            kh: 3,
            kw: 3,
            stride: 1,
            pad: 1,
        },
        LayerSpec::Activation(ActKind::Tanh),
        LayerSpec::AvgPool2d { win: 2, stride: 2 },
        LayerSpec::Conv2d {
            out_ch: 4,
            in_ch: 3,
            kh: 3,
            kw: 3,
            stride: 1,
            pad: 0,
        },
        LayerSpec::Activation(ActKind::Tanh),
        LayerSpec::Dense {
            out_dim: 8,
            in_dim: 16,
        },
        LayerSpec::Activation(ActKind::Tanh),
        LayerSpec::Dense {
            out_dim: 10,
            in_dim: 8,
        },
    ];
    let weights = init_weights(&specs, seed);
    let masks = SynapseMask::ones(&specs);
    NetworkGenome::new(input, specs, weights, masks, "gradcheck", 0).unwrap()
}

fn param_count(genome: &NetworkGenome) -> usize {
    genome
        .specs
        .iter()
        .filter_map(|s| Some(s.weight_count()? + s.bias_count().unwrap_or(0)))
        .sum()
}

fn random_batch(shape: Shape, n: usize, classes: u8, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..n * shape.size()).map(|_| rng.gen::<f64>()).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    Batch::new(images, labels, shape)
}

/// Loss as a function of one perturbed weight (or bias, via `bias = true`).
fn loss_with_nudge(
    genome: &NetworkGenome,
    batch: &Batch,
    layer: usize,
    index: usize,
    bias: bool,
    delta: f64,
) -> f64 {
    let mut g = genome.clone();
    if bias {
        g.weights.layers[layer].biases[index] += delta;
    } else {
        g.weights.layers[layer].weights[index] += delta;
    }
    loss_and_grad(&g, batch).unwrap().0
}

/// Checks every coordinate of every weighted layer; returns (checked,
/// agreeing, worst relative error).
fn check_all_coordinates(genome: &NetworkGenome, batch: &Batch) -> (usize, usize, f64) {
    let (_, analytic) = loss_and_grad(genome, batch).unwrap();
    let mut checked = 0;
    let mut agreeing = 0;
    let mut worst = 0.0f64;
    for (layer, params) in analytic.layers.iter().enumerate() {
        let coords = params
            .weights
            .iter()
            .enumerate()
            .map(|(i, &a)| (i, false, a))
            .chain(params.biases.iter().enumerate().map(|(i, &a)| (i, true, a)));
        for (index, bias, a) in coords {
            let up = loss_with_nudge(genome, batch, layer, index, bias, STEP);
            let down = loss_with_nudge(genome, batch, layer, index, bias, -STEP);
            let fd = (up - down) / (2.0 * STEP);
            // Guard the denominator so dead coordinates (both sides ~0)
            // count as agreement instead of 0/0.
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            checked += 1;
            if rel <= TOLERANCE {
                agreeing += 1;
            }
            worst = worst.max(rel);
        }
    }
    (checked, agreeing, worst)
}

#[test]
fn gradients_match_central_differences_on_mixed_net() {
    let genome = mixed_toy_net(11);
    assert!(param_count(&genome) <= 500, "toy net stays small");
    let batch = random_batch(genome.input, 5, 10, 12);

    let (checked, agreeing, worst) = check_all_coordinates(&genome, &batch);
    assert_eq!(checked, 368);
    let fraction = agreeing as f64 / checked as f64;
    assert!(
        fraction >= REQUIRED_AGREEMENT,
        "only {agreeing}/{checked} coordinates within {TOLERANCE} relative (worst {worst:.2e})"
    );
}

#[test]
fn gradients_match_central_differences_with_masks() {
    let mut genome = mixed_toy_net(21);
    // Kill every seventh synapse; their gradients must be exactly zero and
    // the finite difference must see no effect either.
    for layer in &mut genome.masks.layers {
        for (i, m) in layer.iter_mut().enumerate() {
            if i % 7 == 3 {
                *m = 0;
            }
        }
    }
    genome.apply_masks();
    let batch = random_batch(genome.input, 5, 10, 22);

    let (checked, agreeing, worst) = check_all_coordinates(&genome, &batch);
    let fraction = agreeing as f64 / checked as f64;
    assert!(
        fraction >= REQUIRED_AGREEMENT,
        "only {agreeing}/{checked} coordinates within {TOLERANCE} relative (worst {worst:.2e})"
    );

    let (_, analytic) = loss_and_grad(&genome, &batch).unwrap();
    for (layer, params) in analytic.layers.iter().enumerate() {
        for (i, &g) in params.weights.iter().enumerate() {
            if genome.masks.layers[layer][i] == 0 {
                assert_eq!(g, 0.0, "masked coordinate {i} of layer {layer} must be 0");
            }
        }
    }
}

#[test]
fn dense_gradients_match_to_tight_tolerance() {
    // A single 19×10 dense layer plus biases: 200 parameters, where central
    // differences are accurate enough for a 1e-4 relative comparison.
    let input = Shape::new(1, 1, 19);
    let specs = vec![LayerSpec::Dense {
        out_dim: 10,
        in_dim: 19,
    }];
    let weights = init_weights(&specs, 31);
    let masks = SynapseMask::ones(&specs);
    let genome = NetworkGenome::new(input, specs, weights, masks, "gradcheck", 0).unwrap();
    assert_eq!(param_count(&genome), 200);
    let batch = random_batch(genome.input, 8, 10, 32);

    let (_, analytic) = loss_and_grad(&genome, &batch).unwrap();
    let params = &analytic.layers[0];
    for (index, bias, a) in params
        .weights
        .iter()
        .enumerate()
        .map(|(i, &a)| (i, false, a))
        .chain(params.biases.iter().enumerate().map(|(i, &a)| (i, true, a)))
    {
        let up = loss_with_nudge(&genome, &batch, 0, index, bias, STEP);
        let down = loss_with_nudge(&genome, &batch, 0, index, bias, -STEP);
        let fd = (up - down) / (2.0 * STEP);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        assert!(
            rel <= 1e-4,
            "coordinate {index} (bias: {bias}): analytic {a:.6e} vs central {fd:.6e}"
        );
    }
}
