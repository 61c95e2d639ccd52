//! Backpropagation against central finite differences on the default
//! architecture with dropout off.

use proteoknight::classifier::{Architecture, ImageTensor, Model};
use proteoknight::{encode, AngleColorTable, EncodingConfig, ProteinSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-5;
/// Loss round-off at this step is about 1e-11 in the difference quotient, so
/// gradients below the floor are judged on absolute error instead.
const FLOOR: f64 = 1e-6;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Default model with every parameter jittered, so no bias is exactly zero.
fn jittered_model(rng: &mut ChaCha8Rng, seed: u64) -> Model {
    let mut model = Model::init(Architecture::default(), 0.5, seed).unwrap();
    for p in model.parameters_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    model
}

fn random_input(rng: &mut ChaCha8Rng) -> ImageTensor {
    let arch = Architecture::default();
    let data = (0..arch.input_len()).map(|_| rng.random::<f64>()).collect();
    ImageTensor::new(3, arch.input_side, data).unwrap()
}

/// Worst relative error over the probed parameters.
fn worst_error(model: &mut Model, inputs: &[(ImageTensor, usize)], probes: &[usize]) -> f64 {
    let batch: Vec<(&ImageTensor, usize)> = inputs.iter().map(|(t, l)| (t, *l)).collect();
    let (_, grad) = model.loss_and_gradient(&batch).unwrap();
    let mut worst: f64 = 0.0;
    for &i in probes {
        let original = model.parameters()[i];
        model.parameters_mut()[i] = original + STEP;
        let plus = model.loss(&batch).unwrap();
        model.parameters_mut()[i] = original - STEP;
        let minus = model.loss(&batch).unwrap();
        model.parameters_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * STEP);
        let err = relative_error(grad[i], numeric);
        assert!(
            err < TOLERANCE,
            "parameter {i}: analytic {} numeric {numeric} rel err {err}",
            grad[i]
        );
        worst = worst.max(err);
    }
    worst
}

#[test]
fn twenty_random_probes_on_dense_inputs() {
    for seed in [3, 11] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = jittered_model(&mut rng, seed);
        let inputs: Vec<_> = [0, 1, 0]
            .into_iter()
            .map(|l| (random_input(&mut rng), l))
            .collect();
        let n = model.parameters().len();
        // first conv layer, last dense layer, and uniform picks in between
        let mut probes = vec![0, 100, n - 1, n - 40];
        while probes.len() < 20 {
            probes.push(rng.random_range(0..n));
        }
        let worst = worst_error(&mut model, &inputs, &probes);
        assert!(
            worst < TOLERANCE,
            "seed {seed}: worst relative error {worst}"
        );
    }
}

/// A real encoded image is mostly black, so first-layer weights see few
/// nonzero pixels.
#[test]
fn encoded_image_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = jittered_model(&mut rng, 5);
    let seq =
        ProteinSequence::new("probe", "MKVLAAGIVGLLLAYSQPAMAEVQLQESGGGLVQPGGSLRLSCAAS").unwrap();
    let encoded = encode(
        &seq,
        &EncodingConfig::default(),
        &AngleColorTable::standard(),
    )
    .unwrap();
    let inputs = vec![
        (ImageTensor::from_image(&encoded, 64).unwrap(), 1),
        (random_input(&mut rng), 0),
    ];
    let n = model.parameters().len();
    let probes: Vec<usize> = (0..20).map(|_| rng.random_range(0..n)).collect();
    worst_error(&mut model, &inputs, &probes);
}
