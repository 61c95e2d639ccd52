//! Training on a small separable set of real encoded images.

use proteoknight::classifier::{train, Architecture, ImageTensor, Model, Optimizer, TrainConfig};
use proteoknight::synthetic::two_class_corpus;
use proteoknight::{encode, AngleColorTable, EncodingConfig};

fn toy_set(side: usize) -> Vec<(ImageTensor, usize)> {
    let cfg = EncodingConfig {
        size: 128,
        ..Default::default()
    };
    let table = AngleColorTable::standard();
    two_class_corpus(20, 40..=120, 3)
        .iter()
        .map(|(seq, label)| {
            let image = encode(seq, &cfg, &table).unwrap();
            (
                ImageTensor::from_image(&image, side).unwrap(),
                label.binary_index(),
            )
        })
        .collect()
}

#[test]
fn loss_decreases_with_each_optimizer() {
    let data = toy_set(16);
    let arch = Architecture {
        input_side: 16,
        ..Default::default()
    };
    for (optimizer, learning_rate) in [(Optimizer::Sgd, 0.05), (Optimizer::Adam, 0.001)] {
        let mut model = Model::init(arch.clone(), 0.2, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 8,
            learning_rate,
            optimizer,
            seed: 2,
        };
        let report = train(&mut model, &data, &cfg).unwrap();
        let losses = &report.epoch_losses;
        assert_eq!(losses.len(), 9);
        assert!(losses.iter().all(|l| l.is_finite()));
        assert!(losses[8] < losses[0], "{optimizer:?}: {losses:?}");
        assert!(
            report.final_accuracy > 0.5,
            "{optimizer:?}: accuracy {}",
            report.final_accuracy
        );
    }
}
