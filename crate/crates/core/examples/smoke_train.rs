//! Trains the width-reduced quaternion-axial model on the synthetic
//! 10-class set and prints one line per epoch.
//!
//! `cargo run --release --example smoke_train -- [config-file]`

use qaxnet::data::synthetic_classification_dataset;
use qaxnet::train::{TrainConfig, Trainer};
use qaxnet::zoo::{build, ArchitectureSpec, Variant};

fn main() -> qaxnet::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => TrainConfig::parse(&std::fs::read_to_string(path)?)?,
        None => TrainConfig {
            epochs: 50,
            warmup_epochs: 2,
            decay_epochs: vec![30, 40],
            ..TrainConfig::default()
        },
    };
    let mut spec = ArchitectureSpec::new(Variant::QuatAxial, [1, 1, 1, 1]);
    spec.width_scale = 0.25;
    spec.input = [3, 32, 32];
    spec.num_classes = 10;
    let data = synthetic_classification_dataset(10, 50, 32, config.seed)?;
    let model = build::<f32>(&spec, config.seed)?;
    let mut trainer = Trainer::new(model, config)?;
    while !trainer.is_done() {
        let r = trainer.run_epoch(&data, None)?;
        println!(
            "epoch {:3} lr {:.5} loss {:.4} train {:.3} eval {:.3} {:.1}s",
            r.epoch, r.lr, r.train_loss, r.train_top1, r.val_top1, r.seconds
        );
    }
    Ok(())
}
