//! Analytic BPTT gradients against central differences, then a short
//! training run on a toy task where the label depends on the last step.

use delirium_risk::eval::auroc;
use delirium_risk::lstm::{grad_check, train, Example, LstmParams, TrainConfig};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (hidden, len) in [(1, 1), (3, 4), (8, 5)] {
        let params = LstmParams::init(4, hidden, &mut rng);
        let example = Example {
            x: (0..4 * len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            mask_len: len,
            label: true,
        };
        println!(
            "hidden {hidden}, length {len}: {} parameters, max relative error {:.2e}",
            params.as_slice().len(),
            grad_check(&params, &example, 1e-5)?
        );
    }

    let toy = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Example> {
        (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=4);
                let x: Vec<f64> = (0..2 * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let label = x[2 * len - 2] + 0.5 * x[2 * len - 1] > 0.0;
                Example { x, mask_len: len, label }
            })
            .collect()
    };
    let (train_set, val_set) = (toy(&mut rng, 400), toy(&mut rng, 100));
    let config = TrainConfig {
        hidden_size: 8,
        epochs: 40,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let (params, history) = train(&train_set, &val_set, &config)?;
    let scores: Vec<f64> = val_set
        .iter()
        .map(|e| delirium_risk::lstm::forward(&params, &e.x, e.mask_len, None))
        .collect::<Result<_, _>>()?;
    let labels: Vec<bool> = val_set.iter().map(|e| e.label).collect();
    println!(
        "toy task: selected epoch {} of {}, validation AUROC {:.3}",
        history.selected_epoch + 1,
        history.train_loss.len(),
        auroc(&scores, &labels)?
    );
    Ok(())
}
