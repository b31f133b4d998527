//! Backpropagation against central differences, for a batch-normalized
//! value network and for the martingale loss of a small ensemble.
//!
//! `cargo run --release --example gradient_check -- [seed]`

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use optstop::market::MarketParams;
use optstop::mlp::{MlpNetwork, MlpSpec};
use optstop::trainer::{TrainConfig, Trainer};

const H: f64 = 1e-5;

fn rel(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / 1e-4_f64.max(fd.abs().max(an.abs()))
}

fn main() -> optstop::error::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut net = MlpNetwork::new(MlpSpec::value_net(2), &mut rng)?;
    let x = Array2::from_shape_fn((16, 2), |_| rng.random_range(-2.0..2.0));
    let up = Array1::from_shape_fn(16, |_| rng.random_range(-1.0..1.0));
    net.forward(x.view())?;
    let grads = net.backward(&up)?;
    let mut worst: f64 = 0.0;
    for ti in 0..grads.tensors().len() {
        for k in 0..grads.tensors()[ti].len() {
            let orig = net.params()[ti][k];
            net.params_mut()[ti][k] = orig + H;
            let fp = net.predict_batch_stats(x.view())?.dot(&up);
            net.params_mut()[ti][k] = orig - H;
            let fm = net.predict_batch_stats(x.view())?.dot(&up);
            net.params_mut()[ti][k] = orig;
            worst = worst.max(rel((fp - fm) / (2.0 * H), grads.tensors()[ti][k]));
        }
    }
    println!("network ({} parameters, batchnorm on): max rel err {worst:.2e}", net.num_params());

    let params = MarketParams::default();
    let config = TrainConfig {
        num_intervals: 10,
        batch_size: 32,
        hidden: vec![6],
        phi: Some(0.4),
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&params, &config)?;
    trainer.step()?;
    let batch = trainer.next_batch()?;
    let (loss, terms, grads) = trainer.loss_gradients(&batch)?;
    let mut worst: f64 = 0.0;
    for (l, g) in grads.iter().enumerate() {
        for ti in 0..g.tensors().len() {
            for k in 0..g.tensors()[ti].len() {
                let orig = trainer.ensemble().network(l).params()[ti][k];
                trainer.ensemble_mut().network_mut(l).params_mut()[ti][k] = orig + H;
                let fp = trainer.loss_with_policy(&batch, &terms.pi)?;
                trainer.ensemble_mut().network_mut(l).params_mut()[ti][k] = orig - H;
                let fm = trainer.loss_with_policy(&batch, &terms.pi)?;
                trainer.ensemble_mut().network_mut(l).params_mut()[ti][k] = orig;
                worst = worst.max(rel((fp - fm) / (2.0 * H), g.tensors()[ti][k]));
            }
        }
    }
    println!("martingale loss {loss:.4e} over {} networks: max rel err {worst:.2e}", grads.len());
    Ok(())
}
