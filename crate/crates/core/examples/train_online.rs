//! Online TD(0) training with periodic evaluation.
//!
//! `cargo run --release --example train_online -- [steps] [phi]`

use optstop::market::MarketParams;
use optstop::trainer::{EvalContext, TrainConfig, TrainMode, Trainer};

fn main() -> optstop::error::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let phi = args.get(2).and_then(|s| s.parse().ok());
    let params = MarketParams::default();
    let config = TrainConfig {
        mode: TrainMode::OnlineTd0,
        steps,
        phi,
        test_size: 1 << 16,
        eval_every: (steps / 10).max(1),
        ..Default::default()
    };
    let ctx = EvalContext::new(&params, &config, None)?;
    let mut trainer = Trainer::new(&params, &config)?;
    println!("phi = {:?}", trainer.phi());
    trainer.run(Some(&ctx))?;
    for r in trainer.records() {
        println!(
            "step {:5}  td {:.3e}  P_stop {:.4}  P_ctrl {:.4}  err {:.4} / {:.4}  {:.1}s",
            r.step, r.loss, r.p_stopping, r.p_control, r.rel_err_stopping, r.rel_err_control, r.elapsed_s
        );
    }
    Ok(())
}
