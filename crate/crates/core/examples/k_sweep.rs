//! Penalty sensitivity: one offline run per K, final control-price error.
//!
//! `cargo run --release --example k_sweep -- [steps] [K ...]`

use optstop::market::MarketParams;
use optstop::trainer::{EvalContext, TrainConfig, Trainer};

fn main() -> optstop::error::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let mut ks: Vec<f64> = args.iter().skip(2).filter_map(|s| s.parse().ok()).collect();
    if ks.is_empty() {
        ks = vec![1.0, 5.0, 10.0, 50.0];
    }
    let params = MarketParams::default();
    let base = TrainConfig {
        steps,
        phi: Some(0.4),
        test_size: 1 << 16,
        eval_every: steps.max(1),
        ..Default::default()
    };
    let ctx = EvalContext::new(&params, &base, None)?;
    println!("K      P_stop   P_ctrl   err_stop  err_ctrl  se_ctrl");
    for k in ks {
        let cfg = TrainConfig { penalty: k, ..base.clone() };
        let mut t = Trainer::new(&params, &cfg)?;
        t.run(None)?;
        let r = t.evaluate(&ctx)?;
        println!(
            "{k:<6} {:.4}   {:.4}   {:.4}    {:.4}    {:.4}",
            r.p_stopping, r.p_control, r.rel_err_stopping, r.rel_err_control, r.se_control
        );
    }
    Ok(())
}
