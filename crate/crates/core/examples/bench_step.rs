//! Rough training-step throughput check for sizing desk experiments.
use desklab_core::model::{init_params, loss_and_grad, ModelConfig};
use std::time::Instant;

fn main() {
    let cfg = ModelConfig::desk();
    let p = init_params::<f32>(&cfg, 1);
    let b: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let t = cfg.context_len;
    let tokens: Vec<u32> = (0..b * t).map(|i| (i * 31 % 256) as u32).collect();
    // warmup
    let _ = loss_and_grad(&p, &tokens, b, t).unwrap();
    let n = 30;
    let start = Instant::now();
    for _ in 0..n {
        let _ = loss_and_grad(&p, &tokens, b, t).unwrap();
    }
    let dt = start.elapsed().as_secs_f64() / n as f64;
    let toks = (b * t) as f64;
    let nparams = cfg.param_count() as f64;
    let flops = 6.0 * nparams * toks; // rough fwd+bwd
    println!(
        "step {:.1} ms  | {:.0} tokens/s | ~{:.1} GFLOP/s",
        dt * 1e3,
        toks / dt,
        flops / dt / 1e9
    );
    let epoch_tokens = 250_000.0;
    println!("epoch(250K tok) ~ {:.1} s; 127 epochs ~ {:.1} min", epoch_tokens / (toks / dt), 127.0 * epoch_tokens / (toks / dt) / 60.0);
}
