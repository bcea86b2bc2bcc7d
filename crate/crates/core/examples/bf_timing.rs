//! Per-call cost of the Bayes factor on a fixed binary covariate.
//!
//!     cargo run --release -p slicebf --example bf_timing

use std::time::Instant;

use slicebf::{BfEngine, Hyperparams, Ranking, SlicedDataset};

fn main() {
    for n in [200usize, 400, 800, 2000] {
        let x: Vec<u32> = (0..n).map(|i| ((i * 7919) % 13 < 6) as u32).collect();
        let d = SlicedDataset::from_ranked(Ranking::identity(n), x, 2, vec![0; n], 1).unwrap();
        let engine = BfEngine::for_dataset(&d, Hyperparams::default());
        let reps = 20;
        let start = Instant::now();
        let log_bf: f64 = (0..reps).map(|_| engine.log_bf(&d)).sum::<f64>() / reps as f64;
        println!("n = {n:>4}: {:.3} ms per call (log BF {log_bf:.4})", start.elapsed().as_secs_f64() * 1e3 / reps as f64);
    }
}
