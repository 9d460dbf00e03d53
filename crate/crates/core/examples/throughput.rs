//! Seconds per training step for a few shapes on a 4×4 sudoku batch.
//!
//! `cargo run --release -p urm-core --example throughput`

use std::time::Instant;

use urm_core::{train_step, Batch, ModelConfig, OptimConfig, Optimizer, Urm};
use urm_tasks::sudoku::gen_mini_sudoku;

fn main() {
    let insts: Vec<_> = (0..16).map(|i| gen_mini_sudoku(4, 8, 1, i).unwrap().instance).collect();
    for (layers, loops, n) in [(2, 1, 0), (2, 8, 2), (16, 1, 0)] {
        let cfg = ModelConfig {
            layers,
            hidden: 32,
            heads: 4,
            inner_loops: loops,
            forward_only_loops: n,
            act_max_steps: 1,
            max_seq_len: 21,
            puzzle_count: 16,
            ..ModelConfig::default()
        };
        let mut model = Urm::<f32>::new(cfg, 0).unwrap();
        let mut opt = Optimizer::new(OptimConfig::default(), &model.params, 100).unwrap();
        let batch = Batch::from_instances(&insts, &model.cfg).unwrap();
        let steps = 5;
        let t0 = Instant::now();
        for _ in 0..steps {
            train_step(&mut model, &mut opt, &batch).unwrap();
        }
        println!(
            "D={layers} M={loops} N={n}: {} params, {:.1} ms/step",
            model.param_count(),
            t0.elapsed().as_secs_f64() * 1e3 / steps as f64
        );
    }
}
