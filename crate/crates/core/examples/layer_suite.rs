//! Compile the five single-layer models and check schedule simulation
//! against format-rule evaluation on seeded inputs.

use std::time::Instant;

use unrollhls::frontend::zoo;
use unrollhls::pipeline::{build_design, PipelineOptions};

fn main() {
    let opts = PipelineOptions::default();
    for (name, model) in zoo::layer_suite(0) {
        let t = Instant::now();
        let d = build_design(&model, &opts).expect("compile");
        let v = d.verify(16, 0).expect("verify");
        println!(
            "{name:<14} {:>6} nodes {:>5} intervals  {}/{} bitwise  {:?}",
            d.dfg.len(),
            d.schedule.total_intervals,
            v.passed,
            v.vectors,
            t.elapsed()
        );
    }
}
