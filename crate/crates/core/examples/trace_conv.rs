//! Lower a 3x3 convolution, trace it into a dataflow graph and check the
//! graph against the memory-level reference interpreter.

use unrollhls::frontend::{lower_model, zoo, ExpApprox};
use unrollhls::interp::{evaluate_f64, reference, trace_with_stats};
use unrollhls::ir;
use unrollhls::transforms::hoist_globals;

fn main() {
    let size = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let model = zoo::conv_model_sized(0, size);
    let lowered = lower_model(&model, ExpApprox::default()).expect("lowering");
    let (program, _) = hoist_globals(&lowered.program);
    println!("{}", ir::pretty_print(&program));

    let (dfg, stats) = trace_with_stats(&program).expect("trace");
    println!("traced {} nodes in {:?}", stats.total_nodes, stats.wall_time.unwrap_or_default());
    for (kind, n) in &stats.node_counts {
        println!("  {kind:<8} {n}");
    }

    let inputs = lowered.bind_inputs(&zoo::random_inputs(&model, 1));
    let traced = evaluate_f64(&dfg, &inputs).expect("evaluate");
    let direct = reference::execute(&program, &inputs).expect("reference");
    let same = traced["y"].data.iter().zip(&direct["y"].data).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("graph == reference interpreter: {same}");
}
