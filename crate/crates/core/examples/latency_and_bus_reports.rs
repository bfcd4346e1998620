//! Report arithmetic: latency from interval counts and stage cuts, and the
//! wires needed to carry live values across a stage boundary.

use unrollhls::cosim::{bus_width_report, latency_report, parse_clock_ns, weight_histogram};
use unrollhls::fpformat::FloatFormat;
use unrollhls::frontend::zoo;
use unrollhls::pipeline::{build_design, PipelineOptions};
use unrollhls::sched::StageRequest;

fn main() {
    let clock = parse_clock_ns("10").unwrap();
    print!("{}", latency_report(1238, &[480, 960], clock).to_text());

    let f = FloatFormat::new(5, 4).unwrap();
    let crossing = 16 * 9 * 9 + 8 * 9 * 9;
    println!("{crossing} values x {} bits = {} wires", f.total_width(), crossing * f.total_width());

    let opts = PipelineOptions { format: f, stages: StageRequest::Count(3), ..Default::default() };
    let d = build_design(&zoo::braggnn(0), &opts).expect("compile");
    for b in bus_width_report(&d.dfg, &d.schedule, &d.resources, &d.schedule.stage_boundaries, f) {
        println!("boundary at cycle {}: {} values, {} wires", b.cycle, b.values, b.wires);
    }
    print!("weight exponents\n{}", weight_histogram(d.weights.values(), f).to_csv());
}
