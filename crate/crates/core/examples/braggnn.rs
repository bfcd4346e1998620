//! Compile BraggNN at scale 1 and check the schedule on a few inputs.
//!
//! cargo run --release --example braggnn -- 5,4 480,960

use std::time::Instant;

use unrollhls::fpformat::FloatFormat;
use unrollhls::frontend::zoo;
use unrollhls::pipeline::{build_design, PipelineOptions};
use unrollhls::sched::StageRequest;

fn main() {
    let mut args = std::env::args().skip(1);
    let format: FloatFormat = args.next().unwrap_or_else(|| "5,11".into()).parse().expect("precision we,wf");
    let stages = args
        .next()
        .map(|s| s.split(',').map(|x| x.parse().expect("stage boundary")).collect())
        .unwrap_or_default();
    let opts = PipelineOptions { format, stages: StageRequest::Boundaries(stages), ..Default::default() };
    let t = Instant::now();
    let d = build_design(&zoo::braggnn(0), &opts).expect("compile");
    println!("compiled in {:?}", t.elapsed());
    print!("{}", d.report_text());
    let t = Instant::now();
    let v = d.verify(4, 0).expect("verify");
    println!("cosim {}/{} bitwise in {:?}", v.passed, v.vectors, t.elapsed());
}
