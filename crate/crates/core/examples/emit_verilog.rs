//! Compile a two-element ReLU into Verilog and print the top module, the
//! testbench and its vectors.

use unrollhls::fpformat::FloatFormat;
use unrollhls::frontend::zoo;
use unrollhls::pipeline::{build_design, PipelineOptions};

fn main() {
    let opts = PipelineOptions { format: FloatFormat::new(5, 4).unwrap(), ..Default::default() };
    let design = build_design(&zoo::relu_model(&[2]), &opts).expect("compile");
    let (top, ops) = design.rtl().expect("rtl");
    println!("{top}");
    println!("// operator library: {} lines", ops.lines().count());
    let tb = design.testbench(2, 0).expect("testbench");
    println!("{}", tb.text);
    println!("inputs.hex:\n{}expected.hex:\n{}", tb.inputs_hex, tb.expected_hex);
}
