use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{input_ports, output_ports, BackendError};
use crate::fpformat::{FPValue, FloatFormat};
use crate::interp::{evaluate_numeric, DataflowGraph, FormatRules};
use crate::ir::BufferKind;
use crate::tensor::Tensor;

/// Self-checking testbench plus its vector files.
#[derive(Clone, Debug, PartialEq)]
pub struct Testbench {
    pub text: String,
    /// `inputs.hex` contents: one word per line, vector-major, port order.
    pub inputs_hex: String,
    /// `expected.hex` contents, same layout over output ports.
    pub expected_hex: String,
    /// The input tensors behind each vector.
    pub vectors: Vec<BTreeMap<String, Tensor>>,
    /// Expected output words per vector, in output port order.
    pub expected: Vec<Vec<FPValue>>,
}

/// Seeded standard-normal tensors for every input buffer of the graph.
pub fn random_graph_inputs(dfg: &DataflowGraph, rng: &mut ChaCha8Rng) -> BTreeMap<String, Tensor> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    dfg.buffers()
        .iter()
        .filter(|b| b.kind == BufferKind::Input)
        .map(|b| {
            let data = (0..b.shape.num_elements()).map(|_| normal.sample(rng)).collect();
            (b.name.clone(), Tensor::new(b.shape.clone(), data))
        })
        .collect()
}

fn hex(fmt: FloatFormat, v: FPValue) -> String {
    let digits = (fmt.total_width() as usize).div_ceil(4);
    format!("{:0digits$x}", v.0)
}

/// Drive `n_vectors` seeded input sets through `top` and compare every
/// output word against format-rule evaluation of the graph.
pub fn emit_testbench(
    dfg: &DataflowGraph,
    fmt: FloatFormat,
    weights: &BTreeMap<String, Tensor>,
    n_vectors: usize,
    seed: u64,
) -> Result<Testbench, BackendError> {
    let ins = input_ports(dfg);
    let outs = output_ports(dfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rules = FormatRules(fmt);
    let mut inputs_hex = String::new();
    let mut expected_hex = String::new();
    let mut vectors = Vec::new();
    let mut expected = Vec::new();
    for _ in 0..n_vectors {
        let inputs = random_graph_inputs(dfg, &mut rng);
        let mut all = weights.clone();
        all.extend(inputs.iter().map(|(k, v)| (k.clone(), v.clone())));
        let result = evaluate_numeric(dfg, &all, &rules)?;
        for (_, _, buffer, offset) in &ins {
            let name = &dfg.buffers()[*buffer as usize].name;
            let _ = writeln!(inputs_hex, "{}", hex(fmt, fmt.encode(inputs[name].data[*offset as usize])));
        }
        let words: Vec<FPValue> = dfg
            .outputs()
            .iter()
            .map(|o| result[&dfg.buffers()[o.buffer as usize].name][o.offset as usize])
            .collect();
        for w in &words {
            let _ = writeln!(expected_hex, "{}", hex(fmt, *w));
        }
        vectors.push(inputs);
        expected.push(words);
    }

    let w = fmt.total_width();
    let (n_in, n_out) = (ins.len(), outs.len());
    let mut s = String::new();
    let _ = writeln!(s, "`timescale 1ns / 1ps");
    let _ = writeln!(s, "module tb_top;");
    let _ = writeln!(s, "    localparam N_VEC = {n_vectors};");
    let _ = writeln!(s, "    localparam N_IN = {n_in};");
    let _ = writeln!(s, "    localparam N_OUT = {n_out};");
    let _ = writeln!(s, "    reg clk = 1'b0;");
    let _ = writeln!(s, "    reg rst = 1'b1;");
    let _ = writeln!(s, "    reg start = 1'b0;");
    let _ = writeln!(s, "    wire done;");
    let _ = writeln!(s, "    reg [{}:0] in_mem [0:{}];", w - 1, (n_vectors * n_in).max(1) - 1);
    let _ = writeln!(s, "    reg [{}:0] exp_mem [0:{}];", w - 1, (n_vectors * n_out).max(1) - 1);
    for (name, ..) in &ins {
        let _ = writeln!(s, "    reg [{}:0] {name};", w - 1);
    }
    for (name, _) in &outs {
        let _ = writeln!(s, "    wire [{}:0] {name};", w - 1);
    }
    let _ = writeln!(s, "    integer vec;");
    let _ = writeln!(s, "    integer pass;");
    let _ = writeln!(s, "    integer fail;");
    let _ = writeln!(s, "    integer errs;\n");
    let mut conns = vec![".clk(clk)".to_string(), ".rst(rst)".into(), ".start(start)".into()];
    conns.extend(ins.iter().map(|(n, ..)| format!(".{n}({n})")));
    conns.extend(outs.iter().map(|(n, _)| format!(".{n}({n})")));
    conns.push(".done(done)".into());
    let _ = writeln!(s, "    top dut (\n        {}\n    );\n", conns.join(",\n        "));
    let _ = writeln!(s, "    always #5 clk = ~clk;\n");
    let _ = writeln!(s, "    initial begin");
    let _ = writeln!(s, "        pass = 0;");
    let _ = writeln!(s, "        fail = 0;");
    if n_vectors > 0 {
        let _ = writeln!(s, "        $readmemh(\"vectors/inputs.hex\", in_mem);");
        let _ = writeln!(s, "        $readmemh(\"vectors/expected.hex\", exp_mem);");
    }
    let _ = writeln!(s, "        repeat (2) @(posedge clk);");
    let _ = writeln!(s, "        @(negedge clk) rst = 1'b0;");
    let _ = writeln!(s, "        for (vec = 0; vec < N_VEC; vec = vec + 1) begin");
    for (i, (name, ..)) in ins.iter().enumerate() {
        let _ = writeln!(s, "            {name} = in_mem[vec * N_IN + {i}];");
    }
    let _ = writeln!(s, "            @(negedge clk) start = 1'b1;");
    let _ = writeln!(s, "            @(negedge clk) start = 1'b0;");
    let _ = writeln!(s, "            wait (done);");
    let _ = writeln!(s, "            @(negedge clk);");
    let _ = writeln!(s, "            errs = 0;");
    for (i, (name, _)) in outs.iter().enumerate() {
        let _ = writeln!(s, "            if ({name} !== exp_mem[vec * N_OUT + {i}]) errs = errs + 1;");
    }
    let _ = writeln!(s, "            if (errs == 0) pass = pass + 1;");
    let _ = writeln!(s, "            else begin");
    let _ = writeln!(s, "                fail = fail + 1;");
    let _ = writeln!(s, "                $display(\"FAIL vector %0d: %0d mismatched words\", vec, errs);");
    let _ = writeln!(s, "            end");
    let _ = writeln!(s, "        end");
    let _ = writeln!(s, "        $display(\"PASS %0d/%0d FAIL %0d\", pass, N_VEC, fail);");
    let _ = writeln!(s, "        $finish;");
    let _ = writeln!(s, "    end");
    let _ = writeln!(s, "endmodule");
    Ok(Testbench { text: s, inputs_hex, expected_hex, vectors, expected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::DfgBuilder;
    use crate::ir::ArithKind;

    fn relu2() -> DataflowGraph {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![2], BufferKind::Input);
        let y = b.add_buffer("y", vec![2], BufferKind::Output);
        for i in 0..2 {
            let v = b.input(x, i);
            let r = b.node(ArithKind::Relu, &[v]);
            b.output(y, i, r);
        }
        b.finish()
    }

    #[test]
    fn zero_vectors_pass_immediately() {
        let tb = emit_testbench(&relu2(), FloatFormat::new(5, 4).unwrap(), &BTreeMap::new(), 0, 0).unwrap();
        assert!(tb.inputs_hex.is_empty() && tb.expected_hex.is_empty());
        assert!(tb.text.contains("localparam N_VEC = 0;"));
        assert!(!tb.text.contains("$readmemh"));
    }

    #[test]
    fn expectations_follow_relu() {
        let f = FloatFormat::new(5, 4).unwrap();
        let tb = emit_testbench(&relu2(), f, &BTreeMap::new(), 3, 9).unwrap();
        assert_eq!(tb.inputs_hex.lines().count(), 6);
        for (v, words) in tb.vectors.iter().zip(&tb.expected) {
            for (x, w) in v["x"].data.iter().zip(words) {
                let want = if *x > 0.0 { f.encode(*x) } else { f.zero() };
                assert_eq!(*w, want);
            }
        }
        assert_eq!(tb, emit_testbench(&relu2(), f, &BTreeMap::new(), 3, 9).unwrap());
    }
}
