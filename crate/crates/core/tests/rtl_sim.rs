//! Runs the emitted testbench under Icarus Verilog when it is installed;
//! otherwise the test only reports that it was skipped.

use std::process::Command;

use unrollhls::fpformat::FloatFormat;
use unrollhls::frontend::zoo;
use unrollhls::pipeline::{build_design, PipelineOptions};

fn have(tool: &str) -> bool {
    Command::new(tool).arg("-V").output().is_ok()
}

#[test]
fn testbench_passes_in_icarus() {
    if !have("iverilog") || !have("vvp") {
        eprintln!("skipped: iverilog/vvp not found");
        return;
    }
    let opts = PipelineOptions { format: FloatFormat::new(5, 4).unwrap(), ..Default::default() };
    for model in [zoo::relu_model(&[4]), zoo::conv_model_sized(0, 4)] {
        let d = build_design(&model, &opts).unwrap();
        let (top, ops) = d.rtl().unwrap();
        let tb = d.testbench(4, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        std::fs::create_dir(p.join("vectors")).unwrap();
        std::fs::write(p.join("top.v"), top).unwrap();
        std::fs::write(p.join("ops.v"), ops).unwrap();
        std::fs::write(p.join("tb_top.v"), &tb.text).unwrap();
        std::fs::write(p.join("vectors/inputs.hex"), &tb.inputs_hex).unwrap();
        std::fs::write(p.join("vectors/expected.hex"), &tb.expected_hex).unwrap();
        let c = Command::new("iverilog")
            .current_dir(p)
            .args(["-g2005", "-o", "sim", "tb_top.v", "top.v", "ops.v"])
            .output()
            .unwrap();
        assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
        let r = Command::new("vvp").current_dir(p).arg("sim").output().unwrap();
        let out = String::from_utf8_lossy(&r.stdout);
        assert!(out.contains("PASS 4/4 FAIL 0"), "{out}");
    }
}
