//! Behavioral operator library. Every module decodes its operands to
//! `real`, computes in double precision and re-encodes with round to
//! nearest even, mirroring `FloatFormat::apply`. A module of latency L has
//! L output register stages; latency 0 is purely combinational.

use std::fmt::Write as _;

use crate::fpformat::FloatFormat;
use crate::ir::ArithKind;
use crate::sched::ResourceModel;

pub fn module_name(kind: ArithKind) -> String {
    format!("op_{kind}")
}

fn functions(fmt: FloatFormat) -> String {
    let (we, wf, w) = (fmt.we(), fmt.wf(), fmt.total_width());
    let bias = fmt.bias();
    let shift = 52 - wf;
    let rem_mask = (1u64 << shift) - 1;
    let half = 1u64 << (shift - 1);
    let ew = we + wf;
    format!(
        "    function real fp_decode;
        input [{hi}:0] v;
        reg [63:0] bits;
        reg [10:0] e;
        begin
            case (v[{hi}:{exc_lo}])
                2'b00: bits = {{v[{sign}], 63'd0}};
                2'b01: begin
                    e = v[{ehi}:{wf}] + 11'd{ebias};
                    bits = {{v[{sign}], e, v[{fhi}:0], {shift}'d0}};
                end
                2'b10: bits = {{v[{sign}], 11'h7ff, 52'd0}};
                default: bits = {{1'b0, 11'h7ff, 1'b1, 51'd0}};
            endcase
            fp_decode = $bitstoreal(bits);
        end
    endfunction

    function [{hi}:0] fp_encode;
        input real x;
        reg [63:0] bits;
        reg [51:0] rem;
        reg [{qhi}:0] q;
        reg [31:0] eb;
        integer ex;
        begin
            bits = $realtobits(x);
            if (bits[62:52] == 11'h7ff) begin
                if (bits[51:0] != 52'd0)
                    fp_encode = {{2'b11, 1'b0, {ew}'d0}};
                else
                    fp_encode = {{2'b10, bits[63], {ew}'d0}};
            end else if (bits[62:52] == 11'd0) begin
                fp_encode = {{2'b00, bits[63], {ew}'d0}};
            end else begin
                q = {{2'b01, bits[51:{shift}]}};
                rem = bits[51:0] & 52'h{rem_mask:x};
                if (rem > 52'h{half:x} || (rem == 52'h{half:x} && q[0]))
                    q = q + 1'b1;
                ex = bits[62:52];
                ex = ex - 1023;
                if (q[{qhi}]) begin
                    q = q >> 1;
                    ex = ex + 1;
                end
                if (ex > {max_exp})
                    fp_encode = {{2'b10, bits[63], {ew}'d0}};
                else if (ex < {min_exp})
                    fp_encode = {{2'b00, bits[63], {ew}'d0}};
                else begin
                    eb = ex + {bias};
                    fp_encode = {{2'b01, bits[63], eb[{wem1}:0], q[{fhi}:0]}};
                end
            end
        end
    endfunction

    function is_nan;
        input [{hi}:0] v;
        is_nan = v[{hi}:{exc_lo}] == 2'b11;
    endfunction

    function is_zero;
        input [{hi}:0] v;
        is_zero = v[{hi}:{exc_lo}] == 2'b00;
    endfunction

    function is_inf;
        input [{hi}:0] v;
        is_inf = v[{hi}:{exc_lo}] == 2'b10;
    endfunction
",
        hi = w - 1,
        exc_lo = w - 2,
        sign = w - 3,
        ehi = ew - 1,
        fhi = wf - 1,
        wf = wf,
        ebias = 1023 - bias,
        shift = shift,
        qhi = wf + 1,
        ew = ew,
        rem_mask = rem_mask,
        half = half,
        max_exp = fmt.max_exp(),
        min_exp = fmt.min_exp(),
        bias = bias,
        wem1 = we - 1,
    )
}

/// Combinational result expression for `kind` on ports a, b, c.
fn body(kind: ArithKind, w: u32) -> String {
    let nan = format!("{{2'b11, {}'d0}}", w - 2);
    let zero = format!("{w}'d0");
    match kind {
        ArithKind::Addf => "fp_encode(fp_decode(a) + fp_decode(b))".into(),
        ArithKind::Subf => "fp_encode(fp_decode(a) - fp_decode(b))".into(),
        ArithKind::Mulf => "fp_encode(fp_decode(a) * fp_decode(b))".into(),
        ArithKind::Fmac => "fp_encode(fp_decode(a) * fp_decode(b) + fp_decode(c))".into(),
        ArithKind::Divf => format!(
            "(is_nan(a) || is_nan(b) || (is_zero(a) && is_zero(b)) || (is_inf(a) && is_inf(b))) ? {nan} :\n            \
             is_zero(b) ? {{2'b10, a[{s}] ^ b[{s}], {ew}'d0}} :\n            \
             is_inf(b) ? {{2'b00, a[{s}] ^ b[{s}], {ew}'d0}} :\n            \
             fp_encode(fp_decode(a) / fp_decode(b))",
            s = w - 3,
            ew = w - 3
        ),
        ArithKind::Sqrtf => format!(
            "(is_nan(a) || (a[{s}] && !is_zero(a))) ? {nan} :\n            \
             (is_zero(a) || is_inf(a)) ? a :\n            \
             fp_encode($sqrt(fp_decode(a)))",
            s = w - 3
        ),
        ArithKind::Neg => format!("is_nan(a) ? {nan} : {{a[{}:{}], ~a[{}], a[{}:0]}}", w - 1, w - 2, w - 3, w - 4),
        ArithKind::Relu => format!("is_nan(a) ? {nan} : (fp_decode(a) > 0.0) ? a : {zero}"),
        ArithKind::Max => format!(
            "(is_nan(a) || is_nan(b)) ? {nan} :\n            \
             (fp_decode(a) > fp_decode(b)) ? a :\n            \
             (fp_decode(b) > fp_decode(a)) ? b :\n            \
             (a[{s}] && !b[{s}]) ? b : a",
            s = w - 3
        ),
        ArithKind::Cmpfugt => format!("(is_nan(a) || is_nan(b) || fp_decode(a) > fp_decode(b)) ? ONE : {zero}"),
        ArithKind::Select => "is_zero(a) ? c : b".into(),
    }
}

/// One module per operator kind, pipeline depth equal to its latency.
pub fn emit_operator_library(fmt: FloatFormat, model: &ResourceModel) -> String {
    let w = fmt.total_width();
    let mut s = String::new();
    let _ = writeln!(s, "// operator library, format {fmt}, word width {w}");
    let _ = writeln!(s, "`timescale 1ns / 1ps");
    for kind in ArithKind::ALL {
        let lat = model.latency(kind);
        let ports = ["a", "b", "c"];
        let _ = writeln!(s, "\nmodule {} (", module_name(kind));
        let _ = writeln!(s, "    input wire clk,");
        for p in &ports[..kind.arity()] {
            let _ = writeln!(s, "    input wire [{}:0] {p},", w - 1);
        }
        let _ = writeln!(s, "    output wire [{}:0] y\n);", w - 1);
        if kind == ArithKind::Cmpfugt {
            let _ = writeln!(s, "    localparam [{}:0] ONE = {};", w - 1, super::literal(fmt, fmt.encode(1.0)));
        }
        s.push_str(&functions(fmt));
        let _ = writeln!(s, "\n    wire [{}:0] r = {};", w - 1, body(kind, w));
        if lat == 0 {
            let _ = writeln!(s, "    assign y = r;");
        } else {
            for i in 0..lat {
                let _ = writeln!(s, "    reg [{}:0] p{i};", w - 1);
            }
            let _ = writeln!(s, "    always @(posedge clk) begin");
            let _ = writeln!(s, "        p0 <= r;");
            for i in 1..lat {
                let _ = writeln!(s, "        p{i} <= p{};", i - 1);
            }
            let _ = writeln!(s, "    end");
            let _ = writeln!(s, "    assign y = p{};", lat - 1);
        }
        let _ = writeln!(s, "endmodule");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_depth_follows_latency() {
        let f = FloatFormat::new(5, 4).unwrap();
        let lib = emit_operator_library(f, &ResourceModel::default());
        let module = |k: ArithKind| {
            let start = lib.find(&format!("module {} (", module_name(k))).unwrap();
            let end = start + lib[start..].find("endmodule").unwrap();
            lib[start..end].to_string()
        };
        let add = module(ArithKind::Addf);
        assert!(add.contains("reg [11:0] p1;") && !add.contains("p2"));
        assert!(add.contains("assign y = p1;"));
        let relu = module(ArithKind::Relu);
        assert!(relu.contains("assign y = r;") && !relu.contains("always"));
        assert_eq!(module(ArithKind::Divf).matches("reg [11:0] p").count(), 8);
        assert!(super::super::lint(&[&lib]).is_empty(), "{:?}", super::super::lint(&[&lib]));
    }
}
