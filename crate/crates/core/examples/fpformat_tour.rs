//! Encodings, rounding and special values of the custom float format.

use unrollhls::fpformat::{exp_coefficients, horner_exp, FloatFormat};
use unrollhls::ir::ArithKind;

fn main() {
    let f = FloatFormat::new(5, 4).unwrap();
    println!("format {f}: width {}, bias {}, max {}, min normal {}", f.total_width(), f.bias(), f.max_value(), f.min_normal());
    for x in [1.0, -1.5, 0.1, 3.14159, 1e-9, 1e9, f64::NAN] {
        let v = f.encode(x);
        let fl = f.fields(v);
        println!("{x:>12} -> {:#05x} {fl:?} -> {}", v.0, f.decode(v));
    }
    let (a, b) = (f.encode(1.5), f.encode(2.0));
    for kind in [ArithKind::Addf, ArithKind::Mulf, ArithKind::Divf, ArithKind::Max] {
        println!("{kind}(1.5, 2.0) = {}", f.decode(f.apply(kind, &[a, b])));
    }
    println!("fmac(1.5, 2.0, 0.25) = {}", f.decode(f.apply(ArithKind::Fmac, &[a, b, f.encode(0.25)])));

    for k in [2, 4, 6, 8] {
        let c = exp_coefficients(k).unwrap();
        println!("exp(1) with order {k}: {}", horner_exp(1.0, &c));
    }
}
