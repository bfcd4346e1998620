//! Schedule an n-leaf sum before and after tree reduction, and compare the
//! list scheduler with the exhaustive oracle on a small bounded instance.

use std::collections::BTreeMap;

use unrollhls::interp::{trace, DfgBuilder};
use unrollhls::ir::{idx, ArithKind, BufferDecl, BufferKind, IndexExpr, LoopNestProgram, LoopRange, Statement};
use unrollhls::sched::{bind, brute_force_schedule, critical_path, schedule, Capacity, ResourceModel};
use unrollhls::transforms::reduce_fors;

fn sum_program(n: i64) -> LoopNestProgram {
    let mut p = LoopNestProgram::new("sum");
    p.params.push(BufferDecl::new("x", vec![n as usize], BufferKind::Input));
    p.params.push(BufferDecl::new("y", vec![1], BufferKind::Output));
    let at0 = || vec![IndexExpr::constant(0)];
    let step = vec![
        Statement::load("acc", "y", at0()),
        Statement::load("xi", "x", idx(&["i"])),
        Statement::reduce("s", ArithKind::Addf, &["acc", "xi"]),
        Statement::store("s", "y", at0()),
    ];
    let body = vec![
        Statement::load("first", "x", at0()),
        Statement::store("first", "y", at0()),
        Statement::for_loop("i", LoopRange::new(1, n, 1), step),
    ];
    p.body = vec![Statement::parallel(&["b"], vec![LoopRange::to(1)], body)];
    p
}

fn main() {
    let m = ResourceModel::default();
    for n in [2, 8, 768] {
        let chain = trace(&sum_program(n)).unwrap();
        let (tree, _) = reduce_fors(&chain).unwrap();
        let total = |g| schedule(g, &bind(g, &m), &m).total_intervals;
        println!("n={n:<4} chain {:>5} cycles, tree {:>3} cycles", total(&chain), total(&tree));
    }

    // four independent products sharing one multiplier
    let mut b = DfgBuilder::new();
    let x = b.add_buffer("x", vec![8], BufferKind::Input);
    let y = b.add_buffer("y", vec![2], BufferKind::Output);
    let v: Vec<_> = (0..8).map(|i| b.input(x, i)).collect();
    let p: Vec<_> = (0..4).map(|i| b.node(ArithKind::Mulf, &[v[2 * i], v[2 * i + 1]])).collect();
    let s0 = b.node(ArithKind::Addf, &[p[0], p[1]]);
    let s1 = b.node(ArithKind::Addf, &[p[2], p[3]]);
    b.output(y, 0, s0);
    b.output(y, 1, s1);
    let g = b.finish();
    let bounded = m.clone().with_capacities(&BTreeMap::from([(ArithKind::Mulf, Capacity::Bounded(1))]));
    let bnd = bind(&g, &bounded);
    let list = schedule(&g, &bnd, &bounded);
    let best = brute_force_schedule(&g, &bnd, &bounded).unwrap();
    println!("critical path {}, list {}, optimum {}", critical_path(&g, &m), list.total_intervals, best.total_intervals);
    println!("list starts {:?}", list.start);
}
