//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use unrollhls::cli::{cmd_compile, CompileConfig};
use unrollhls::cosim::{bus_width_report, latency_report};
use unrollhls::fpformat::{FPValue, FloatFormat};
use unrollhls::frontend::{lower_model, zoo, ExpApprox};
use unrollhls::interp::{evaluate_f64, reference, trace, trace_with_stats, DataflowGraph, DfgBuilder};
use unrollhls::ir::{ArithKind, BufferKind, IndexExpr, LoopNestProgram, LoopRange, Statement};
use unrollhls::pipeline::{build_design, PipelineOptions};
use unrollhls::sched::{
    assign_stages, bind, brute_force_schedule, brute_force_schedule_any_order, schedule, validate_schedule, Capacity, ResourceModel, Schedule,
    StageRequest,
};
use unrollhls::transforms::{hoist_globals, reduce_fors};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t.elapsed();
    ensure(e < limit, || format!("took {e:?}, limit {limit:?}"))?;
    Ok(e)
}

/// 1. Schedule simulation equals format-rule evaluation, five layer configs.
fn c1() -> Outcome {
    let t = Instant::now();
    let mut details = Vec::new();
    for (name, model) in zoo::layer_suite(0) {
        let d = build_design(&model, &PipelineOptions::default()).map_err(|e| e.to_string())?;
        let mut passed = 0;
        for seed in 0..16 {
            let inputs = zoo::random_inputs(&model, seed);
            let got = d.simulate(&inputs).map_err(|e| e.to_string())?;
            let want = d.evaluate(&inputs).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("{name} seed {seed}: simulation differs from evaluation"))?;
            passed += 1;
        }
        details.push(format!("{name} {passed}/16"));
    }
    let e = within(t, Duration::from_secs(120))?;
    Ok(format!("(5,11) bitwise: {} in {e:.1?}", details.join(", ")))
}

/// 2. Traced graph in f64 equals the memory-level interpreter exactly.
fn c2() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut n = 0;
    for kind in common::LAYER_KINDS {
        for _ in 0..20 {
            let model = common::random_layer_model(&mut rng, kind);
            let lowered = lower_model(&model, ExpApprox::new(rng.gen_range(1..=8)).unwrap()).map_err(|e| e.to_string())?;
            let (program, _) = hoist_globals(&lowered.program);
            let inputs = lowered.bind_inputs(&zoo::random_inputs(&model, rng.gen()));
            let g = trace(&program).map_err(|e| e.to_string())?;
            let got = evaluate_f64(&g, &inputs).map_err(|e| e.to_string())?;
            let want = reference::execute(&program, &inputs).map_err(|e| e.to_string())?;
            for (b, w) in &want {
                let same = got[b].data.iter().zip(&w.data).all(|(x, y)| x.to_bits() == y.to_bits());
                ensure(same, || format!("{kind} config {n}: buffer {b} differs"))?;
            }
            n += 1;
        }
    }
    let e = within(t, Duration::from_secs(60))?;
    Ok(format!("{n} random configs over {} layer types, bit-exact, {e:.1?}", common::LAYER_KINDS.len()))
}

/// 3. Conv resource bound and pre-fusion node count.
fn c3() -> Outcome {
    let model = zoo::conv_model(0);
    let d = build_design(&model, &PipelineOptions::default()).map_err(|e| e.to_string())?;
    // iteration-space enumeration: b=1, c_out=3, 16x16 outputs, c_in=1, 3x3 taps
    let (mut k, mut macs) = (0u64, 0u64);
    for _b in 0..1 {
        for _co in 0..3 {
            for _oh in 0..16 {
                for _ow in 0..16 {
                    k += 1;
                    for _ci in 0..1 {
                        for _kh in 0..3 {
                            for _kw in 0..3 {
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    ensure(d.bound.k == k, || format!("K = {}, enumeration gives {k}", d.bound.k))?;
    let pre = (d.traced.count(ArithKind::Mulf) + d.traced.count(ArithKind::Addf)) as u64;
    ensure(pre == 2 * macs, || format!("pre-fusion mul+add = {pre}, enumeration gives {}", 2 * macs))?;
    let diags = validate_schedule(&d.dfg, &d.binding, &d.schedule, &d.resources);
    ensure(diags.is_empty(), || diags.join("; "))?;
    // independent occupancy count: issues per kind per cycle within capacity
    let mut busy: BTreeMap<(ArithKind, u64), u32> = BTreeMap::new();
    for (i, n) in d.dfg.nodes().iter().enumerate() {
        for c in d.schedule.start[i]..d.schedule.start[i] + d.resources.ii(n.kind) {
            *busy.entry((n.kind, c)).or_default() += 1;
        }
    }
    for ((kind, cycle), used) in busy {
        if let Capacity::Bounded(cap) = d.resources.capacity(kind) {
            ensure(used <= cap, || format!("{kind} uses {used} > {cap} at cycle {cycle}"))?;
        }
    }
    Ok(format!("K = {k}, pre-fusion mul+add = {pre}, schedule valid, occupancy within capacity"))
}

fn longest_path(g: &DataflowGraph, m: &ResourceModel) -> u64 {
    let mut finish = vec![0u64; g.values().len()];
    let mut best = 0;
    for n in g.nodes() {
        let ready = n.operands().iter().map(|o| finish[o.index()]).max().unwrap_or(0);
        finish[n.result.index()] = ready + m.latency(n.kind);
        best = best.max(finish[n.result.index()]);
    }
    best
}

fn bounded_model(rng: &mut ChaCha8Rng) -> ResourceModel {
    let caps: BTreeMap<ArithKind, Capacity> =
        ArithKind::ALL.iter().map(|&k| (k, Capacity::Bounded(rng.gen_range(1..=2)))).collect();
    let mut m = ResourceModel::default().with_capacities(&caps);
    for k in ArithKind::ALL {
        m.specs.get_mut(&k).unwrap().latency = rng.gen_range(1..=3);
    }
    m
}

/// 4. Unbounded optimality and the brute-force envelope.
fn c4() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..200 {
        let n = rng.gen_range(1..=60);
        let g = common::random_dag(&mut rng, n);
        let m = ResourceModel::default();
        let s = schedule(&g, &bind(&g, &m), &m);
        let cp = longest_path(&g, &m);
        ensure(s.total_intervals == cp, || format!("DAG {i}: total {} != critical path {cp}", s.total_intervals))?;
    }
    let (mut worst, mut equal, mut shaped) = (1.0f64, 0, 0);
    // relaxed oracle: same binding, free issue order per instance
    let (mut worst_free, mut gaps_free) = (1.0f64, 0);
    for i in 0..100 {
        let size = rng.gen_range(1..=12);
        let (g, shape) = match i % 3 {
            0 => (common::random_dag(&mut rng, size), "dag"),
            1 => (common::random_chain(&mut rng, size), "chain"),
            _ => (common::random_tree(&mut rng, size), "tree"),
        };
        let m = bounded_model(&mut rng);
        let b = bind(&g, &m);
        let list = schedule(&g, &b, &m).total_intervals;
        let best = brute_force_schedule(&g, &b, &m).map_err(|e| e.to_string())?.total_intervals;
        let free = brute_force_schedule_any_order(&g, &b, &m).map_err(|e| e.to_string())?.total_intervals;
        ensure(list >= best && best >= free, || format!("instance {i}: list {list}, optimum {best}, free order {free}"))?;
        let ratio = |x: u64| if x == 0 { 1.0 } else { list as f64 / x as f64 };
        worst = worst.max(ratio(best));
        worst_free = worst_free.max(ratio(free));
        if shape != "dag" {
            shaped += 1;
            ensure(list == best, || format!("{shape} instance {i}: list {list}, optimum {best}"))?;
            gaps_free += usize::from(list != free);
        }
        equal += usize::from(list == best);
    }
    let e = within(t, Duration::from_secs(300))?;
    Ok(format!(
        "200/200 unbounded = critical path; bounded: {equal}/100 optimal, worst ratio {worst:.3}, {shaped} chains/trees exact; \
         free-order oracle worst ratio {worst_free:.3}, {gaps_free} chains/trees above it; {e:.1?}"
    ))
}

fn sum_program(n: i64) -> LoopNestProgram {
    let mut p = LoopNestProgram::new("sum");
    p.params.push(unrollhls::ir::BufferDecl::new("x", vec![n as usize], BufferKind::Input));
    p.params.push(unrollhls::ir::BufferDecl::new("y", vec![1], BufferKind::Output));
    let at0 = || vec![IndexExpr::constant(0)];
    let step = vec![
        Statement::load("acc", "y", at0()),
        Statement::load("xi", "x", vec![IndexExpr::var("i")]),
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

/// 5. n-leaf sums schedule in ceil(log2 n) adder latencies.
fn c5() -> Outcome {
    let m = ResourceModel::default();
    let lat = m.latency(ArithKind::Addf);
    let mut parts = Vec::new();
    for n in [2u64, 8, 768] {
        let chain = trace(&sum_program(n as i64)).map_err(|e| e.to_string())?;
        let (tree, _) = reduce_fors(&chain).map_err(|e| e.to_string())?;
        let s = schedule(&tree, &bind(&tree, &m), &m);
        let levels = 64 - (n - 1).leading_zeros() as u64;
        ensure(s.total_intervals == levels * lat, || format!("n={n}: {} cycles, want {}", s.total_intervals, levels * lat))?;
        parts.push(format!("n={n}: {} cycles", s.total_intervals));
    }
    Ok(format!("{} (add latency {lat})", parts.join(", ")))
}

/// 6. Float format conformance.
fn c6() -> Outcome {
    let t = Instant::now();
    let f54 = FloatFormat::new(5, 4).unwrap();
    ensure(f54.total_width() == 12, || format!("(5,4) width {}", f54.total_width()))?;
    for bits in 0..1u64 << 12 {
        let v = FPValue(bits);
        let c = f54.canonicalize(v);
        ensure(f54.canonicalize(c) == c, || format!("{bits:#x}: canonicalize not idempotent"))?;
        let (x, y) = (f54.decode(v), f54.decode(c));
        ensure(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()), || format!("{bits:#x}: value changed"))?;
        ensure(f54.encode(y) == c, || format!("{bits:#x}: encode(decode) != canonical form"))?;
    }
    let f53 = FloatFormat::new(5, 3).unwrap();
    let n = 1u64 << f53.total_width();
    let mut pairs = 0u64;
    for a in 0..n {
        let a = f53.canonicalize(FPValue(a));
        if f53.decode(a).is_nan() {
            continue;
        }
        for b in 0..n {
            let b = f53.canonicalize(FPValue(b));
            if f53.decode(b).is_nan() {
                continue;
            }
            for k in [ArithKind::Addf, ArithKind::Mulf] {
                ensure(f53.apply(k, &[a, b]) == f53.apply(k, &[b, a]), || format!("{k} not commutative on {a:?} {b:?}"))?;
            }
            pairs += 1;
        }
    }
    let e = within(t, Duration::from_secs(120))?;
    Ok(format!("(5,4) width 12; 4096 patterns canonical; {pairs} non-NaN (5,3) pairs commute for addf/mulf, {e:.1?}"))
}

/// 7. Report identities.
fn c7() -> Outcome {
    let boundaries = assign_stages(1238, &StageRequest::Boundaries(vec![480, 960])).map_err(|e| e.to_string())?;
    let r = latency_report(1238, &boundaries, 10_000);
    ensure(r.stage_lengths == [480, 480, 278], || format!("stage lengths {:?}", r.stage_lengths))?;
    ensure(r.throughput_us_per_sample() == "4.8", || format!("throughput {} us", r.throughput_us_per_sample()))?;
    ensure(r.end_to_end_us() == "12.38", || format!("end to end {} us", r.end_to_end_us()))?;

    // 16x9x9 + 8x9x9 values produced before a boundary and read after it
    let crossing = 16 * 9 * 9 + 8 * 9 * 9;
    let mut b = DfgBuilder::new();
    let x = b.add_buffer("x", vec![crossing], BufferKind::Input);
    let y = b.add_buffer("y", vec![crossing], BufferKind::Output);
    for i in 0..crossing as u32 {
        let v = b.input(x, i);
        let p = b.node(ArithKind::Mulf, &[v, v]);
        let s = b.node(ArithKind::Addf, &[p, v]);
        b.output(y, i, s);
    }
    let g = b.finish();
    let m = ResourceModel::default();
    let bnd = bind(&g, &m);
    let mut s: Schedule = schedule(&g, &bnd, &m);
    s.stage_boundaries = vec![m.latency(ArithKind::Mulf)];
    let w12 = bus_width_report(&g, &s, &m, &s.stage_boundaries, FloatFormat::new(5, 4).unwrap());
    let w11 = bus_width_report(&g, &s, &m, &s.stage_boundaries, FloatFormat::new(5, 3).unwrap());
    ensure(w12[0].values == crossing, || format!("{} crossing values", w12[0].values))?;
    ensure(w12[0].wires == 23_328, || format!("{} wires at width 12", w12[0].wires))?;
    ensure(w11[0].wires == 21_384, || format!("{} wires at width 11", w11[0].wires))?;
    Ok(format!(
        "1238 @ 10 ns, stages 480/480/278: {} us/sample, {} us end to end; {crossing} values x 12 = {} wires",
        r.throughput_us_per_sample(),
        r.end_to_end_us(),
        w12[0].wires
    ))
}

fn peak_rss_mb() -> Option<u64> {
    let s = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = s.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse::<u64>().ok().map(|kb| kb / 1024)
}

/// 8. Tracing a 3x3 conv over 64x64.
fn c8() -> Outcome {
    let model = zoo::conv_model_sized(0, 64);
    let lowered = lower_model(&model, ExpApprox::default()).map_err(|e| e.to_string())?;
    let (program, _) = hoist_globals(&lowered.program);
    let t = Instant::now();
    let (_, stats) = trace_with_stats(&program).map_err(|e| e.to_string())?;
    let e = within(t, Duration::from_secs(60))?;
    let bodies = stats.count(ArithKind::Mulf);
    ensure(bodies >= 36_864, || format!("only {bodies} body executions"))?;
    let rss = peak_rss_mb();
    if let Some(mb) = rss {
        ensure(mb < 2048, || format!("peak resident memory {mb} MB"))?;
    }
    let mem = rss.map_or("peak memory unavailable".to_string(), |mb| format!("process peak {mb} MB"));
    Ok(format!("{bodies} MAC bodies, {} nodes traced in {e:.2?}, {mem}", stats.total_nodes))
}

/// 9. BraggNN end to end through schedule simulation.
fn c9() -> Outcome {
    let t = Instant::now();
    let model = zoo::braggnn(0);
    let d = build_design(&model, &PipelineOptions::default()).map_err(|e| e.to_string())?;
    let (top, _) = d.rtl().map_err(|e| e.to_string())?;
    for seed in 0..4 {
        let inputs = zoo::random_inputs(&model, seed);
        let got = d.simulate(&inputs).map_err(|e| e.to_string())?;
        let want = d.evaluate(&inputs).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("seed {seed}: simulation differs from evaluation"))?;
    }
    let e = within(t, Duration::from_secs(30 * 60))?;
    Ok(format!(
        "{} nodes, {} intervals, {} MB of RTL, 4/4 seeds bitwise under (5,11), {e:.1?}",
        d.dfg.len(),
        d.schedule.total_intervals,
        top.len() >> 20
    ))
}

fn tree_hash(dir: &std::path::Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), hex);
            }
        }
    }
    out
}

/// 10. Two compiles with one configuration give identical trees.
fn c10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (json, blob) = zoo::braggnn_builder(3).to_files();
    let (m, w) = (dir.path().join("m.json"), dir.path().join("m.bin"));
    std::fs::write(&m, json).map_err(|e| e.to_string())?;
    std::fs::write(&w, blob).map_err(|e| e.to_string())?;
    let config = CompileConfig {
        model_path: m,
        weights_path: Some(w),
        options: PipelineOptions {
            format: FloatFormat::new(5, 4).unwrap(),
            stages: StageRequest::Count(3),
            ..Default::default()
        },
        seed: 11,
        emit_ir: true,
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_compile(&config, &a, 4).map_err(|e| e.to_string())?;
    cmd_compile(&config, &b, 4).map_err(|e| e.to_string())?;
    let (ha, hb) = (tree_hash(&a), tree_hash(&b));
    ensure(!ha.is_empty() && ha == hb, || "output trees differ".to_string())?;
    Ok(format!("{} files, identical SHA-256 digests", ha.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 layer-suite cosim equivalence", c1),
        ("2 forwarding soundness", c2),
        ("3 conv resource bound", c3),
        ("4 scheduler optimality envelope", c4),
        ("5 reduction tree depth", c5),
        ("6 float format conformance", c6),
        ("7 report identities", c7),
        ("8 unrolling scalability", c8),
        ("9 BraggNN end to end", c9),
        ("10 determinism", c10),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match r {
            Ok(msg) => println!("criterion {name}: PASS {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {name}: FAIL {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
