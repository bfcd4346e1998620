use std::collections::BTreeMap;

use super::{list_schedule, Binding, ResourceModel, SchedError, Schedule};
use crate::interp::DataflowGraph;
use crate::ir::ArithKind;

/// Largest graph [`brute_force_schedule`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 12;

struct Search<'a> {
    lat: Vec<u64>,
    ii: Vec<u64>,
    preds: Vec<Vec<usize>>,
    /// Longest latency path from the start of a node to the end of the graph.
    tail: Vec<u64>,
    /// Indices of the nodes sharing each node's instance.
    peers: Vec<Vec<usize>>,
    /// Peers that must issue first (trace order on instances).
    before: Vec<Vec<usize>>,
    best: u64,
    best_start: Vec<u64>,
    start: Vec<Option<u64>>,
    _g: &'a DataflowGraph,
}

impl Search<'_> {
    fn earliest(&self, n: usize) -> u64 {
        let mut t = self.preds[n].iter().map(|&p| self.start[p].unwrap() + self.lat[p]).max().unwrap_or(0);
        for &q in &self.before[n] {
            t = t.max(self.start[q].unwrap() + self.ii[q]);
        }
        // first slot at or after t that keeps II spacing to every placed peer
        loop {
            let clash = self.peers[n].iter().filter_map(|&q| self.start[q].map(|s| (q, s))).find(|&(q, s)| {
                let (a, b) = if s <= t { (s, t) } else { (t, s) };
                let gap = if s <= t { self.ii[q] } else { self.ii[n] };
                b - a < gap
            });
            match clash {
                None => return t,
                Some((q, s)) => t = t.max(s + self.ii[q]).max(t + 1),
            }
        }
    }

    fn bound(&self, done: u64) -> u64 {
        let mut lb = done;
        let mut est = vec![0u64; self.lat.len()];
        for n in 0..self.lat.len() {
            est[n] = match self.start[n] {
                Some(s) => s,
                None => self.preds[n].iter().map(|&p| est[p] + self.lat[p]).max().unwrap_or(0),
            };
            if self.start[n].is_none() {
                lb = lb.max(est[n] + self.tail[n]);
            }
        }
        lb
    }

    fn go(&mut self, placed: usize, done: u64) {
        let n = self.lat.len();
        if placed == n {
            if done < self.best {
                self.best = done;
                self.best_start = self.start.iter().map(|s| s.unwrap()).collect();
            }
            return;
        }
        if self.bound(done) >= self.best {
            return;
        }
        for v in 0..n {
            let blocked = |q: &usize| self.start[*q].is_none();
            if self.start[v].is_some() || self.preds[v].iter().any(blocked) || self.before[v].iter().any(blocked) {
                continue;
            }
            let t = self.earliest(v);
            self.start[v] = Some(t);
            self.go(placed + 1, done.max(t + self.lat[v]));
            self.start[v] = None;
        }
    }
}

/// Minimum-makespan schedule under precedence and per-instance II spacing
/// for the given binding, by exhaustive branch and bound. Nodes sharing an
/// instance issue in trace order, as in [`list_schedule`].
pub fn brute_force_schedule(dfg: &DataflowGraph, binding: &Binding, model: &ResourceModel) -> Result<Schedule, SchedError> {
    search(dfg, binding, model, true)
}

/// Like [`brute_force_schedule`] but nodes sharing an instance may issue in
/// any order.
pub fn brute_force_schedule_any_order(
    dfg: &DataflowGraph,
    binding: &Binding,
    model: &ResourceModel,
) -> Result<Schedule, SchedError> {
    search(dfg, binding, model, false)
}

fn search(dfg: &DataflowGraph, binding: &Binding, model: &ResourceModel, trace_order: bool) -> Result<Schedule, SchedError> {
    let n = dfg.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(SchedError::TooLarge(n));
    }
    let lat: Vec<u64> = dfg.nodes().iter().map(|x| model.latency(x.kind)).collect();
    let ii: Vec<u64> = dfg.nodes().iter().map(|x| model.ii(x.kind)).collect();
    let preds: Vec<Vec<usize>> = dfg
        .nodes()
        .iter()
        .map(|x| {
            let mut p: Vec<usize> = x.operands().iter().filter_map(|&o| dfg.producer(o)).map(|p| p.index()).collect();
            p.dedup();
            p
        })
        .collect();
    let mut tail = lat.clone();
    for v in (0..n).rev() {
        for &p in &preds[v] {
            tail[p] = tail[p].max(lat[p] + tail[v]);
        }
    }
    let mut groups: BTreeMap<(ArithKind, u32), Vec<usize>> = BTreeMap::new();
    for (i, x) in dfg.nodes().iter().enumerate() {
        groups.entry((x.kind, binding.instance[i])).or_default().push(i);
    }
    let mut peers = vec![Vec::new(); n];
    for g in groups.values() {
        for &a in g {
            peers[a] = g.iter().copied().filter(|&b| b != a).collect();
        }
    }
    let before: Vec<Vec<usize>> =
        (0..n).map(|a| if trace_order { peers[a].iter().copied().filter(|&b| b < a).collect() } else { Vec::new() }).collect();
    let upper = list_schedule(dfg, binding, model);
    let mut s = Search {
        lat,
        ii,
        preds,
        tail,
        peers,
        before,
        best: upper.total_intervals + 1,
        best_start: upper.start.clone(),
        start: vec![None; n],
        _g: dfg,
    };
    s.go(0, 0);
    let total_intervals = s.best.min(upper.total_intervals);
    let start = if s.best <= upper.total_intervals { s.best_start } else { upper.start };
    Ok(Schedule { start, total_intervals, stage_boundaries: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::DfgBuilder;
    use crate::ir::BufferKind;
    use crate::sched::{bind, validate_schedule, Capacity, OperatorSpec};

    #[test]
    fn single_node() {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![1], BufferKind::Input);
        let a = b.input(x, 0);
        b.node(ArithKind::Divf, &[a, a]);
        let g = b.finish();
        let m = ResourceModel::default();
        assert_eq!(brute_force_schedule(&g, &bind(&g, &m), &m).unwrap().total_intervals, 8);
    }

    #[test]
    fn two_muls_one_instance() {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![2], BufferKind::Input);
        let (a, c) = (b.input(x, 0), b.input(x, 1));
        b.node(ArithKind::Mulf, &[a, c]);
        b.node(ArithKind::Mulf, &[c, a]);
        let g = b.finish();
        let mut m = ResourceModel::default();
        m.capacity.insert(ArithKind::Mulf, Capacity::Bounded(1));
        let bd = bind(&g, &m);
        let s = brute_force_schedule(&g, &bd, &m).unwrap();
        assert_eq!(s.total_intervals, 3);
        assert!(validate_schedule_free_order(&g, &bd, &s, &m));
    }

    /// Precedence plus pairwise II spacing, ignoring trace order on instances.
    fn validate_schedule_free_order(g: &DataflowGraph, bd: &Binding, s: &Schedule, m: &ResourceModel) -> bool {
        let prec = validate_schedule(g, bd, s, m).iter().all(|d| !d.starts_with("precedence"));
        let mut ok = true;
        for i in 0..g.len() {
            for j in 0..i {
                if (g.nodes()[i].kind, bd.instance[i]) == (g.nodes()[j].kind, bd.instance[j]) {
                    ok &= s.start[i].abs_diff(s.start[j]) >= m.ii(g.nodes()[i].kind);
                }
            }
        }
        prec && ok
    }

    #[test]
    fn beats_trace_order_when_a_late_node_is_urgent() {
        // trace order puts an independent mul before the head of a long chain
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![1], BufferKind::Input);
        let a = b.input(x, 0);
        b.node(ArithKind::Mulf, &[a, a]);
        let h = b.node(ArithKind::Mulf, &[a, a]);
        let d = b.node(ArithKind::Divf, &[h, h]);
        b.node(ArithKind::Divf, &[d, d]);
        let g = b.finish();
        let mut m = ResourceModel::default();
        m.specs.insert(ArithKind::Mulf, OperatorSpec { latency: 2, ii: 2 });
        m.capacity.insert(ArithKind::Mulf, Capacity::Bounded(1));
        let bd = bind(&g, &m);
        let list = list_schedule(&g, &bd, &m);
        let best = brute_force_schedule_any_order(&g, &bd, &m).unwrap();
        assert_eq!(list.total_intervals, 20);
        assert_eq!(best.total_intervals, 18);
        assert!(validate_schedule_free_order(&g, &bd, &best, &m));
        let ordered = brute_force_schedule(&g, &bd, &m).unwrap();
        assert_eq!(ordered.total_intervals, 20);
        assert!(validate_schedule(&g, &bd, &ordered, &m).is_empty());
    }

    #[test]
    fn rejects_large_instances() {
        let mut b = DfgBuilder::new();
        let x = b.add_buffer("x", vec![1], BufferKind::Input);
        let a = b.input(x, 0);
        for _ in 0..13 {
            b.node(ArithKind::Neg, &[a]);
        }
        let g = b.finish();
        let m = ResourceModel::default();
        assert_eq!(brute_force_schedule(&g, &bind(&g, &m), &m), Err(SchedError::TooLarge(13)));
    }
}
