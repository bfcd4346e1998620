//! The whole compile as one in-memory value: model graph in, scheduled
//! graph, RTL and reports out.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::backend::{self, BackendError, Testbench};
use crate::cosim::{self, BoundaryWires, LatencyReport, SimError, WeightHistogram};
use crate::fpformat::{FPValue, FloatFormat};
use crate::frontend::{lower_model, ExpApprox, FrontendError, ModelGraph};
use crate::interp::{self, evaluate_numeric, DataflowGraph, EvalError, FormatRules, TraceError, TraceStats};
use crate::ir::{self, LoopNestProgram};
use crate::sched::{self, Binding, ResourceBound, ResourceModel, SchedError, Schedule, StageRequest};
use crate::tensor::Tensor;
use crate::transforms::{self, TransformError, TransformPipeline, TransformStats};

/// Failure of one compile step, prefixed by the module that raised it.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frontend: {0}")]
    Frontend(#[from] FrontendError),
    #[error("ir: {}", .0.join("; "))]
    Ir(Vec<String>),
    #[error("interp: {0}")]
    Trace(#[from] TraceError),
    #[error("interp: {0}")]
    Eval(#[from] EvalError),
    #[error("transforms: {0}")]
    Transform(#[from] TransformError),
    #[error("sched: {0}")]
    Sched(#[from] SchedError),
    #[error("sched: {}", .0.join("; "))]
    Schedule(Vec<String>),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("backend: lint: {}", .0.join("; "))]
    Lint(Vec<String>),
    #[error("cosim: {0}")]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOptions {
    pub format: FloatFormat,
    pub exp_order: usize,
    pub transforms: TransformPipeline,
    /// Contents of a resource file applied over the computed bound.
    pub resources: Option<String>,
    pub stages: StageRequest,
    pub clock_period_ps: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            format: FloatFormat::new(5, 11).unwrap(),
            exp_order: ExpApprox::default().order,
            transforms: TransformPipeline::default(),
            resources: None,
            stages: StageRequest::Boundaries(Vec::new()),
            clock_period_ps: 10_000,
        }
    }
}

/// A fully scheduled design.
#[derive(Clone, Debug)]
pub struct Design {
    pub name: String,
    pub options: PipelineOptions,
    /// Loop-nest program after hoisting.
    pub program: LoopNestProgram,
    pub weights: BTreeMap<String, Tensor>,
    pub traced: TraceStats,
    pub transform_stats: Vec<TransformStats>,
    pub dfg: DataflowGraph,
    pub bound: ResourceBound,
    pub resources: ResourceModel,
    pub binding: Binding,
    pub schedule: Schedule,
}

/// Bitwise disagreement between the schedule simulation and the oracle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mismatch {
    pub vector: usize,
    pub buffer: String,
    pub offset: usize,
    pub expected: FPValue,
    pub actual: FPValue,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub vectors: usize,
    pub passed: usize,
    pub first_mismatch: Option<Mismatch>,
}

pub fn build_design(model: &ModelGraph, options: &PipelineOptions) -> Result<Design, PipelineError> {
    let exp = ExpApprox::new(options.exp_order)?;
    let lowered = lower_model(model, exp)?;
    let (program, hoist) = transforms::hoist_globals(&lowered.program);
    let diags = ir::validate(&program);
    if !diags.is_empty() {
        return Err(PipelineError::Ir(diags.iter().map(|d| d.to_string()).collect()));
    }
    let bound = sched::compute_resource_bound(&program);
    let mut resources = ResourceModel::default().with_capacities(&bound.capacities);
    if let Some(text) = &options.resources {
        resources = resources.apply_config(text)?;
    }

    let (traced_graph, traced) = interp::trace_with_stats(&program)?;
    let (dfg, mut transform_stats) = options.transforms.run_graph(&traced_graph)?;
    transform_stats.insert(0, hoist);

    let binding = sched::bind(&dfg, &resources);
    let mut schedule = sched::schedule(&dfg, &binding, &resources);
    let asap = sched::list_schedule(&dfg, &binding, &resources);
    if asap.total_intervals != schedule.total_intervals {
        return Err(PipelineError::Schedule(vec![format!(
            "tree placement moved completion from {} to {}",
            asap.total_intervals, schedule.total_intervals
        )]));
    }
    schedule.stage_boundaries = sched::assign_stages(schedule.total_intervals, &options.stages)?;
    let diags = sched::validate_schedule(&dfg, &binding, &schedule, &resources);
    if !diags.is_empty() {
        return Err(PipelineError::Schedule(diags));
    }
    Ok(Design {
        name: model.name.clone(),
        options: options.clone(),
        program,
        weights: lowered.weights,
        traced: TraceStats { wall_time: None, ..traced },
        transform_stats,
        dfg,
        bound,
        resources,
        binding,
        schedule,
    })
}

impl Design {
    pub fn format(&self) -> FloatFormat {
        self.options.format
    }

    pub fn latency(&self) -> LatencyReport {
        cosim::latency_report(self.schedule.total_intervals, &self.schedule.stage_boundaries, self.options.clock_period_ps)
    }

    pub fn bus_widths(&self) -> Vec<BoundaryWires> {
        cosim::bus_width_report(&self.dfg, &self.schedule, &self.resources, &self.schedule.stage_boundaries, self.format())
    }

    pub fn histogram(&self) -> WeightHistogram {
        cosim::weight_histogram(self.weights.values(), self.format())
    }

    pub fn ir_text(&self) -> String {
        ir::pretty_print(&self.program)
    }

    /// Top module plus operator library, checked by the lint.
    pub fn rtl(&self) -> Result<(String, String), PipelineError> {
        let top = backend::emit_rtl(&self.dfg, &self.schedule, &self.binding, &self.resources, self.format(), &self.weights)?;
        let ops = backend::emit_operator_library(self.format(), &self.resources);
        let diags = backend::lint(&[&top, &ops]);
        if !diags.is_empty() {
            return Err(PipelineError::Lint(diags));
        }
        Ok((top, ops))
    }

    pub fn testbench(&self, vectors: usize, seed: u64) -> Result<Testbench, PipelineError> {
        Ok(backend::emit_testbench(&self.dfg, self.format(), &self.weights, vectors, seed)?)
    }

    /// Simulate the schedule on `inputs` (model inputs only) and return the
    /// output words per output buffer.
    pub fn simulate(&self, inputs: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Vec<FPValue>>, PipelineError> {
        let all = self.bind_inputs(inputs);
        let t = cosim::simulate(&self.dfg, &self.schedule, &self.binding, &self.resources, self.format(), &all)?;
        Ok(t.outputs)
    }

    /// Format-rule evaluation of the graph, the oracle for [`Design::simulate`].
    pub fn evaluate(&self, inputs: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Vec<FPValue>>, PipelineError> {
        Ok(evaluate_numeric(&self.dfg, &self.bind_inputs(inputs), &FormatRules(self.format()))?)
    }

    fn bind_inputs(&self, inputs: &BTreeMap<String, Tensor>) -> BTreeMap<String, Tensor> {
        let mut all = self.weights.clone();
        all.extend(inputs.iter().map(|(k, v)| (k.clone(), v.clone())));
        all
    }

    /// Compare simulation against evaluation on `vectors` seeded inputs,
    /// using `schedule`/`binding` in place of the design's own.
    pub fn verify_with(
        &self,
        schedule: &Schedule,
        binding: &Binding,
        vectors: usize,
        seed: u64,
    ) -> Result<VerifyOutcome, PipelineError> {
        let diags = sched::validate_schedule(&self.dfg, binding, schedule, &self.resources);
        if !diags.is_empty() {
            return Err(PipelineError::Schedule(diags));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut outcome = VerifyOutcome { vectors, passed: 0, first_mismatch: None };
        for vector in 0..vectors {
            let inputs = backend::random_graph_inputs(&self.dfg, &mut rng);
            let all = self.bind_inputs(&inputs);
            let rules = FormatRules(self.format());
            let want = evaluate_numeric(&self.dfg, &all, &rules)?;
            let got = cosim::simulate(&self.dfg, schedule, binding, &self.resources, self.format(), &all)?.outputs;
            let bad = want.iter().find_map(|(buffer, w)| {
                let g = got.get(buffer)?;
                w.iter().zip(g).position(|(a, b)| a != b).map(|offset| Mismatch {
                    vector,
                    buffer: buffer.clone(),
                    offset,
                    expected: w[offset],
                    actual: g[offset],
                })
            });
            match bad {
                None if want.keys().eq(got.keys()) => outcome.passed += 1,
                None => {
                    if outcome.first_mismatch.is_none() {
                        let buffer = want.keys().find(|k| !got.contains_key(*k)).cloned().unwrap_or_default();
                        outcome.first_mismatch =
                            Some(Mismatch { vector, buffer, offset: 0, expected: FPValue(0), actual: FPValue(0) });
                    }
                }
                Some(m) => {
                    if outcome.first_mismatch.is_none() {
                        outcome.first_mismatch = Some(m);
                    }
                }
            }
        }
        Ok(outcome)
    }

    pub fn verify(&self, vectors: usize, seed: u64) -> Result<VerifyOutcome, PipelineError> {
        self.verify_with(&self.schedule, &self.binding, vectors, seed)
    }

    pub fn report_json(&self) -> serde_json::Value {
        let f = self.format();
        let lat = self.latency();
        let post = interp::trace_stats(&self.dfg);
        json!({
            "model": self.name,
            "format": { "we": f.we(), "wf": f.wf(), "total_width": f.total_width() },
            "exp_order": self.options.exp_order,
            "transforms_enabled": self.options.transforms,
            "trace": self.traced,
            "transforms": self.transform_stats,
            "graph": post,
            "resource_bound": self.bound,
            "resources": self.resources,
            "instances_used": self.binding.instances_used,
            "schedule": {
                "total_intervals": self.schedule.total_intervals,
                "critical_path": sched::critical_path(&self.dfg, &self.resources),
                "stage_boundaries": self.schedule.stage_boundaries,
            },
            "latency": {
                "clock_period_ns": lat.clock_period_ns(),
                "end_to_end_ns": lat.end_to_end_ns(),
                "throughput_us_per_sample": lat.throughput_us_per_sample(),
                "detail": lat,
            },
            "bus_width": self.bus_widths(),
            "weight_histogram": HistogramJson::from(&self.histogram()),
        })
    }

    pub fn report_text(&self) -> String {
        let f = self.format();
        let mut s = String::new();
        let _ = writeln!(s, "model                {}", self.name);
        let _ = writeln!(s, "format               {f}, total width {}", f.total_width());
        let counts = |c: &BTreeMap<ir::ArithKind, usize>| {
            c.iter().map(|(k, n)| format!("{k} {n}")).collect::<Vec<_>>().join(", ")
        };
        let _ = writeln!(s, "traced nodes         {} ({})", self.traced.total_nodes, counts(&self.traced.node_counts));
        for t in &self.transform_stats {
            let _ = writeln!(s, "  {:<18} {} applied", t.name, t.applied);
        }
        let post = interp::trace_stats(&self.dfg);
        let _ = writeln!(s, "scheduled nodes      {} ({})", post.total_nodes, counts(&post.node_counts));
        let _ = writeln!(s, "parallelism K        {}", self.bound.k);
        let inst: Vec<String> = self.binding.instances_used.iter().map(|(k, n)| format!("{k} {n}")).collect();
        let _ = writeln!(s, "instances            {}", inst.join(", "));
        s.push_str(&self.latency().to_text());
        for b in self.bus_widths() {
            let _ = writeln!(s, "boundary @{:<10} {} values, {} wires", b.cycle, b.values, b.wires);
        }
        let h = self.histogram();
        let _ = writeln!(
            s,
            "weights              {} buckets, {} zero, {} overflow, {} underflow",
            h.buckets.len(),
            h.zeros,
            h.overflow,
            h.underflow
        );
        s
    }

    /// `schedule.json`: the schedule and binding, read back by verification.
    pub fn schedule_json(&self) -> String {
        let doc = ScheduleFile { nodes: self.dfg.len(), schedule: self.schedule.clone(), binding: self.binding.clone() };
        serde_json::to_string(&doc).expect("schedule serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ScheduleFile {
    pub nodes: usize,
    pub schedule: Schedule,
    pub binding: Binding,
}

#[derive(Serialize)]
struct HistogramJson {
    buckets: BTreeMap<String, usize>,
    zeros: usize,
    non_finite: usize,
    overflow: usize,
    underflow: usize,
}

impl From<&WeightHistogram> for HistogramJson {
    fn from(h: &WeightHistogram) -> Self {
        HistogramJson {
            buckets: h.buckets.iter().map(|(e, c)| (e.to_string(), *c)).collect(),
            zeros: h.zeros,
            non_finite: h.non_finite,
            overflow: h.overflow,
            underflow: h.underflow,
        }
    }
}
