//! Command-line front end: `compile`, `verify` and `report`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::cosim::parse_clock_ns;
use crate::fpformat::FloatFormat;
use crate::frontend::{load_model, ExpApprox};
use crate::pipeline::{build_design, Design, PipelineError, PipelineOptions, ScheduleFile, VerifyOutcome};
use crate::sched::StageRequest;
use crate::transforms::TransformPipeline;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cli: {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("cli: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Parser)]
#[command(name = "unrollhls", version, about = "Compile small DNN models to fully scheduled Verilog")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline and write RTL, testbench and reports.
    Compile {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// Testbench vectors to generate.
        #[arg(long, default_value_t = 16)]
        vectors: usize,
    },
    /// Check a compiled schedule against the numeric oracle on seeded vectors.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory written by `compile`.
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        vectors: usize,
    },
    /// Print latency, bus-width and weight reports without emitting RTL.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write report.json, report.txt and histogram.csv here.
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Model description (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Weight blob (little-endian f64); may be omitted for weightless models.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Exponent and fraction widths, `we,wf`.
    #[arg(long, default_value = "5,11")]
    pub precision: String,
    /// Clock period in ns.
    #[arg(long = "clock-ns", default_value = "10")]
    pub clock_ns: String,
    /// Stage boundary cycles `a,b,...`.
    #[arg(long)]
    pub stages: Option<String>,
    /// Resource/latency file `{kind: {latency, ii, capacity}}`.
    #[arg(long)]
    pub resources: Option<PathBuf>,
    /// Taylor order of the exp approximation.
    #[arg(long = "exp-order", default_value_t = ExpApprox::default().order)]
    pub exp_order: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the hoisted loop-nest program as ir.txt.
    #[arg(long = "emit-ir")]
    pub emit_ir: bool,
    #[arg(long = "no-fuse-mac")]
    pub no_fuse_mac: bool,
    #[arg(long = "no-reduce-fors")]
    pub no_reduce_fors: bool,
}

/// Everything a compile needs, with files already read.
#[derive(Clone, Debug, PartialEq)]
pub struct CompileConfig {
    pub model_path: PathBuf,
    pub weights_path: Option<PathBuf>,
    pub options: PipelineOptions,
    pub seed: u64,
    pub emit_ir: bool,
}

fn parse_stages(s: &str) -> Result<Vec<u64>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|_| CliError::Config(format!("bad stage boundary `{x}`"))))
        .collect()
}

impl CompileConfig {
    pub fn from_args(a: &CommonArgs) -> Result<Self, CliError> {
        let format: FloatFormat = a.precision.parse().map_err(CliError::Config)?;
        let clock_period_ps = parse_clock_ns(&a.clock_ns).map_err(CliError::Config)?;
        let stages = StageRequest::Boundaries(parse_stages(a.stages.as_deref().unwrap_or(""))?);
        let resources = match &a.resources {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| io_err(p, e))?),
            None => None,
        };
        let transforms =
            TransformPipeline { recompose_relu: true, fuse_mac: !a.no_fuse_mac, reduce_fors: !a.no_reduce_fors };
        Ok(CompileConfig {
            model_path: a.model.clone(),
            weights_path: a.weights.clone(),
            options: PipelineOptions { format, exp_order: a.exp_order, transforms, resources, stages, clock_period_ps },
            seed: a.seed,
            emit_ir: a.emit_ir,
        })
    }

    pub fn design(&self) -> Result<Design, CliError> {
        let text = fs::read_to_string(&self.model_path).map_err(|e| io_err(&self.model_path, e))?;
        let blob = match &self.weights_path {
            Some(p) => fs::read(p).map_err(|e| io_err(p, e))?,
            None => Vec::new(),
        };
        let model = load_model(&text, &blob).map_err(PipelineError::from)?;
        Ok(build_design(&model, &self.options)?)
    }
}

fn write(dir: &Path, name: &str, contents: &[u8]) -> Result<(), CliError> {
    let p = dir.join(name);
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(&p, contents).map_err(|e| io_err(&p, e))
}

fn write_reports(d: &Design, out: &Path) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(&d.report_json()).expect("report serializes");
    write(out, "report.json", format!("{json}\n").as_bytes())?;
    write(out, "report.txt", d.report_text().as_bytes())?;
    write(out, "histogram.csv", d.histogram().to_csv().as_bytes())
}

/// Files written by a compile, relative to the output directory.
pub fn cmd_compile(config: &CompileConfig, out: &Path, vectors: usize) -> Result<Vec<String>, CliError> {
    let d = config.design()?;
    let (top, ops) = d.rtl()?;
    let tb = d.testbench(vectors, config.seed)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut files = vec![
        ("top.v", top.into_bytes()),
        ("ops.v", ops.into_bytes()),
        ("tb_top.v", tb.text.into_bytes()),
        ("vectors/inputs.hex", tb.inputs_hex.into_bytes()),
        ("vectors/expected.hex", tb.expected_hex.into_bytes()),
        ("schedule.json", d.schedule_json().into_bytes()),
    ];
    if config.emit_ir {
        files.push(("ir.txt", d.ir_text().into_bytes()));
    }
    for (name, bytes) in &files {
        write(out, name, bytes)?;
    }
    write_reports(&d, out)?;
    let mut names: Vec<String> = files.iter().map(|(n, _)| n.to_string()).collect();
    names.extend(["report.json", "report.txt", "histogram.csv"].map(String::from));
    Ok(names)
}

/// Re-derive the graph from `config` and check the schedule stored in `out`.
pub fn cmd_verify(config: &CompileConfig, out: &Path, vectors: usize) -> Result<VerifyOutcome, CliError> {
    let d = config.design()?;
    let p = out.join("schedule.json");
    let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
    let file: ScheduleFile = serde_json::from_str(&text).map_err(|e| io_err(&p, e))?;
    if file.nodes != d.dfg.len() {
        return Err(CliError::Config(format!(
            "schedule.json covers {} nodes but the configuration yields {}",
            file.nodes,
            d.dfg.len()
        )));
    }
    Ok(d.verify_with(&file.schedule, &file.binding, vectors, config.seed)?)
}

pub fn cmd_report(config: &CompileConfig, out: Option<&Path>) -> Result<String, CliError> {
    let d = config.design()?;
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
        write_reports(&d, out)?;
    }
    Ok(d.report_text())
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Compile { common, out, vectors } => {
            let config = CompileConfig::from_args(&common)?;
            let files = cmd_compile(&config, &out, vectors)?;
            for f in files {
                println!("{}", out.join(f).display());
            }
            Ok(0)
        }
        Command::Verify { common, out, vectors } => {
            let config = CompileConfig::from_args(&common)?;
            let v = cmd_verify(&config, &out, vectors)?;
            if v.vectors == 0 {
                eprintln!("warning: no vectors requested, nothing was compared");
            }
            let fmt = config.options.format;
            if let Some(m) = &v.first_mismatch {
                println!(
                    "vector {}: {}[{}] expected {:#x} ({}) got {:#x} ({})",
                    m.vector,
                    m.buffer,
                    m.offset,
                    m.expected.0,
                    fmt.decode(m.expected),
                    m.actual.0,
                    fmt.decode(m.actual)
                );
            }
            let fail = v.vectors - v.passed;
            println!("{} {}/{} FAIL {}", if fail == 0 { "PASS" } else { "FAIL" }, v.passed, v.vectors, fail);
            Ok(if fail == 0 { 0 } else { 1 })
        }
        Command::Report { common, out } => {
            let config = CompileConfig::from_args(&common)?;
            print!("{}", cmd_report(&config, out.as_deref())?);
            Ok(0)
        }
    }
}
