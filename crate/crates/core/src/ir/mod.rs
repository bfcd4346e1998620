//! Loop-nest intermediate representation.
//!
//! A [`LoopNestProgram`] is a single function over memory buffers whose body
//! is a sequence of loop nests. Loops have constant bounds, bodies are
//! straight-line lists of loads, stores and scalar arithmetic, and index
//! expressions are sums of loop variables, integer index values and
//! constants. The textual form lives in [`text`].

mod text;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fpformat::FloatFormat;
pub use crate::tensor::TensorShape;

pub use text::{parse, pretty_print, ParseError};
pub use validate::{validate, Diagnostic};

/// Scalar floating-point operation kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithKind {
    Mulf,
    Divf,
    Addf,
    Subf,
    Sqrtf,
    Cmpfugt,
    Select,
    Max,
    Neg,
    Relu,
    Fmac,
}

impl ArithKind {
    pub const ALL: [ArithKind; 11] = [
        ArithKind::Mulf,
        ArithKind::Divf,
        ArithKind::Addf,
        ArithKind::Subf,
        ArithKind::Sqrtf,
        ArithKind::Cmpfugt,
        ArithKind::Select,
        ArithKind::Max,
        ArithKind::Neg,
        ArithKind::Relu,
        ArithKind::Fmac,
    ];

    pub fn arity(self) -> usize {
        match self {
            ArithKind::Fmac | ArithKind::Select => 3,
            ArithKind::Sqrtf | ArithKind::Neg | ArithKind::Relu => 1,
            _ => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArithKind::Mulf => "mulf",
            ArithKind::Divf => "divf",
            ArithKind::Addf => "addf",
            ArithKind::Subf => "subf",
            ArithKind::Sqrtf => "sqrtf",
            ArithKind::Cmpfugt => "cmpfugt",
            ArithKind::Select => "select",
            ArithKind::Max => "max",
            ArithKind::Neg => "neg",
            ArithKind::Relu => "relu",
            ArithKind::Fmac => "fmac",
        }
    }
}

impl fmt::Display for ArithKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArithKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArithKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown arithmetic kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferKind {
    Input,
    Output,
    Weight,
    Intermediate,
}

impl BufferKind {
    pub fn name(self) -> &'static str {
        match self {
            BufferKind::Input => "input",
            BufferKind::Output => "output",
            BufferKind::Weight => "weight",
            BufferKind::Intermediate => "intermediate",
        }
    }

    /// Buffers whose unwritten cells read as symbolic leaves.
    pub fn is_leaf_source(self) -> bool {
        matches!(self, BufferKind::Input | BufferKind::Weight)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BufferDecl {
    pub id: String,
    pub shape: TensorShape,
    /// `None` means the design-wide element format chosen at compile time.
    pub elem_format: Option<FloatFormat>,
    pub kind: BufferKind,
}

impl BufferDecl {
    pub fn new(id: impl Into<String>, shape: impl Into<TensorShape>, kind: BufferKind) -> Self {
        BufferDecl { id: id.into(), shape: shape.into(), elem_format: None, kind }
    }
}

/// Half-open constant iteration range `lower..upper` with a positive step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoopRange {
    pub lower: i64,
    pub upper: i64,
    pub step: i64,
}

impl LoopRange {
    pub fn new(lower: i64, upper: i64, step: i64) -> Self {
        LoopRange { lower, upper, step }
    }

    pub fn to(upper: i64) -> Self {
        LoopRange { lower: 0, upper, step: 1 }
    }

    /// Number of iterations; zero for degenerate ranges.
    pub fn trip_count(&self) -> u64 {
        if self.step <= 0 || self.upper <= self.lower {
            return 0;
        }
        let span = (self.upper as i128 - self.lower as i128) as u128;
        span.div_ceil(self.step as u128) as u64
    }
}

/// Sum of named index values plus a constant.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct IndexExpr {
    pub terms: Vec<String>,
    pub constant: i64,
}

impl IndexExpr {
    pub fn var(name: impl Into<String>) -> Self {
        IndexExpr { terms: vec![name.into()], constant: 0 }
    }

    pub fn constant(c: i64) -> Self {
        IndexExpr { terms: Vec::new(), constant: c }
    }

    pub fn plus(mut self, name: impl Into<String>) -> Self {
        self.terms.push(name.into());
        self
    }

    pub fn offset(mut self, c: i64) -> Self {
        self.constant += c;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexOp {
    Addi,
    Muli,
}

impl IndexOp {
    pub fn name(self) -> &'static str {
        match self {
            IndexOp::Addi => "addi",
            IndexOp::Muli => "muli",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IndexOperand {
    Name(String),
    Const(i64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    For {
        iv: String,
        range: LoopRange,
        body: Vec<Statement>,
    },
    ParallelFor {
        ivs: Vec<String>,
        ranges: Vec<LoopRange>,
        body: Vec<Statement>,
    },
    Load {
        result: String,
        buffer: String,
        indices: Vec<IndexExpr>,
    },
    Store {
        buffer: String,
        indices: Vec<IndexExpr>,
        operand: String,
    },
    /// `reduce` marks an accumulation whose first operand is the running value.
    Arith {
        result: String,
        kind: ArithKind,
        operands: Vec<String>,
        reduce: bool,
    },
    ConstF {
        result: String,
        value: f64,
    },
    IndexArith {
        result: String,
        kind: IndexOp,
        operands: Vec<IndexOperand>,
    },
}

impl Statement {
    pub fn arith(result: &str, kind: ArithKind, operands: &[&str]) -> Self {
        Statement::Arith {
            result: result.into(),
            kind,
            operands: operands.iter().map(|s| s.to_string()).collect(),
            reduce: false,
        }
    }

    pub fn reduce(result: &str, kind: ArithKind, operands: &[&str]) -> Self {
        Statement::Arith {
            result: result.into(),
            kind,
            operands: operands.iter().map(|s| s.to_string()).collect(),
            reduce: true,
        }
    }

    pub fn load(result: &str, buffer: &str, indices: Vec<IndexExpr>) -> Self {
        Statement::Load { result: result.into(), buffer: buffer.into(), indices }
    }

    pub fn store(operand: &str, buffer: &str, indices: Vec<IndexExpr>) -> Self {
        Statement::Store { buffer: buffer.into(), indices, operand: operand.into() }
    }

    pub fn constf(result: &str, value: f64) -> Self {
        Statement::ConstF { result: result.into(), value }
    }

    pub fn for_loop(iv: &str, range: LoopRange, body: Vec<Statement>) -> Self {
        Statement::For { iv: iv.into(), range, body }
    }

    pub fn parallel(ivs: &[&str], ranges: Vec<LoopRange>, body: Vec<Statement>) -> Self {
        Statement::ParallelFor { ivs: ivs.iter().map(|s| s.to_string()).collect(), ranges, body }
    }

    pub fn index_arith(result: &str, kind: IndexOp, operands: Vec<IndexOperand>) -> Self {
        Statement::IndexArith { result: result.into(), kind, operands }
    }

    pub fn is_loop(&self) -> bool {
        matches!(self, Statement::For { .. } | Statement::ParallelFor { .. })
    }
}

/// Shorthand for an index expression list of plain names.
pub fn idx(names: &[&str]) -> Vec<IndexExpr> {
    names.iter().map(|n| IndexExpr::var(*n)).collect()
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct LoopNestProgram {
    pub name: String,
    pub params: Vec<BufferDecl>,
    /// Buffers allocated in the function body.
    pub locals: Vec<BufferDecl>,
    pub body: Vec<Statement>,
}

impl LoopNestProgram {
    pub fn new(name: impl Into<String>) -> Self {
        LoopNestProgram { name: name.into(), ..Default::default() }
    }

    pub fn buffers(&self) -> impl Iterator<Item = &BufferDecl> {
        self.params.iter().chain(self.locals.iter())
    }

    pub fn buffer(&self, id: &str) -> Option<&BufferDecl> {
        self.buffers().find(|b| b.id == id)
    }
}
