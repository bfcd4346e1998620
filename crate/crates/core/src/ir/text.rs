//! Line-oriented textual form of [`LoopNestProgram`].
//!
//! ```text
//! func @relu(%x: input<1x2>, %y: output<1x2>) {
//!   parallel (%i0, %i1) = (0, 0) to (1, 2) step (1, 1) {
//!     %a = load %x[%i0, %i1]
//!     %b = relu %a
//!     store %b, %y[%i0, %i1]
//!   }
//!   return
//! }
//! ```

use std::fmt::{self, Write};

use thiserror::Error;

use super::{
    ArithKind, BufferDecl, BufferKind, IndexExpr, IndexOp, IndexOperand, LoopNestProgram, LoopRange, Statement,
    TensorShape,
};
use crate::fpformat::FloatFormat;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

pub fn pretty_print(program: &LoopNestProgram) -> String {
    let mut out = String::new();
    write!(out, "func @{}(", program.name).unwrap();
    for (i, p) in program.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "%{}: {}", p.id, BufType(p)).unwrap();
    }
    out.push_str(") {\n");
    for l in &program.locals {
        writeln!(out, "  alloc %{}: {}", l.id, BufType(l)).unwrap();
    }
    for s in &program.body {
        print_stmt(&mut out, s, 1);
    }
    out.push_str("  return\n}\n");
    out
}

struct BufType<'a>(&'a BufferDecl);

impl fmt::Display for BufType<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{}<", b.kind.name())?;
        for (i, d) in b.shape.dims().iter().enumerate() {
            if i > 0 {
                f.write_str("x")?;
            }
            write!(f, "{d}")?;
        }
        if let Some(fmt) = b.elem_format {
            write!(f, ", e{}m{}", fmt.we(), fmt.wf())?;
        }
        f.write_str(">")
    }
}

fn print_index(out: &mut String, e: &IndexExpr) {
    for (i, t) in e.terms.iter().enumerate() {
        if i > 0 {
            out.push_str(" + ");
        }
        write!(out, "%{t}").unwrap();
    }
    if e.terms.is_empty() {
        write!(out, "{}", e.constant).unwrap();
    } else if e.constant > 0 {
        write!(out, " + {}", e.constant).unwrap();
    } else if e.constant < 0 {
        write!(out, " - {}", e.constant.unsigned_abs()).unwrap();
    }
}

fn print_access(out: &mut String, buffer: &str, indices: &[IndexExpr]) {
    write!(out, "%{buffer}[").unwrap();
    for (i, e) in indices.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        print_index(out, e);
    }
    out.push(']');
}

fn join_ints(xs: impl Iterator<Item = i64>) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn print_stmt(out: &mut String, s: &Statement, depth: usize) {
    let pad = "  ".repeat(depth);
    match s {
        Statement::For { iv, range, body } => {
            writeln!(out, "{pad}for %{iv} = {} to {} step {} {{", range.lower, range.upper, range.step).unwrap();
            for b in body {
                print_stmt(out, b, depth + 1);
            }
            writeln!(out, "{pad}}}").unwrap();
        }
        Statement::ParallelFor { ivs, ranges, body } => {
            let names = ivs.iter().map(|v| format!("%{v}")).collect::<Vec<_>>().join(", ");
            writeln!(
                out,
                "{pad}parallel ({names}) = ({}) to ({}) step ({}) {{",
                join_ints(ranges.iter().map(|r| r.lower)),
                join_ints(ranges.iter().map(|r| r.upper)),
                join_ints(ranges.iter().map(|r| r.step)),
            )
            .unwrap();
            for b in body {
                print_stmt(out, b, depth + 1);
            }
            writeln!(out, "{pad}}}").unwrap();
        }
        Statement::Load { result, buffer, indices } => {
            write!(out, "{pad}%{result} = load ").unwrap();
            print_access(out, buffer, indices);
            out.push('\n');
        }
        Statement::Store { buffer, indices, operand } => {
            write!(out, "{pad}store %{operand}, ").unwrap();
            print_access(out, buffer, indices);
            out.push('\n');
        }
        Statement::Arith { result, kind, operands, reduce } => {
            let ops = operands.iter().map(|o| format!("%{o}")).collect::<Vec<_>>().join(", ");
            write!(out, "{pad}%{result} = {kind} {ops}").unwrap();
            if *reduce {
                out.push_str(" reduce");
            }
            out.push('\n');
        }
        Statement::ConstF { result, value } => {
            writeln!(out, "{pad}%{result} = constf {value:?}").unwrap();
        }
        Statement::IndexArith { result, kind, operands } => {
            let ops = operands
                .iter()
                .map(|o| match o {
                    IndexOperand::Name(n) => format!("%{n}"),
                    IndexOperand::Const(c) => c.to_string(),
                })
                .collect::<Vec<_>>()
                .join(", ");
            writeln!(out, "{pad}%{result} = {} {ops}", kind.name()).unwrap();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    /// `%name`
    Value(String),
    /// `@name`
    Symbol(String),
    Word(String),
    /// Digit-led run such as `16`, `0.5`, `1e-7` or `1x1x16x16`.
    Number(String),
    Punct(char),
    Eof,
}

struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut toks = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let (line, col) = (li + 1, i + 1);
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == '/' && chars.get(i + 1) == Some(&'/') {
                break;
            }
            let start = i;
            let tok = if c == '%' || c == '@' {
                i += 1;
                while i < chars.len() && is_name_char(chars[i]) {
                    i += 1;
                }
                let name: String = chars[start + 1..i].iter().collect();
                if name.is_empty() {
                    return Err(ParseError { line, col, message: format!("expected a name after `{c}`") });
                }
                if c == '%' {
                    Tok::Value(name)
                } else {
                    Tok::Symbol(name)
                }
            } else if c.is_ascii_digit() {
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if is_name_char(d) || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                Tok::Number(chars[start..i].iter().collect())
            } else if c.is_ascii_alphabetic() || c == '_' {
                while i < chars.len() && is_name_char(chars[i]) {
                    i += 1;
                }
                Tok::Word(chars[start..i].iter().collect())
            } else if "(){}[],=:<>+-".contains(c) {
                i += 1;
                Tok::Punct(c)
            } else {
                return Err(ParseError { line, col, message: format!("unexpected character `{c}`") });
            };
            toks.push(Token { tok, line, col });
        }
    }
    let line = text.lines().count().max(1);
    toks.push(Token { tok: Tok::Eof, line, col: 1 });
    Ok(toks)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

/// Parse the textual form produced by [`pretty_print`].
pub fn parse(text: &str) -> Result<LoopNestProgram, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let prog = p.program()?;
    p.expect_eof()?;
    Ok(prog)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        let t = &self.toks[self.pos];
        Err(ParseError { line: t.line, col: t.col, message: message.into() })
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Value(n) => format!("`%{n}`"),
            Tok::Symbol(n) => format!("`@{n}`"),
            Tok::Word(w) | Tok::Number(w) => format!("`{w}`"),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn punct(&mut self, c: char) -> Result<(), ParseError> {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{c}`, found {}", self.describe()))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Punct(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Word(w) if w == kw => {
                self.bump();
                Ok(())
            }
            _ => self.err(format!("expected `{kw}`, found {}", self.describe())),
        }
    }

    fn value(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Value(n) => {
                self.bump();
                Ok(n)
            }
            _ => self.err(format!("expected a `%name`, found {}", self.describe())),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let neg = self.eat_punct('-');
        match self.peek().clone() {
            Tok::Number(s) => match s.parse::<i64>() {
                Ok(v) => {
                    self.bump();
                    Ok(if neg { -v } else { v })
                }
                Err(_) => self.err(format!("invalid integer `{s}`")),
            },
            _ => self.err(format!("expected an integer, found {}", self.describe())),
        }
    }

    fn float(&mut self) -> Result<f64, ParseError> {
        let neg = self.eat_punct('-');
        let s = match self.peek().clone() {
            Tok::Number(s) | Tok::Word(s) => s,
            _ => return self.err(format!("expected a float literal, found {}", self.describe())),
        };
        match s.parse::<f64>() {
            Ok(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            Err(_) => self.err(format!("invalid float literal `{s}`")),
        }
    }

    fn expect_eof(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Eof => Ok(()),
            _ => self.err(format!("unexpected {} after end of function", self.describe())),
        }
    }

    fn program(&mut self) -> Result<LoopNestProgram, ParseError> {
        self.keyword("func")?;
        let name = match self.peek().clone() {
            Tok::Symbol(n) => {
                self.bump();
                n
            }
            _ => return self.err(format!("expected `@name`, found {}", self.describe())),
        };
        let mut prog = LoopNestProgram::new(name);
        self.punct('(')?;
        if !self.eat_punct(')') {
            loop {
                let id = self.value()?;
                self.punct(':')?;
                prog.params.push(self.buftype(id)?);
                if self.eat_punct(')') {
                    break;
                }
                self.punct(',')?;
            }
        }
        self.punct('{')?;
        while matches!(self.peek(), Tok::Word(w) if w == "alloc") {
            self.bump();
            let id = self.value()?;
            self.punct(':')?;
            prog.locals.push(self.buftype(id)?);
        }
        loop {
            if matches!(self.peek(), Tok::Word(w) if w == "return") {
                self.bump();
                break;
            }
            prog.body.push(self.stmt()?);
        }
        self.punct('}')?;
        Ok(prog)
    }

    fn buftype(&mut self, id: String) -> Result<BufferDecl, ParseError> {
        let kind = match self.peek().clone() {
            Tok::Word(w) => match w.as_str() {
                "input" => BufferKind::Input,
                "output" => BufferKind::Output,
                "weight" => BufferKind::Weight,
                "intermediate" => BufferKind::Intermediate,
                _ => return self.err(format!("unknown buffer kind `{w}`")),
            },
            _ => return self.err(format!("expected a buffer kind, found {}", self.describe())),
        };
        self.bump();
        self.punct('<')?;
        let dims = match self.peek().clone() {
            Tok::Number(s) => {
                let dims: Result<Vec<usize>, _> = s.split('x').map(|d| d.parse::<usize>()).collect();
                match dims {
                    Ok(d) => d,
                    Err(_) => return self.err(format!("invalid shape `{s}`")),
                }
            }
            _ => return self.err(format!("expected a shape, found {}", self.describe())),
        };
        self.bump();
        let mut elem_format = None;
        if self.eat_punct(',') {
            let spec = match self.peek().clone() {
                Tok::Word(w) => w,
                _ => return self.err(format!("expected an element format, found {}", self.describe())),
            };
            let parsed = spec
                .strip_prefix('e')
                .and_then(|r| r.split_once('m'))
                .and_then(|(we, wf)| Some((we.parse::<u32>().ok()?, wf.parse::<u32>().ok()?)))
                .and_then(|(we, wf)| FloatFormat::new(we, wf).ok());
            match parsed {
                Some(f) => elem_format = Some(f),
                None => return self.err(format!("invalid element format `{spec}`")),
            }
            self.bump();
        }
        self.punct('>')?;
        Ok(BufferDecl { id, shape: TensorShape::new(dims), elem_format, kind })
    }

    fn int_tuple(&mut self) -> Result<Vec<i64>, ParseError> {
        self.punct('(')?;
        let mut v = vec![self.int()?];
        while self.eat_punct(',') {
            v.push(self.int()?);
        }
        self.punct(')')?;
        Ok(v)
    }

    fn block(&mut self) -> Result<Vec<Statement>, ParseError> {
        self.punct('{')?;
        let mut body = Vec::new();
        while !self.eat_punct('}') {
            if *self.peek() == Tok::Eof {
                return self.err("unterminated block");
            }
            body.push(self.stmt()?);
        }
        Ok(body)
    }

    fn index_expr(&mut self) -> Result<IndexExpr, ParseError> {
        let mut e = IndexExpr::default();
        let mut first = true;
        loop {
            let negate = if first {
                false
            } else if self.eat_punct('+') {
                false
            } else if self.eat_punct('-') {
                true
            } else {
                break;
            };
            first = false;
            match self.peek().clone() {
                Tok::Value(n) if !negate => {
                    self.bump();
                    e.terms.push(n);
                }
                Tok::Value(_) => return self.err("index variables cannot be subtracted"),
                _ => {
                    let c = self.int()?;
                    e.constant += if negate { -c } else { c };
                }
            }
        }
        Ok(e)
    }

    fn access(&mut self) -> Result<(String, Vec<IndexExpr>), ParseError> {
        let buffer = self.value()?;
        self.punct('[')?;
        let mut indices = Vec::new();
        if !self.eat_punct(']') {
            loop {
                indices.push(self.index_expr()?);
                if self.eat_punct(']') {
                    break;
                }
                self.punct(',')?;
            }
        }
        Ok((buffer, indices))
    }

    fn index_operand(&mut self) -> Result<IndexOperand, ParseError> {
        match self.peek().clone() {
            Tok::Value(n) => {
                self.bump();
                Ok(IndexOperand::Name(n))
            }
            _ => Ok(IndexOperand::Const(self.int()?)),
        }
    }

    fn stmt(&mut self) -> Result<Statement, ParseError> {
        match self.peek().clone() {
            Tok::Word(w) if w == "for" => {
                self.bump();
                let iv = self.value()?;
                self.punct('=')?;
                let lower = self.int()?;
                self.keyword("to")?;
                let upper = self.int()?;
                self.keyword("step")?;
                let step = self.int()?;
                let body = self.block()?;
                Ok(Statement::For { iv, range: LoopRange { lower, upper, step }, body })
            }
            Tok::Word(w) if w == "parallel" => {
                self.bump();
                self.punct('(')?;
                let mut ivs = vec![self.value()?];
                while self.eat_punct(',') {
                    ivs.push(self.value()?);
                }
                self.punct(')')?;
                self.punct('=')?;
                let lowers = self.int_tuple()?;
                self.keyword("to")?;
                let uppers = self.int_tuple()?;
                self.keyword("step")?;
                let steps = self.int_tuple()?;
                if lowers.len() != ivs.len() || uppers.len() != ivs.len() || steps.len() != ivs.len() {
                    return self.err("parallel bounds do not match the number of induction variables");
                }
                let ranges = (0..ivs.len()).map(|i| LoopRange::new(lowers[i], uppers[i], steps[i])).collect();
                let body = self.block()?;
                Ok(Statement::ParallelFor { ivs, ranges, body })
            }
            Tok::Word(w) if w == "store" => {
                self.bump();
                let operand = self.value()?;
                self.punct(',')?;
                let (buffer, indices) = self.access()?;
                Ok(Statement::Store { buffer, indices, operand })
            }
            Tok::Value(result) => {
                self.bump();
                self.punct('=')?;
                let op = match self.peek().clone() {
                    Tok::Word(w) => w,
                    _ => return self.err(format!("expected an operation, found {}", self.describe())),
                };
                self.bump();
                match op.as_str() {
                    "load" => {
                        let (buffer, indices) = self.access()?;
                        Ok(Statement::Load { result, buffer, indices })
                    }
                    "constf" => Ok(Statement::ConstF { result, value: self.float()? }),
                    "addi" | "muli" => {
                        let kind = if op == "addi" { IndexOp::Addi } else { IndexOp::Muli };
                        let mut operands = vec![self.index_operand()?];
                        while self.eat_punct(',') {
                            operands.push(self.index_operand()?);
                        }
                        Ok(Statement::IndexArith { result, kind, operands })
                    }
                    other => {
                        let kind = match other.parse::<ArithKind>() {
                            Ok(k) => k,
                            Err(_) => {
                                self.pos -= 1;
                                return self.err(format!("unknown operation `{other}`"));
                            }
                        };
                        let mut operands = vec![self.value()?];
                        while self.eat_punct(',') {
                            operands.push(self.value()?);
                        }
                        let reduce = matches!(self.peek(), Tok::Word(w) if w == "reduce");
                        if reduce {
                            self.bump();
                        }
                        Ok(Statement::Arith { result, kind, operands, reduce })
                    }
                }
            }
            _ => self.err(format!("expected a statement, found {}", self.describe())),
        }
    }
}
