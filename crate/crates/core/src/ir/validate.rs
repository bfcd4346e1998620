use std::collections::{BTreeSet, HashMap};
use std::fmt;

use super::{IndexExpr, IndexOperand, LoopNestProgram, LoopRange, Statement};

/// A well-formedness problem, located by statement path (e.g. `body[0].body[2]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NameKind {
    Index,
    Float,
}

struct Checker<'a> {
    program: &'a LoopNestProgram,
    scopes: Vec<HashMap<&'a str, NameKind>>,
    referenced: BTreeSet<&'a str>,
    diags: Vec<Diagnostic>,
}

/// Check every structural invariant of `program`. Returns an empty list iff
/// the program is well formed. Never panics.
pub fn validate(program: &LoopNestProgram) -> Vec<Diagnostic> {
    let mut c = Checker { program, scopes: vec![HashMap::new()], referenced: BTreeSet::new(), diags: Vec::new() };

    let mut seen = BTreeSet::new();
    for (i, b) in program.params.iter().chain(&program.locals).enumerate() {
        let path = format!("buffers[{i}]");
        if !seen.insert(b.id.as_str()) {
            c.diag(&path, format!("duplicate buffer id `{}`", b.id));
        }
        if !b.shape.is_valid() {
            c.diag(&path, format!("buffer `{}` has invalid shape {}", b.id, b.shape));
        }
    }

    for (i, stmt) in program.body.iter().enumerate() {
        let path = format!("body[{i}]");
        if !stmt.is_loop() {
            c.diag(&path, "top-level statement is not a loop nest".into());
        }
        c.stmt(stmt, &path);
    }

    for b in program.buffers() {
        if !c.referenced.contains(b.id.as_str()) {
            c.diags.push(Diagnostic {
                path: "buffers".into(),
                message: format!("buffer `{}` is declared but never referenced", b.id),
            });
        }
    }
    c.diags
}

impl<'a> Checker<'a> {
    fn diag(&mut self, path: &str, message: String) {
        self.diags.push(Diagnostic { path: path.to_string(), message });
    }

    fn lookup(&self, name: &str) -> Option<NameKind> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn define(&mut self, name: &'a str, kind: NameKind, path: &str) {
        if name.is_empty() {
            self.diag(path, "empty name".into());
            return;
        }
        if self.lookup(name).is_some() {
            self.diag(path, format!("`{name}` is defined more than once (SSA violation)"));
            return;
        }
        if let Some(scope) = self.scopes.last_mut() {
            scope.insert(name, kind);
        }
    }

    fn use_name(&mut self, name: &str, want: NameKind, path: &str) {
        match self.lookup(name) {
            None => self.diag(path, format!("use of undefined name `{name}`")),
            Some(k) if k != want => {
                let what = if want == NameKind::Index { "an index" } else { "a float" };
                self.diag(path, format!("`{name}` is not {what} value"));
            }
            Some(_) => {}
        }
    }

    fn range(&mut self, r: &LoopRange, path: &str) {
        if r.step <= 0 {
            self.diag(path, format!("loop step {} does not terminate (step must be positive)", r.step));
        }
    }

    fn buffer_access(&mut self, buffer: &'a str, indices: &[IndexExpr], path: &str) {
        self.referenced.insert(buffer);
        match self.program.buffer(buffer) {
            None => self.diag(path, format!("reference to undeclared buffer `{buffer}`")),
            Some(decl) => {
                if decl.shape.rank() != indices.len() {
                    self.diag(
                        path,
                        format!(
                            "buffer `{buffer}` has rank {} but is indexed with {} indices",
                            decl.shape.rank(),
                            indices.len()
                        ),
                    );
                }
            }
        }
        for e in indices {
            for t in &e.terms {
                self.use_name(t, NameKind::Index, path);
            }
        }
    }

    fn block(&mut self, body: &'a [Statement], path: &str) {
        for (i, s) in body.iter().enumerate() {
            self.stmt(s, &format!("{path}.body[{i}]"));
        }
    }

    fn stmt(&mut self, stmt: &'a Statement, path: &str) {
        match stmt {
            Statement::For { iv, range, body } => {
                self.range(range, path);
                self.scopes.push(HashMap::new());
                self.define(iv, NameKind::Index, path);
                self.block(body, path);
                self.scopes.pop();
            }
            Statement::ParallelFor { ivs, ranges, body } => {
                if ivs.is_empty() {
                    self.diag(path, "parallel loop without induction variables".into());
                }
                if ivs.len() != ranges.len() {
                    self.diag(
                        path,
                        format!("parallel loop has {} induction variables but {} ranges", ivs.len(), ranges.len()),
                    );
                }
                for r in ranges {
                    self.range(r, path);
                }
                self.scopes.push(HashMap::new());
                for iv in ivs {
                    self.define(iv, NameKind::Index, path);
                }
                self.block(body, path);
                self.scopes.pop();
            }
            Statement::Load { result, buffer, indices } => {
                self.buffer_access(buffer, indices, path);
                self.define(result, NameKind::Float, path);
            }
            Statement::Store { buffer, indices, operand } => {
                self.use_name(operand, NameKind::Float, path);
                self.buffer_access(buffer, indices, path);
            }
            Statement::Arith { result, kind, operands, .. } => {
                if operands.len() != kind.arity() {
                    self.diag(
                        path,
                        format!("`{kind}` takes {} operands but {} were given", kind.arity(), operands.len()),
                    );
                }
                for o in operands {
                    self.use_name(o, NameKind::Float, path);
                }
                self.define(result, NameKind::Float, path);
            }
            Statement::ConstF { result, .. } => self.define(result, NameKind::Float, path),
            Statement::IndexArith { result, kind, operands } => {
                if operands.len() != 2 {
                    self.diag(path, format!("`{}` takes 2 operands but {} were given", kind.name(), operands.len()));
                }
                for o in operands {
                    if let IndexOperand::Name(n) = o {
                        self.use_name(n, NameKind::Index, path);
                    }
                }
                self.define(result, NameKind::Index, path);
            }
        }
    }
}
