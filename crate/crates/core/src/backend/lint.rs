//! Lexical check for the Verilog subset this crate emits: balanced blocks
//! and brackets, and every identifier declared in its module before use.

use std::collections::BTreeSet;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Sys,
    Num,
    Str,
    Punct(char),
}

const KEYWORDS: &[&str] = &[
    "module", "endmodule", "input", "output", "inout", "wire", "reg", "integer", "real", "localparam", "parameter",
    "assign", "always", "initial", "begin", "end", "if", "else", "case", "endcase", "default", "posedge", "negedge",
    "or", "function", "endfunction", "for", "while", "repeat", "forever", "wait", "signed",
];

const DECL: &[&str] = &["input", "output", "inout", "wire", "reg", "integer", "real", "localparam", "parameter"];

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, String> {
    let c: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < c.len() {
        let ch = c[i];
        if ch == '\n' {
            line += 1;
            i += 1;
        } else if ch.is_whitespace() {
            i += 1;
        } else if ch == '/' && c.get(i + 1) == Some(&'/') {
            while i < c.len() && c[i] != '\n' {
                i += 1;
            }
        } else if ch == '/' && c.get(i + 1) == Some(&'*') {
            i += 2;
            while i + 1 < c.len() && !(c[i] == '*' && c[i + 1] == '/') {
                if c[i] == '\n' {
                    line += 1;
                }
                i += 1;
            }
            i += 2;
        } else if ch == '`' {
            // compiler directive: skip the rest of the line
            while i < c.len() && c[i] != '\n' {
                i += 1;
            }
        } else if ch == '"' {
            i += 1;
            while i < c.len() && c[i] != '"' {
                if c[i] == '\n' {
                    return Err(format!("line {line}: unterminated string"));
                }
                i += 1;
            }
            i += 1;
            out.push((line, Tok::Str));
        } else if ch == '$' {
            i += 1;
            while i < c.len() && (c[i].is_ascii_alphanumeric() || c[i] == '_') {
                i += 1;
            }
            out.push((line, Tok::Sys));
        } else if ch.is_ascii_digit() || ch == '\'' {
            while i < c.len() && (c[i].is_ascii_digit() || c[i] == '.' || c[i] == '_') {
                i += 1;
            }
            if i < c.len() && c[i] == '\'' {
                i += 1;
                if i < c.len() && matches!(c[i], 's' | 'S') {
                    i += 1;
                }
                if i < c.len() && matches!(c[i], 'b' | 'o' | 'd' | 'h' | 'B' | 'O' | 'D' | 'H') {
                    i += 1;
                } else {
                    return Err(format!("line {line}: malformed based literal"));
                }
                let s = i;
                while i < c.len() && (c[i].is_ascii_hexdigit() || matches!(c[i], '_' | 'x' | 'z' | 'X' | 'Z' | '?')) {
                    i += 1;
                }
                if s == i {
                    return Err(format!("line {line}: based literal without digits"));
                }
            }
            out.push((line, Tok::Num));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let s = i;
            while i < c.len() && (c[i].is_ascii_alphanumeric() || c[i] == '_' || c[i] == '$') {
                i += 1;
            }
            out.push((line, Tok::Ident(c[s..i].iter().collect())));
        } else {
            out.push((line, Tok::Punct(ch)));
            i += 1;
        }
    }
    Ok(out)
}

fn ident(t: &Tok) -> Option<&str> {
    match t {
        Tok::Ident(s) => Some(s),
        _ => None,
    }
}

fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

struct Module {
    name: String,
    toks: Vec<(usize, Tok)>,
}

/// Returns diagnostics; empty means the sources pass.
pub fn lint(sources: &[&str]) -> Vec<String> {
    let mut diags = Vec::new();
    let mut modules = Vec::new();
    for (f, src) in sources.iter().enumerate() {
        let toks = match tokenize(src) {
            Ok(t) => t,
            Err(e) => {
                diags.push(format!("source {f}: {e}"));
                continue;
            }
        };
        check_balance(f, &toks, &mut diags);
        // split into modules
        let mut cur: Option<Module> = None;
        let mut skip_name = false;
        for (k, (line, t)) in toks.iter().enumerate() {
            if std::mem::take(&mut skip_name) {
                continue;
            }
            match ident(t) {
                Some("module") => {
                    if cur.is_some() {
                        diags.push(format!("source {f} line {line}: nested module"));
                    }
                    let name = toks.get(k + 1).and_then(|(_, t)| ident(t)).unwrap_or("").to_string();
                    cur = Some(Module { name, toks: Vec::new() });
                    skip_name = true;
                }
                Some("endmodule") => match cur.take() {
                    Some(m) => modules.push(m),
                    None => diags.push(format!("source {f} line {line}: endmodule without module")),
                },
                _ => {
                    if let Some(m) = cur.as_mut() {
                        m.toks.push((*line, t.clone()));
                    } else if !matches!(t, Tok::Punct(';')) {
                        diags.push(format!("source {f} line {line}: token outside module"));
                    }
                }
            }
        }
        if cur.is_some() {
            diags.push(format!("source {f}: module without endmodule"));
        }
    }
    let module_names: BTreeSet<&str> = modules.iter().map(|m| m.name.as_str()).collect();
    for m in &modules {
        check_module(m, &module_names, &mut diags);
    }
    diags
}

fn check_balance(f: usize, toks: &[(usize, Tok)], diags: &mut Vec<String>) {
    let mut stack: Vec<(&str, usize)> = Vec::new();
    let open = |s: &str| match s {
        "begin" => Some("end"),
        "case" => Some("endcase"),
        "function" => Some("endfunction"),
        "module" => Some("endmodule"),
        _ => None,
    };
    for (line, t) in toks {
        let key: String = match t {
            Tok::Ident(s) => s.clone(),
            Tok::Punct(c) => c.to_string(),
            _ => continue,
        };
        let closer = match key.as_str() {
            "(" => Some(")"),
            "[" => Some("]"),
            "{" => Some("}"),
            k => open(k),
        };
        if let Some(c) = closer {
            stack.push((c, *line));
        } else if matches!(key.as_str(), ")" | "]" | "}" | "end" | "endcase" | "endfunction" | "endmodule") {
            match stack.pop() {
                Some((want, _)) if want == key => {}
                Some((want, l)) => {
                    diags.push(format!("source {f} line {line}: `{key}` closes block from line {l} expecting `{want}`"));
                    return;
                }
                None => {
                    diags.push(format!("source {f} line {line}: unmatched `{key}`"));
                    return;
                }
            }
        }
    }
    if let Some((want, l)) = stack.pop() {
        diags.push(format!("source {f} line {l}: block never closed (expected `{want}`)"));
    }
}

fn check_module(m: &Module, modules: &BTreeSet<&str>, diags: &mut Vec<String>) {
    let t = &m.toks;
    let mut declared: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    let mut decl_at = vec![false; t.len()];
    let mut k = 0;
    while k < t.len() {
        let (_, tok) = &t[k];
        let word = ident(tok);
        if word == Some("function") {
            let mut j = k + 1;
            j = skip_qualifiers(t, j);
            if let Some(n) = t.get(j).and_then(|(_, x)| ident(x)) {
                declared.entry(n).or_insert(j);
                decl_at[j] = true;
            }
            k = j + 1;
            continue;
        }
        if word.is_some_and(|w| DECL.contains(&w)) {
            let mut j = skip_qualifiers(t, k + 1);
            loop {
                let Some(n) = t.get(j).and_then(|(_, x)| ident(x)).filter(|n| !is_keyword(n)) else { break };
                declared.entry(n).or_insert(j);
                decl_at[j] = true;
                // skip optional unpacked range / initializer to the next separator
                let mut depth = 0i32;
                j += 1;
                while j < t.len() {
                    match &t[j].1 {
                        Tok::Punct('(' | '[' | '{') => depth += 1,
                        Tok::Punct(')' | ']' | '}') if depth > 0 => depth -= 1,
                        Tok::Punct(',' | ';' | ')') if depth == 0 => break,
                        _ => {}
                    }
                    j += 1;
                }
                if matches!(t.get(j), Some((_, Tok::Punct(',')))) {
                    j += 1;
                } else {
                    break;
                }
            }
            k += 1;
            continue;
        }
        // instance: <module> <name> (
        if let (Some(a), Some((_, Tok::Ident(b))), Some((_, Tok::Punct('(')))) = (word, t.get(k + 1), t.get(k + 2)) {
            if !is_keyword(a) && !is_keyword(b) && (k == 0 || matches!(t[k - 1].1, Tok::Punct(';'))) {
                decl_at[k] = true;
                decl_at[k + 1] = true;
                declared.entry(b).or_insert(k + 1);
                if !modules.contains(a) {
                    diags.push(format!("module {} line {}: unknown module `{a}`", m.name, t[k].0));
                }
            }
        }
        k += 1;
    }
    for (k, (line, tok)) in t.iter().enumerate() {
        let Some(n) = ident(tok) else { continue };
        if decl_at[k] || is_keyword(n) || (k > 0 && matches!(t[k - 1].1, Tok::Punct('.'))) {
            continue;
        }
        match declared.get(n) {
            Some(&p) if p < k => {}
            Some(_) => diags.push(format!("module {} line {line}: `{n}` used before its declaration", m.name)),
            None => diags.push(format!("module {} line {line}: `{n}` used but not declared", m.name)),
        }
    }
}

fn skip_qualifiers(t: &[(usize, Tok)], mut j: usize) -> usize {
    loop {
        match t.get(j).map(|x| &x.1) {
            Some(Tok::Ident(s)) if matches!(s.as_str(), "wire" | "reg" | "signed" | "real" | "integer") => j += 1,
            Some(Tok::Punct('[')) => {
                while j < t.len() && !matches!(t[j].1, Tok::Punct(']')) {
                    j += 1;
                }
                j += 1;
            }
            _ => return j,
        }
    }
}
