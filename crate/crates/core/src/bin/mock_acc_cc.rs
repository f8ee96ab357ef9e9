//! Stand-in for an OpenACC compiler, for tests and demos without a GPU
//! toolchain.
//!
//! Usage: `mock-acc-cc [flags...] SRC -o OUT`
//!
//! Every loop directly under a `#pragma acc kernels` line is checked with a
//! few textual rules (calls to non-math functions, early exits, array
//! writes that read the same array at another index, nested or doubled
//! compute regions). Violations are reported in PGI style on stderr with
//! exit status 2. Otherwise OUT is written as a shell script that prints
//! `elapsed: T s`, where T shrinks with the number of offloaded loops.
//!
//! If `MOCK_ACC_CC_LOG` is set, one line per invocation is appended to that
//! file.

use std::collections::BTreeSet;
use std::io::Write;
use std::os::unix::fs::PermissionsExt;
use std::path::PathBuf;
use std::process::ExitCode;

use offload_tuner::source::{scan_loops, LoopSite, SourceUnit};
use regex::Regex;

const KEYWORDS: &[&str] = &[
    "if", "for", "while", "switch", "return", "sizeof", "do", "else", "case", "int", "long",
    "float", "double", "char", "unsigned", "signed", "short", "void", "const", "static",
];

const MATH: &[&str] = &[
    "sqrt", "sqrtf", "sin", "sinf", "cos", "cosf", "tan", "exp", "expf", "log", "logf", "pow",
    "powf", "fabs", "fabsf", "abs", "floor", "ceil", "fmin", "fmax", "fminf", "fmaxf",
];

fn strip_comments(text: &str) -> String {
    let re = Regex::new(r"(?s)/\*.*?\*/|//[^\n]*").unwrap();
    re.replace_all(text, " ").into_owned()
}

fn is_directive(line: &str) -> bool {
    line.trim_start().starts_with("#pragma acc kernels")
}

/// Loops marked by each directive line, in directive order.
fn marked_loops<'a>(unit: &SourceUnit, loops: &'a [LoopSite]) -> Vec<&'a LoopSite> {
    let lines: Vec<&str> = unit.text().lines().collect();
    let mut marked = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        if !is_directive(line) {
            continue;
        }
        let mut next = idx + 1;
        while next < lines.len() && (is_directive(lines[next]) || lines[next].trim().is_empty()) {
            next += 1;
        }
        // Lines are 1-based in LoopSite.
        if let Some(site) = loops.iter().find(|l| l.line == next + 1) {
            marked.push(site);
        }
    }
    marked
}

fn first_assignment(stmt: &str) -> Option<(String, String)> {
    let b = stmt.as_bytes();
    for i in 0..b.len() {
        if b[i] != b'=' {
            continue;
        }
        let prev = if i > 0 { b[i - 1] } else { b' ' };
        let next = b.get(i + 1).copied().unwrap_or(b' ');
        if next == b'=' || matches!(prev, b'=' | b'<' | b'>' | b'!') {
            continue;
        }
        let lhs = stmt[..i].trim_end_matches(|c: char| "+-*/%&|^".contains(c));
        return Some((lhs.trim().to_string(), stmt[i + 1..].to_string()));
    }
    None
}

fn normalize(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn check_body(body: &str) -> Option<String> {
    let body = strip_comments(body);
    let exit = Regex::new(r"\b(break|goto|return)\b").unwrap();
    if let Some(m) = exit.find(&body) {
        return Some(format!(
            "Loop exit via {} is not allowed in an accelerator region",
            m.as_str()
        ));
    }
    let call = Regex::new(r"\b([A-Za-z_]\w*)\s*\(").unwrap();
    for c in call.captures_iter(&body) {
        let name = &c[1];
        if !KEYWORDS.contains(&name) && !MATH.contains(&name) {
            return Some(format!(
                "Procedures called in a compute region must have acc routine information: {name}"
            ));
        }
    }
    let lhs_re = Regex::new(r"^([A-Za-z_]\w*)\s*(\[.*\])$").unwrap();
    for stmt in body.split([';', '{', '}']) {
        let Some((lhs, rhs)) = first_assignment(stmt) else { continue };
        let Some(c) = lhs_re.captures(&lhs) else { continue };
        let (name, subscript) = (&c[1], normalize(&c[2]));
        let read = Regex::new(&format!(r"\b{}\s*((?:\[[^\]]*\]\s*)+)", regex::escape(name))).unwrap();
        for r in read.captures_iter(&rhs) {
            if normalize(&r[1]) != subscript {
                return Some(format!(
                    "Complex loop carried dependence of {name} prevents parallelization"
                ));
            }
        }
    }
    None
}

fn diagnose(unit: &SourceUnit, loops: &[LoopSite]) -> Vec<String> {
    let marked = marked_loops(unit, loops);
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    for site in &marked {
        if !seen.insert(site.id) {
            errors.push(format!(
                "line {}: compute region overlaps an existing compute region",
                site.line
            ));
        }
    }
    for inner in &marked {
        if marked.iter().any(|outer| {
            outer.id != inner.id && outer.body_span.contains(&inner.header_start)
        }) {
            errors.push(format!(
                "line {}: Accelerator compute regions may not be nested",
                inner.line
            ));
        }
    }
    for site in marked.iter().filter(|s| seen.remove(&s.id)) {
        if let Some(msg) = check_body(&unit.text()[site.body_span.clone()]) {
            errors.push(format!("line {}: {msg}", site.line));
        }
    }
    errors
}

fn run(args: &[String]) -> Result<(), (u8, String)> {
    let mut src = None;
    let mut out = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "-o" {
            out = it.next().map(PathBuf::from);
        } else if !a.starts_with('-') {
            src = Some(PathBuf::from(a));
        }
    }
    let (Some(src), Some(out)) = (src, out) else {
        return Err((1, "usage: mock-acc-cc [flags...] SRC -o OUT".into()));
    };
    if let Ok(log) = std::env::var("MOCK_ACC_CC_LOG") {
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(log) {
            let _ = writeln!(f, "{}", src.display());
        }
    }
    let unit = SourceUnit::load(&src).map_err(|e| (1, e.to_string()))?;
    let loops = scan_loops(&unit).map_err(|e| (2, format!("PGC-S-0000-{e}")))?;
    let errors = diagnose(&unit, &loops);
    if !errors.is_empty() {
        let name = src.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let text = errors
            .iter()
            .map(|e| format!("PGC-S-0155-{e} ({name})"))
            .collect::<Vec<_>>()
            .join("\n");
        return Err((2, text));
    }
    let offloaded = marked_loops(&unit, &loops).len();
    let time = 1.0 / (1.0 + offloaded as f64);
    let script = format!("#!/bin/sh\necho \"elapsed: {time:.6} s\"\n");
    std::fs::write(&out, script).map_err(|e| (1, e.to_string()))?;
    std::fs::set_permissions(&out, std::fs::Permissions::from_mode(0o755))
        .map_err(|e| (1, e.to_string()))?;
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}
