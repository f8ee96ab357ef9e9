//! C/C++ source scanning and directive rendering.
//!
//! The scanner is a mode-tracking lexer (code, line comment, block comment,
//! string, char, raw string, preprocessor line) followed by delimiter
//! matching over the resulting token stream. It does not parse C; it only
//! needs to find `for` headers and the extent of their bodies. Loops produced
//! by macro expansion are invisible to it.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::ga::Genome;

/// The directive inserted above every offloaded loop.
pub const DIRECTIVE: &str = "#pragma acc kernels";

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("{line}:{column}: unbalanced braces")]
    UnbalancedBraces { line: usize, column: usize },
    #[error("{line}:{column}: unbalanced parentheses")]
    UnbalancedParens { line: usize, column: usize },
    #[error("{line}:{column}: unterminated literal")]
    UnterminatedLiteral { line: usize, column: usize },
    #[error("{line}:{column}: unterminated block comment")]
    UnterminatedComment { line: usize, column: usize },
    #[error("{path}: source is not valid UTF-8")]
    InvalidUtf8 { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("genome has {got} bits but the candidate set has {expected} loops")]
    GenomeLengthMismatch { expected: usize, got: usize },
}

/// An immutable source file with a byte offset → (line, column) index.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    path: PathBuf,
    text: String,
    line_starts: Vec<usize>,
}

impl SourceUnit {
    pub fn new(path: impl Into<PathBuf>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut line_starts = vec![0];
        line_starts.extend(
            text.bytes()
                .enumerate()
                .filter(|&(_, b)| b == b'\n')
                .map(|(i, _)| i + 1),
        );
        Self {
            path: path.into(),
            text,
            line_starts,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScanError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ScanError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8(bytes).map_err(|_| ScanError::InvalidUtf8 {
            path: path.to_path_buf(),
        })?;
        Ok(Self::new(path, text))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// File name used for rendered variants, keeping the original extension
    /// so the compiler picks the right language mode.
    pub fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "source.c".to_string())
    }

    pub fn line_count(&self) -> usize {
        self.line_starts.len()
    }

    /// 1-based line and byte column of `offset`.
    pub fn line_col_of(&self, offset: usize) -> (usize, usize) {
        let line = match self.line_starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (line + 1, offset - self.line_starts[line] + 1)
    }

    /// Inverse of [`line_col_of`](Self::line_col_of).
    pub fn offset_of(&self, line: usize, column: usize) -> Option<usize> {
        let start = *self.line_starts.get(line.checked_sub(1)?)?;
        let offset = start + column.checked_sub(1)?;
        let line_end = self
            .line_starts
            .get(line)
            .copied()
            .unwrap_or(self.text.len() + 1);
        (offset < line_end).then_some(offset)
    }

    fn line_start_of(&self, offset: usize) -> usize {
        let (line, _) = self.line_col_of(offset);
        self.line_starts[line - 1]
    }

    /// The line terminator in use on the line containing `offset`.
    fn newline_at(&self, offset: usize) -> &'static str {
        let rest = &self.text.as_bytes()[offset..];
        match rest.iter().position(|&b| b == b'\n') {
            Some(p) if p > 0 && rest[p - 1] == b'\r' => "\r\n",
            _ => "\n",
        }
    }
}

/// One `for` statement found in a [`SourceUnit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopSite {
    pub id: usize,
    /// Byte offset of the `for` keyword.
    pub header_start: usize,
    /// Byte range of the loop body: the braces inclusive, or the single
    /// statement up to and including its terminating `;`.
    pub body_span: Range<usize>,
    /// Loop nesting depth, 0 for outermost.
    pub depth: usize,
    /// Whitespace prefix of the line holding the `for`.
    pub indent: String,
    /// 1-based line of the `for` keyword.
    pub line: usize,
    /// True when only whitespace precedes `for` on its line.
    pub line_leading: bool,
}

type Unbalanced = fn(usize, usize) -> ScanError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokKind {
    Ident,
    Punct(u8),
    Literal,
}

#[derive(Debug, Clone, Copy)]
struct Token {
    kind: TokKind,
    start: usize,
    end: usize,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b >= 0x80
}

fn is_ident_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

struct Lexer<'a> {
    unit: &'a SourceUnit,
    bytes: &'a [u8],
    pos: usize,
    /// Only whitespace (or comments) seen since the last newline.
    line_fresh: bool,
    tokens: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn new(unit: &'a SourceUnit) -> Self {
        Self {
            unit,
            bytes: unit.text.as_bytes(),
            pos: 0,
            line_fresh: true,
            tokens: Vec::new(),
        }
    }

    fn peek(&self, ahead: usize) -> Option<u8> {
        self.bytes.get(self.pos + ahead).copied()
    }

    fn at(&self, offset: usize) -> (usize, usize) {
        self.unit.line_col_of(offset)
    }

    fn run(mut self) -> Result<Vec<Token>, ScanError> {
        while let Some(b) = self.peek(0) {
            match b {
                b'\n' => {
                    self.line_fresh = true;
                    self.pos += 1;
                }
                b' ' | b'\t' | b'\r' | b'\x0c' | b'\x0b' => self.pos += 1,
                b'/' if self.peek(1) == Some(b'/') => self.line_comment(),
                b'/' if self.peek(1) == Some(b'*') => self.block_comment()?,
                b'#' if self.line_fresh => self.preprocessor()?,
                b'"' => {
                    let start = self.pos;
                    self.quoted(b'"')?;
                    self.push(TokKind::Literal, start);
                }
                b'\'' => {
                    let start = self.pos;
                    self.quoted(b'\'')?;
                    self.push(TokKind::Literal, start);
                }
                b if b.is_ascii_digit() || (b == b'.' && self.peek(1).is_some_and(|c| c.is_ascii_digit())) => {
                    self.number()
                }
                b if is_ident_start(b) => self.ident()?,
                b => {
                    let start = self.pos;
                    self.pos += 1;
                    self.push(TokKind::Punct(b), start);
                }
            }
        }
        Ok(self.tokens)
    }

    fn push(&mut self, kind: TokKind, start: usize) {
        self.line_fresh = false;
        self.tokens.push(Token {
            kind,
            start,
            end: self.pos,
        });
    }

    fn line_comment(&mut self) {
        // A backslash-newline continues a `//` comment onto the next line.
        while let Some(b) = self.peek(0) {
            if b == b'\n' && self.pos > 0 && self.bytes[self.pos - 1] != b'\\' {
                break;
            }
            self.pos += 1;
        }
    }

    fn block_comment(&mut self) -> Result<(), ScanError> {
        let start = self.pos;
        self.pos += 2;
        loop {
            match self.peek(0) {
                None => {
                    let (line, column) = self.at(start);
                    return Err(ScanError::UnterminatedComment { line, column });
                }
                Some(b'*') if self.peek(1) == Some(b'/') => {
                    self.pos += 2;
                    return Ok(());
                }
                Some(_) => self.pos += 1,
            }
        }
    }

    fn preprocessor(&mut self) -> Result<(), ScanError> {
        loop {
            match self.peek(0) {
                None => return Ok(()),
                Some(b'\n') => return Ok(()),
                Some(b'\\') if self.peek(1) == Some(b'\n') => self.pos += 2,
                Some(b'\\') if self.peek(1) == Some(b'\r') && self.peek(2) == Some(b'\n') => {
                    self.pos += 3
                }
                Some(b'/') if self.peek(1) == Some(b'*') => self.block_comment()?,
                Some(b'/') if self.peek(1) == Some(b'/') => {
                    self.line_comment();
                    return Ok(());
                }
                Some(q @ (b'"' | b'\'')) => {
                    // `#include <a'b>`-style oddities are tolerated: an
                    // unterminated quote just ends at the line.
                    let save = self.pos;
                    if self.quoted(q).is_err() {
                        self.pos = save + 1;
                    }
                }
                Some(_) => self.pos += 1,
            }
        }
    }

    fn quoted(&mut self, quote: u8) -> Result<(), ScanError> {
        let start = self.pos;
        self.pos += 1;
        loop {
            match self.peek(0) {
                None | Some(b'\n') => {
                    let (line, column) = self.at(start);
                    return Err(ScanError::UnterminatedLiteral { line, column });
                }
                Some(b'\\') => {
                    self.pos += match (self.peek(1), self.peek(2)) {
                        (Some(b'\r'), Some(b'\n')) => 3,
                        (Some(_), _) => 2,
                        (None, _) => 1,
                    }
                }
                Some(b) if b == quote => {
                    self.pos += 1;
                    return Ok(());
                }
                Some(_) => self.pos += 1,
            }
        }
    }

    fn raw_string(&mut self, token_start: usize) -> Result<(), ScanError> {
        // At the opening quote of R"delim( ... )delim".
        let open = self.pos;
        let rest = &self.bytes[open + 1..];
        let unterminated = || {
            let (line, column) = self.at(token_start);
            ScanError::UnterminatedLiteral { line, column }
        };
        let paren = rest
            .iter()
            .take(17)
            .position(|&b| b == b'(')
            .ok_or_else(unterminated)?;
        let mut closing = Vec::with_capacity(paren + 2);
        closing.push(b')');
        closing.extend_from_slice(&rest[..paren]);
        closing.push(b'"');
        let body = &rest[paren + 1..];
        let end = body
            .windows(closing.len())
            .position(|w| w == closing.as_slice())
            .ok_or_else(unterminated)?;
        self.pos = open + 1 + paren + 1 + end + closing.len();
        Ok(())
    }

    fn number(&mut self) {
        let start = self.pos;
        while let Some(b) = self.peek(0) {
            let prev = self.bytes[self.pos - 1];
            let sign_in_exponent = (b == b'+' || b == b'-')
                && self.pos > start
                && matches!(prev, b'e' | b'E' | b'p' | b'P');
            let digit_separator =
                b == b'\'' && self.peek(1).is_some_and(|c| c.is_ascii_alphanumeric());
            if is_ident_char(b) || b == b'.' || sign_in_exponent || digit_separator {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.push(TokKind::Literal, start);
    }

    fn ident(&mut self) -> Result<(), ScanError> {
        let start = self.pos;
        while self.peek(0).is_some_and(is_ident_char) {
            self.pos += 1;
        }
        let word = &self.bytes[start..self.pos];
        match self.peek(0) {
            Some(b'"') if matches!(word, b"R" | b"LR" | b"uR" | b"UR" | b"u8R") => {
                self.raw_string(start)?;
                self.push(TokKind::Literal, start);
            }
            Some(q @ (b'"' | b'\'')) if matches!(word, b"L" | b"u" | b"U" | b"u8") => {
                self.quoted(q)?;
                self.push(TokKind::Literal, start);
            }
            _ => self.push(TokKind::Ident, start),
        }
        Ok(())
    }
}

/// Token stream plus matching-delimiter table.
struct Tokens<'a> {
    text: &'a str,
    toks: Vec<Token>,
    /// For each opener `(`, `[`, `{` the index of its closer, and vice versa.
    partner: Vec<Option<usize>>,
}

impl<'a> Tokens<'a> {
    fn build(unit: &'a SourceUnit) -> Result<Self, ScanError> {
        let toks = Lexer::new(unit).run()?;
        let mut partner = vec![None; toks.len()];
        let mut braces: Vec<usize> = Vec::new();
        let mut parens: Vec<usize> = Vec::new();
        let mut brackets: Vec<usize> = Vec::new();
        for (i, t) in toks.iter().enumerate() {
            let (stack, unbalanced): (&mut Vec<usize>, Unbalanced) = match t.kind {
                TokKind::Punct(b'{' | b'}') => (&mut braces, |line, column| {
                    ScanError::UnbalancedBraces { line, column }
                }),
                TokKind::Punct(b'(' | b')') => (&mut parens, |line, column| {
                    ScanError::UnbalancedParens { line, column }
                }),
                TokKind::Punct(b'[' | b']') => (&mut brackets, |line, column| {
                    ScanError::UnbalancedParens { line, column }
                }),
                _ => continue,
            };
            match t.kind {
                TokKind::Punct(b'{' | b'(' | b'[') => stack.push(i),
                _ => match stack.pop() {
                    Some(open) => {
                        partner[open] = Some(i);
                        partner[i] = Some(open);
                    }
                    None => {
                        let (line, column) = unit.line_col_of(t.start);
                        return Err(unbalanced(line, column));
                    }
                },
            }
        }
        if let Some(&open) = braces.first() {
            let (line, column) = unit.line_col_of(toks[open].start);
            return Err(ScanError::UnbalancedBraces { line, column });
        }
        if let Some(&open) = parens.first().or(brackets.first()) {
            let (line, column) = unit.line_col_of(toks[open].start);
            return Err(ScanError::UnbalancedParens { line, column });
        }
        Ok(Self {
            text: &unit.text,
            toks,
            partner,
        })
    }

    fn is_punct(&self, i: usize, c: u8) -> bool {
        self.toks.get(i).is_some_and(|t| t.kind == TokKind::Punct(c))
    }

    fn is_word(&self, i: usize, w: &str) -> bool {
        self.toks
            .get(i)
            .is_some_and(|t| t.kind == TokKind::Ident && &self.text[t.start..t.end] == w)
    }

    /// Index of the last token of the statement starting at token `i`.
    fn statement_end(&self, i: usize) -> usize {
        let last = self.toks.len() - 1;
        if i > last {
            return last;
        }
        match self.toks[i].kind {
            TokKind::Punct(b'{') => return self.partner[i].unwrap_or(last),
            TokKind::Punct(b';') => return i,
            _ => {}
        }
        if self.is_word(i, "for") || self.is_word(i, "while") || self.is_word(i, "switch") {
            if self.is_punct(i + 1, b'(') {
                if let Some(close) = self.partner[i + 1] {
                    return self.statement_end(close + 1);
                }
            }
        } else if self.is_word(i, "if") {
            let cond = if self.is_word(i + 1, "constexpr") { i + 2 } else { i + 1 };
            if self.is_punct(cond, b'(') {
                if let Some(close) = self.partner[cond] {
                    let then_end = self.statement_end(close + 1);
                    if self.is_word(then_end + 1, "else") {
                        return self.statement_end(then_end + 2);
                    }
                    return then_end;
                }
            }
        } else if self.is_word(i, "do") {
            let body_end = self.statement_end(i + 1);
            if self.is_word(body_end + 1, "while") && self.is_punct(body_end + 2, b'(') {
                if let Some(close) = self.partner[body_end + 2] {
                    if self.is_punct(close + 1, b';') {
                        return close + 1;
                    }
                    return close;
                }
            }
            return body_end;
        }
        // Expression statement: up to the next `;` outside any delimiters.
        let mut j = i;
        while j <= last {
            match self.toks[j].kind {
                TokKind::Punct(b';') => return j,
                TokKind::Punct(b'(' | b'[' | b'{') => match self.partner[j] {
                    Some(close) => j = close + 1,
                    None => return last,
                },
                TokKind::Punct(b')' | b']' | b'}') => return j.saturating_sub(1).max(i),
                _ => j += 1,
            }
        }
        last
    }
}

/// Finds every `for` statement in document order.
pub fn scan_loops(unit: &SourceUnit) -> Result<Vec<LoopSite>, ScanError> {
    let tokens = Tokens::build(unit)?;
    let bytes = unit.text.as_bytes();
    let mut sites: Vec<LoopSite> = Vec::new();
    for i in 0..tokens.toks.len() {
        if !tokens.is_word(i, "for") || !tokens.is_punct(i + 1, b'(') {
            continue;
        }
        let Some(close) = tokens.partner[i + 1] else { continue };
        if close + 1 >= tokens.toks.len() {
            continue;
        }
        let body_first = close + 1;
        let body_last = tokens.statement_end(body_first);
        let header_start = tokens.toks[i].start;
        let line_start = unit.line_start_of(header_start);
        let prefix = &bytes[line_start..header_start];
        let indent_len = prefix
            .iter()
            .take_while(|&&b| b == b' ' || b == b'\t')
            .count();
        sites.push(LoopSite {
            id: sites.len(),
            header_start,
            body_span: tokens.toks[body_first].start..tokens.toks[body_last].end,
            depth: 0,
            indent: unit.text[line_start..line_start + indent_len].to_string(),
            line: unit.line_col_of(header_start).0,
            line_leading: indent_len == prefix.len(),
        });
    }

    let mut open: Vec<Range<usize>> = Vec::new();
    for site in &mut sites {
        open.retain(|span| span.end > site.header_start);
        site.depth = open
            .iter()
            .filter(|span| span.start <= site.header_start)
            .count();
        open.push(site.body_span.clone());
    }
    Ok(sites)
}

/// Renders `text` with the directive inserted above every loop in `selected`.
///
/// Offsets are taken from the original text, so the result does not depend
/// on the order of `selected`.
pub fn render_with_directives<'s>(
    unit: &SourceUnit,
    selected: impl IntoIterator<Item = &'s LoopSite>,
) -> String {
    let mut inserts: Vec<(usize, String)> = selected
        .into_iter()
        .map(|site| {
            let nl = unit.newline_at(site.header_start);
            if site.line_leading {
                let at = site.header_start - site.indent.len();
                (at, format!("{}{DIRECTIVE}{nl}", site.indent))
            } else {
                // The directive must start its own line, so the `for` is
                // moved to a fresh line with the same indent.
                (
                    site.header_start,
                    format!("{nl}{}{DIRECTIVE}{nl}{}", site.indent, site.indent),
                )
            }
        })
        .collect();
    inserts.sort_by_key(|(at, _)| *at);
    inserts.dedup_by_key(|(at, _)| *at);

    let extra: usize = inserts.iter().map(|(_, s)| s.len()).sum();
    let mut out = String::with_capacity(unit.text.len() + extra);
    let mut cursor = 0;
    for (at, insert) in inserts {
        out.push_str(&unit.text[cursor..at]);
        out.push_str(&insert);
        cursor = at;
    }
    out.push_str(&unit.text[cursor..]);
    out
}

/// Which loops may become genome positions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFilter {
    #[default]
    All,
    Outermost,
}

impl DepthFilter {
    pub fn admits(self, site: &LoopSite) -> bool {
        match self {
            DepthFilter::All => true,
            DepthFilter::Outermost => site.depth == 0,
        }
    }
}

/// The scanned loops of one source file together with the subset that
/// passed probing. Gene position `k` maps to `all_loops[candidates[k]]` for
/// the lifetime of the run.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub unit: SourceUnit,
    pub all_loops: Vec<LoopSite>,
    pub candidates: Vec<usize>,
}

impl CandidateSet {
    pub fn gene_length(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidate_sites(&self) -> impl Iterator<Item = &LoopSite> {
        self.candidates.iter().map(|&id| &self.all_loops[id])
    }

    pub fn render_variant(&self, genome: &Genome) -> Result<String, RenderError> {
        if genome.len() != self.gene_length() {
            return Err(RenderError::GenomeLengthMismatch {
                expected: self.gene_length(),
                got: genome.len(),
            });
        }
        let selected = self
            .candidate_sites()
            .zip(genome.bits())
            .filter_map(|(site, on)| on.then_some(site));
        Ok(render_with_directives(&self.unit, selected))
    }
}

impl fmt::Display for LoopSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "loop {} (line {}, depth {})", self.id, self.line, self.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(text: &str) -> Vec<LoopSite> {
        scan_loops(&SourceUnit::new("t.c", text)).unwrap()
    }

    #[test]
    fn single_loop() {
        let sites = scan("int f(){for(i=0;i<n;i++){a[i]=0;}}");
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].depth, 0);
        assert_eq!(sites[0].header_start, 8);
        assert!(!sites[0].line_leading);
    }

    #[test]
    fn nested_loops() {
        let text = "for(i=0;i<n;i++){for(j=0;j<n;j++){a[i][j]=0;}}";
        let sites = scan(text);
        assert_eq!(sites.len(), 2);
        assert_eq!(sites.iter().map(|s| s.depth).collect::<Vec<_>>(), [0, 1]);
        // Outer body: the braces from offset 16 to the end.
        assert_eq!(sites[0].body_span, 16..text.len());
        assert_eq!(sites[1].header_start, 17);
        assert_eq!(sites[1].body_span, 33..text.len() - 1);
    }

    #[test]
    fn literals_and_comments_are_ignored() {
        let text = r#"char*s="for(";/*for(*/for(i=0;i<n;i++){}"#;
        let sites = scan(text);
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].header_start, text.rfind("for(i").unwrap());
    }

    #[test]
    fn preprocessor_lines_are_ignored() {
        let text = "#define LOOP for(i=0;i<n;i++) \\\n  x++;\n// for(;;)\nint c = 'f';\n";
        assert!(scan(text).is_empty());
    }

    #[test]
    fn identifiers_containing_for_are_not_loops() {
        assert!(scan("void f(){ format(x); for_each(a); forx(1); }").is_empty());
    }

    #[test]
    fn raw_strings_and_char_literals() {
        let text = "auto s = R\"x(for(;;){ )x\"; char c = '{'; for(;;) { }";
        let sites = scan(text);
        assert_eq!(sites.len(), 1);
    }

    #[test]
    fn unbraced_body_ends_at_semicolon() {
        let text = "for (i = 0; i < n; i++)\n  a[i] = f(i, (b[i]));\nx = 1;";
        let sites = scan(text);
        assert_eq!(&text[sites[0].body_span.clone()], "a[i] = f(i, (b[i]));");
    }

    #[test]
    fn unbraced_nested_loops_share_the_statement() {
        let text = "for (i=0;i<n;i++)\n  for (j=0;j<n;j++)\n    a[i][j] = 0;\n";
        let sites = scan(text);
        assert_eq!(sites.len(), 2);
        assert_eq!(sites[1].depth, 1);
        assert_eq!(sites[0].body_span.end, sites[1].body_span.end);
        assert!(sites[0].body_span.start <= sites[1].header_start);
    }

    #[test]
    fn unbraced_if_else_body() {
        let text = "for(;;) if (a) { b(); } else c();\nd();";
        let sites = scan(text);
        assert_eq!(&text[sites[0].body_span.clone()], "if (a) { b(); } else c();");
    }

    #[test]
    fn do_while_body() {
        let text = "for(;;) do { x++; } while (x < 3);\ny();";
        let sites = scan(text);
        assert_eq!(&text[sites[0].body_span.clone()], "do { x++; } while (x < 3);");
    }

    #[test]
    fn while_loops_are_not_reported() {
        assert!(scan("while (1) { do { } while (0); }").is_empty());
    }

    #[test]
    fn unbalanced_braces_are_errors() {
        let err = scan_loops(&SourceUnit::new("t.c", "int f() { for(;;) { }")).unwrap_err();
        assert!(matches!(err, ScanError::UnbalancedBraces { line: 1, column: 9 }));
        let err = scan_loops(&SourceUnit::new("t.c", "}\n")).unwrap_err();
        assert!(matches!(err, ScanError::UnbalancedBraces { line: 1, column: 1 }));
    }

    #[test]
    fn unterminated_literals_are_errors() {
        let err = scan_loops(&SourceUnit::new("t.c", "x;\nchar *s = \"abc\n;")).unwrap_err();
        assert!(matches!(err, ScanError::UnterminatedLiteral { line: 2, column: 11 }));
        let err = scan_loops(&SourceUnit::new("t.c", "/* open")).unwrap_err();
        assert!(matches!(err, ScanError::UnterminatedComment { .. }));
    }

    #[test]
    fn line_index_round_trips() {
        let unit = SourceUnit::new("t.c", "ab\n\ncd\r\nef");
        for o in 0..unit.text().len() {
            let (l, c) = unit.line_col_of(o);
            assert_eq!(unit.offset_of(l, c), Some(o), "offset {o}");
        }
        assert_eq!(unit.line_col_of(3), (2, 1));
        assert_eq!(unit.offset_of(1, 9), None);
    }

    #[test]
    fn indent_is_captured() {
        let sites = scan("void f() {\n\t  for (;;) {}\n}\n");
        assert_eq!(sites[0].indent, "\t  ");
        assert!(sites[0].line_leading);
        assert_eq!(sites[0].line, 2);
    }

    fn candidate_set(text: &str) -> CandidateSet {
        let unit = SourceUnit::new("t.c", text);
        let all_loops = scan_loops(&unit).unwrap();
        let candidates = (0..all_loops.len()).collect();
        CandidateSet {
            unit,
            all_loops,
            candidates,
        }
    }

    const NEST: &str = "void f() {\n  for (i = 0; i < n; i++) {\n    for (j = 0; j < n; j++)\n      a[i][j] = 0;\n  }\n}\n";

    #[test]
    fn all_zero_renders_identity() {
        let cs = candidate_set(NEST);
        let out = cs.render_variant(&Genome::zeros(2)).unwrap();
        assert_eq!(out, NEST);
    }

    #[test]
    fn single_directive_goes_directly_above_its_loop() {
        let cs = candidate_set(NEST);
        let out = cs.render_variant(&"01".parse().unwrap()).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(out.matches(DIRECTIVE).count(), 1);
        assert_eq!(lines[2], "    #pragma acc kernels");
        assert!(lines[3].trim_start().starts_with("for (j"));
    }

    #[test]
    fn all_one_adds_one_line_per_candidate() {
        let cs = candidate_set(NEST);
        let out = cs.render_variant(&"11".parse().unwrap()).unwrap();
        assert_eq!(out.lines().count(), NEST.lines().count() + 2);
    }

    #[test]
    fn mid_line_loop_is_moved_to_its_own_line() {
        let cs = candidate_set("int f(){for(i=0;i<n;i++){a[i]=0;}}\n");
        let out = cs.render_variant(&"1".parse().unwrap()).unwrap();
        assert_eq!(out, "int f(){\n#pragma acc kernels\nfor(i=0;i<n;i++){a[i]=0;}}\n");
    }

    #[test]
    fn crlf_sources_keep_crlf() {
        let cs = candidate_set("int x;\r\n  for(;;) {}\r\n");
        let out = cs.render_variant(&"1".parse().unwrap()).unwrap();
        assert_eq!(out, "int x;\r\n  #pragma acc kernels\r\n  for(;;) {}\r\n");
    }

    #[test]
    fn wrong_genome_length_is_rejected() {
        let cs = candidate_set(NEST);
        assert!(matches!(
            cs.render_variant(&Genome::zeros(3)),
            Err(RenderError::GenomeLengthMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn rescan_of_identity_render_is_identical() {
        let cs = candidate_set(NEST);
        let out = cs.render_variant(&Genome::zeros(2)).unwrap();
        assert_eq!(scan(&out), cs.all_loops);
    }
}
