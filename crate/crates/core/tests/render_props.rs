mod common;

use offload_tuner::source::{render_with_directives, scan_loops, LoopSite, SourceUnit, DIRECTIVE};
use proptest::prelude::*;

/// A statement as lines without indentation, with the number of real loops
/// it contains.
#[derive(Debug, Clone)]
struct Stmt {
    lines: Vec<(usize, String)>,
    loops: usize,
}

fn leaf() -> impl Strategy<Value = Stmt> {
    prop_oneof![
        Just("x = x + 1;"),
        Just("s = \"for (i = 0; i < n; i++) {\";"),
        Just("/* for (;;) { */ y = 2;"),
        Just("c = '{'; d = '\"';"),
        Just("r = R\"(for (;;) } )\";"),
        Just("// for (k = 0; k < 3; k++) {"),
        Just("f(a, (b));"),
    ]
    .prop_map(|s| Stmt {
        lines: vec![(0, s.to_string())],
        loops: 0,
    })
}

fn indent(stmt: &Stmt) -> Vec<(usize, String)> {
    stmt.lines.iter().map(|(d, l)| (d + 1, l.clone())).collect()
}

fn stmt() -> impl Strategy<Value = Stmt> {
    leaf().prop_recursive(4, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(|body| {
                let mut lines = vec![(0, "for (int i = 0; i < n; i++) {".to_string())];
                let mut loops = 1;
                for s in &body {
                    lines.extend(indent(s));
                    loops += s.loops;
                }
                lines.push((0, "}".into()));
                Stmt { lines, loops }
            }),
            inner.prop_map(|body| {
                let body = if body.loops > 0 {
                    body
                } else {
                    Stmt {
                        lines: vec![(0, "a[i] = i;".into())],
                        loops: 0,
                    }
                };
                let mut lines = vec![(0, "for (j = 0; j < m; ++j)".to_string())];
                lines.extend(indent(&body));
                Stmt {
                    loops: body.loops + 1,
                    lines,
                }
            }),
        ]
    })
}

fn program() -> impl Strategy<Value = (String, usize)> {
    (prop::collection::vec(stmt(), 0..5), any::<bool>()).prop_map(|(stmts, crlf)| {
        let nl = if crlf { "\r\n" } else { "\n" };
        let mut text = format!("int main(void) {{{nl}");
        let mut loops = 0;
        for s in &stmts {
            for (depth, line) in &s.lines {
                text.push_str(&"    ".repeat(depth + 1));
                text.push_str(line);
                text.push_str(nl);
            }
            loops += s.loops;
        }
        text.push_str(&format!("}}{nl}"));
        (text, loops)
    })
}

fn enclosing(site: &LoopSite, sites: &[LoopSite]) -> usize {
    sites
        .iter()
        .filter(|o| o.id != site.id && o.body_span.contains(&site.header_start))
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn loops_in_literals_and_comments_are_ignored((text, expected) in program()) {
        let sites = scan_loops(&SourceUnit::new("p.c", text.as_str())).unwrap();
        prop_assert_eq!(sites.len(), expected);
        for s in &sites {
            prop_assert!(s.line_leading);
            prop_assert!(text[s.header_start..].starts_with("for"));
        }
    }

    #[test]
    fn loops_form_a_forest((text, _) in program()) {
        let sites = scan_loops(&SourceUnit::new("p.c", text.as_str())).unwrap();
        for (k, a) in sites.iter().enumerate() {
            prop_assert_eq!(a.id, k);
            prop_assert!(a.header_start < a.body_span.start);
            prop_assert_eq!(a.depth, enclosing(a, &sites));
            for b in &sites[k + 1..] {
                prop_assert!(a.header_start < b.header_start);
                let nested = a.body_span.start <= b.header_start && b.body_span.end <= a.body_span.end;
                let disjoint = a.body_span.end <= b.header_start;
                prop_assert!(nested || disjoint, "{:?} vs {:?}", a, b);
            }
        }
    }

    #[test]
    fn rendering_then_stripping_is_identity(
        (text, _) in program(),
        mask in prop::collection::vec(any::<bool>(), 64),
    ) {
        let unit = SourceUnit::new("p.c", text.as_str());
        let sites = scan_loops(&unit).unwrap();
        let chosen: Vec<&LoopSite> = sites.iter().filter(|s| mask[s.id % 64]).collect();
        let rendered = render_with_directives(&unit, chosen.iter().copied());
        prop_assert_eq!(common::strip_inserted(&rendered), text.clone());

        let lines: Vec<&str> = rendered.lines().collect();
        let directive_lines: Vec<usize> = (0..lines.len())
            .filter(|&i| lines[i].trim_end_matches('\r').trim_start() == DIRECTIVE)
            .collect();
        prop_assert_eq!(directive_lines.len(), chosen.len());
        for i in directive_lines {
            prop_assert!(lines[i + 1].trim_start().starts_with("for"));
            let indent = lines[i].len() - lines[i].trim_start().len();
            prop_assert_eq!(&lines[i][..indent], &lines[i + 1][..indent]);
        }
    }
}

#[test]
fn mid_line_loop_gets_its_own_directive_line() {
    let unit = SourceUnit::new("m.c", "void f() {\n  x = 0; for (i = 0; i < n; i++) a[i] = x;\n}\n");
    let sites = scan_loops(&unit).unwrap();
    assert!(!sites[0].line_leading);
    let out = render_with_directives(&unit, &sites);
    assert_eq!(
        out,
        "void f() {\n  x = 0; \n  #pragma acc kernels\n  for (i = 0; i < n; i++) a[i] = x;\n}\n"
    );
}
