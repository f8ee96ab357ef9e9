#![allow(dead_code)]

use std::path::{Path, PathBuf};

use offload_tuner::source::DIRECTIVE;

pub const CORPUS: &[&str] = &[
    "matmul.c",
    "external_call.c",
    "early_exit.c",
    "data_dependency.c",
    "nested_marker.c",
];

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn corpus(name: &str) -> PathBuf {
    fixture("corpus").join(name)
}

pub fn mock_compiler() -> &'static str {
    env!("CARGO_BIN_EXE_mock-acc-cc")
}

/// Removes every line consisting of indentation and a bare directive.
pub fn strip_inserted(text: &str) -> String {
    text.split_inclusive('\n')
        .filter(|line| line.trim_end_matches(['\r', '\n']).trim_start() != DIRECTIVE)
        .collect()
}

/// Config text for a corpus file probed with the mock compiler.
pub fn mock_config(source: &Path, workdir: &Path, extra: &str) -> String {
    format!(
        "source = {source:?}\nworkdir = {workdir:?}\n{extra}\n[toolchain]\ncompile_cmd = \"{} {{src}} -o {{out}}\"\ntime_regex = 'elapsed: ([0-9.]+)'\n",
        mock_compiler()
    )
}
