mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use offload_tuner::cli::{cmd_analyze, cmd_report, cmd_tune, CliError, TuneOptions};
use offload_tuner::config::RunConfig;

fn config(dir: &Path, text: &str) -> RunConfig {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    RunConfig::load(&path).unwrap()
}

fn sim_config(dir: &Path, extra: &str) -> RunConfig {
    config(
        dir,
        &format!(
            "source = {:?}\nworkdir = \"w\"\nsim_model = {:?}\n{extra}\n",
            common::corpus("matmul.c"),
            common::fixture("models/matrix12.json")
        ),
    )
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_offload-tuner"))
}

#[test]
fn analyze_matmul_with_accept_all() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &format!("source = {:?}\nworkdir = \"w\"\n", common::corpus("matmul.c")),
    );
    let a = cmd_analyze(&cfg).unwrap();
    assert_eq!((a.loop_count, a.gene_length), (12, 12));
    let report = fs::read_to_string(dir.path().join("w/probe_report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 12);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("w/analysis.json")).unwrap()).unwrap();
    assert_eq!(json["gene_length"], 12);
}

#[test]
fn outermost_filter_drops_inner_loops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &format!(
            "source = {:?}\nworkdir = \"w\"\ncandidate_depth = \"outermost\"\n",
            common::corpus("matmul.c")
        ),
    );
    let a = cmd_analyze(&cfg).unwrap();
    assert_eq!(a.gene_length, 6);
    assert!(a.loops.iter().all(|l| l.gene.is_some() == (l.depth == 0)));
}

#[test]
fn file_without_loops_reports_gene_length_zero() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("flat.c");
    fs::write(&src, "int main(void) { /* for (;;) */ return 0; }\n").unwrap();
    let cfg = config(dir.path(), "source = \"flat.c\"\nworkdir = \"w\"\n");
    let a = cmd_analyze(&cfg).unwrap();
    assert_eq!((a.loop_count, a.gene_length), (0, 0));
    assert!(a.note.is_some());

    let out = bin().arg("analyze").arg(dir.path().join("run.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = bin().arg("tune").arg(dir.path().join("run.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "no compiler and no model is a config error");
}

#[test]
fn tuning_without_candidates_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("flat.c"), "int x;\n").unwrap();
    let cfg = config(
        dir.path(),
        &format!(
            "source = \"flat.c\"\nworkdir = \"w\"\nsim_model = {:?}\n",
            common::fixture("models/matrix12.json")
        ),
    );
    let err = cmd_tune(&cfg, &TuneOptions::default()).unwrap_err();
    assert!(matches!(err, CliError::NoCandidates(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn scan_errors_carry_the_location() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.c"), "int f() {\n  for (;;) {\n").unwrap();
    let cfg = config(dir.path(), "source = \"bad.c\"\nworkdir = \"w\"\n");
    let err = cmd_analyze(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let msg = err.to_string();
    assert!(msg.contains("bad.c:") && msg.contains("unbalanced"), "{msg}");
}

#[test]
fn missing_compiler_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &format!(
            "source = {:?}\nworkdir = \"w\"\n[toolchain]\ncompile_cmd = \"no-such-compiler-on-this-host {{src}} -o {{out}}\"\n",
            common::corpus("early_exit.c")
        ),
    );
    let err = cmd_analyze(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}

#[test]
fn population_of_one_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_config(dir.path(), "[ga]\npopulation = 1\ngenerations = 1\n");
    let err = cmd_tune(&cfg, &TuneOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join("w/cache.jsonl").exists());
}

#[test]
fn model_must_match_the_candidate_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &format!(
            "source = {:?}\nworkdir = \"w\"\nsim_model = {:?}\n",
            common::corpus("matmul.c"),
            common::fixture("models/separable10.json")
        ),
    );
    assert_eq!(cmd_tune(&cfg, &TuneOptions::default()).unwrap_err().exit_code(), 2);
}

#[test]
fn tune_writes_artifacts_and_report_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_config(dir.path(), "[ga]\npopulation = 8\ngenerations = 5\n");
    let out = cmd_tune(&cfg, &TuneOptions { seed: Some(2), sim: None }).unwrap();
    let w = dir.path().join("w");
    for f in ["config.resolved.toml", "cache.jsonl", "generations.csv", "summary.json", "best_matmul.c"] {
        assert!(w.join(f).is_file(), "{f}");
    }
    let resolved = fs::read_to_string(w.join("config.resolved.toml")).unwrap();
    assert!(resolved.starts_with("# backend = sim"));
    assert!(resolved.contains("seed = 2"));
    let best = fs::read_to_string(w.join("best_matmul.c")).unwrap();
    assert_eq!(
        best.matches("#pragma acc kernels").count(),
        out.result.best_genome.count_ones()
    );

    let gp = dir.path().join("series.dat");
    let report = cmd_report(&w, Some(&gp)).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert_eq!(report.summary.unwrap().best_s, out.result.best_time);
    assert_eq!(fs::read_to_string(&gp).unwrap().lines().count(), 7);

    let cli = bin().arg("report").arg(&w).output().unwrap();
    assert_eq!(cli.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&cli.stdout).contains("speedup"));
}

#[test]
fn tampered_logs_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sim_config(dir.path(), "[ga]\npopulation = 6\ngenerations = 4\n");
    cmd_tune(&cfg, &TuneOptions::default()).unwrap();
    let w = dir.path().join("w");
    let csv_path = w.join("generations.csv");
    let original = fs::read_to_string(&csv_path).unwrap();

    let mut lines: Vec<String> = original.lines().map(String::from).collect();
    let mut last: Vec<String> = lines[5].split(',').map(String::from).collect();
    last[1] = "50".into();
    lines[5] = last.join(",");
    fs::write(&csv_path, lines.join("\n") + "\n").unwrap();
    let err = cmd_report(&w, None).unwrap_err();
    assert!(matches!(err, CliError::CorruptLog { .. }), "{err}");
    assert_eq!(err.exit_code(), 6);
    let cli = bin().arg("report").arg(&w).output().unwrap();
    assert_eq!(cli.status.code(), Some(6));

    let truncated: String = original.lines().take(4).map(|l| format!("{l}\n")).collect();
    fs::write(&csv_path, truncated).unwrap();
    assert_eq!(cmd_report(&w, None).unwrap_err().exit_code(), 6);

    fs::write(&csv_path, &original).unwrap();
    fs::remove_file(w.join("best_matmul.c")).unwrap();
    assert!(matches!(cmd_report(&w, None), Err(CliError::MissingLog(_))));

    fs::remove_file(&csv_path).unwrap();
    assert!(matches!(cmd_report(&w, None), Err(CliError::MissingLog(_))));
}

#[test]
fn sim_flag_runs_without_a_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "workdir = \"w\"\n[ga]\npopulation = 4\ngenerations = 2\n");
    let opts = TuneOptions {
        seed: None,
        sim: Some(common::fixture("models/separable10.json")),
    };
    let out = cmd_tune(&cfg, &opts).unwrap();
    assert_eq!(out.result.best_genome.len(), 10);
    assert_eq!(out.summary.best_variant, None);
    assert_eq!(cmd_report(&dir.path().join("w"), None).unwrap().rows.len(), 3);
}

#[test]
fn toolchain_tuning_on_the_mock_compiler() {
    let dir = tempfile::tempdir().unwrap();
    let text = common::mock_config(
        &common::corpus("matmul.c"),
        Path::new("w"),
        "[ga]\npopulation = 4\ngenerations = 2\nseed = 5\n",
    );
    let cfg = config(dir.path(), &text);
    let out = cmd_tune(&cfg, &TuneOptions::default()).unwrap();
    assert_eq!(out.probe_compilations, 12);
    assert_eq!(out.result.baseline_time, 1.0);
    assert!(out.result.best_time <= 1.0);
    assert_eq!(out.evaluations_run, out.result.distinct_evals);

    let again = cmd_tune(&cfg, &TuneOptions::default()).unwrap();
    assert_eq!((again.probe_compilations, again.evaluations_run), (0, 0));
    assert_eq!(again.summary, out.summary);
}
