//! Black-box tests of the strata binary: flows, file outputs, exit codes.

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use strata_core::binscan::fixture::FixtureElf;
use strata_core::probes::ReadaroundModel;
use strata_core::trace::TraceBuilder;
use strata_core::types::EventId;

fn key(n: &str) -> EventId {
    EventId::new(n).unwrap()
}

fn strata(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strata"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("signal-free exit")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Two keys on separate pages, idle baseline, a monitor schedule, 5% jitter
/// kept off so scores are exact.
fn write_workload(dir: &Path) {
    let mut b = TraceBuilder::new()
        .region("app", 0, 16 * 4096)
        .binary_version("1.2.3")
        .event(key("KeyA"), vec![("app".into(), 2 * 4096 + 64)])
        .event(key("KeyB"), vec![("app".into(), 9 * 4096 + 640)])
        .readaround(ReadaroundModel::disabled());
    for rep in 0..6u64 {
        b = b.fire(10 + rep * 40, key("KeyA"));
        b = b.fire(30 + rep * 40, key("KeyB"));
    }
    let trace = Arc::new(b.build().unwrap());
    std::fs::write(dir.join("trace.toml"), trace.to_toml_string().unwrap()).unwrap();
    std::fs::write(
        dir.join("run.toml"),
        r#"
            [campaign]
            keys = ["KeyA", "KeyB"]
            samples_per_key = 5
            ladder = [4096, 64]
            rng_seed = 7

            [backend]
            kind = "sim"
            trace = "trace.toml"

            [monitor]
            rounds = 260
        "#,
    )
    .unwrap();
}

#[test]
fn template_classify_monitor_flow() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_workload(root);

    let out = strata(root, &["template", "--config", "run.toml", "--out-dir", "run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(root.join("run/layer_0_4K.csv").is_file());
    assert!(root.join("run/layer_1_64B.csv").is_file());
    assert!(root.join("run/manifest.toml").is_file());
    assert!(stdout(&out).contains("layer 0 @4K"));

    let out = strata(
        root,
        &[
            "classify",
            "--matrix",
            "run/layer_1_64B.csv",
            "--config",
            "run.toml",
            "--trace",
            "trace.toml",
            "--out",
            "run/template.toml",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let template = std::fs::read_to_string(root.join("run/template.toml")).unwrap();
    assert!(template.contains("KeyA") && template.contains("KeyB"));
    assert!(template.contains("1.2.3"), "fingerprint version missing:\n{template}");

    let out = strata(
        root,
        &[
            "monitor",
            "--template",
            "run/template.toml",
            "--config",
            "run.toml",
            "--ground-truth",
            "trace.toml",
            "--min-fscore",
            "0.99",
            "--out-dir",
            "run",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(root.join("run/detections.csv").is_file());
    assert!(root.join("run/eval.csv").is_file());
    assert!(stdout(&out).contains("macro f-score: 1.0000"), "{}", stdout(&out));
}

#[test]
fn monitor_fscore_gate_fails_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_workload(root);
    strata(root, &["template", "--config", "run.toml", "--out-dir", "run"]);
    strata(
        root,
        &["classify", "--matrix", "run/layer_1_64B.csv", "--out", "run/template.toml"],
    );

    // Half the schedule lies beyond the monitored window: recall tanks.
    let out = strata(
        root,
        &[
            "monitor",
            "--template",
            "run/template.toml",
            "--config",
            "run.toml",
            "--rounds",
            "60",
            "--ground-truth",
            "trace.toml",
            "--min-fscore",
            "0.99",
            "--out-dir",
            "short",
        ],
    );
    assert_eq!(code(&out), 1, "stdout: {} stderr: {}", stdout(&out), stderr(&out));
    assert!(stderr(&out).contains("below the 0.99 gate"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    // no config file
    let out = strata(root, &["template", "--config", "missing.toml"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // config whose trace does not exist
    std::fs::write(
        root.join("broken.toml"),
        "[campaign]\nkeys = [\"KeyA\"]\nladder = [64]\n\n[backend]\nkind = \"sim\"\ntrace = \"nope.toml\"\n",
    )
    .unwrap();
    let out = strata(root, &["template", "--config", "broken.toml"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("nope.toml"));

    // sim backend without a trace is rejected at parse time
    std::fs::write(root.join("notrace.toml"), "[backend]\nkind = \"sim\"\n").unwrap();
    let out = strata(root, &["monitor", "--template", "t.toml", "--config", "notrace.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("requires backend.trace"), "{}", stderr(&out));

    // unknown backend override
    write_workload(root);
    let out = strata(
        root,
        &["template", "--config", "run.toml", "--backend", "quantum"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("quantum"));

    // min-fscore without ground truth
    let out = strata(
        root,
        &["monitor", "--template", "t.toml", "--config", "run.toml", "--min-fscore", "0.5"],
    );
    assert_eq!(code(&out), 2);

    // clap-level: unknown flag and missing subcommand
    assert_eq!(code(&strata(root, &["template", "--frobnicate"])), 2);
    assert_eq!(code(&strata(root, &[])), 2);
    assert_eq!(code(&strata(root, &["--help"])), 0);
}

#[test]
fn binscan_reports_and_diff() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    FixtureElf::new(2 * 4096)
        .place_str(0, "KeyUp")
        .place_str(64, "KeyDown")
        .write_to(&root.join("v63.so"))
        .unwrap();
    FixtureElf::new(2 * 4096)
        .place_str(0, "KeyUp")
        .place_str(4096, "KeyDown")
        .write_to(&root.join("v64.so"))
        .unwrap();
    std::fs::write(root.join("markers.txt"), "KeyUp\nKeyDown\n").unwrap();

    let out = strata(
        root,
        &[
            "binscan",
            "v63.so",
            "--markers",
            "markers.txt",
            "--grade",
            "--diff",
            "v64.so",
            "--out-dir",
            "scan",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let occurrences = std::fs::read_to_string(root.join("scan/occurrences.csv")).unwrap();
    assert!(occurrences.contains("KeyUp"), "{occurrences}");
    let pairs = std::fs::read_to_string(root.join("scan/pairs.csv")).unwrap();
    assert!(pairs.contains("co-located"), "{pairs}");
    let grades = std::fs::read_to_string(root.join("scan/grades.csv")).unwrap();
    assert!(grades.contains("LEAK_LINE"), "{grades}");
    let text = stdout(&out);
    assert!(text.contains("2/2 markers present"), "{text}");
    assert!(text.contains("co-located -> distinct"), "{text}");
    assert!(text.contains("moved: KeyDown"), "{text}");

    // default marker set works without a --markers file
    let out = strata(root, &["binscan", "v63.so", "--out-dir", "scan2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("markers present"));

    // not an ELF
    std::fs::write(root.join("junk.bin"), b"not elf").unwrap();
    assert_eq!(code(&strata(root, &["binscan", "junk.bin"])), 2);
}

#[test]
fn estimate_prints_and_saves() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = strata(
        root,
        &[
            "estimate",
            "--flat-seconds-per-mb",
            "817.652",
            "--region-mb",
            "209.81",
            "--keys",
            "57",
            "--layer",
            "4K:total:5292",
            "--out",
            "estimate.toml",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("113.18 days"), "{text}");
    assert!(text.contains("speedup: 1847.8x"), "{text}");
    let saved = std::fs::read_to_string(root.join("estimate.toml")).unwrap();
    assert!(saved.contains("speedup"));

    // params file plus an extra --layer
    std::fs::write(
        root.join("params.toml"),
        "flat_seconds_per_mb = 100.0\nregion_mb = 10.0\nkeys = 2\n",
    )
    .unwrap();
    let out = strata(
        root,
        &["estimate", "--params", "params.toml", "--layer", "64:per-probe:0.001:1000"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("layer @64B"));

    // malformed layer spec
    let out = strata(
        root,
        &["estimate", "--flat-seconds-per-mb", "1", "--region-mb", "1", "--keys", "1", "--layer", "4K:bogus"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn seed_override_changes_the_run_id() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_workload(root);
    strata(root, &["template", "--config", "run.toml", "--out-dir", "d1"]);
    strata(root, &["template", "--config", "run.toml", "--seed", "8", "--out-dir", "d2"]);
    let m1 = strata_core::manifest::RunManifest::load(&root.join("d1/manifest.toml")).unwrap();
    let m2 = strata_core::manifest::RunManifest::load(&root.join("d2/manifest.toml")).unwrap();
    assert_ne!(m1.run_id, m2.run_id);
    assert_eq!(m1.rng_seed, 7);
    assert_eq!(m2.rng_seed, 8);
    assert_eq!(m1.inputs.len(), 1, "trace file should be fingerprinted");
    assert_eq!(m1.inputs[0].sha256, m2.inputs[0].sha256);
}
