//! CLI behavior: exit codes, flag validation, and the spec'd examples for
//! each subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vecmap_core::scene::load_sequence;

fn vecmap() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vecmap"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    vecmap()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn vecmap")
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("vecmap-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempdir("usage");
    assert_eq!(code(&run_in(&dir, &["synth", "--length", "0"])), 2);
    assert_eq!(code(&run_in(&dir, &["synth", "--noise-drop", "1.5"])), 2);
    assert_eq!(
        code(&run_in(
            &dir,
            &[
                "tracks",
                "--in",
                "x.seq",
                "--out",
                "y.seq",
                "--lookback",
                "0"
            ]
        )),
        2
    );
    assert_eq!(code(&run_in(&dir, &["definitely-not-a-subcommand"])), 2);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempdir("synth-det");
    let args = [
        "synth",
        "--seed",
        "7",
        "--trajectory",
        "straight",
        "--length",
        "100",
    ];
    assert_eq!(code(&run_in(&dir, &args)), 0);
    let gt1 = std::fs::read(dir.join("gt.seq")).unwrap();
    let pred1 = std::fs::read(dir.join("pred.seq")).unwrap();
    assert_eq!(code(&run_in(&dir, &args)), 0);
    assert_eq!(gt1, std::fs::read(dir.join("gt.seq")).unwrap());
    assert_eq!(pred1, std::fs::read(dir.join("pred.seq")).unwrap());
}

#[test]
fn full_drop_writes_empty_predictions() {
    let dir = tempdir("drop");
    assert_eq!(
        code(&run_in(
            &dir,
            &["synth", "--seed", "3", "--noise-drop", "1.0"]
        )),
        0
    );
    let pred = load_sequence(&std::fs::read(dir.join("pred.seq")).unwrap()).unwrap();
    assert!(pred.frames.iter().all(|f| f.elements.is_empty()));
}

#[test]
fn tracks_requires_scores_unless_gt_mode() {
    let dir = tempdir("tracks-scores");
    assert_eq!(code(&run_in(&dir, &["synth", "--seed", "1"])), 0);
    // gt.seq has no scores: plain tracks must exit 1, --gt must succeed.
    let out = run_in(&dir, &["tracks", "--in", "gt.seq", "--out", "t.seq"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("score"));
    let out = run_in(
        &dir,
        &["tracks", "--in", "gt.seq", "--out", "t.seq", "--gt"],
    );
    assert_eq!(code(&out), 0);
    let tracked = load_sequence(&std::fs::read(dir.join("t.seq")).unwrap()).unwrap();
    assert!(tracked
        .frames
        .iter()
        .all(|f| f.elements.iter().all(|e| e.global_id.is_some())));
}

#[test]
fn lookback_reduces_track_count_on_flicker() {
    let dir = tempdir("tracks-lb");
    assert_eq!(
        code(&run_in(
            &dir,
            &[
                "synth",
                "--seed",
                "11",
                "--length",
                "60",
                "--noise-drop",
                "0.3"
            ]
        )),
        0
    );
    let n1 = run_in(
        &dir,
        &[
            "tracks",
            "--in",
            "pred.seq",
            "--out",
            "t1.seq",
            "--lookback",
            "1",
        ],
    );
    let n5 = run_in(
        &dir,
        &[
            "tracks",
            "--in",
            "pred.seq",
            "--out",
            "t5.seq",
            "--lookback",
            "5",
        ],
    );
    assert_eq!(code(&n1), 0);
    assert_eq!(code(&n5), 0);
    let count = |out: &Output| -> usize {
        String::from_utf8_lossy(&out.stdout)
            .trim()
            .rsplit(' ')
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(count(&n5) < count(&n1), "{} !< {}", count(&n5), count(&n1));
}

#[test]
fn eval_perfect_input_and_single_threshold() {
    let dir = tempdir("eval");
    assert_eq!(code(&run_in(&dir, &["synth", "--seed", "2"])), 0);
    let out = run_in(
        &dir,
        &[
            "eval", "--pred", "pred.seq", "--gt", "gt.seq", "--out", "r.json",
        ],
    );
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["map"], 1.0);
    assert_eq!(report["cmap"], report["cmap_upper"]);

    let out = run_in(
        &dir,
        &[
            "eval",
            "--pred",
            "pred.seq",
            "--gt",
            "gt.seq",
            "--thresholds",
            "0.5",
            "--out",
            "r1.json",
        ],
    );
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("r1.json")).unwrap()).unwrap();
    assert_eq!(report["thresholds"].as_array().unwrap().len(), 1);
    assert_eq!(report["ap_by_threshold"].as_array().unwrap().len(), 1);
}

#[test]
fn eval_corrupted_ids_drop_cmap_below_upper() {
    let dir = tempdir("eval-corrupt");
    assert_eq!(
        code(&run_in(
            &dir,
            &[
                "synth",
                "--seed",
                "4",
                "--length",
                "60",
                "--id-mode",
                "fresh-per-frame"
            ]
        )),
        0
    );
    let out = run_in(
        &dir,
        &[
            "eval", "--pred", "pred.seq", "--gt", "gt.seq", "--out", "r.json",
        ],
    );
    assert_eq!(code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("r.json")).unwrap()).unwrap();
    let cmap = report["cmap"].as_f64().unwrap();
    let upper = report["cmap_upper"].as_f64().unwrap();
    assert!(cmap < upper, "cmap {cmap} not below upper {upper}");
}

#[test]
fn eval_without_ids_exits_1_with_remediation() {
    let dir = tempdir("eval-noids");
    assert_eq!(code(&run_in(&dir, &["synth", "--seed", "2"])), 0);
    // Strip ids by round-tripping through a sequence without them.
    let mut pred = load_sequence(&std::fs::read(dir.join("pred.seq")).unwrap()).unwrap();
    for f in &mut pred.frames {
        for e in &mut f.elements {
            e.global_id = None;
        }
    }
    std::fs::write(
        dir.join("bare.seq"),
        vecmap_core::scene::save_sequence(&pred),
    )
    .unwrap();
    let out = run_in(&dir, &["eval", "--pred", "bare.seq", "--gt", "gt.seq"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("track"));
    // --no-cmap makes the same input acceptable.
    let out = run_in(
        &dir,
        &["eval", "--pred", "bare.seq", "--gt", "gt.seq", "--no-cmap"],
    );
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("\"map\""));
    assert!(!stdout.contains("\"cmap\""));
}

#[test]
fn merge_requires_ids_and_writes_svg() {
    let dir = tempdir("merge");
    assert_eq!(
        code(&run_in(&dir, &["synth", "--seed", "6", "--length", "60"])),
        0
    );
    let mut pred = load_sequence(&std::fs::read(dir.join("pred.seq")).unwrap()).unwrap();
    for f in &mut pred.frames {
        for e in &mut f.elements {
            e.global_id = None;
        }
    }
    std::fs::write(
        dir.join("bare.seq"),
        vecmap_core::scene::save_sequence(&pred),
    )
    .unwrap();
    assert_eq!(
        code(&run_in(
            &dir,
            &["merge", "--in", "bare.seq", "--out", "m.jsonl"]
        )),
        1
    );

    assert_eq!(
        code(&run_in(
            &dir,
            &["merge", "--in", "pred.seq", "--out", "m.jsonl", "--svg", "m.svg"]
        )),
        0
    );
    let svg = std::fs::read_to_string(dir.join("m.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("<path"));

    // Merging the merged output again: crossings are hull-idempotent.
    let map1 =
        vecmap_core::merger::load_global_map(&std::fs::read(dir.join("m.jsonl")).unwrap()).unwrap();
    assert!(!map1.is_empty());
}

#[test]
fn mask_dump_writes_pgm_files() {
    let dir = tempdir("masks");
    assert_eq!(
        code(&run_in(&dir, &["synth", "--seed", "2", "--length", "20"])),
        0
    );
    let out = run_in(
        &dir,
        &[
            "tracks",
            "--in",
            "pred.seq",
            "--out",
            "t.seq",
            "--dump-masks",
            "masks",
        ],
    );
    assert_eq!(code(&out), 0);
    let first = dir.join("masks/frame_0000_divider.pgm");
    let bytes = std::fs::read(&first).unwrap();
    assert!(bytes.starts_with(b"P5\n200 400\n255\n"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempdir("threads");
    assert_eq!(
        code(&run_in(
            &dir,
            &[
                "synth",
                "--seed",
                "5",
                "--noise-sigma",
                "0.2",
                "--noise-drop",
                "0.1"
            ]
        )),
        0
    );
    let eval = |threads: Option<&str>| -> Vec<u8> {
        let mut cmd = vecmap();
        cmd.current_dir(&dir)
            .args(["eval", "--pred", "pred.seq", "--gt", "gt.seq", "--no-cmap"]);
        match threads {
            Some(t) => cmd.env("VECMAP_THREADS", t),
            None => cmd.env_remove("VECMAP_THREADS"),
        };
        let out = cmd.output().unwrap();
        assert!(out.status.success());
        out.stdout
    };
    let base = eval(None);
    assert_eq!(base, eval(Some("1")));
    assert_eq!(base, eval(Some("4")));
}

#[test]
fn manifest_written_next_to_outputs() {
    let dir = tempdir("manifest");
    assert_eq!(
        code(&run_in(&dir, &["synth", "--seed", "2", "--length", "20"])),
        0
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("gt.seq.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["tool"], "vecmap");
    assert_eq!(manifest["command"], "synth");
    assert!(manifest["outputs"].as_object().unwrap().len() == 2);
    assert!(manifest["duration_ms"].is_number());
}
