use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chemputer"))
}

fn fx(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn go(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

#[test]
fn halt_kinds_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let db = d.path().join("db.rules");
    std::fs::copy(fx("tiny.rules"), &db).unwrap();
    let db = db.to_str().unwrap();
    assert_eq!(code(&go(d.path(), &["run", &fx("tiny.chem"), "--rules", db])), 0);
    assert_eq!(code(&go(d.path(), &["run", &fx("predicted.chem"), "--rules", db, "--persist-rules"])), 10);
    assert_eq!(code(&go(d.path(), &["run", &fx("predicted.chem"), "--rules", db, "--persist-rules"])), 0);
    assert_eq!(code(&go(d.path(), &["run", &fx("predicted.chem"), "--rules", db])), 0);
    assert_eq!(code(&go(d.path(), &["run", &fx("norule.chem"), "--rules", db])), 12);
    let o = go(d.path(), &["run", &fx("norule.chem"), "--rules", db, "--explore", &fx("latent.rules")]);
    assert_eq!(code(&o), 11);
    assert_eq!(code(&go(d.path(), &["run", &fx("tiny.chem"), "--rules", db, "--budget", "3"])), 12);
}

#[test]
fn trace_ends_with_halt() {
    let d = tempfile::tempdir().unwrap();
    let o = go(d.path(), &["run", &fx("tiny.chem"), "--rules", &fx("tiny.rules"), "--trace", "t.jsonl"]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(d.path().join("t.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["halt"]["kind"], "q_out");
    assert!(d.path().join("t.jsonl.manifest.json").exists());
}

#[test]
fn error_codes() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.chem"), "procedure \"x\" {\n  steps { oops }\n}\n").unwrap();
    let o = go(d.path(), &["parse", "bad.chem"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.chem:2:"));

    assert_eq!(code(&go(d.path(), &["run", "missing.chem", "--rules", &fx("tiny.rules")])), 2);
    assert_eq!(code(&go(d.path(), &["run", &fx("tiny.chem")])), 2);

    std::fs::write(d.path().join("p.json"), r#"{"minor": 0.3, "intermediate": 0.2, "major": 0.1}"#).unwrap();
    let o = go(d.path(), &["dec-run", &fx("tiny.chem"), "--rules", &fx("tiny.rules"), "--policy", "p.json"]);
    assert_eq!(code(&o), 2);

    let o = go(d.path(), &["plan", "--rules", &fx("tiny.rules"), "--target", "T", "--stock", "A"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn parse_reads_stdin() {
    let d = tempfile::tempdir().unwrap();
    let from_path = go(d.path(), &["parse", &fx("atropine_3step.chem")]);
    let mut child = bin()
        .args(["parse", "-"])
        .stdin(std::fs::File::open(fx("atropine_3step.chem")).unwrap())
        .output()
        .unwrap();
    assert_eq!(code(&from_path), 0);
    assert_eq!(from_path.stdout, std::mem::take(&mut child.stdout));
}

#[test]
fn plan_and_stats_outputs() {
    let d = tempfile::tempdir().unwrap();
    let o = go(d.path(), &["plan", "--rules", &fx("tiny.rules"), "--target", "T", "--stock", "A,B,C"]);
    let p: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let ids: Vec<&str> = p["steps"].as_array().unwrap().iter().map(|s| s["rule_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["r1", "r2"]);

    let o = go(d.path(), &["stats", &fx("atropine_3step.chem"), "--synthetic", "15"]);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("atropine_3step,3,"));
    assert!(out.contains("synthetic_10x15,15,0,1\n"), "{out}");
}

#[test]
fn mc_csv_shape() {
    let d = tempfile::tempdir().unwrap();
    let o = go(d.path(), &["mc", "--trajectories", "200", "--out", "mc.csv", "--svg", "mc.svg"]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(d.path().join("mc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 120);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("mc.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

/// Every command, run twice into the same paths, must leave identical bytes.
#[test]
fn commands_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let (tiny, rules) = (fx("tiny.chem"), fx("tiny.rules"));
    let atropine = fx("atropine_3step.chem");
    let corpus = fx("corpus.rules");
    let cmds: Vec<Vec<&str>> = vec![
        vec!["parse", &atropine, "--out", "parse.chem"],
        vec!["validate", &atropine, "--out", "validate.json"],
        vec!["run", &atropine, "--rules", &corpus, "--seed", "5", "--trace", "run.jsonl", "--out", "run.json"],
        vec!["run", &tiny, "--rules", &rules, "--compiled", "--trace", "runc.jsonl"],
        vec!["plan", "--rules", &rules, "--target", "T", "--stock", "A,B,C", "--out", "plan.json", "--program", "plan.chem"],
        vec!["compile", &atropine, "--out", "compile.json"],
        vec!["compile", &atropine, "--rules", &corpus, "--code", "--out", "code.jsonl"],
        vec!["stats", &atropine, "--synthetic", "7", "--out", "stats.csv"],
        vec!["mc", "--seed", "9", "--trajectories", "300", "--out", "mc.csv", "--svg", "mc.svg"],
        vec!["dec-run", &tiny, "--rules", &rules, "--inject-eps", "0.3", "--seed", "4", "--trace", "dec.jsonl"],
        vec!["dec-run", &tiny, "--rules", &rules, "--inject-eps", "0.3", "--seeds", "50", "--compare", "--out", "cmp.csv"],
    ];
    let snapshot = |dir: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        let mut v: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| {
                let b = std::fs::read(&p).unwrap();
                (p, b)
            })
            .collect();
        v.sort();
        v
    };
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut stdout = Vec::new();
        for c in &cmds {
            let o = go(d.path(), c);
            assert!(matches!(code(&o), 0 | 10 | 11 | 12), "{c:?}: {}", String::from_utf8_lossy(&o.stderr));
            let c = code(&o);
            stdout.push((o.stdout, c));
        }
        runs.push((stdout, snapshot(d.path())));
    }
    assert!(runs[0].1.len() >= 20);
    assert_eq!(runs[0], runs[1]);
}
