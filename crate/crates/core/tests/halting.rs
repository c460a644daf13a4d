use std::path::PathBuf;

use chemputer::chemlang::{parse_program, ChemProgram};
use chemputer::cstm::{run, run_with, HaltKind, RunOptions, DEFAULT_BUDGET};
use chemputer::rules::{load_rules_file, run_and_commit, RuleDatabase, RuleStatus};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn program(name: &str) -> ChemProgram {
    parse_program(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

fn tiny() -> RuleDatabase {
    load_rules_file(&fixture("tiny.rules")).unwrap()
}

#[test]
fn predicted_rule_promotes_through_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.rules");
    tiny().save(&path).unwrap();
    let prog = program("predicted.chem");
    let opts = RunOptions::default();

    let (t1, db1) = run_and_commit(&prog, &load_rules_file(&path).unwrap(), &opts).unwrap();
    assert_eq!(t1.halt.kind, HaltKind::UOut);
    assert_eq!(db1.rule("r3").unwrap().occurrences, 1);
    db1.save(&path).unwrap();

    let (t2, db2) = run_and_commit(&prog, &load_rules_file(&path).unwrap(), &opts).unwrap();
    assert_eq!(t2.halt.kind, HaltKind::Out);
    assert_eq!(db2.rule("r3").unwrap().status, RuleStatus::Characterised);
    db2.save(&path).unwrap();

    let t3 = run(&prog, &load_rules_file(&path).unwrap(), DEFAULT_BUDGET);
    assert_eq!(t3.halt.kind, HaltKind::Out);
    assert!(t3.product()["Y"] > 0.0);
}

#[test]
fn promotion_log_is_append_only() {
    let prog = program("predicted.chem");
    let (_, db1) = run_and_commit(&prog, &tiny(), &RunOptions::default()).unwrap();
    let (_, db2) = run_and_commit(&prog, &db1, &RunOptions::default()).unwrap();
    assert_eq!(db2.provenance[..1], db1.provenance[..]);
    assert_eq!(db2.provenance[1].to, RuleStatus::Characterised);
}

#[test]
fn characterised_run_does_not_touch_the_db() {
    let prog = program("tiny.chem");
    let (t, db) = run_and_commit(&prog, &tiny(), &RunOptions::default()).unwrap();
    assert_eq!(t.halt.kind, HaltKind::Out);
    assert_eq!(db, tiny());
}

#[test]
fn no_rule_fails() {
    let t = run(&program("norule.chem"), &tiny(), DEFAULT_BUDGET);
    assert_eq!(t.halt.kind, HaltKind::Fail);
    assert!(t.halt.reason.is_some());
    assert!(t.ledger.residual <= 1e-9);
}

#[test]
fn exploration_finds_a_novel_rule() {
    let opts = RunOptions {
        explore: Some(load_rules_file(&fixture("latent.rules")).unwrap()),
        ..Default::default()
    };
    let prog = program("norule.chem");
    let (t, db) = run_and_commit(&prog, &tiny(), &opts).unwrap();
    assert_eq!(t.halt.kind, HaltKind::NOut);
    assert_eq!(db.rule("n1").unwrap().status, RuleStatus::Novel);
    assert_eq!(db.rule("n1").unwrap().occurrences, 1);

    // Repeating the discovery settles it.
    let (t2, db2) = run_and_commit(&prog, &db, &RunOptions::default()).unwrap();
    assert_eq!(t2.halt.kind, HaltKind::Out);
    assert_eq!(db2.rule("n1").unwrap().status, RuleStatus::Characterised);
}

#[test]
fn budget_exhaustion_fails() {
    let prog = program("tiny.chem");
    let full = run(&prog, &tiny(), DEFAULT_BUDGET);
    let n = full.steps().count() as u64;
    let t = run_with(&prog, &tiny(), &RunOptions { budget: n - 1, ..Default::default() });
    assert_eq!(t.halt.kind, HaltKind::Fail);
    assert!(t.halt.reason.as_deref().unwrap_or("").contains("budget"), "{:?}", t.halt.reason);
    assert!(t.ledger.residual <= 1e-9);
    assert_eq!(run_with(&prog, &tiny(), &RunOptions { budget: n, ..Default::default() }).halt.kind, HaltKind::Out);
}

#[test]
fn rule_fires_once_per_charge() {
    let t = run(&program("tiny.chem"), &tiny(), DEFAULT_BUDGET);
    let fired: Vec<_> = t.steps().filter_map(|s| s.reaction.as_ref()).map(|e| e.rule_id.as_str()).collect();
    assert_eq!(fired, ["r1", "r2"]);
}
