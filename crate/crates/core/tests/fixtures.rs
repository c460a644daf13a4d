use std::path::PathBuf;

use chemputer::chemlang::{classify_steps, format_program, parse_program, validate_program, ChemProgram};
use chemputer::chempiler::{build_default_graph, chempile, equivalent, execute_plan, first_divergence, core_sequence};
use chemputer::cstm::{run, HaltKind, DEFAULT_BUDGET};
use chemputer::rules::{load_rules_file, RuleDatabase};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn program(name: &str) -> ChemProgram {
    parse_program(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

fn corpus() -> RuleDatabase {
    load_rules_file(&fixture("corpus.rules")).unwrap()
}

const CORPUS: [&str; 3] = ["atropine_3step.chem", "indole_1step.chem", "alkynol_1step.chem"];

#[test]
fn step_counts() {
    let h = classify_steps(&program("atropine_3step.chem"));
    assert_eq!(h.cumulative, vec![20, 34, 47]);
    assert_eq!(classify_steps(&program("indole_1step.chem")).total, 18);
    assert_eq!(classify_steps(&program("alkynol_1step.chem")).total, 13);
}

#[test]
fn corpus_round_trips() {
    for f in CORPUS {
        let p = program(f);
        assert_eq!(parse_program(&format_program(&p)).unwrap(), p, "{f}");
    }
}

#[test]
fn corpus_validates_on_default_graph() {
    let g = build_default_graph();
    for f in CORPUS {
        let r = validate_program(&program(f), &g);
        assert!(r.findings.is_empty(), "{f}: {:?}", r.findings);
    }
}

#[test]
fn corpus_runs_to_q_out() {
    let db = corpus();
    for f in CORPUS {
        let t = run(&program(f), &db, DEFAULT_BUDGET);
        assert_eq!(t.halt.kind, HaltKind::Out, "{f}: {:?}", t.halt.reason);
        assert!(t.ledger.residual <= 1e-9, "{f}: {}", t.ledger.residual);
        let target = &program(f).metadata["target"];
        assert!(t.product().get(target).is_some_and(|a| *a > 0.0), "{f}: {:?}", t.product());
    }
}

#[test]
fn lowering_preserves_core_sequence() {
    let db = corpus();
    let g = build_default_graph();
    for f in CORPUS {
        let p = program(f);
        let a = run(&p, &db, DEFAULT_BUDGET);
        let plan = chempile(&p, &g).unwrap();
        let c = execute_plan(&plan, &db, DEFAULT_BUDGET);
        assert!(c.ledger.residual <= 1e-9, "{f}: {}", c.ledger.residual);
        let (sa, sc) = (core_sequence(&a), core_sequence(&c));
        assert!(
            equivalent(&a, &c),
            "{f}: halts {:?}/{:?} ({:?}), diverge at {:?} of {}/{}: {:?} vs {:?}",
            a.halt.kind,
            c.halt.kind,
            c.halt.reason,
            first_divergence(&sa, &sc, 1e-12),
            sa.len(),
            sc.len(),
            first_divergence(&sa, &sc, 1e-12).and_then(|i| sa.get(i)),
            first_divergence(&sa, &sc, 1e-12).and_then(|i| sc.get(i)),
        );
    }
}


#[test]
fn shipped_graph_matches_builder() {
    let text = std::fs::read_to_string(fixture("default_fig4.graph")).unwrap();
    let g = chemputer::chempiler::HardwareGraph::from_json(&text).unwrap();
    assert_eq!(g, build_default_graph());
}
