//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any failed.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use chemputer::assembly::{
    assembly_bounds, max_error_for, monte_carlo, n_min, survival_fraction, DetectabilitySpec, MonteCarloConfig,
};
use chemputer::chemlang::{classify_steps, parse_program, synthetic_program, ChemProgram, OpKind};
use chemputer::chempiler::{
    build_default_graph, chempile, compiled_machine, core_sequence, equivalent, execute_plan, lower, NodeKind,
};
use chemputer::cstm::{
    expand_unit_op, primitive_sequence, run, run_with, ExecutionTrace, HaltKind, PrimKind, RunOptions,
    DEFAULT_BUDGET,
};
use chemputer::dec::{compare_paired, restore_checkpoint, run_plan_with_dec, CorrectionPolicy, InjectorMode};
use chemputer::par::Exec;
use chemputer::rules::{
    load_rules, load_rules_file, pathway_program, plan_pathway, run_and_commit, PlanError, RuleDatabase, RuleStatus,
    RulesError, Species, Term, TransitionRule,
};
use chemputer::stats::linear_fit;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fx(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn program(name: &str) -> ChemProgram {
    parse_program(&std::fs::read_to_string(fx(name)).unwrap()).unwrap()
}

fn tiny() -> RuleDatabase {
    load_rules_file(&fx("tiny.rules")).unwrap()
}

fn pow_oracle(base: f64, a: u32) -> f64 {
    (0..a).fold(1.0, |s, _| s * base)
}

fn survival_at_five_percent() {
    let s = survival_fraction(0.05, 20);
    assert!((s - 0.358486).abs() <= 1e-6, "{s}");
    assert!(s < 0.40, "{s}");
}

fn n_min_closed_form() {
    for phi in [1e6, 1e8] {
        for eps in [0.0, 0.01, 0.05, 0.2] {
            for a in [1u32, 20, 120] {
                let got = n_min(&DetectabilitySpec::constant(phi, eps, a).unwrap());
                let want = phi / pow_oracle(1.0 - eps, a);
                assert!((got - want).abs() <= 1e-12 * want, "phi {phi} eps {eps} a {a}: {got} vs {want}");
                if eps > 0.0 {
                    let back = max_error_for(phi, a, got).unwrap();
                    assert!((back - eps).abs() <= 1e-9, "phi {phi} eps {eps} a {a}: {back}");
                }
            }
        }
    }
}

fn monte_carlo_curves() {
    let start = Instant::now();
    let cfg = MonteCarloConfig::default();
    let r = monte_carlo(&cfg, Exec::Parallel).unwrap();
    assert!(start.elapsed().as_secs_f64() < 30.0, "{:?}", start.elapsed());
    assert_eq!(r.mean_n.len(), 10);
    assert!(r.eps0_list.windows(2).all(|w| w[0] < w[1]));
    for row in &r.mean_n {
        assert!(row.windows(2).all(|w| w[1] <= w[0]), "curve increases");
    }
    for pair in r.mean_n.windows(2) {
        assert!(pair[0].iter().zip(&pair[1]).all(|(lo, hi)| hi <= lo), "curves out of order");
    }

    let flat = MonteCarloConfig {
        systematic_sd: 0.0,
        k_growth: 0.0,
        trajectories: 50,
        ..Default::default()
    };
    let r = monte_carlo(&flat, Exec::Parallel).unwrap();
    for (e, row) in r.eps0_list.iter().zip(&r.mean_n) {
        for (k, n) in row.iter().enumerate() {
            let want = flat.n0 * pow_oracle(1.0 - e, k as u32 + 1);
            assert!((n - want).abs() <= 1e-12 * want, "eps0 {e} a {}: {n} vs {want}", k + 1);
        }
    }
}

fn primitive_goldens() {
    use PrimKind::*;
    let golden: [(OpKind, &[PrimKind]); 7] = [
        (OpKind::Separate, &[AM, AE, SM]),
        (OpKind::Dry, &[AE, SM]),
        (OpKind::Crystallise, &[AE, SE, SM]),
        (OpKind::Distil, &[AE, SM, SE, AM]),
        (OpKind::ReactHot, &[AM, AE]),
        (OpKind::ReactCold, &[AM, SE]),
        (OpKind::Sublime, &[SM, AE, SE, AM]),
    ];
    let src = r#"procedure "g" {
  reagents {
    a: sp:A 1 mol @R1 reagent
    d: sp:D 1 mol @R4 solvent
  }
  hardware { RX1 RV1 SEP1 F1 S1 }
  steps {
    add(vessel=SEP1, reagent=a, amount=0.1 mol)
    separate(vessel=SEP1, solvent=d, to=F1, amount=0.1 mol)
    dry(vessel=F1, temp=40 C, time=10 min)
    crystallise(vessel=RV1, temp=60 C, cool_temp=5 C, time=10 min, to=F1)
    distil(vessel=RV1, temp=90 C, time=10 min, to=S1)
    react_hot(vessel=RX1, reagent=a, amount=0.1 mol, temp=80 C, time=10 min)
    react_cold(vessel=RX1, reagent=a, amount=0.1 mol, temp=-10 C, time=10 min)
    sublime(vessel=RV1, temp=150 C, cool_temp=10 C, time=10 min, to=S1, species=A)
  }
}"#;
    let prog = parse_program(src).unwrap();
    for (kind, want) in golden {
        assert_eq!(primitive_sequence(kind), want, "{kind:?}");
        let (i, op) = prog.steps.iter().enumerate().find(|(_, o)| o.kind == kind).unwrap();
        let got: Vec<PrimKind> =
            expand_unit_op(op, i, &prog, None).unwrap().iter().map(|t| t.primitive.kind()).collect();
        assert_eq!(got, want, "{kind:?} expansion");
    }
}

const VESSELS: [&str; 5] = ["RX1", "RV1", "SEP1", "F1", "S1"];
const REAGENTS: [&str; 4] = ["a", "b", "c", "d"];
const SPECIES: [&str; 5] = ["A", "B", "X", "T", "Y"];
const SINKS: [&str; 4] = ["S1", "F1", "product", "waste"];

fn random_program(rng: &mut ChaCha8Rng) -> String {
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).unwrap();
    let cond = |rng: &mut ChaCha8Rng| {
        format!("temp={} C, time={} min", [-10, 25, 60, 80].choose(rng).unwrap(), [1, 10, 30].choose(rng).unwrap())
    };
    let mut s = String::from(
        "procedure \"rand\" {\n  reagents {\n    a: sp:A 2 mol @R1 reagent\n    b: sp:B 2 mol @R2 reagent\n    \
         c: sp:C 2 mol @R3 reagent\n    d: sp:D 2 mol @R4 solvent\n  }\n  hardware { RX1 RV1 SEP1 F1 S1 }\n  steps {\n    \
         add(vessel=RX1, reagent=a, amount=0.5 mol)\n",
    );
    for _ in 0..rng.random_range(1..12) {
        let line = match rng.random_range(0..14) {
            0..=2 => {
                let (v, r) = (pick(rng, &VESSELS), pick(rng, &REAGENTS));
                format!("add(vessel={v}, reagent={r}, amount={} mol)", rng.random_range(1..5) as f64 * 0.1)
            }
            3..=4 => {
                let from = pick(rng, &VESSELS);
                let to = loop {
                    let t = pick(rng, &SINKS);
                    if t != from {
                        break t;
                    }
                };
                match rng.random_bool(0.5) {
                    true => format!("transfer(from={from}, to={to}, species={})", pick(rng, &SPECIES)),
                    false => format!("transfer(from={from}, to={to})"),
                }
            }
            5..=8 => {
                let k = pick(rng, &["react_hot", "react_hot", "react_cold"]);
                format!("{k}(vessel=RX1, reagent={}, amount=0.1 mol, {})", pick(rng, &REAGENTS), cond(rng))
            }
            9 => format!("{}(vessel=RX1, {})", pick(rng, &["heat_stir", "chill"]), cond(rng)),
            10 => "distil(vessel=RV1, temp=90 C, time=10 min, to=S1)".into(),
            11 => "crystallise(vessel=RV1, temp=60 C, cool_temp=5 C, time=10 min, to=F1)".into(),
            12 => "separate(vessel=SEP1, solvent=d, to=F1, amount=0.1 mol)".into(),
            _ => "filter(vessel=F1, to=S1, species=X)".into(),
        };
        s += &format!("    {line}\n");
    }
    s + "  }\n}\n"
}

fn conservation() {
    let (db, g) = (tiny(), build_default_graph());
    let worst = |t: &ExecutionTrace, what: &str, i: usize| {
        assert!(t.ledger.residual <= 1e-9, "program {i} {what}: residual {}", t.ledger.residual);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..1000 {
        let prog = parse_program(&random_program(&mut rng)).unwrap();
        worst(&run(&prog, &db, DEFAULT_BUDGET), "abstract", i);
        let plan = chempile(&prog, &g).unwrap_or_else(|e| panic!("program {i}: {:?}", e.findings));
        worst(&execute_plan(&plan, &db, DEFAULT_BUDGET), "compiled", i);
        let inject = InjectorMode::Bernoulli { eps: 0.3 };
        let dec = run_plan_with_dec(&plan, &db, &CorrectionPolicy::default(), inject, i as u64, DEFAULT_BUDGET);
        worst(&dec, "dec", i);
    }
}

fn halting() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.rules");
    tiny().save(&path).unwrap();
    let prog = program("predicted.chem");
    let opts = RunOptions::default();
    let mut kinds = Vec::new();
    for _ in 0..2 {
        let (t, db) = run_and_commit(&prog, &load_rules_file(&path).unwrap(), &opts).unwrap();
        kinds.push(t.halt.kind);
        db.save(&path).unwrap();
    }
    assert_eq!(kinds, [HaltKind::UOut, HaltKind::Out]);
    let db = load_rules_file(&path).unwrap();
    assert_eq!(db.rule("r3").unwrap().status, RuleStatus::Characterised);
    assert_eq!(run(&prog, &db, DEFAULT_BUDGET).halt.kind, HaltKind::Out);

    assert_eq!(run(&program("norule.chem"), &tiny(), DEFAULT_BUDGET).halt.kind, HaltKind::Fail);

    let full = run(&program("tiny.chem"), &tiny(), DEFAULT_BUDGET).steps().count() as u64;
    let short = RunOptions { budget: full - 1, ..Default::default() };
    assert_eq!(run_with(&program("tiny.chem"), &tiny(), &short).halt.kind, HaltKind::Fail);
}

struct Case {
    db: RuleDatabase,
    stock: BTreeSet<String>,
    target: String,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n_sp = rng.random_range(3..=6);
    let names: Vec<String> = (0..n_sp).map(|i| format!("S{i}")).collect();
    let species = names
        .iter()
        .map(|id| Species {
            id: id.clone(),
            name: id.clone(),
            molar_mass: 50.0,
            elements: [("E".to_string(), 1)].into(),
            stable: true,
            assembly_index: None,
            bonds: None,
            molar_volume: None,
        })
        .collect();
    let statuses = [RuleStatus::Characterised, RuleStatus::Predicted, RuleStatus::Novel];
    let rules = (0..rng.random_range(1..=5))
        .map(|k| {
            let n_in = rng.random_range(1..=2);
            let ins: Vec<String> = names.choose_multiple(rng, n_in).cloned().collect();
            let rest: Vec<String> = names.iter().filter(|s| !ins.contains(s)).cloned().collect();
            let n_out = rng.random_range(1..=n_in.min(rest.len()));
            let outs: Vec<String> = rest.choose_multiple(rng, n_out).cloned().collect();
            let lo = 30.0 + 40.0 * k as f64;
            TransitionRule {
                id: format!("q{k}"),
                reagents: ins.iter().map(|s| Term::new(s, 1.0)).collect(),
                catalysts: vec![],
                temp_range: [lo, lo + 30.0],
                duration_range: [60.0, 3600.0],
                products: outs.iter().map(|s| Term::new(s, 1.0)).collect(),
                yield_fraction: rng.random_range(0.5..=1.0),
                epsilon: 0.0,
                status: *statuses.choose(rng).unwrap(),
                occurrences: 0,
                priority: 0,
            }
        })
        .collect();
    let db = RuleDatabase::new(species, rules).unwrap();
    let n_stock = rng.random_range(1..=2);
    let stock = names[..n_stock].iter().cloned().collect();
    let target = names[rng.random_range(n_stock..n_sp)].clone();
    Case { db, stock, target }
}

/// Shortest count of distinct rules after which the target is held, by
/// enumerating every ordering up to `left` rules.
fn brute_force(rules: &[&TransitionRule], have: &BTreeSet<String>, used: &mut Vec<usize>, target: &str, left: usize) -> Option<usize> {
    if have.contains(target) {
        return Some(used.len());
    }
    if left == 0 {
        return None;
    }
    let mut best = None;
    for i in 0..rules.len() {
        if used.contains(&i) || !rules[i].reagents.iter().all(|t| have.contains(&t.species)) {
            continue;
        }
        let mut next = have.clone();
        next.extend(rules[i].products.iter().map(|t| t.species.clone()));
        used.push(i);
        if let Some(n) = brute_force(rules, &next, used, target, left - 1) {
            best = Some(best.map_or(n, |b: usize| b.min(n)));
        }
        used.pop();
    }
    best
}

fn planner() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..200 {
        let c = random_case(&mut rng);
        let rules: Vec<&TransitionRule> = c.db.rules.values().collect();
        let oracle = brute_force(&rules, &c.stock, &mut Vec::new(), &c.target, 4);
        match plan_pathway(&c.db, &c.target, &c.stock, 4) {
            Ok(p) => {
                assert_eq!(Some(p.steps.len()), oracle, "db {i}");
                let t = run(&pathway_program(&p, &c.stock), &c.db, DEFAULT_BUDGET);
                assert_ne!(t.halt.kind, HaltKind::Fail, "db {i}: {:?}", t.halt.reason);
            }
            Err(PlanError::Unreachable(_)) => assert_eq!(oracle, None, "db {i}"),
            Err(e) => panic!("db {i}: {e}"),
        }
    }
}

fn lowering() {
    let db = load_rules_file(&fx("corpus.rules")).unwrap();
    let g = build_default_graph();
    assert_eq!(g.route("R1", "RX1").unwrap(), ["R1", "V1", "P1", "V2", "RX1"]);
    for f in ["atropine_3step.chem", "indole_1step.chem", "alkynol_1step.chem"] {
        let p = program(f);
        let plan = chempile(&p, &g).unwrap();
        for t in &plan.transfers {
            for w in t.route.windows(2) {
                assert!(g.edges.iter().any(|e| e.from == w[0] && e.to == w[1]), "{f}: no edge {w:?}");
            }
            for n in &t.route[1..t.route.len() - 1] {
                let k = g.kind(n);
                assert!(matches!(k, Some(NodeKind::Valve | NodeKind::Pump | NodeKind::Chromatograph)), "{f}: {n}");
            }
        }
        let (a, c) = (run(&p, &db, DEFAULT_BUDGET), execute_plan(&plan, &db, DEFAULT_BUDGET));
        assert!(equivalent(&a, &c), "{f}");
        assert_eq!(core_sequence(&a).len(), core_sequence(&c).len());
    }
}

/// One-sided sign test from the binomial sum directly.
fn sign_oracle(k: usize, n: usize) -> f64 {
    let mut term = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= k {
            tail += term;
        }
        term *= (n - i) as f64 / (i + 1) as f64;
    }
    tail
}

fn dec_benefit() {
    let db = tiny();
    let plan = chempile(&program("tiny.chem"), &build_default_graph()).unwrap();
    let pol = CorrectionPolicy::default();
    let c = compare_paired(&plan, &db, &pol, 0.3, 200, 0, DEFAULT_BUDGET, Exec::Parallel);
    assert!(c.out_with > c.out_without, "{c:?}");
    let p = sign_oracle(c.only_with, c.only_with + c.only_without);
    assert!(p < 0.01 && c.p_value < 0.01, "{c:?} oracle {p}");
    assert!((p - c.p_value).abs() <= 1e-9 * p.max(1e-300), "{} vs {p}", c.p_value);
    println!("    eps 0.3: with {} without {} of 200, p = {:.3e}", c.out_with, c.out_without, c.p_value);

    let z = compare_paired(&plan, &db, &pol, 0.0, 200, 0, DEFAULT_BUDGET, Exec::Parallel);
    assert_eq!((z.rate_with(), z.rate_without()), (1.0, 1.0));

    let mut m = compiled_machine(&plan, Some(&db), DEFAULT_BUDGET);
    m.load(lower(&plan, Some(&db)));
    while m.next_op_index() != Some(2) {
        m.step(&db);
    }
    let ckpt = m.clone();
    while m.next_op_index() == Some(2) {
        m.step(&db);
    }
    restore_checkpoint(&mut m, &ckpt);
    for c in ckpt.tape.iter().filter(|c| c.name != ckpt.waste_cell) {
        let now = m.cell(&c.name).unwrap();
        let bits = |x: &chemputer::Multiset| x.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&now.contents), bits(&c.contents), "{}", c.name);
        assert_eq!(now.temperature.to_bits(), c.temperature.to_bits(), "{}", c.name);
    }
}

fn step_scaling() {
    assert_eq!(classify_steps(&program("atropine_3step.chem")).cumulative, [20, 34, 47]);
    assert_eq!(classify_steps(&program("indole_1step.chem")).total, 18);
    assert_eq!(classify_steps(&program("alkynol_1step.chem")).total, 13);
    for t in [4usize, 15] {
        let pts: Vec<(f64, f64)> =
            (1..=10).map(|k| (k as f64, classify_steps(&synthetic_program(k, t)).total as f64)).collect();
        let fit = linear_fit(&pts).unwrap();
        assert!((fit.slope - t as f64).abs() <= 1e-12, "{fit:?}");
        assert!((fit.r_squared - 1.0).abs() <= 1e-12, "{fit:?}");
    }
}

fn bounds() {
    assert_eq!(assembly_bounds(8).unwrap(), (3, 7));
    for b in 2..=(1u64 << 16) {
        let (lo, hi) = assembly_bounds(b).unwrap();
        let ceil_log2 = (0..64).find(|k| (1u64 << k) >= b).unwrap();
        assert_eq!((lo, hi), (ceil_log2, b - 1), "{b}");
        assert!(lo <= hi);
    }
    let file = |a: u32| {
        format!(r#"{{"species": [{{"id": "m", "name": "m", "molar_mass": 100.0, "stable": true, "assembly_index": {a}, "bonds": 24}}]}}"#)
    };
    assert!(load_rules(&file(12)).is_ok());
    for a in [4, 24] {
        assert!(matches!(load_rules(&file(a)), Err(RulesError::AssemblyOutOfBounds { .. })), "{a}");
    }
}

fn cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let s = |n: &str| fx(n).display().to_string();
    let (tiny, rules, atropine, corpus) = (s("tiny.chem"), s("tiny.rules"), s("atropine_3step.chem"), s("corpus.rules"));
    let cmds: Vec<Vec<&str>> = vec![
        vec!["parse", &atropine, "--out", "parse.chem"],
        vec!["validate", &atropine, "--out", "validate.json"],
        vec!["run", &atropine, "--rules", &corpus, "--seed", "5", "--trace", "run.jsonl", "--out", "run.json"],
        vec!["run", &tiny, "--rules", &rules, "--compiled", "--trace", "compiled.jsonl"],
        vec!["plan", "--rules", &rules, "--target", "T", "--stock", "A,B,C", "--out", "plan.json"],
        vec!["compile", &atropine, "--rules", &corpus, "--code", "--out", "code.jsonl"],
        vec!["stats", &atropine, "--synthetic", "7", "--out", "stats.csv"],
        vec!["mc", "--seed", "9", "--out", "mc.csv", "--svg", "mc.svg"],
        vec!["dec-run", &tiny, "--rules", &rules, "--inject-eps", "0.3", "--seed", "4", "--trace", "dec.jsonl"],
        vec!["dec-run", &tiny, "--rules", &rules, "--inject-eps", "0.3", "--seeds", "200", "--compare"],
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut seen = Vec::new();
        for c in &cmds {
            let o = Command::new(env!("CARGO_BIN_EXE_chemputer")).current_dir(dir.path()).args(c).output().unwrap();
            assert!(o.status.code().is_some(), "{c:?}");
            seen.push((c[0], o.status.code(), o.stdout));
        }
        let mut files: Vec<(PathBuf, Vec<u8>)> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.clone(), std::fs::read(p).unwrap()))
            .collect();
        files.sort();
        runs.push((seen, files));
    }
    assert_eq!(runs[0].0, runs[1].0, "stdout or exit status differs");
    assert_eq!(runs[0].1, runs[1].1, "output files differ");
}

fn main() {
    let criteria: [(&str, fn()); 12] = [
        ("survival fraction at 5% over 20 steps", survival_at_five_percent),
        ("minimum copy number closed form and inversion", n_min_closed_form),
        ("Monte Carlo curves ordered and analytic when degenerate", monte_carlo_curves),
        ("primitive expansion goldens", primitive_goldens),
        ("mass conservation over 1000 random programs", conservation),
        ("halting classification", halting),
        ("planner against brute force", planner),
        ("lowering equivalence and routes", lowering),
        ("error correction benefit and checkpoints", dec_benefit),
        ("step counts and linear scaling", step_scaling),
        ("assembly index bounds", bounds),
        ("CLI byte-identical reruns", cli_determinism),
    ];
    std::panic::set_hook(Box::new(|info| eprintln!("    {info}")));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(f)).is_ok();
        failed += usize::from(!ok);
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {:>2}: {verdict}  {name} ({:.2}s)", i + 1, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
