use chemputer::chemlang::{
    classify_steps, format_program, parse_program, synthetic_program, validate_program, Finding, ParseErrorKind,
};
use chemputer::chempiler::build_default_graph;
use chemputer::stats::linear_fit;
use proptest::prelude::*;

const HEAD: &str = "procedure \"p\" {\n  reagents { a: sp:A 1 mol @R1 reagent }\n  hardware { RX1 }\n  steps {\n";

fn with_steps(steps: &str) -> String {
    format!("{HEAD}{steps}  }}\n}}\n")
}

#[test]
fn errors_carry_positions() {
    let e = parse_program(&with_steps("    add(vessel=RX1, reagent=zz)\n")).unwrap_err();
    assert!(matches!(e.kind, ParseErrorKind::UndeclaredReference(ref r) if r == "zz"));
    assert_eq!(e.line, 5);

    let e = parse_program(&with_steps("    heat_stir(vessel=RX1, temp=80 C)\n")).unwrap_err();
    assert!(matches!(e.kind, ParseErrorKind::MissingParam { .. }), "{e}");

    let e = parse_program(&with_steps("    boil(vessel=RX1)\n")).unwrap_err();
    assert!(matches!(e.kind, ParseErrorKind::UnknownStepKind(_)));
    assert_eq!((e.line, e.col), (5, 5));

    assert!(matches!(parse_program(&with_steps("")).unwrap_err().kind, ParseErrorKind::EmptySteps));
    assert!(e.to_string().contains("5:5"), "{e}");
}

#[test]
fn range_and_capability_findings() {
    let p = parse_program(&with_steps("    add(vessel=RX1, reagent=a)\n    heat_stir(vessel=RX1, temp=900 C, time=1 min)\n"));
    let p = p.unwrap();
    let r = validate_program(&p, &build_default_graph());
    assert!(r.findings.iter().any(|f| matches!(f, Finding::ParamOutOfRange { step: 1, .. })));
}

#[test]
fn synthetic_scaling_is_exact() {
    for t in [3usize, 8, 15] {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|k| (k as f64, classify_steps(&synthetic_program(k, t)).total as f64))
            .collect();
        let fit = linear_fit(&pts).unwrap();
        assert_eq!(fit.slope, t as f64);
        assert_eq!(fit.r_squared, 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn synthetic_round_trips_and_is_monotone(k in 1u32..12, t in 1usize..20) {
        let p = synthetic_program(k, t);
        prop_assert_eq!(parse_program(&format_program(&p)).unwrap(), p.clone());
        let h = classify_steps(&p);
        prop_assert!(h.cumulative.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*h.cumulative.last().unwrap(), h.total);
        prop_assert_eq!(h.total, p.steps.len());
        prop_assert_eq!(h.cumulative.len(), k as usize);
    }

    #[test]
    fn formatting_is_idempotent(amount in 0.001..100.0f64, temp in -200.0..400.0f64, secs in 1.0..1e5f64) {
        let src = with_steps(&format!(
            "    add(vessel=RX1, reagent=a, amount={amount} mol)\n    heat_stir(vessel=RX1, temp={temp} C, time={secs} s)\n"
        ));
        let p = parse_program(&src).unwrap();
        let once = format_program(&p);
        prop_assert_eq!(&format_program(&parse_program(&once).unwrap()), &once);
        prop_assert_eq!(parse_program(&once).unwrap(), p);
    }
}
