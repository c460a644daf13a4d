//! Recursive-descent parser for `.chem` sources. Every production is LL(1).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::lexer::{tokenize, Tok, Token};
use super::{
    ChemProgram, OpKind, ParamType, ParamValue, Quantity, ReagentDecl, Role, Unit, UnitOperation,
    BUILTIN_VESSELS, REACTION_STEP,
};

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownStepKind(String),
    DuplicateReagent(String),
    UndeclaredReference(String),
    UnknownParam { kind: OpKind, param: String },
    MissingParam { kind: OpKind, param: String },
    BadParam { param: String, reason: String },
    EmptySteps,
}

/// Position-annotated parse failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub col: usize,
}

impl ParseError {
    pub(crate) fn new(kind: ParseErrorKind, line: usize, col: usize) -> Self {
        ParseError { kind, line, col }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: ", self.line, self.col)?;
        match &self.kind {
            ParseErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            ParseErrorKind::UnknownStepKind(k) => write!(f, "unknown step kind `{k}`"),
            ParseErrorKind::DuplicateReagent(r) => write!(f, "duplicate reagent id `{r}`"),
            ParseErrorKind::UndeclaredReference(r) => write!(f, "undeclared reference `{r}`"),
            ParseErrorKind::UnknownParam { kind, param } => {
                write!(f, "`{kind}` does not take parameter `{param}`")
            }
            ParseErrorKind::MissingParam { kind, param } => {
                write!(f, "`{kind}` requires parameter `{param}`")
            }
            ParseErrorKind::BadParam { param, reason } => write!(f, "parameter `{param}`: {reason}"),
            ParseErrorKind::EmptySteps => write!(f, "program has no steps"),
        }
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = self.peek();
        Err(ParseError::new(ParseErrorKind::Syntax(msg.into()), t.line, t.col))
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<Token> {
        if self.peek().tok == want {
            Ok(self.next())
        } else {
            self.err_here(format!("expected {what}, found {}", describe(&self.peek().tok)))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Token)> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                Ok((s, self.next()))
            }
            other => self.err_here(format!("expected {what}, found {}", describe(other))),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<Token> {
        match &self.peek().tok {
            Tok::Ident(s) if s == kw => Ok(self.next()),
            other => self.err_here(format!("expected `{kw}`, found {}", describe(other))),
        }
    }

    fn number(&mut self, what: &str) -> PResult<f64> {
        match self.peek().tok {
            Tok::Num(n) => {
                self.next();
                Ok(n)
            }
            ref other => self.err_here(format!("expected {what}, found {}", describe(other))),
        }
    }

    fn quantity(&mut self) -> PResult<Quantity> {
        let value = self.number("number")?;
        let (u, t) = self.ident("unit")?;
        let (unit, factor) = Unit::parse(&u).ok_or_else(|| {
            ParseError::new(ParseErrorKind::Syntax(format!("unknown unit `{u}`")), t.line, t.col)
        })?;
        Ok(Quantity::new(value * factor, unit))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Str(s) => format!("string \"{s}\""),
        Tok::Num(n) => format!("number {n}"),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Colon => "`:`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Eq => "`=`".into(),
        Tok::At => "`@`".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parse and validate a `.chem` source.
pub fn parse_program(source: &str) -> Result<ChemProgram, ParseError> {
    let mut p = Parser {
        toks: tokenize(source)?,
        pos: 0,
    };
    p.keyword("procedure")?;
    let name = match p.next() {
        Token { tok: Tok::Str(s), .. } => s,
        t => {
            return Err(ParseError::new(
                ParseErrorKind::Syntax(format!("expected procedure name string, found {}", describe(&t.tok))),
                t.line,
                t.col,
            ))
        }
    };
    p.expect(Tok::LBrace, "`{`")?;

    let mut reagents: Vec<(ReagentDecl, Token)> = Vec::new();
    let mut hardware: Option<Vec<String>> = None;
    let mut steps: Vec<(UnitOperation, Token)> = Vec::new();
    let mut metadata = BTreeMap::new();
    let mut seen = BTreeSet::new();

    loop {
        if p.peek().tok == Tok::RBrace {
            p.next();
            break;
        }
        let (section, st) = p.ident("section name")?;
        if !seen.insert(section.clone()) {
            return Err(ParseError::new(
                ParseErrorKind::Syntax(format!("duplicate section `{section}`")),
                st.line,
                st.col,
            ));
        }
        p.expect(Tok::LBrace, "`{`")?;
        match section.as_str() {
            "reagents" => {
                while p.peek().tok != Tok::RBrace {
                    reagents.push(parse_reagent(&mut p)?);
                }
            }
            "hardware" => {
                let mut hw = Vec::new();
                while p.peek().tok != Tok::RBrace {
                    let (h, _) = p.ident("hardware vessel")?;
                    if !hw.contains(&h) {
                        hw.push(h);
                    }
                }
                hardware = Some(hw);
            }
            "steps" => {
                while p.peek().tok != Tok::RBrace {
                    steps.push(parse_step(&mut p)?);
                }
            }
            "metadata" => {
                while p.peek().tok != Tok::RBrace {
                    let (k, _) = p.ident("metadata key")?;
                    p.expect(Tok::Eq, "`=`")?;
                    match p.next() {
                        Token { tok: Tok::Str(v), .. } => {
                            metadata.insert(k, v);
                        }
                        t => {
                            return Err(ParseError::new(
                                ParseErrorKind::Syntax("metadata values are strings".into()),
                                t.line,
                                t.col,
                            ))
                        }
                    }
                }
            }
            other => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax(format!("unknown section `{other}`")),
                    st.line,
                    st.col,
                ))
            }
        }
        p.expect(Tok::RBrace, "`}`")?;
    }
    p.expect(Tok::Eof, "end of input")?;

    check_program(name, reagents, hardware, steps, metadata)
}

fn parse_reagent(p: &mut Parser) -> PResult<(ReagentDecl, Token)> {
    let (id, tok) = p.ident("reagent id")?;
    p.expect(Tok::Colon, "`:`")?;
    p.keyword("sp")?;
    p.expect(Tok::Colon, "`:`")?;
    let (species, _) = p.ident("species id")?;
    let amount_tok = p.peek().clone();
    let amount = p.quantity()?;
    if !amount.unit.is_amount() {
        return Err(ParseError::new(
            ParseErrorKind::BadParam {
                param: "amount".into(),
                reason: format!("`{}` is not an amount unit", amount.unit.symbol()),
            },
            amount_tok.line,
            amount_tok.col,
        ));
    }
    if !(amount.value > 0.0) || !amount.value.is_finite() {
        return Err(ParseError::new(
            ParseErrorKind::BadParam {
                param: "amount".into(),
                reason: "reagent amounts must be positive".into(),
            },
            amount_tok.line,
            amount_tok.col,
        ));
    }
    p.expect(Tok::At, "`@`")?;
    let (source_vessel, _) = p.ident("source vessel")?;
    let (role_s, rt) = p.ident("role")?;
    let role = match role_s.as_str() {
        "reagent" => Role::Reagent,
        "catalyst" => Role::Catalyst,
        "solvent" => Role::Solvent,
        other => {
            return Err(ParseError::new(
                ParseErrorKind::Syntax(format!("unknown role `{other}`")),
                rt.line,
                rt.col,
            ))
        }
    };
    Ok((
        ReagentDecl {
            id,
            species,
            amount,
            source_vessel,
            role,
        },
        tok,
    ))
}

fn parse_step(p: &mut Parser) -> PResult<(UnitOperation, Token)> {
    let (kw, tok) = p.ident("step kind")?;
    let kind = OpKind::from_keyword(&kw)
        .ok_or_else(|| ParseError::new(ParseErrorKind::UnknownStepKind(kw.clone()), tok.line, tok.col))?;
    p.expect(Tok::LParen, "`(`")?;
    let mut op = UnitOperation::new(kind);
    if p.peek().tok != Tok::RParen {
        loop {
            let (key, kt) = p.ident("parameter name")?;
            p.expect(Tok::Eq, "`=`")?;
            let value = match p.peek().tok.clone() {
                Tok::Ident(s) => {
                    p.next();
                    ParamValue::Ident(s)
                }
                Tok::Num(n) => {
                    p.next();
                    if let Tok::Ident(u) = &p.peek().tok {
                        let ut = p.peek().clone();
                        let (unit, factor) = Unit::parse(u).ok_or_else(|| {
                            ParseError::new(ParseErrorKind::Syntax(format!("unknown unit `{u}`")), ut.line, ut.col)
                        })?;
                        p.next();
                        ParamValue::Quantity(Quantity::new(n * factor, unit))
                    } else {
                        ParamValue::Number(n)
                    }
                }
                ref other => return p.err_here(format!("expected parameter value, found {}", describe(other))),
            };
            if op.params.insert(key.clone(), value).is_some() {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax(format!("duplicate parameter `{key}`")),
                    kt.line,
                    kt.col,
                ));
            }
            if p.peek().tok == Tok::Comma {
                p.next();
                continue;
            }
            break;
        }
    }
    p.expect(Tok::RParen, "`)`")?;
    Ok((op, tok))
}

fn bad(param: &str, reason: impl Into<String>, t: &Token) -> ParseError {
    ParseError::new(
        ParseErrorKind::BadParam {
            param: param.into(),
            reason: reason.into(),
        },
        t.line,
        t.col,
    )
}

fn check_program(
    name: String,
    reagents: Vec<(ReagentDecl, Token)>,
    hardware: Option<Vec<String>>,
    steps: Vec<(UnitOperation, Token)>,
    metadata: BTreeMap<String, String>,
) -> PResult<ChemProgram> {
    let mut ids = BTreeSet::new();
    for (r, t) in &reagents {
        if !ids.insert(r.id.clone()) {
            return Err(ParseError::new(ParseErrorKind::DuplicateReagent(r.id.clone()), t.line, t.col));
        }
    }
    if steps.is_empty() {
        return Err(ParseError::new(ParseErrorKind::EmptySteps, 1, 1));
    }
    let sources: BTreeSet<&str> = reagents.iter().map(|(r, _)| r.source_vessel.as_str()).collect();

    let mut inferred: Vec<String> = Vec::new();
    for (op, t) in &steps {
        let spec = op.kind.params();
        for (key, value) in &op.params {
            if key == REACTION_STEP {
                match value {
                    ParamValue::Number(n) if *n >= 1.0 && n.fract() == 0.0 => {}
                    _ => return Err(bad(key, "must be a positive integer", t)),
                }
                continue;
            }
            let Some(&(_, ty, _)) = spec.iter().find(|(n, _, _)| n == key) else {
                return Err(ParseError::new(
                    ParseErrorKind::UnknownParam {
                        kind: op.kind,
                        param: key.clone(),
                    },
                    t.line,
                    t.col,
                ));
            };
            check_type(key, ty, value, t)?;
            if ty == ParamType::Reagent {
                if let ParamValue::Ident(r) = value {
                    if !ids.contains(r) {
                        return Err(ParseError::new(ParseErrorKind::UndeclaredReference(r.clone()), t.line, t.col));
                    }
                }
            }
            if ty == ParamType::Vessel {
                if let ParamValue::Ident(v) = value {
                    let known = BUILTIN_VESSELS.contains(&v.as_str()) || sources.contains(v.as_str());
                    match &hardware {
                        Some(hw) if !known && !hw.contains(v) => {
                            return Err(ParseError::new(ParseErrorKind::UndeclaredReference(v.clone()), t.line, t.col));
                        }
                        None if !known && !inferred.contains(v) => inferred.push(v.clone()),
                        _ => {}
                    }
                }
            }
        }
        for (pname, _, required) in spec {
            if *required && !op.params.contains_key(*pname) {
                return Err(ParseError::new(
                    ParseErrorKind::MissingParam {
                        kind: op.kind,
                        param: pname.to_string(),
                    },
                    t.line,
                    t.col,
                ));
            }
        }
        if op.params.contains_key("amount") && op.params.contains_key("fraction") {
            return Err(bad("fraction", "cannot be combined with `amount`", t));
        }
    }

    Ok(ChemProgram {
        name,
        reagents: reagents.into_iter().map(|(r, _)| r).collect(),
        hardware_reqs: hardware.unwrap_or(inferred),
        steps: steps.into_iter().map(|(s, _)| s).collect(),
        metadata,
    })
}

fn check_type(key: &str, ty: ParamType, value: &ParamValue, t: &Token) -> PResult<()> {
    let ok = match (ty, value) {
        (ParamType::Vessel | ParamType::Reagent | ParamType::Species, ParamValue::Ident(_)) => true,
        (ParamType::Temperature, ParamValue::Quantity(q)) => q.unit == Unit::C,
        (ParamType::Duration, ParamValue::Quantity(q)) => q.unit == Unit::S,
        (ParamType::Amount, ParamValue::Quantity(q)) => {
            if !q.unit.is_amount() {
                false
            } else if !(q.value > 0.0) {
                return Err(bad(key, "amounts must be positive", t));
            } else {
                true
            }
        }
        (ParamType::Fraction, ParamValue::Number(n)) => {
            if *n > 0.0 && *n <= 1.0 {
                true
            } else {
                return Err(bad(key, "fraction must lie in (0, 1]", t));
            }
        }
        (ParamType::Count, ParamValue::Number(n)) => *n >= 0.0 && n.fract() == 0.0,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(bad(key, format!("expected {ty:?}, found `{value}`"), t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        r#"procedure "p" { reagents { a: sp:water 1 mol @R1 reagent } steps { add(vessel=RX1, reagent=a) } }"#;

    #[test]
    fn minimal_program() {
        let p = parse_program(MINIMAL).unwrap();
        assert_eq!(p.name, "p");
        assert_eq!(p.steps.len(), 1);
        assert_eq!(p.reagents[0].species, "water");
        assert_eq!(p.hardware_reqs, vec!["RX1".to_string()]);
    }

    #[test]
    fn undeclared_reagent() {
        let src = r#"procedure "p" { reagents { a: sp:water 1 mol @R1 reagent } steps { add(vessel=RX1, reagent=b) } }"#;
        let e = parse_program(src).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UndeclaredReference("b".into()));
    }

    #[test]
    fn undeclared_vessel_with_hardware_block() {
        let src = r#"procedure "p" {
  reagents { a: sp:water 1 mol @R1 reagent }
  hardware { RX1 }
  steps { add(vessel=RX2, reagent=a) }
}"#;
        let e = parse_program(src).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UndeclaredReference("RX2".into()));
        assert_eq!(e.line, 4);
    }

    #[test]
    fn duplicate_reagent() {
        let src = r#"procedure "p" { reagents { a: sp:w 1 mol @R1 reagent
 a: sp:x 1 mol @R2 reagent } steps { add(vessel=RX1, reagent=a) } }"#;
        let e = parse_program(src).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::DuplicateReagent("a".into()));
        assert_eq!(e.line, 2);
    }

    #[test]
    fn unknown_step_kind() {
        let src = r#"procedure "p" { reagents { a: sp:w 1 mol @R1 reagent } steps { shake(vessel=RX1) } }"#;
        let e = parse_program(src).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownStepKind("shake".into()));
    }

    #[test]
    fn syntax_error_has_position() {
        let src = "procedure \"p\" {\n  reagents {\n    a sp:w 1 mol @R1 reagent\n  }\n}";
        let e = parse_program(src).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
        assert_eq!((e.line, e.col), (3, 7));
    }

    #[test]
    fn missing_required_param() {
        let src = r#"procedure "p" { reagents { a: sp:w 1 mol @R1 reagent } steps { heat_stir(vessel=RX1, temp=80 C) } }"#;
        let e = parse_program(src).unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MissingParam { .. }));
    }

    #[test]
    fn units_normalize() {
        let src = r#"procedure "p" { reagents { a: sp:w 250 mmol @R1 reagent } steps { heat_stir(vessel=RX1, temp=80 C, time=2 min) } }"#;
        let p = parse_program(src).unwrap();
        assert_eq!(p.reagents[0].amount, Quantity::new(0.25, Unit::Mol));
        assert_eq!(p.steps[0].quantity("time"), Some(Quantity::new(120.0, Unit::S)));
    }

    #[test]
    fn empty_steps_rejected() {
        let src = r#"procedure "p" { steps { } }"#;
        assert_eq!(parse_program(src).unwrap_err().kind, ParseErrorKind::EmptySteps);
    }
}
