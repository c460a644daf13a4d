use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Read as _;
use std::path::Path;

use anyhow::{Context, Result};
use chemputer::assembly::{monte_carlo, MonteCarloConfig};
use chemputer::chemlang::{classify_steps, format_program, parse_program, synthetic_program, validate_program, ChemProgram};
use chemputer::chempiler::{build_default_graph, chempile, execute_plan, lower, CompiledPlan, HardwareGraph};
use chemputer::cstm::{run_with, ExecutionTrace, HaltKind, RunOptions};
use chemputer::dec::{compare_paired, run_plan_with_dec, CorrectionPolicy, DecOutcome, InjectorMode};
use chemputer::par::Exec;
use chemputer::rules::{load_rules_file, pathway_program, plan_pathway, run_and_commit, PlanError, RuleDatabase};
use chemputer::stats::linear_fit;
use serde_json::json;

use crate::manifest::Recorder;
use crate::{Cmd, Common, Failure};

fn halt_code(k: HaltKind) -> u8 {
    match k {
        HaltKind::Out => 0,
        HaltKind::UOut => 10,
        HaltKind::NOut => 11,
        HaltKind::Fail => 12,
    }
}

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn config(msg: impl std::fmt::Display) -> anyhow::Error {
    Failure::Config(msg.to_string()).into()
}

struct Ctx {
    rec: Recorder,
}

impl Ctx {
    fn program(&mut self, path: &Path) -> Result<ChemProgram> {
        let text = if path == Path::new("-") {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
            self.rec.stdin(&s);
            s
        } else {
            self.rec.input(path)?;
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        };
        parse_program(&text).map_err(|e| Failure::Parse(format!("{}:{e}", path.display())).into())
    }

    fn rules(&mut self, c: &Common) -> Result<RuleDatabase> {
        let Some(p) = &c.rules else {
            return Err(config("--rules is required"));
        };
        self.rules_at(p)
    }

    fn rules_at(&mut self, p: &Path) -> Result<RuleDatabase> {
        self.rec.input(p)?;
        load_rules_file(p).map_err(|e| config(format!("{}: {e}", p.display())))
    }

    fn graph(&mut self, c: &Common) -> Result<HardwareGraph> {
        match &c.graph {
            Some(p) => {
                self.rec.input(p)?;
                HardwareGraph::load(p).map_err(|e| config(format!("{}: {e}", p.display())))
            }
            None => Ok(build_default_graph()),
        }
    }

    fn compile(&mut self, prog: &ChemProgram, c: &Common) -> Result<CompiledPlan> {
        let g = self.graph(c)?;
        chempile(prog, &g).map_err(|r| config(serde_json::to_string(&r.findings).unwrap_or_default()))
    }

    /// Primary output: the `--out` file, or stdout.
    fn emit(&mut self, out: Option<&Path>, text: &str) -> Result<()> {
        match out {
            Some(p) => self.rec.write(p, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn summary(prog: &ChemProgram, t: &ExecutionTrace) -> serde_json::Value {
    json!({
        "program": prog.name,
        "halt": t.halt,
        "steps": t.steps().count(),
        "residual": t.ledger.residual,
        "product": t.product(),
        "waste": t.waste(),
    })
}

pub fn dispatch(cmd: Cmd, argv: Vec<String>) -> Result<u8> {
    let mut cx = Ctx { rec: Recorder::new(argv) };
    let code = match cmd {
        Cmd::Parse { input, common } => {
            let p = cx.program(&input)?;
            cx.emit(common.out.as_deref(), &format_program(&p))?;
            0
        }
        Cmd::Validate { input, common } => {
            let p = cx.program(&input)?;
            let g = cx.graph(&common)?;
            let r = validate_program(&p, &g);
            cx.emit(common.out.as_deref(), &pretty(&r))?;
            if r.findings.is_empty() {
                0
            } else {
                2
            }
        }
        Cmd::Run {
            input,
            common,
            budget,
            trace,
            compiled,
            explore,
            persist_rules,
        } => {
            if compiled && (persist_rules || explore.is_some()) {
                return Err(config("--compiled cannot be combined with --persist-rules or --explore"));
            }
            let seed = common.seed.unwrap_or(0);
            cx.rec.seed(seed);
            let prog = cx.program(&input)?;
            let db = cx.rules(&common)?;
            let opts = RunOptions {
                budget,
                explore: explore.as_deref().map(|p| cx.rules_at(p)).transpose()?,
                seed,
            };
            let t = if compiled {
                let plan = cx.compile(&prog, &common)?;
                execute_plan(&plan, &db, budget)
            } else if persist_rules {
                let (t, next) = run_and_commit(&prog, &db, &opts).map_err(config)?;
                let path = common.rules.as_deref().expect("checked by rules()");
                if next != db {
                    next.save(path).map_err(config)?;
                }
                t
            } else {
                run_with(&prog, &db, &opts)
            };
            if let Some(p) = &trace {
                cx.rec.write(p, &t.to_jsonl())?;
            }
            cx.emit(common.out.as_deref(), &pretty(&summary(&prog, &t)))?;
            halt_code(t.halt.kind)
        }
        Cmd::Plan {
            common,
            target,
            stock,
            depth,
            program,
        } => {
            let db = cx.rules(&common)?;
            let stock: BTreeSet<String> = stock.into_iter().filter(|s| !s.is_empty()).collect();
            let p = match plan_pathway(&db, &target, &stock, depth) {
                Ok(p) => p,
                Err(PlanError::Unreachable(t)) => return Err(Failure::Unreachable(t).into()),
                Err(e) => return Err(config(e)),
            };
            cx.emit(common.out.as_deref(), &pretty(&p))?;
            if let Some(path) = &program {
                cx.rec.write(path, &format_program(&pathway_program(&p, &stock)))?;
            }
            0
        }
        Cmd::Compile { input, common, code } => {
            let prog = cx.program(&input)?;
            let db = common.rules.as_ref().map(|_| cx.rules(&common)).transpose()?;
            let plan = cx.compile(&prog, &common)?;
            let text = if code {
                let mut s = String::new();
                for ins in lower(&plan, db.as_ref()) {
                    s += &serde_json::to_string(&ins)?;
                    s.push('\n');
                }
                s
            } else {
                plan.to_json()
            };
            cx.emit(common.out.as_deref(), &text)?;
            0
        }
        Cmd::Stats {
            inputs,
            common,
            synthetic,
            steps,
        } => {
            let mut progs = Vec::new();
            for p in &inputs {
                progs.push(cx.program(p)?);
            }
            if let Some(t) = synthetic {
                if t == 0 || steps == 0 {
                    return Err(config("--synthetic and --steps must be positive"));
                }
                progs.push(synthetic_program(steps, t));
            }
            if progs.is_empty() {
                return Err(config("no programs given"));
            }
            let mut csv = String::from(
                "program,reaction_step,add_matter,subtract_matter,add_energy,subtract_energy,composite,total,cumulative\n",
            );
            let mut fits = String::from("program,slope,intercept,r_squared\n");
            for p in &progs {
                let h = classify_steps(p);
                for (c, cum) in h.per_reaction_step.iter().zip(&h.cumulative) {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{},{},{},{}",
                        p.name,
                        c.reaction_step,
                        c.add_matter,
                        c.subtract_matter,
                        c.add_energy,
                        c.subtract_energy,
                        c.composite,
                        c.total,
                        cum
                    );
                }
                let pts: Vec<(f64, f64)> =
                    h.cumulative.iter().enumerate().map(|(i, c)| ((i + 1) as f64, *c as f64)).collect();
                match linear_fit(&pts) {
                    Some(f) => {
                        let _ = writeln!(fits, "{},{},{},{}", p.name, f.slope, f.intercept, f.r_squared);
                    }
                    None => {
                        let _ = writeln!(fits, "{},,,", p.name);
                    }
                }
            }
            match common.out.as_deref() {
                Some(path) => {
                    cx.rec.write(path, &csv)?;
                    print!("{fits}");
                }
                None => print!("{csv}\n{fits}"),
            }
            0
        }
        Cmd::Mc {
            common,
            config: cfg_path,
            svg,
            trajectories,
            sequential,
        } => {
            let mut cfg = match &cfg_path {
                Some(p) => {
                    cx.rec.input(p)?;
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<MonteCarloConfig>(&text).map_err(|e| config(format!("{}: {e}", p.display())))?
                }
                None => MonteCarloConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(n) = trajectories {
                cfg.trajectories = n;
            }
            cx.rec.seed(cfg.seed);
            let r = monte_carlo(&cfg, exec(sequential)).map_err(config)?;
            cx.emit(common.out.as_deref(), &r.to_csv())?;
            if let Some(p) = &svg {
                cx.rec.write(p, &r.to_svg())?;
            }
            0
        }
        Cmd::DecRun {
            input,
            common,
            policy,
            inject_eps,
            seeds,
            compare,
            budget,
            trace,
            sequential,
        } => {
            if !(0.0..=1.0).contains(&inject_eps) {
                return Err(config("--inject-eps must lie in [0, 1]"));
            }
            if seeds == 0 {
                return Err(config("--seeds must be at least 1"));
            }
            let seed = common.seed.unwrap_or(0);
            cx.rec.seed(seed);
            let prog = cx.program(&input)?;
            let db = cx.rules(&common)?;
            let pol = match &policy {
                Some(p) => {
                    cx.rec.input(p)?;
                    CorrectionPolicy::load(p).map_err(|e| config(format!("{}: {e}", p.display())))?
                }
                None => CorrectionPolicy::default(),
            };
            let plan = cx.compile(&prog, &common)?;
            let inject = if inject_eps > 0.0 {
                InjectorMode::Bernoulli { eps: inject_eps }
            } else {
                InjectorMode::None
            };
            if compare {
                let c = compare_paired(&plan, &db, &pol, inject_eps, seeds, seed, budget, exec(sequential));
                let mut table = String::from("eps,seeds,q_out_rate_dec,q_out_rate_no_dec,only_dec,only_no_dec,p_value\n");
                let _ = writeln!(
                    table,
                    "{},{},{},{},{},{},{:e}",
                    c.eps,
                    c.seeds,
                    c.rate_with(),
                    c.rate_without(),
                    c.only_with,
                    c.only_without,
                    c.p_value
                );
                cx.emit(common.out.as_deref(), &table)?;
                0
            } else if seeds == 1 {
                let t = run_plan_with_dec(&plan, &db, &pol, inject, seed, budget);
                if let Some(p) = &trace {
                    cx.rec.write(p, &t.to_jsonl())?;
                }
                let mut s = summary(&prog, &t);
                s["dec"] = serde_json::to_value(DecOutcome::of(&t))?;
                cx.emit(common.out.as_deref(), &pretty(&s))?;
                halt_code(t.halt.kind)
            } else {
                let outs = exec(sequential).map(seeds, |i| {
                    let t = run_plan_with_dec(&plan, &db, &pol, inject.clone(), seed.wrapping_add(i as u64), budget);
                    DecOutcome::of(&t)
                });
                let q_out = outs.iter().filter(|o| o.halt == Some(HaltKind::Out)).count();
                let s = json!({
                    "eps": inject_eps,
                    "seeds": seeds,
                    "q_out_rate": q_out as f64 / seeds as f64,
                    "reverts": outs.iter().map(|o| o.reverts).sum::<usize>(),
                    "tunes": outs.iter().map(|o| o.tunes).sum::<usize>(),
                    "redoses": outs.iter().map(|o| o.redoses).sum::<usize>(),
                });
                cx.emit(common.out.as_deref(), &pretty(&s))?;
                0
            }
        }
    };
    cx.rec.finish()?;
    Ok(code)
}
