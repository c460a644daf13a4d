use std::fmt::Write;

use super::ChemProgram;

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Canonical text for a program: two-space indent, sorted parameter and
/// metadata keys, base units, LF line endings.
pub fn format_program(prog: &ChemProgram) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "procedure {} {{", quote(&prog.name));
    s.push_str("  reagents {\n");
    for r in &prog.reagents {
        let _ = writeln!(
            s,
            "    {}: sp:{} {} @{} {}",
            r.id,
            r.species,
            r.amount,
            r.source_vessel,
            r.role.keyword()
        );
    }
    s.push_str("  }\n");
    s.push_str("  hardware {");
    for h in &prog.hardware_reqs {
        let _ = write!(s, " {h}");
    }
    s.push_str(" }\n");
    s.push_str("  steps {\n");
    for op in &prog.steps {
        let params: Vec<String> = op.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(s, "    {}({})", op.kind.keyword(), params.join(", "));
    }
    s.push_str("  }\n");
    if !prog.metadata.is_empty() {
        s.push_str("  metadata {\n");
        for (k, v) in &prog.metadata {
            let _ = writeln!(s, "    {k} = {}", quote(v));
        }
        s.push_str("  }\n");
    }
    s.push_str("}\n");
    s
}
