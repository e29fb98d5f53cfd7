use std::fmt::Write;

use super::DependencyGraph;

/// Graphviz rendering: one node per position, one edge per dependency
/// (`target -> dep`), smoothing duplicates as dashed `sN` nodes. Nodes and
/// edges are emitted in ascending order.
pub fn export_dot(g: &DependencyGraph) -> String {
    let mut out = String::new();
    out.push_str("digraph dependencies {\n");
    out.push_str("  rankdir=LR;\n");
    for p in 0..g.n_positions() {
        if g.is_given(p) {
            writeln!(out, "  {p} [label=\"{p}\", shape=box];").unwrap();
        } else {
            writeln!(out, "  {p} [label=\"{p}\"];").unwrap();
        }
    }
    for &d in g.duplicates() {
        writeln!(out, "  s{d} [label=\"{d}'\", style=dashed];").unwrap();
    }
    for (t, deps) in g.deps() {
        for d in deps {
            writeln!(out, "  {t} -> {d};").unwrap();
        }
    }
    for &d in g.duplicates() {
        for p in 0..g.n_positions() {
            writeln!(out, "  s{d} -> {p} [style=dashed];").unwrap();
        }
    }
    out.push_str("}\n");
    out
}
