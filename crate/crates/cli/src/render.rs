//! Attribution artifacts: Graphviz DOT and TSV.

use std::fmt::Write as _;

use ranlab::decomposition::Attribution;

/// Column set of the TSV artifact; bump the version when it changes.
pub const TSV_VERSION: &str = "# ranlab-trace v1";
pub const TSV_COLUMNS: [&str; 6] = ["t", "token", "v_t", "predecessor_token", "component_index", "weight"];

/// Backslash escapes for characters that would break a TSV row.
pub fn escape_tsv(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Contents of a double-quoted DOT string.
pub fn escape_dot(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// One node per token (`n{t}`, label `"t:token"`), one edge `v_t → t` per
/// attributed position labeled with the winning weight.
pub fn dot(tokens: &[String], attributions: &[Attribution]) -> String {
    let mut out = String::from("digraph attribution {\n");
    for (i, tok) in tokens.iter().enumerate() {
        let t = i + 1;
        let _ = writeln!(out, "  n{t} [label=\"{}\"];", escape_dot(&format!("{t}:{tok}")));
    }
    for a in attributions {
        let _ = writeln!(out, "  n{} -> n{} [label=\"{:?}\"];", a.predecessor, a.step, a.value);
    }
    out.push_str("}\n");
    out
}

pub fn tsv(tokens: &[String], attributions: &[Attribution]) -> String {
    let mut out = format!("{TSV_VERSION}\n{}\n", TSV_COLUMNS.join("\t"));
    for a in attributions {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:?}",
            a.step,
            escape_tsv(&tokens[a.step - 1]),
            a.predecessor,
            escape_tsv(&tokens[a.predecessor - 1]),
            a.component,
            a.value
        );
    }
    out
}
