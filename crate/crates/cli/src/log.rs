//! `level key=value` lines on stderr.

use std::fmt::Display;

fn quote(v: &str) -> String {
    if !v.is_empty() && !v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        v.to_string()
    } else {
        format!("{v:?}")
    }
}

/// Formats one log line (no trailing newline).
pub fn line(level: &str, event: &str, fields: &[(&str, &dyn Display)]) -> String {
    let mut s = format!("{level} event={event}");
    for (k, v) in fields {
        s.push(' ');
        s.push_str(k);
        s.push('=');
        s.push_str(&quote(&v.to_string()));
    }
    s
}

pub fn info(event: &str, fields: &[(&str, &dyn Display)]) {
    eprintln!("{}", line("info", event, fields));
}

pub fn warn(event: &str, fields: &[(&str, &dyn Display)]) {
    eprintln!("{}", line("warn", event, fields));
}
