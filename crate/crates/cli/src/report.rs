//! Report documents and their two renderings.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

pub const REPORT_SCHEMA: &str = "das.report.v1";

/// A finished report: the structured document plus its table rendering.
pub struct Report {
    pub doc: Value,
    pub table: String,
}

impl Report {
    pub fn new(kind: &str, body: impl Serialize, table: String) -> Self {
        let mut doc = serde_json::json!({ "schema": REPORT_SCHEMA, "kind": kind });
        let body = serde_json::to_value(body).expect("report bodies serialize");
        if let (Some(dst), Value::Object(src)) = (doc.as_object_mut(), body) {
            dst.extend(src);
        }
        round_floats(&mut doc);
        Self { doc, table }
    }
}

/// Rounds `v` to six significant digits.
pub fn sig6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|f| serde_json::Number::from_f64(sig6(f))) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Six-significant-digit text for table cells.
pub fn cell(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let r = sig6(v);
    let a = r.abs();
    if r == 0.0 || (1e-4..1e7).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:.5e}")
    }
}

pub fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), cell)
}

/// Renders rows under a header, each column right-aligned to its widest
/// entry.
pub fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule);
    for row in rows {
        line(&mut out, row);
    }
    out
}

pub fn notes_block(notes: &[String]) -> String {
    notes.iter().map(|n| format!("note: {n}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.123456789), 0.123457);
        assert_eq!(sig6(68.40000001), 68.4);
        assert_eq!(sig6(-1234567.0), -1234570.0);
        assert_eq!(cell(1e-12), "1.00000e-12");
        assert_eq!(cell(0.5), "0.5");
        assert_eq!(cell(f64::NAN), "NaN");
    }

    #[test]
    fn documents_carry_schema_and_rounded_floats() {
        let r = Report::new("score", serde_json::json!({"x": 1.0 / 3.0, "n": 7}), String::new());
        assert_eq!(r.doc["schema"], REPORT_SCHEMA);
        assert_eq!(r.doc["kind"], "score");
        assert_eq!(r.doc["x"].as_f64(), Some(0.333333));
        assert_eq!(r.doc["n"].as_u64(), Some(7));
    }

    #[test]
    fn tables_align() {
        let t = table(
            &["id".into(), "value".into()],
            &[vec!["a".into(), "1".into()], vec!["long".into(), "22.5".into()]],
        );
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "id    value");
        assert_eq!(lines[2], "a         1");
        assert_eq!(lines[3], "long   22.5");
    }
}
