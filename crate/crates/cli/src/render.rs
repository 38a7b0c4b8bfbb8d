//! Attention-difference reports as JSON, self-contained HTML, or ANSI text.

use std::fmt::Write as _;

use hatelens_core::eval::AttentionReport;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenJson {
    pub token: String,
    pub weight_model: f64,
    pub weight_baseline: f64,
    pub diff: f64,
    pub highlighted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleJson {
    pub id: String,
    pub label: u8,
    pub tokens: Vec<TokenJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDocument {
    pub quantile: f64,
    pub examples: Vec<ExampleJson>,
}

impl ExampleJson {
    pub fn new(id: &str, label: u8, report: &AttentionReport) -> ExampleJson {
        ExampleJson {
            id: id.to_string(),
            label,
            tokens: report
                .tokens
                .iter()
                .map(|t| TokenJson {
                    token: t.token.clone(),
                    weight_model: t.weight_model,
                    weight_baseline: t.weight_baseline,
                    diff: t.diff,
                    highlighted: t.highlighted,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Html,
    Ansi,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Html => "html",
            Format::Ansi => "txt",
        }
    }
}

pub fn render(doc: &AttentionDocument, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(doc).expect("attention documents serialize");
            s.push('\n');
            s
        }
        Format::Html => html(doc),
        Format::Ansi => ansi(doc),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Largest absolute difference in the document, used to scale colours.
fn diff_scale(doc: &AttentionDocument) -> f64 {
    doc.examples
        .iter()
        .flat_map(|e| &e.tokens)
        .map(|t| t.diff.abs())
        .fold(0.0, f64::max)
}

/// Red for tokens gaining weight over the baseline, blue for losing;
/// highlighted tokens are bold and outlined.
fn html(doc: &AttentionDocument) -> String {
    let scale = diff_scale(doc);
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Attention difference</title>\n</head>\n");
    out.push_str("<body style=\"font-family: sans-serif; line-height: 2.2; margin: 2em;\">\n");
    let _ = writeln!(
        out,
        "<h1 style=\"font-size: 1.2em;\">[CLS] attention, model minus baseline (highlight above quantile {})</h1>",
        doc.quantile
    );
    for ex in &doc.examples {
        let _ = write!(
            out,
            "<p><span style=\"color: #666; font-size: 0.8em; margin-right: 1em;\">{} (label {})</span>",
            escape(&ex.id),
            ex.label
        );
        for t in &ex.tokens {
            let alpha = if scale > 0.0 { (t.diff.abs() / scale).min(1.0) } else { 0.0 };
            let rgb = if t.diff >= 0.0 { "220, 40, 40" } else { "40, 90, 220" };
            let emphasis = if t.highlighted {
                " font-weight: bold; outline: 2px solid #000;"
            } else {
                ""
            };
            let _ = write!(
                out,
                "<span title=\"model {:.4} baseline {:.4} diff {:+.4}\" style=\"background-color: rgba({rgb}, {alpha:.3}); padding: 0.1em 0.2em; margin: 0 0.1em; border-radius: 3px;{emphasis}\">{}</span>",
                t.weight_model,
                t.weight_baseline,
                t.diff,
                escape(&t.token)
            );
        }
        out.push_str("</p>\n");
    }
    out.push_str("</body>\n</html>\n");
    out
}

fn ansi(doc: &AttentionDocument) -> String {
    const HIGHLIGHT: &str = "\x1b[1;41;97m";
    const GAIN: &str = "\x1b[31m";
    const LOSS: &str = "\x1b[34m";
    const RESET: &str = "\x1b[0m";
    let mut out = String::new();
    for ex in &doc.examples {
        let _ = write!(out, "{} [{}]:", ex.id, ex.label);
        for t in &ex.tokens {
            let style = if t.highlighted {
                HIGHLIGHT
            } else if t.diff > 0.0 {
                GAIN
            } else {
                LOSS
            };
            let _ = write!(out, " {style}{}{RESET}", t.token);
        }
        out.push('\n');
    }
    out
}
