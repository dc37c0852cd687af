//! Exit codes, errors and rendering of command summaries.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde_json::{Map, Value};

pub const EXIT_FAILED_CHECK: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] gmip::Error),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: Box<CliError> },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    FailedCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::File { source, .. } => source.exit_code(),
            CliError::FailedCheck(_) => EXIT_FAILED_CHECK,
            CliError::Core(e) => match e {
                gmip::Error::Unreachable { .. } => EXIT_INFEASIBLE,
                gmip::Error::Io(_) | gmip::Error::Json(_) | gmip::Error::TraceParse { .. } => EXIT_IO,
                _ => EXIT_USAGE,
            },
        }
    }

    /// Attaches a file name to errors raised while handling that file.
    pub fn in_file(self, path: &Path) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A JSON number, or a string for non-finite values.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or_else(|| Value::String(nonfinite(x).into()), Value::Number)
}

fn nonfinite(x: f64) -> &'static str {
    if x.is_nan() {
        "nan"
    } else if x > 0.0 {
        "inf"
    } else {
        "-inf"
    }
}

/// `x` with six significant digits, trailing zeros removed.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return nonfinite(x).into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..6).contains(&exp) {
        let s = format!("{:.*}", (5 - exp).max(0) as usize, x);
        // rounding can carry into a new digit, e.g. 9.999995 -> 10.00000
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 6 {
            return sig6(s.parse().unwrap_or(x));
        }
        s
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').unwrap_or((&s, "0"));
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{e}")
    }
}

/// Prints a summary object in the requested format.
///
/// Scalars become `key: value` lines (text) or `key,value` rows (CSV);
/// arrays of objects become tables.
pub fn emit(summary: &Value, format: Format) {
    print!("{}", render(summary, format));
}

pub fn render(summary: &Value, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
            s.push('\n');
            s
        }
        Format::Text => render_flat(summary, false),
        Format::Csv => render_flat(summary, true),
    }
}

fn render_flat(summary: &Value, csv: bool) -> String {
    let empty = Map::new();
    let obj = summary.as_object().unwrap_or(&empty);
    let mut out = String::new();
    let mut tables = Vec::new();
    if csv {
        out.push_str("key,value\n");
    }
    for (k, v) in obj {
        match v {
            Value::Array(rows) if rows.iter().all(Value::is_object) && !rows.is_empty() => tables.push((k, rows)),
            _ if csv => {
                let _ = writeln!(out, "{k},{}", csv_cell(v));
            }
            _ => {
                let _ = writeln!(out, "{k}: {}", text_cell(v));
            }
        }
    }
    for (name, rows) in tables {
        let header: Vec<&String> = rows[0].as_object().map(|o| o.keys().collect()).unwrap_or_default();
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                header
                    .iter()
                    .map(|h| {
                        let v = r.get(h.as_str()).unwrap_or(&Value::Null);
                        if csv {
                            csv_cell(v)
                        } else {
                            text_cell(v)
                        }
                    })
                    .collect()
            })
            .collect();
        out.push('\n');
        if csv {
            let _ = writeln!(out, "# {name}");
            let _ = writeln!(out, "{}", header.iter().map(|h| h.as_str()).collect::<Vec<_>>().join(","));
            for row in cells {
                let _ = writeln!(out, "{}", row.join(","));
            }
        } else {
            let _ = writeln!(out, "{name}:");
            let widths: Vec<usize> = header
                .iter()
                .enumerate()
                .map(|(i, h)| cells.iter().map(|r| r[i].len()).chain([h.len()]).max().unwrap_or(0))
                .collect();
            let line = |items: Vec<&str>| {
                items
                    .iter()
                    .zip(&widths)
                    .map(|(s, w)| format!("{s:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(out, "  {}", line(header.iter().map(|h| h.as_str()).collect()));
            for row in &cells {
                let _ = writeln!(out, "  {}", line(row.iter().map(String::as_str).collect()));
            }
        }
    }
    out
}

fn text_cell(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => sig6(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(text_cell).collect::<Vec<_>>().join(" "),
        other => other.to_string(),
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::String(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(csv_cell).collect::<Vec<_>>().join(" "),
        other => other.to_string(),
    }
}
