use std::io::Write;
use std::path::Path;

use super::{Dataset, Role};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numkit::Matrix;

/// Formats like C's `printf("%.17g", x)`.
pub fn format_g17(x: f64) -> String {
    const PREC: i32 = 17;
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (PREC - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let sign = if negative { "-" } else { "" };

    if exp < -4 || exp >= PREC {
        let mut m = format!("{}.{}", &digits[..1], &digits[1..]);
        strip_fraction_zeros(&mut m);
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{m}e{esign}{:02}", exp.abs())
    } else {
        let mut s = if exp >= 0 {
            let int_len = (exp + 1) as usize;
            format!("{}.{}", &digits[..int_len], &digits[int_len..])
        } else {
            let zeros = "0".repeat((-exp - 1) as usize);
            format!("0.{zeros}{digits}")
        };
        strip_fraction_zeros(&mut s);
        format!("{sign}{s}")
    }
}

fn strip_fraction_zeros(s: &mut String) {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
}

/// Renders `f0,..,f{d-1},label` CSV with `%.17g` numbers.
pub fn render_table(ds: &Dataset) -> Vec<u8> {
    let mut w = Vec::with_capacity(ds.len() * (ds.dim() + 1) * 20);
    let header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    writeln!(w, "{},label", header.join(",")).expect("writing to memory");
    for (row, label) in ds.inputs.row_iter().zip(&ds.labels) {
        for v in row {
            write!(w, "{},", format_g17(*v)).expect("writing to memory");
        }
        writeln!(w, "{label}").expect("writing to memory");
    }
    w
}

/// Writes [`render_table`] output atomically.
pub fn save_table(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &render_table(ds))
}

/// Reads a CSV written by [`save_table`] (or any file with the same
/// header). The class count is `max(label) + 1`.
pub fn load_table(path: impl AsRef<Path>, role: Role) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let label_col = headers.iter().position(|h| h == "label").ok_or(Error::MissingLabel)?;
    if label_col + 1 != headers.len() {
        return Err(Error::ParseError {
            line: 1,
            msg: "label must be the last column".into(),
        });
    }
    let d = label_col;
    for (j, h) in headers.iter().take(d).enumerate() {
        if h != format!("f{j}") {
            return Err(Error::ParseError {
                line: 1,
                msg: format!("expected header f{j}, found {h:?}"),
            });
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(if rec.len() == d {
                Error::MissingLabel
            } else {
                Error::ParseError {
                    line,
                    msg: format!("expected {} fields, found {}", d + 1, rec.len()),
                }
            });
        }
        for cell in rec.iter().take(d) {
            let v: f64 = cell.parse().map_err(|_| Error::ParseError {
                line,
                msg: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::ParseError {
                    line,
                    msg: format!("non-finite value {cell:?}"),
                });
            }
            data.push(v);
        }
        let raw = &rec[d];
        if raw.is_empty() {
            return Err(Error::MissingLabel);
        }
        let label: usize = raw.parse().map_err(|_| Error::ParseError {
            line,
            msg: format!("label is not a non-negative integer: {raw:?}"),
        })?;
        labels.push(label);
    }
    let n = labels.len();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Matrix::new(n, d, data)?, labels, num_classes, role)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::ParseError {
            line,
            msg: format!("{other:?}"),
        },
    }
}
