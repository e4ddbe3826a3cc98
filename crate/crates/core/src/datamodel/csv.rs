//! Headered CSV matrix format.
//!
//! ```text
//! rows,cols
//! v11,v12,...
//! ...
//! ```
//!
//! Lines starting with `#` before the header are comments. Values are
//! written in the shortest decimal form that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Shortest decimal text that parses back to exactly `v`.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Renders a matrix in the headered CSV format, without a trailing newline.
pub fn write_matrix_csv(matrix: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(16 * matrix.len() + 16);
    let _ = write!(out, "{},{}", matrix.nrows(), matrix.ncols());
    for row in matrix.row_iter() {
        out.push('\n');
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_value(*v));
        }
    }
    out
}

pub fn save_matrix_csv(matrix: &DMatrix<f64>, path: &Path) -> Result<()> {
    if matrix.is_empty() {
        return Err(Error::InvalidParameter("refusing to save an empty matrix".into()));
    }
    fs::write(path, write_matrix_csv(matrix)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matrix_csv(&text, path)
}

/// Parses the headered CSV format. `origin` only labels error messages.
pub fn parse_matrix_csv(text: &str, origin: &Path) -> Result<DMatrix<f64>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (header_line, header) = loop {
        match lines.next() {
            Some((_, l)) if l.trim_start().starts_with('#') => continue,
            Some(h) => break h,
            None => return Err(err(1, "missing `rows,cols` header".into())),
        }
    };
    let dims: Vec<&str> = header.split(',').map(str::trim).collect();
    if dims.len() != 2 {
        return Err(err(header_line, format!("expected `rows,cols` header, got {header:?}")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| err(header_line, format!("bad dimension {s:?}: {e}")))
    };
    let rows = parse_dim(dims[0])?;
    let cols = parse_dim(dims[1])?;

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0usize;
    let mut last_line = header_line;
    for (lineno, line) in lines {
        last_line = lineno;
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err(err(lineno, format!("extra row beyond the declared {rows}")));
        }
        let before = data.len();
        for token in line.split(',') {
            let t = token.trim();
            let v: f64 = t
                .parse()
                .map_err(|_| err(lineno, format!("non-numeric token {t:?}")))?;
            data.push(v);
        }
        let got = data.len() - before;
        if got != cols {
            return Err(err(lineno, format!("expected {cols} values, found {got}")));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(err(
            last_line + 1,
            format!("expected {rows} rows, found {seen}"),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
