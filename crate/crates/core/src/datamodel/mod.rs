//! Matrix containers and dataset bundles.
//!
//! Spectra are stored one per row (N×L), concentrations one pixel per row
//! (N×K) and pure spectra one endmember per column (L×K), so that the
//! measured data factor as `Y ≈ C·Sᵀ`.

mod csv;

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use self::csv::{format_value, load_matrix_csv, parse_matrix_csv, save_matrix_csv, write_matrix_csv};

/// Entries above `-NONNEG_TOL` count as nonnegative.
pub const NONNEG_TOL: f64 = 1e-9;
/// Allowed deviation of an abundance row sum from one.
pub const CLOSURE_TOL: f64 = 1e-6;

/// N×L matrix of measured spectra, one pixel per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectraMatrix {
    values: DMatrix<f64>,
}

impl SpectraMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 1 {
            return Err(Error::InvalidData("spectra matrix has no rows".into()));
        }
        if values.ncols() < 2 {
            return Err(Error::InvalidData(format!(
                "spectra need at least 2 channels, got {}",
                values.ncols()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite spectrum entry at flat index {bad}"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn n_pixels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    /// Spectrum `i` as a column vector.
    pub fn spectrum(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("empty row selection".into()));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n_pixels()) {
            return Err(Error::Dimension(format!(
                "row index {r} out of range for {} spectra",
                self.n_pixels()
            )));
        }
        Ok(Self {
            values: self.values.select_rows(rows),
        })
    }

    /// The first `t` spectra.
    pub fn prefix(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.n_pixels() {
            return Err(Error::Dimension(format!(
                "prefix of length {t} from {} spectra",
                self.n_pixels()
            )));
        }
        Ok(Self {
            values: self.values.rows(0, t).into_owned(),
        })
    }
}

/// N×K matrix of abundances; rows are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMatrix {
    values: DMatrix<f64>,
}

impl ConcentrationMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidData("concentration matrix has no columns".into()));
        }
        for (i, row) in values.row_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < -NONNEG_TOL) {
                return Err(Error::InvalidData(format!(
                    "concentration row {i} has invalid entry {v}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > CLOSURE_TOL {
                return Err(Error::InvalidData(format!(
                    "concentration row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn n_pixels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_endmembers(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
        }
    }
}

/// L×K matrix of pure spectra, one endmember per column.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    values: DMatrix<f64>,
}

impl EndmemberMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 || values.nrows() == 0 {
            return Err(Error::InvalidData("empty endmember matrix".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < -NONNEG_TOL) {
            return Err(Error::InvalidData(format!("endmember entry {v} is negative or non-finite")));
        }
        for (k, col) in values.column_iter().enumerate() {
            if col.iter().all(|&v| v <= 0.0) {
                return Err(Error::InvalidData(format!("endmember column {k} is identically zero")));
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn n_channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_endmembers(&self) -> usize {
        self.values.ncols()
    }
}

/// One dataset replicate: measured spectra plus whatever ground truth is
/// known about them.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub spectra: SpectraMatrix,
    pub concentrations: Option<ConcentrationMatrix>,
    pub endmembers: Option<EndmemberMatrix>,
    pub noise_variance_true: Option<f64>,
    pub seed: u64,
}

impl DatasetBundle {
    pub fn new(
        spectra: SpectraMatrix,
        concentrations: Option<ConcentrationMatrix>,
        endmembers: Option<EndmemberMatrix>,
        noise_variance_true: Option<f64>,
        seed: u64,
    ) -> Result<Self> {
        if let Some(c) = &concentrations {
            if c.n_pixels() != spectra.n_pixels() {
                return Err(Error::Dimension(format!(
                    "{} concentration rows for {} spectra",
                    c.n_pixels(),
                    spectra.n_pixels()
                )));
            }
        }
        if let Some(s) = &endmembers {
            if s.n_channels() != spectra.n_channels() {
                return Err(Error::Dimension(format!(
                    "endmembers have {} channels, spectra have {}",
                    s.n_channels(),
                    spectra.n_channels()
                )));
            }
        }
        if let (Some(c), Some(s)) = (&concentrations, &endmembers) {
            if c.n_endmembers() != s.n_endmembers() {
                return Err(Error::Dimension(format!(
                    "concentrations have {} columns, endmembers have {}",
                    c.n_endmembers(),
                    s.n_endmembers()
                )));
            }
        }
        if let Some(v) = noise_variance_true {
            if !(v >= 0.0) {
                return Err(Error::InvalidData(format!("noise variance {v} is negative")));
            }
        }
        Ok(Self {
            spectra,
            concentrations,
            endmembers,
            noise_variance_true,
            seed,
        })
    }

    pub fn n_endmembers(&self) -> Option<usize> {
        self.endmembers
            .as_ref()
            .map(|s| s.n_endmembers())
            .or_else(|| self.concentrations.as_ref().map(|c| c.n_endmembers()))
    }

    /// Writes `Y.csv`, optional `C.csv` / `S.csv`, and `meta.csv` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        save_matrix_csv(self.spectra.values(), &dir.join("Y.csv"))?;
        if let Some(c) = &self.concentrations {
            save_matrix_csv(c.values(), &dir.join("C.csv"))?;
        }
        if let Some(s) = &self.endmembers {
            save_matrix_csv(s.values(), &dir.join("S.csv"))?;
        }
        let mut meta = String::from("key,value\n");
        meta.push_str(&format!("seed,{}\n", self.seed));
        if let Some(v) = self.noise_variance_true {
            meta.push_str(&format!("noise_variance,{}\n", csv::format_value(v)));
        }
        let path = dir.join("meta.csv");
        fs::write(&path, meta).map_err(|source| Error::Io { path, source })
    }

    /// Reads a directory written by [`DatasetBundle::save_dir`]. Only `Y.csv`
    /// is mandatory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let spectra = SpectraMatrix::new(load_matrix_csv(&dir.join("Y.csv"))?)?;
        let c_path = dir.join("C.csv");
        let concentrations = if c_path.exists() {
            Some(ConcentrationMatrix::new(load_matrix_csv(&c_path)?)?)
        } else {
            None
        };
        let s_path = dir.join("S.csv");
        let endmembers = if s_path.exists() {
            Some(EndmemberMatrix::new(load_matrix_csv(&s_path)?)?)
        } else {
            None
        };
        let mut seed = 0;
        let mut noise = None;
        let meta_path = dir.join("meta.csv");
        if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(|source| Error::Io {
                path: meta_path.clone(),
                source,
            })?;
            for (lineno, line) in text.lines().enumerate().skip(1) {
                let Some((key, value)) = line.split_once(',') else {
                    continue;
                };
                let bad = |message: String| Error::Parse {
                    path: meta_path.clone(),
                    line: lineno + 1,
                    message,
                };
                match key.trim() {
                    "seed" => {
                        seed = value
                            .trim()
                            .parse()
                            .map_err(|e| bad(format!("bad seed {value:?}: {e}")))?
                    }
                    "noise_variance" => {
                        noise = Some(
                            value
                                .trim()
                                .parse()
                                .map_err(|e| bad(format!("bad noise variance {value:?}: {e}")))?,
                        )
                    }
                    _ => {}
                }
            }
        }
        Self::new(spectra, concentrations, endmembers, noise, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concentration_rejects_bad_closure() {
        let ok = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 0.0]);
        assert!(ConcentrationMatrix::new(ok).is_ok());
        let bad = DMatrix::from_row_slice(1, 2, &[0.5, 0.5 + 2e-6]);
        assert!(ConcentrationMatrix::new(bad).is_err());
        let neg = DMatrix::from_row_slice(1, 2, &[1.1, -0.1]);
        assert!(ConcentrationMatrix::new(neg).is_err());
    }

    #[test]
    fn endmembers_reject_zero_column_and_negatives() {
        assert!(EndmemberMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0])).is_err());
        assert!(EndmemberMatrix::new(DMatrix::from_row_slice(2, 1, &[1.0, -0.5])).is_err());
        assert!(EndmemberMatrix::new(DMatrix::from_row_slice(2, 1, &[1.0, 0.0])).is_ok());
    }

    #[test]
    fn spectra_need_two_channels() {
        assert!(SpectraMatrix::new(DMatrix::zeros(3, 1)).is_err());
        assert!(SpectraMatrix::new(DMatrix::from_element(1, 2, f64::NAN)).is_err());
        assert!(SpectraMatrix::new(DMatrix::zeros(1, 2)).is_ok());
    }

    #[test]
    fn bundle_checks_dimensions() {
        let y = SpectraMatrix::new(DMatrix::zeros(3, 4)).unwrap();
        let c = ConcentrationMatrix::new(DMatrix::from_element(2, 1, 1.0)).unwrap();
        assert!(DatasetBundle::new(y.clone(), Some(c), None, None, 0).is_err());
        let s = EndmemberMatrix::new(DMatrix::from_element(5, 1, 1.0)).unwrap();
        assert!(DatasetBundle::new(y, None, Some(s), None, 0).is_err());
    }

    #[test]
    fn bundle_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let y = SpectraMatrix::new(DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5])).unwrap();
        let c = ConcentrationMatrix::new(DMatrix::from_row_slice(2, 2, &[0.25, 0.75, 1.0, 0.0])).unwrap();
        let s = EndmemberMatrix::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, 2.0])).unwrap();
        let bundle = DatasetBundle::new(y, Some(c), Some(s), Some(0.125), 42).unwrap();
        bundle.save_dir(dir.path()).unwrap();
        let back = DatasetBundle::load_dir(dir.path()).unwrap();
        assert_eq!(back.spectra, bundle.spectra);
        assert_eq!(back.concentrations, bundle.concentrations);
        assert_eq!(back.endmembers, bundle.endmembers);
        assert_eq!(back.noise_variance_true, Some(0.125));
        assert_eq!(back.seed, 42);
    }
}
