//! Truncated-DFT dimensionality reduction.
//!
//! A spectrum `y ∈ ℝᴸ` is mapped to the real and imaginary parts of its
//! first `M` unitary DFT coefficients (harmonics `0..M`). Harmonics other
//! than DC and Nyquist are weighted by √2 so that the squared norm of the
//! reduced vector counts the energy of each conjugate pair; with every
//! unique harmonic retained the map preserves the Euclidean norm.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};

use crate::datamodel::SpectraMatrix;
use crate::error::{Error, Result};

/// Largest useful harmonic count for `n_channels` samples.
pub fn max_harmonics(n_channels: usize) -> usize {
    n_channels / 2 + 1
}

#[derive(Debug, Clone)]
pub struct FourierBasis {
    n_channels: usize,
    n_harmonics: usize,
    /// `cos(2πkn/L)/√L`, one row per harmonic.
    real_rows: DMatrix<f64>,
    /// `-sin(2πkn/L)/√L`, one row per harmonic.
    imag_rows: DMatrix<f64>,
    scale: Vec<f64>,
    /// Scaled `[real; imag]` stack applied by [`FourierBasis::reduce`].
    projection: DMatrix<f64>,
}

impl FourierBasis {
    pub fn new(n_channels: usize, n_harmonics: usize) -> Result<Self> {
        if n_channels < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 channels, got {n_channels}"
            )));
        }
        let max = max_harmonics(n_channels);
        if n_harmonics == 0 || n_harmonics > max {
            return Err(Error::InvalidParameter(format!(
                "harmonic count {n_harmonics} outside 1..={max} for {n_channels} channels"
            )));
        }
        let norm = 1.0 / (n_channels as f64).sqrt();
        let real_rows = DMatrix::from_fn(n_harmonics, n_channels, |k, n| {
            norm * (2.0 * PI * ((k * n) % n_channels) as f64 / n_channels as f64).cos()
        });
        let imag_rows = DMatrix::from_fn(n_harmonics, n_channels, |k, n| {
            if k == 0 || 2 * k == n_channels {
                0.0
            } else {
                -norm * (2.0 * PI * ((k * n) % n_channels) as f64 / n_channels as f64).sin()
            }
        });
        let scale: Vec<f64> = (0..n_harmonics)
            .map(|k| if k == 0 || 2 * k == n_channels { 1.0 } else { SQRT_2 })
            .collect();
        let mut projection = DMatrix::zeros(2 * n_harmonics, n_channels);
        for k in 0..n_harmonics {
            projection.set_row(k, &(real_rows.row(k) * scale[k]));
            projection.set_row(n_harmonics + k, &(imag_rows.row(k) * scale[k]));
        }
        Ok(Self {
            n_channels,
            n_harmonics,
            real_rows,
            imag_rows,
            scale,
            projection,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_harmonics(&self) -> usize {
        self.n_harmonics
    }

    /// Dimension `2M` of the reduced space.
    pub fn reduced_dim(&self) -> usize {
        2 * self.n_harmonics
    }

    pub fn real_rows(&self) -> &DMatrix<f64> {
        &self.real_rows
    }

    pub fn imag_rows(&self) -> &DMatrix<f64> {
        &self.imag_rows
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// The `2M×L` matrix applied by [`FourierBasis::reduce`].
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn reduce(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.n_channels {
            return Err(Error::Dimension(format!(
                "spectrum of length {} for a basis over {} channels",
                y.len(),
                self.n_channels
            )));
        }
        Ok(&self.projection * y)
    }

    /// Reduces every column of an `L×Q` matrix, giving `2M×Q`.
    pub fn reduce_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.n_channels {
            return Err(Error::Dimension(format!(
                "matrix with {} rows for a basis over {} channels",
                m.nrows(),
                self.n_channels
            )));
        }
        Ok(&self.projection * m)
    }

    /// Reduces every spectrum (row) of `spectra`, giving `2M×N`.
    pub fn reduce_spectra(&self, spectra: &SpectraMatrix) -> Result<DMatrix<f64>> {
        if spectra.n_channels() != self.n_channels {
            return Err(Error::Dimension(format!(
                "spectra with {} channels for a basis over {} channels",
                spectra.n_channels(),
                self.n_channels
            )));
        }
        Ok(&self.projection * spectra.values().transpose())
    }
}

/// Convenience constructor matching [`FourierBasis::new`].
pub fn build_basis(n_channels: usize, n_harmonics: usize) -> Result<FourierBasis> {
    FourierBasis::new(n_channels, n_harmonics)
}

/// Total weighted energy of each harmonic summed over all spectra.
fn harmonic_energies(spectra: &SpectraMatrix) -> Result<Vec<f64>> {
    let l = spectra.n_channels();
    let full = FourierBasis::new(l, max_harmonics(l))?;
    let reduced = full.reduce_spectra(spectra)?;
    let m = full.n_harmonics();
    Ok((0..m)
        .map(|k| reduced.row(k).norm_squared() + reduced.row(m + k).norm_squared())
        .collect())
}

/// Smallest `M` whose reduction keeps at least `eta` percent of the energy
/// of the given spectra.
pub fn select_num_harmonics(spectra: &SpectraMatrix, eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta <= 100.0) {
        return Err(Error::InvalidParameter(format!("eta {eta} outside (0, 100]")));
    }
    let l = spectra.n_channels();
    let max = max_harmonics(l);
    if eta >= 100.0 {
        return Ok(max);
    }
    let total = spectra.values().norm_squared();
    let target = eta / 100.0 * total;
    let mut kept = 0.0;
    for (k, e) in harmonic_energies(spectra)?.into_iter().enumerate() {
        kept += e;
        if kept >= target {
            return Ok(k + 1);
        }
    }
    Ok(max)
}

/// Fraction of energy retained by the first `m` harmonics, one entry per
/// `m = 1..=⌊L/2⌋+1`.
pub fn retained_energy_curve(spectra: &SpectraMatrix) -> Result<Vec<f64>> {
    let total = spectra.values().norm_squared();
    let mut kept = 0.0;
    Ok(harmonic_energies(spectra)?
        .into_iter()
        .map(|e| {
            kept += e;
            if total > 0.0 {
                kept / total
            } else {
                1.0
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Unitary DFT by direct complex summation, kept independent of the basis.
    fn dft_oracle(y: &[f64], k: usize) -> (f64, f64) {
        let l = y.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in y.iter().enumerate() {
            let phase = -2.0 * PI * (k as f64) * (n as f64) / l;
            re += v * phase.cos();
            im += v * phase.sin();
        }
        (re / l.sqrt(), im / l.sqrt())
    }

    #[test]
    fn dc_of_constant() {
        let b = build_basis(4, 1).unwrap();
        let r = b.reduce(&DVector::from_vec(vec![1.0; 4])).unwrap();
        assert_abs_diff_eq!(r.as_slice(), &[2.0, 0.0][..], epsilon = 1e-14);
    }

    #[test]
    fn impulse_matches_dense_dft() {
        let b = build_basis(4, 2).unwrap();
        let y = [1.0, 0.0, 0.0, 0.0];
        let r = b.reduce(&DVector::from_row_slice(&y)).unwrap();
        let (re0, im0) = dft_oracle(&y, 0);
        let (re1, im1) = dft_oracle(&y, 1);
        let expected = [re0, SQRT_2 * re1, im0, SQRT_2 * im1];
        assert_abs_diff_eq!(r.as_slice(), &expected[..], epsilon = 1e-14);
        assert_abs_diff_eq!(r[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(r[1], 0.5 * SQRT_2, epsilon = 1e-14);
    }

    #[test]
    fn cosine_has_no_dc() {
        let b = build_basis(8, 2).unwrap();
        let y = DVector::from_fn(8, |n, _| (2.0 * PI * n as f64 / 8.0).cos());
        let r = b.reduce(&y).unwrap();
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-12);
        assert!(r[1].abs() > 1.0);
        let (re1, _) = dft_oracle(y.as_slice(), 1);
        assert_abs_diff_eq!(r[1], SQRT_2 * re1, epsilon = 1e-12);
    }

    #[test]
    fn matches_oracle_on_random_vector() {
        let y: Vec<f64> = (0..11).map(|i| ((i * 37 % 11) as f64).sin() + 0.3).collect();
        let b = build_basis(11, 6).unwrap();
        let r = b.reduce(&DVector::from_row_slice(&y)).unwrap();
        for k in 0..6 {
            let (re, im) = dft_oracle(&y, k);
            let w = if k == 0 { 1.0 } else { SQRT_2 };
            assert_abs_diff_eq!(r[k], w * re, epsilon = 1e-12);
            assert_abs_diff_eq!(r[6 + k], w * im, epsilon = 1e-12);
        }
    }

    #[test]
    fn harmonic_zero_imag_row_is_zero() {
        let b = build_basis(10, 6).unwrap();
        assert!(b.imag_rows().row(0).iter().all(|&v| v == 0.0));
        // Nyquist row for even L
        assert!(b.imag_rows().row(5).iter().all(|&v| v == 0.0));
        assert_eq!(b.scale()[5], 1.0);
    }

    #[test]
    fn rejects_out_of_range_harmonics() {
        assert!(build_basis(4, 0).is_err());
        assert!(build_basis(4, 4).is_err());
        assert!(build_basis(4, 3).is_ok());
        let b = build_basis(4, 2).unwrap();
        assert!(b.reduce(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn zero_maps_to_zero() {
        let b = build_basis(9, 3).unwrap();
        assert!(b.reduce(&DVector::zeros(9)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_spectra_need_one_harmonic() {
        let y = SpectraMatrix::new(DMatrix::from_element(5, 12, 3.0)).unwrap();
        assert_eq!(select_num_harmonics(&y, 99.0).unwrap(), 1);
        assert_eq!(select_num_harmonics(&y, 100.0).unwrap(), 7);
        assert!(select_num_harmonics(&y, 0.0).is_err());
        assert!(select_num_harmonics(&y, 100.5).is_err());
    }

    proptest! {
        #[test]
        fn parseval_at_full_harmonics(l in 2usize..40, seed in 0u64..1000) {
            let y = DVector::from_fn(l, |i, _| (((i as u64 + 1) * (seed + 3)) as f64 * 0.618).sin());
            let b = build_basis(l, max_harmonics(l)).unwrap();
            let r = b.reduce(&y).unwrap();
            prop_assert!((r.norm_squared() - y.norm_squared()).abs() <= 1e-10 * y.norm_squared().max(1.0));
        }

        #[test]
        fn reduce_is_linear(
            a in -5.0..5.0f64, c in -5.0..5.0f64,
            y1 in proptest::collection::vec(-10.0..10.0f64, 16),
            y2 in proptest::collection::vec(-10.0..10.0f64, 16),
        ) {
            let b = build_basis(16, 5).unwrap();
            let y1 = DVector::from_vec(y1);
            let y2 = DVector::from_vec(y2);
            let lhs = b.reduce(&(&y1 * a + &y2 * c)).unwrap();
            let rhs = b.reduce(&y1).unwrap() * a + b.reduce(&y2).unwrap() * c;
            let scale = lhs.norm().max(1.0);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
        }
    }
}
