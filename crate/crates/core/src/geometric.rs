//! Vertex component analysis.
//!
//! Projects the data onto a K-dimensional signal subspace, then picks K
//! observations one at a time, each maximizing the absolute projection on
//! a random direction orthogonal to the span of the ones already chosen.
//! The selected spectra themselves are returned, so VCA only ever reports
//! measured pixels.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::{EndmemberMatrix, SpectraMatrix};
use crate::error::{Error, Result};
use crate::linalg::sorted_symmetric_eigen;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VcaConfig {
    pub n_endmembers: usize,
    pub seed: u64,
    /// Known SNR in dB; estimated from the data when `None`.
    pub snr_estimate: Option<f64>,
}

impl VcaConfig {
    pub fn new(n_endmembers: usize, seed: u64) -> Self {
        Self {
            n_endmembers,
            seed,
            snr_estimate: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VcaResult {
    pub endmembers: EndmemberMatrix,
    /// Row indices of the selected spectra.
    pub indices: Vec<usize>,
    pub snr_db: f64,
    /// True when fewer than K significant singular values were found.
    pub rank_deficient: bool,
}

/// Runs VCA and returns only the endmember matrix.
pub fn vca(spectra: &SpectraMatrix, config: &VcaConfig) -> Result<EndmemberMatrix> {
    Ok(vca_detailed(spectra, config)?.endmembers)
}

pub fn vca_detailed(spectra: &SpectraMatrix, config: &VcaConfig) -> Result<VcaResult> {
    let p = config.n_endmembers;
    let (n, l) = (spectra.n_pixels(), spectra.n_channels());
    if p == 0 {
        return Err(Error::InvalidParameter("VCA needs at least one endmember".into()));
    }
    if n < p {
        return Err(Error::InvalidParameter(format!(
            "{n} spectra cannot supply {p} endmembers"
        )));
    }
    if p > l {
        return Err(Error::InvalidParameter(format!(
            "{p} endmembers exceed the {l} channels"
        )));
    }
    // L×N, one observation per column
    let r = spectra.values().transpose();
    let nf = n as f64;
    let mean = r.column_mean();
    let mut centered = r.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }

    let (centered_vals, centered_vecs) = sorted_symmetric_eigen(&(&centered * centered.transpose() / nf));
    let tiny = centered_vals[0].abs().max(f64::MIN_POSITIVE) * 1e-12;

    let snr_db = match config.snr_estimate {
        Some(s) => s,
        None => {
            let ud = centered_vecs.columns(0, p).into_owned();
            let xp = ud.tr_mul(&centered);
            let p_y = r.norm_squared() / nf;
            let p_x = xp.norm_squared() / nf + mean.norm_squared();
            let signal = p_x - (p as f64 / l as f64) * p_y;
            let noise = p_y - p_x;
            if noise <= 0.0 {
                f64::INFINITY
            } else {
                10.0 * (signal.max(f64::MIN_POSITIVE) / noise).log10()
            }
        }
    };
    let snr_threshold = 15.0 + 10.0 * (p as f64).log10();

    let (y, rank_deficient) = if snr_db < snr_threshold {
        // projection onto the (p−1)-dim affine subspace, lifted by a constant row
        let d = p - 1;
        let deficient = (0..d).any(|i| centered_vals[i] <= tiny);
        let ud = centered_vecs.columns(0, d).into_owned();
        let x = ud.tr_mul(&centered);
        let c = x
            .column_iter()
            .map(|col| col.norm())
            .fold(0.0f64, f64::max);
        let mut y = DMatrix::zeros(p, n);
        y.rows_mut(0, d).copy_from(&x);
        y.row_mut(d).fill(c);
        (y, deficient)
    } else {
        let (vals, vecs) = sorted_symmetric_eigen(&(&r * r.transpose() / nf));
        let top = vals[0].abs().max(f64::MIN_POSITIVE) * 1e-12;
        let deficient = (0..p).any(|i| vals[i] <= top);
        let ud = vecs.columns(0, p).into_owned();
        let x = ud.tr_mul(&r);
        let u = x.column_mean();
        let mut y = x.clone();
        for (j, mut col) in y.column_iter_mut().enumerate() {
            let denom = u.dot(&x.column(j));
            if denom.abs() > f64::MIN_POSITIVE {
                col /= denom;
            }
        }
        (y, deficient)
    };
    if rank_deficient {
        log::warn!("VCA: data has fewer than {p} significant singular values");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut a = DMatrix::zeros(p, p);
    a[(p - 1, 0)] = 1.0;
    let mut indices = Vec::with_capacity(p);
    for i in 0..p {
        let w = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let pinv = a
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("VCA projection failed: {e}")))?;
        let mut f = &w - &a * (pinv * &w);
        let norm = f.norm();
        if norm > 0.0 {
            f /= norm;
        }
        let v = y.tr_mul(&f);
        // lowest index wins ties
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (j, val) in v.iter().enumerate() {
            if val.abs() > best_val {
                best_val = val.abs();
                best = j;
            }
        }
        indices.push(best);
        a.set_column(i, &y.column(best));
    }

    let mut s = DMatrix::zeros(l, p);
    for (k, &idx) in indices.iter().enumerate() {
        s.set_column(k, &r.column(idx).map(|v| v.max(0.0)));
    }
    // a clamped spectrum that vanished entirely would violate the endmember
    // invariant; give it a floor instead of failing the whole extraction
    for mut col in s.column_iter_mut() {
        if col.iter().all(|&v| v <= 0.0) {
            col.fill(f64::MIN_POSITIVE);
        }
    }
    Ok(VcaResult {
        endmembers: EndmemberMatrix::new(s)?,
        indices,
        snr_db,
        rank_deficient,
    })
}
