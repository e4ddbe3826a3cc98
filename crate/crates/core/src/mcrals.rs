//! Multivariate curve resolution by alternating least squares.
//!
//! Concentrations are fitted row by row under nonnegativity and closure,
//! spectra channel by channel under nonnegativity. A step is only kept when
//! it does not increase the residual, so the Frobenius residual never goes
//! up between outer iterations.

use nalgebra::{DMatrix, DVector};

use crate::abundance::{FclsConfig, FclsSolver};
use crate::datamodel::{EndmemberMatrix, SpectraMatrix};
use crate::error::{Error, Result};
use crate::geometric::{vca, VcaConfig};
use crate::linalg::{sorted_symmetric_eigen, spd_condition_number};

const RIDGE: f64 = 1e-10;
const STATIONARITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct McrConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the residual falls below this.
    pub rel_tol: f64,
    pub init: EndmemberMatrix,
}

impl McrConfig {
    pub fn new(init: EndmemberMatrix) -> Self {
        Self {
            max_iters: 60,
            rel_tol: 1e-8,
            init,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McrResult {
    /// t×K, rows on the simplex.
    pub concentrations: DMatrix<f64>,
    /// L×K, nonnegative.
    pub endmembers: DMatrix<f64>,
    /// `‖Y − CSᵀ‖_F` after each outer iteration.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Nonnegative least squares in Gram form, `min ½xᵀGx − bᵀx` over `x ≥ 0`
/// (Lawson–Hanson active set). `G` must be positive definite.
pub fn nnls_gram(g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let k = b.len();
    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    let tol = STATIONARITY_TOL * b.amax().max(f64::MIN_POSITIVE);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
        let gp = DMatrix::from_fn(idx.len(), idx.len(), |r, c| g[(idx[r], idx[c])]);
        let bp = DVector::from_fn(idx.len(), |r, _| b[idx[r]]);
        let zp = gp
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&bp))
            .or_else(|| gp.lu().solve(&bp))
            .unwrap_or_else(|| DVector::zeros(idx.len()));
        let mut z = DVector::zeros(k);
        for (r, &i) in idx.iter().enumerate() {
            z[i] = zp[r];
        }
        z
    };
    for _ in 0..(3 * k + 10) {
        let w = b - g * &x;
        let next = (0..k)
            .filter(|&i| !passive[i] && w[i] > tol)
            .max_by(|&a, &c| w[a].total_cmp(&w[c]));
        let Some(j) = next else { break };
        passive[j] = true;
        for _ in 0..(3 * k + 10) {
            let z = solve_passive(&passive);
            if (0..k).all(|i| !passive[i] || z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in 0..k {
                if passive[i] && z[i] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[i]));
                }
            }
            x += (z - &x) * alpha;
            for i in 0..k {
                if passive[i] && x[i] <= 0.0 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    x
}

fn residual(y: &DMatrix<f64>, c: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    (y - c * s.transpose()).norm()
}

fn c_step(y: &DMatrix<f64>, s: &DMatrix<f64>, previous: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let solver = FclsSolver::new(s, FclsConfig::default())?;
    let mut c = DMatrix::zeros(y.nrows(), s.ncols());
    for (i, row) in y.row_iter().enumerate() {
        let yi = row.transpose();
        let mut ci = solver.solve(&yi)?.c;
        if let Some(prev) = previous {
            let old = prev.row(i).transpose();
            if (&yi - s * &old).norm_squared() < (&yi - s * &ci).norm_squared() {
                ci = old;
            }
        }
        c.set_row(i, &ci.transpose());
    }
    Ok(c)
}

fn s_step(y: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let k = c.ncols();
    let mut g = c.tr_mul(c);
    if spd_condition_number(&g) > 1e12 {
        log::warn!("concentration matrix is rank deficient, adding a ridge term");
        let scale = (g.trace() / k as f64).max(f64::MIN_POSITIVE);
        for i in 0..k {
            g[(i, i)] += RIDGE * scale;
        }
    }
    let cty = c.tr_mul(y);
    let mut s = DMatrix::zeros(y.ncols(), k);
    for l in 0..y.ncols() {
        let x = nnls_gram(&g, &cty.column(l).into_owned());
        s.set_row(l, &x.transpose());
    }
    s
}

/// Runs MCR-ALS on the rows of `spectra`.
pub fn mcr_als(spectra: &SpectraMatrix, config: &McrConfig) -> Result<McrResult> {
    let y = spectra.values();
    let k = config.init.n_endmembers();
    if config.max_iters == 0 {
        return Err(Error::InvalidParameter("MCR-ALS needs at least one iteration".into()));
    }
    if config.init.n_channels() != spectra.n_channels() {
        return Err(Error::Dimension(format!(
            "initial endmembers have {} channels, spectra have {}",
            config.init.n_channels(),
            spectra.n_channels()
        )));
    }
    if spectra.n_pixels() < k {
        return Err(Error::InvalidParameter(format!(
            "{} spectra cannot resolve {k} components",
            spectra.n_pixels()
        )));
    }
    let y_norm = y.norm();
    let mut s = config.init.values().clone();
    let mut c = c_step(y, &s, None)?;
    let mut res = residual(y, &c, &s);
    let mut residuals = Vec::with_capacity(config.max_iters);
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        iterations += 1;
        let mut candidate = s_step(y, &c);
        // a component no pixel uses has no effect on the residual; keep its
        // previous spectrum so the endmember matrix stays valid
        for k in 0..candidate.ncols() {
            if candidate.column(k).iter().all(|&v| v == 0.0) {
                candidate.set_column(k, &s.column(k));
            }
        }
        if residual(y, &c, &candidate) <= res {
            s = candidate;
        }
        c = c_step(y, &s, Some(&c))?;
        let next = residual(y, &c, &s);
        residuals.push(next);
        let change = (res - next).abs() / res.max(f64::MIN_POSITIVE);
        res = next;
        if res <= 1e-14 * y_norm || change < config.rel_tol {
            break;
        }
    }
    Ok(McrResult {
        concentrations: c,
        endmembers: s,
        residuals,
        iterations,
    })
}

/// Leading K principal loadings of the uncentered data, each flipped to a
/// positive sum and clamped at zero. If a clamped loading vanishes, VCA on
/// the same data is used instead.
pub fn pca_init(spectra: &SpectraMatrix, n_endmembers: usize, seed: u64) -> Result<EndmemberMatrix> {
    let y = spectra.values();
    if n_endmembers == 0 || n_endmembers > spectra.n_channels() {
        return Err(Error::InvalidParameter(format!(
            "cannot take {n_endmembers} loadings from {} channels",
            spectra.n_channels()
        )));
    }
    let (_, vecs) = sorted_symmetric_eigen(&y.tr_mul(y));
    let mut s = vecs.columns(0, n_endmembers).into_owned();
    for mut col in s.column_iter_mut() {
        if col.sum() < 0.0 {
            col.neg_mut();
        }
        col.apply(|v| *v = v.max(0.0));
    }
    if s.column_iter().any(|col| col.iter().all(|&v| v == 0.0)) {
        log::info!("a clamped PCA loading is empty, initializing with VCA");
        return vca(spectra, &VcaConfig::new(n_endmembers, seed));
    }
    EndmemberMatrix::new(s)
}
