//! Constrained regression from a subspace estimate back to nonnegative
//! full-space pure spectra.
//!
//! Given regressors `Y` (L×P, measured spectra as columns) and their
//! reductions `Ỹ` (2M×P), solves
//!
//! ```text
//! min_R ‖Ỹ R − S̃‖²_F   subject to   Y R ≥ 0
//! ```
//!
//! by ADMM on the split `U = Y R`, `U ≥ 0`. The R-step matrix
//! `2ỸᵀỸ + ρYᵀY` never changes along a stream and is factored once.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::datamodel::SpectraMatrix;
use crate::dimred::FourierBasis;
use crate::error::{Error, Result};
use crate::linalg::spd_condition_number;

const MAX_CONDITION: f64 = 1e12;
const WARN_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    pub max_iters: usize,
    /// Early exit once `‖U − YR‖_F` drops to this value; 0 runs the full
    /// iteration budget.
    pub primal_tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 50,
            primal_tol: 0.0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter(format!("ADMM step {} must be > 0", self.rho)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("ADMM needs at least one iteration".into()));
        }
        if !(self.primal_tol >= 0.0) {
            return Err(Error::InvalidParameter("primal tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

/// The fixed regressors and the cached factorization of the R-step system.
#[derive(Debug, Clone)]
pub struct RegressorSet {
    full: DMatrix<f64>,
    reduced: DMatrix<f64>,
    rho: f64,
    system: Cholesky<f64, Dyn>,
    condition: f64,
}

impl RegressorSet {
    /// Builds the regressor cache from the first spectra of a stream.
    pub fn new(regressors: &SpectraMatrix, basis: &FourierBasis, rho: f64) -> Result<Self> {
        let full = regressors.values().transpose();
        let reduced = basis.reduce_columns(&full)?;
        Self::from_parts(full, reduced, rho)
    }

    /// Builds the cache from explicit `L×P` and `2M×P` regressor matrices.
    pub fn from_parts(full: DMatrix<f64>, reduced: DMatrix<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!("ADMM step {rho} must be > 0")));
        }
        if full.ncols() != reduced.ncols() {
            return Err(Error::Dimension(format!(
                "{} full-space regressors but {} reduced ones",
                full.ncols(),
                reduced.ncols()
            )));
        }
        let a = system_matrix(&full, &reduced, rho);
        let condition = spd_condition_number(&a);
        if condition > MAX_CONDITION {
            return Err(Error::Numerical(format!(
                "regression system is singular (condition number {condition:.3e}); \
                 increase the number of regressors or use less collinear spectra"
            )));
        }
        if condition > WARN_CONDITION {
            log::warn!("regression system is ill-conditioned (condition number {condition:.3e})");
        }
        let system = Cholesky::new(a)
            .ok_or_else(|| Error::Numerical("regression system is not positive definite".into()))?;
        Ok(Self {
            full,
            reduced,
            rho,
            system,
            condition,
        })
    }

    /// `Y`, L×P.
    pub fn full_space(&self) -> &DMatrix<f64> {
        &self.full
    }

    /// `Ỹ`, 2M×P.
    pub fn reduced_space(&self) -> &DMatrix<f64> {
        &self.reduced
    }

    pub fn n_regressors(&self) -> usize {
        self.full.ncols()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// `‖Ỹ R − S̃‖²_F`.
    pub fn objective(&self, r: &DMatrix<f64>, target: &DMatrix<f64>) -> f64 {
        (&self.reduced * r - target).norm_squared()
    }
}

fn system_matrix(full: &DMatrix<f64>, reduced: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let mut a = reduced.tr_mul(reduced) * 2.0;
    a.gemm_tr(rho, full, full, 1.0);
    a
}

/// Dual state carried between solves when warm starting.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmWarmStart {
    pub u: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct RegressionSolution {
    /// P×K regression matrix.
    pub r: DMatrix<f64>,
    /// `max(0, Y R)`, L×K.
    pub s_plus: DMatrix<f64>,
    pub warm: AdmmWarmStart,
    pub iterations: usize,
    /// `‖U − Y R‖_F` at exit.
    pub primal_residual: f64,
    /// Primal residual after every iteration.
    pub residual_history: Vec<f64>,
}

enum Factor<'a> {
    Cached(&'a Cholesky<f64, Dyn>),
    Fresh(nalgebra::LU<f64, Dyn, Dyn>),
}

impl Factor<'_> {
    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Factor::Cached(ch) => Ok(ch.solve(rhs)),
            Factor::Fresh(lu) => lu
                .solve(rhs)
                .ok_or_else(|| Error::Numerical("regression system is singular".into())),
        }
    }
}

/// Solves the nonnegativity-constrained regression with the cached
/// factorization.
pub fn solve_regression(
    regressors: &RegressorSet,
    target: &DMatrix<f64>,
    config: &AdmmConfig,
    warm_start: Option<&AdmmWarmStart>,
) -> Result<RegressionSolution> {
    config.validate()?;
    if (config.rho - regressors.rho).abs() > 0.0 {
        // the cache was built for another step size
        return solve_regression_uncached(regressors, target, config, warm_start);
    }
    admm(regressors, Factor::Cached(&regressors.system), target, config, warm_start)
}

/// Same iteration, but re-factors the R-step system with a dense LU solve.
pub fn solve_regression_uncached(
    regressors: &RegressorSet,
    target: &DMatrix<f64>,
    config: &AdmmConfig,
    warm_start: Option<&AdmmWarmStart>,
) -> Result<RegressionSolution> {
    config.validate()?;
    let a = system_matrix(&regressors.full, &regressors.reduced, config.rho);
    admm(regressors, Factor::Fresh(a.lu()), target, config, warm_start)
}

fn admm(
    regs: &RegressorSet,
    factor: Factor<'_>,
    target: &DMatrix<f64>,
    config: &AdmmConfig,
    warm_start: Option<&AdmmWarmStart>,
) -> Result<RegressionSolution> {
    let y = &regs.full;
    let (l, p) = y.shape();
    if target.nrows() != regs.reduced.nrows() {
        return Err(Error::Dimension(format!(
            "target has {} rows, reduced regressors have {}",
            target.nrows(),
            regs.reduced.nrows()
        )));
    }
    let k = target.ncols();
    if p < k {
        return Err(Error::InvalidParameter(format!(
            "{p} regressors cannot represent {k} endmembers"
        )));
    }
    let rho = config.rho;
    let (mut u, mut lambda) = match warm_start {
        Some(w) => {
            if w.u.shape() != (l, k) || w.lambda.shape() != (l, k) {
                return Err(Error::Dimension("warm start has the wrong shape".into()));
            }
            (w.u.clone(), w.lambda.clone())
        }
        None => (DMatrix::zeros(l, k), DMatrix::zeros(l, k)),
    };

    let fixed = regs.reduced.tr_mul(target) * 2.0;
    let mut r = DMatrix::zeros(p, k);
    let mut yr = DMatrix::zeros(l, k);
    let mut scratch = DMatrix::zeros(l, k);
    let mut history = Vec::with_capacity(config.max_iters);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        // R ← A⁻¹ (Yᵀλ + ρYᵀU + 2ỸᵀS̃)
        scratch.copy_from(&lambda);
        scratch.zip_apply(&u, |a, b| *a += rho * b);
        let mut rhs = fixed.clone();
        rhs.gemm_tr(1.0, y, &scratch, 1.0);
        r = factor.solve(&rhs)?;
        yr.gemm(1.0, y, &r, 0.0);

        // U ← max(0, YR − λ/ρ)
        u.zip_zip_apply(&yr, &lambda, |uij, yrij, lij| *uij = (yrij - lij / rho).max(0.0));

        // λ ← λ + ρ(U − YR)
        scratch.copy_from(&u);
        scratch -= &yr;
        lambda.zip_apply(&scratch, |a, b| *a += rho * b);

        residual = scratch.norm();
        history.push(residual);
        iterations += 1;
        if config.primal_tol > 0.0 && residual <= config.primal_tol {
            break;
        }
    }
    let s_plus = yr.map(|v| v.max(0.0));
    Ok(RegressionSolution {
        r,
        s_plus,
        warm: AdmmWarmStart { u, lambda },
        iterations,
        primal_residual: residual,
        residual_history: history,
    })
}
