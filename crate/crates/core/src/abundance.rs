//! Fully constrained least squares: `min ‖y − S c‖²` over the probability
//! simplex, solved by ADMM on the split `c = z`, `z ≥ 0`.
//!
//! The c-step keeps the sum-to-one constraint and is solved in closed form
//! from the KKT system of the equality constraint. After the iteration the
//! support found by ADMM is polished with an exact equality-constrained
//! solve, and the result is projected onto the simplex.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_condition_number;

const ILL_CONDITIONED: f64 = 1e12;
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FclsConfig {
    /// ADMM penalty relative to the mean diagonal of `SᵀS`.
    pub rho: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FclsConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FclsSolution {
    pub c: DVector<f64>,
    pub iterations: usize,
    /// Set when `SᵀS` was ill-conditioned and a ridge term was added.
    pub ill_conditioned: bool,
}

/// Pre-factored solver for a fixed endmember matrix.
#[derive(Debug, Clone)]
pub struct FclsSolver {
    endmembers: DMatrix<f64>,
    gram: DMatrix<f64>,
    /// `(SᵀS + ρI)⁻¹`
    inverse: DMatrix<f64>,
    /// `(SᵀS + ρI)⁻¹ 1`
    inverse_ones: DVector<f64>,
    ones_inverse_ones: f64,
    rho: f64,
    config: FclsConfig,
    ill_conditioned: bool,
}

impl FclsSolver {
    pub fn new(endmembers: &DMatrix<f64>, config: FclsConfig) -> Result<Self> {
        let k = endmembers.ncols();
        if k == 0 {
            return Err(Error::InvalidParameter("no endmembers".into()));
        }
        if !(config.rho > 0.0) || config.max_iters == 0 || !(config.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid FCLS settings {config:?}")));
        }
        let mut gram = endmembers.tr_mul(endmembers);
        let scale = (gram.trace() / k as f64).max(f64::MIN_POSITIVE);
        let ill_conditioned = k > 1 && spd_condition_number(&gram) > ILL_CONDITIONED;
        if ill_conditioned {
            log::warn!("endmember Gram matrix is ill-conditioned, adding a ridge term");
            for i in 0..k {
                gram[(i, i)] += RIDGE * scale;
            }
        }
        let rho = config.rho * scale;
        let mut shifted = gram.clone();
        for i in 0..k {
            shifted[(i, i)] += rho;
        }
        let inverse = shifted
            .try_inverse()
            .ok_or_else(|| Error::Numerical("FCLS system is singular".into()))?;
        let inverse_ones = inverse.column_sum();
        let ones_inverse_ones = inverse_ones.sum();
        Ok(Self {
            endmembers: endmembers.clone(),
            gram,
            inverse,
            inverse_ones,
            ones_inverse_ones,
            rho,
            config,
            ill_conditioned,
        })
    }

    pub fn n_endmembers(&self) -> usize {
        self.endmembers.ncols()
    }

    fn objective(&self, y: &DVector<f64>, c: &DVector<f64>) -> f64 {
        (y - &self.endmembers * c).norm_squared()
    }

    pub fn solve(&self, y: &DVector<f64>) -> Result<FclsSolution> {
        let k = self.n_endmembers();
        if y.len() != self.endmembers.nrows() {
            return Err(Error::Dimension(format!(
                "spectrum of length {} for endmembers with {} channels",
                y.len(),
                self.endmembers.nrows()
            )));
        }
        if k == 1 {
            return Ok(FclsSolution {
                c: DVector::from_element(1, 1.0),
                iterations: 0,
                ill_conditioned: false,
            });
        }
        let sty = self.endmembers.tr_mul(y);
        let y_scale = sty.norm().max(f64::MIN_POSITIVE);

        let mut z = DVector::from_element(k, 1.0 / k as f64);
        let mut u = DVector::zeros(k);
        let mut iterations = 0;
        for _ in 0..self.config.max_iters {
            iterations += 1;
            // c ← argmin ½‖y − Sc‖² + ρ/2‖c − z + u‖²  s.t. 1ᵀc = 1
            let w = &sty + (&z - &u) * self.rho;
            let bw = &self.inverse * w;
            let nu = (1.0 - bw.sum()) / self.ones_inverse_ones;
            let c = bw + &self.inverse_ones * nu;

            let z_prev = z.clone();
            z = (&c + &u).map(|v| v.max(0.0));
            u += &c - &z;

            let primal = (&c - &z).norm();
            let dual = self.rho * (&z - &z_prev).norm();
            if primal <= self.config.tol && dual <= self.config.tol * y_scale {
                break;
            }
        }

        let mut best = project_simplex(&z);
        if let Some(polished) = self.polish(&sty, &best) {
            if self.objective(y, &polished) <= self.objective(y, &best) {
                best = polished;
            }
        }
        Ok(FclsSolution {
            c: best,
            iterations,
            ill_conditioned: self.ill_conditioned,
        })
    }

    /// Exact equality-constrained least squares on the support of `c`,
    /// dropping the most negative coordinate until the solve stays feasible.
    fn polish(&self, sty: &DVector<f64>, c: &DVector<f64>) -> Option<DVector<f64>> {
        let mut support: Vec<usize> = (0..c.len()).filter(|&i| c[i] > 0.0).collect();
        while !support.is_empty() {
            let n = support.len();
            // [G_AA 1; 1ᵀ 0] [c_A; ν] = [Sᵀy_A; 1]
            let mut kkt = DMatrix::zeros(n + 1, n + 1);
            let mut rhs = DVector::zeros(n + 1);
            for (a, &i) in support.iter().enumerate() {
                for (b, &j) in support.iter().enumerate() {
                    kkt[(a, b)] = self.gram[(i, j)];
                }
                kkt[(a, n)] = 1.0;
                kkt[(n, a)] = 1.0;
                rhs[a] = sty[i];
            }
            rhs[n] = 1.0;
            let sol = kkt.lu().solve(&rhs)?;
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let (worst, value) = (0..n)
                .map(|a| (a, sol[a]))
                .min_by(|x, y| x.1.total_cmp(&y.1))
                .expect("nonempty support");
            if value >= 0.0 {
                let mut out = DVector::zeros(c.len());
                for (a, &i) in support.iter().enumerate() {
                    out[i] = sol[a];
                }
                return Some(project_simplex(&out));
            }
            support.remove(worst);
        }
        None
    }
}

/// Abundances of a single spectrum under the sum-to-one and nonnegativity
/// constraints.
pub fn estimate_concentration(
    y: &DVector<f64>,
    endmembers: &DMatrix<f64>,
    config: &FclsConfig,
) -> Result<FclsSolution> {
    if endmembers.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "spectrum of length {} for endmembers with {} channels",
            y.len(),
            endmembers.nrows()
        )));
    }
    FclsSolver::new(endmembers, *config)?.solve(y)
}

/// Abundances for every row of `spectra` (N×L), returned as N×K.
pub fn estimate_concentrations(
    spectra: &DMatrix<f64>,
    endmembers: &DMatrix<f64>,
    config: &FclsConfig,
) -> Result<DMatrix<f64>> {
    let solver = FclsSolver::new(endmembers, *config)?;
    let mut out = DMatrix::zeros(spectra.nrows(), endmembers.ncols());
    for (i, row) in spectra.row_iter().enumerate() {
        let c = solver.solve(&row.transpose())?.c;
        out.set_row(i, &c.transpose());
    }
    Ok(out)
}

/// Euclidean projection onto `{c ≥ 0, Σc = 1}` (sort-and-threshold).
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out = v.map(|x| (x - theta).max(0.0));
    // absorb rounding so the sum is one to machine precision
    let sum = out.sum();
    if sum > 0.0 {
        out /= sum;
    } else {
        out.fill(1.0 / v.len() as f64);
    }
    out
}
