//! Sequential update of the vectorized subspace pure-spectra estimate.
//!
//! The state `s = vec(S̃)` stacks the `K` reduced endmembers, each of length
//! `m = 2M`. An observation `ỹ = H s + e` with `H = cᵀ ⊗ I_m` never needs
//! `H` in dense form: `H s = Σₖ cₖ s⁽ᵏ⁾` and `Σ Hᵀ = Σₖ cₖ Σ[:, block k]`.
//!
//! Three gain rules share that machinery: the Kalman filter, exponentially
//! weighted recursive least squares, and the online dictionary-learning
//! rule driven by the running Gram matrix of the concentrations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::datamodel::{CLOSURE_TOL, NONNEG_TOL};
use crate::error::{Error, Result};
use crate::linalg::{spd_condition_number, symmetrize};

const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Random-walk and observation noise levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma_v2: f64,
    pub sigma_e2: f64,
}

impl NoiseConfig {
    pub fn new(sigma_v2: f64, sigma_e2: f64) -> Result<Self> {
        if !(sigma_v2 >= 0.0) || !sigma_v2.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma_v2 {sigma_v2} must be >= 0")));
        }
        if !(sigma_e2 > 0.0) || !sigma_e2.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma_e2 {sigma_e2} must be > 0")));
        }
        Ok(Self { sigma_v2, sigma_e2 })
    }
}

/// Gaussian posterior over `vec(S̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    block_len: usize,
    t: usize,
}

impl FilterState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, block_len: usize) -> Result<Self> {
        check_layout(mean.len(), block_len)?;
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "covariance is {}x{}, mean has length {}",
                covariance.nrows(),
                covariance.ncols(),
                mean.len()
            )));
        }
        Ok(Self {
            mean,
            covariance,
            block_len,
            t: 0,
        })
    }

    /// Prior centred on the reduced endmembers (`2M×K`, one per column) with
    /// isotropic covariance `variance·I`.
    pub fn from_reduced_endmembers(reduced: &DMatrix<f64>, variance: f64) -> Result<Self> {
        let n = reduced.len();
        Self::new(
            DVector::from_column_slice(reduced.as_slice()),
            DMatrix::identity(n, n) * variance,
            reduced.nrows(),
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn n_blocks(&self) -> usize {
        self.mean.len() / self.block_len
    }

    /// `unvec` of the mean: the `2M×K` reduced endmember matrix.
    pub fn reduced_endmembers(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.block_len, self.n_blocks(), self.mean.as_slice())
    }

    /// Overwrites the mean with `vec(reduced)`, leaving the covariance alone.
    pub fn set_mean_from_reduced(&mut self, reduced: &DMatrix<f64>) -> Result<()> {
        if reduced.nrows() != self.block_len || reduced.ncols() != self.n_blocks() {
            return Err(Error::Dimension(format!(
                "reduced endmembers {}x{} for a {}x{} state",
                reduced.nrows(),
                reduced.ncols(),
                self.block_len,
                self.n_blocks()
            )));
        }
        self.mean.copy_from_slice(reduced.as_slice());
        Ok(())
    }
}

fn check_layout(len: usize, block_len: usize) -> Result<()> {
    if block_len == 0 || len == 0 || len % block_len != 0 {
        return Err(Error::Dimension(format!(
            "state length {len} is not a positive multiple of block length {block_len}"
        )));
    }
    Ok(())
}

fn check_observation(
    len: usize,
    block_len: usize,
    y: &DVector<f64>,
    c: &DVector<f64>,
    need_closure: bool,
) -> Result<()> {
    let k = len / block_len;
    if y.len() != block_len {
        return Err(Error::Dimension(format!(
            "observation of length {} for blocks of length {block_len}",
            y.len()
        )));
    }
    if c.len() != k {
        return Err(Error::Dimension(format!(
            "{} concentrations for {k} endmembers",
            c.len()
        )));
    }
    if need_closure {
        if let Some(v) = c.iter().find(|v| !v.is_finite() || **v < -NONNEG_TOL) {
            return Err(Error::InvalidParameter(format!("negative concentration {v}")));
        }
        let sum = c.sum();
        if (sum - 1.0).abs() > CLOSURE_TOL {
            return Err(Error::InvalidParameter(format!(
                "concentrations sum to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// `H s = Σₖ cₖ s⁽ᵏ⁾` for `H = cᵀ ⊗ I_m`.
pub fn observe(c: &DVector<f64>, state: &DVector<f64>, block_len: usize) -> DVector<f64> {
    let mut out = DVector::zeros(block_len);
    for (k, &ck) in c.iter().enumerate() {
        if ck != 0.0 {
            out.axpy(ck, &state.rows(k * block_len, block_len), 1.0);
        }
    }
    out
}

/// Dense `cᵀ ⊗ I_m`. Only used to cross-check the block-wise products.
pub fn observation_matrix(c: &DVector<f64>, block_len: usize) -> DMatrix<f64> {
    let k = c.len();
    let mut h = DMatrix::zeros(block_len, block_len * k);
    for (j, &cj) in c.iter().enumerate() {
        for i in 0..block_len {
            h[(i, j * block_len + i)] = cj;
        }
    }
    h
}

/// `P Hᵀ` (n×m) from the column blocks of a symmetric `P`.
fn times_h_transpose(p: &DMatrix<f64>, c: &DVector<f64>, block_len: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p.nrows(), block_len);
    for (k, &ck) in c.iter().enumerate() {
        if ck != 0.0 {
            out += p.columns(k * block_len, block_len) * ck;
        }
    }
    out
}

/// `H B` (m×m) for `B = P Hᵀ`.
fn h_times(b: &DMatrix<f64>, c: &DVector<f64>, block_len: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(block_len, b.ncols());
    for (k, &ck) in c.iter().enumerate() {
        if ck != 0.0 {
            out += b.rows(k * block_len, block_len) * ck;
        }
    }
    out
}

/// Result of one gain computation: `B = P Hᵀ` and the Cholesky factor of
/// `Z = H B + noise·I`.
struct Correction {
    b: DMatrix<f64>,
    z: Cholesky<f64, Dyn>,
}

fn correction(
    p: &DMatrix<f64>,
    c: &DVector<f64>,
    block_len: usize,
    noise: f64,
) -> Result<Correction> {
    let b = times_h_transpose(p, c, block_len);
    let mut z = h_times(&b, c, block_len);
    symmetrize(&mut z);
    for i in 0..block_len {
        z[(i, i)] += noise;
    }
    // λ_min(Z) >= noise and λ_max(Z) <= tr(Z), so the eigen-solve is only
    // needed when that bound is inconclusive.
    if z.trace() / noise > MAX_INNOVATION_CONDITION {
        let cond = spd_condition_number(&z);
        if cond > MAX_INNOVATION_CONDITION {
            return Err(Error::Numerical(format!(
                "innovation covariance is singular (condition number {cond:.3e})"
            )));
        }
    }
    let z = Cholesky::new(z).ok_or_else(|| {
        Error::Numerical("innovation covariance is not positive definite".into())
    })?;
    Ok(Correction { b, z })
}

/// One Kalman predict/correct step with `H = cᵀ ⊗ I_{2M}`.
pub fn kf_update(
    state: &FilterState,
    y_reduced: &DVector<f64>,
    c: &DVector<f64>,
    noise: &NoiseConfig,
) -> Result<FilterState> {
    let m = state.block_len;
    check_observation(state.mean.len(), m, y_reduced, c, true)?;

    let mut predicted = state.covariance.clone();
    for i in 0..predicted.nrows() {
        predicted[(i, i)] += noise.sigma_v2;
    }
    let innovation = y_reduced - observe(c, &state.mean, m);
    let Correction { b, z } = correction(&predicted, c, m, noise.sigma_e2)?;

    // gain = B Z⁻¹; Σ⁺ = Σ_pred − B Z⁻¹ Bᵀ
    let mean = &state.mean + &b * z.solve(&innovation);
    let w = z.solve(&b.transpose());
    predicted.gemm(-1.0, &b, &w, 1.0);
    symmetrize(&mut predicted);

    Ok(FilterState {
        mean,
        covariance: predicted,
        block_len: m,
        t: state.t + 1,
    })
}

/// Recursive least-squares state: estimate and the inverse-information
/// matrix `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    mean: DVector<f64>,
    p: DMatrix<f64>,
    block_len: usize,
    t: usize,
}

impl RlsState {
    pub fn new(mean: DVector<f64>, p: DMatrix<f64>, block_len: usize) -> Result<Self> {
        check_layout(mean.len(), block_len)?;
        if p.nrows() != mean.len() || p.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "P is {}x{}, mean has length {}",
                p.nrows(),
                p.ncols(),
                mean.len()
            )));
        }
        if Cholesky::new(p.clone()).is_none() {
            return Err(Error::InvalidParameter("RLS matrix P must be positive definite".into()));
        }
        Ok(Self {
            mean,
            p,
            block_len,
            t: 0,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn reduced_endmembers(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.block_len, self.mean.len() / self.block_len, self.mean.as_slice())
    }

    pub fn set_mean_from_reduced(&mut self, reduced: &DMatrix<f64>) -> Result<()> {
        if reduced.len() != self.mean.len() || reduced.nrows() != self.block_len {
            return Err(Error::Dimension("reduced endmembers do not match the RLS state".into()));
        }
        self.mean.copy_from_slice(reduced.as_slice());
        Ok(())
    }
}

/// Exponentially weighted RLS step with forgetting factor `lambda`:
/// `P⁺ = λ⁻¹(P − PHᵀ(λI + HPHᵀ)⁻¹HP)`, `s⁺ = s + P⁺Hᵀ(ỹ − Hs)`.
pub fn rls_update(
    state: &RlsState,
    y_reduced: &DVector<f64>,
    c: &DVector<f64>,
    lambda: f64,
) -> Result<RlsState> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidParameter(format!("forgetting factor {lambda} outside (0, 1]")));
    }
    let m = state.block_len;
    check_observation(state.mean.len(), m, y_reduced, c, false)?;
    let residual = y_reduced - observe(c, &state.mean, m);
    let Correction { b, z } = correction(&state.p, c, m, lambda)?;

    // P⁺Hᵀ simplifies to B Z⁻¹.
    let mean = &state.mean + &b * z.solve(&residual);
    let w = z.solve(&b.transpose());
    let mut p = state.p.clone();
    p.gemm(-1.0, &b, &w, 1.0);
    p /= lambda;
    symmetrize(&mut p);
    Ok(RlsState {
        mean,
        p,
        block_len: m,
        t: state.t + 1,
    })
}

/// Online dictionary-learning state: estimate plus `A = Σᵢ cᵢcᵢᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DlState {
    mean: DVector<f64>,
    gram: DMatrix<f64>,
    block_len: usize,
    t: usize,
}

impl DlState {
    pub fn new(mean: DVector<f64>, gram: DMatrix<f64>, block_len: usize) -> Result<Self> {
        check_layout(mean.len(), block_len)?;
        let k = mean.len() / block_len;
        if gram.nrows() != k || gram.ncols() != k {
            return Err(Error::Dimension(format!(
                "Gram matrix is {}x{}, expected {k}x{k}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        Ok(Self {
            mean,
            gram,
            block_len,
            t: 0,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn reduced_endmembers(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.block_len, self.mean.len() / self.block_len, self.mean.as_slice())
    }

    pub fn set_mean_from_reduced(&mut self, reduced: &DMatrix<f64>) -> Result<()> {
        if reduced.len() != self.mean.len() || reduced.nrows() != self.block_len {
            return Err(Error::Dimension("reduced endmembers do not match the DL state".into()));
        }
        self.mean.copy_from_slice(reduced.as_slice());
        Ok(())
    }
}

/// `A⁺ = A + ccᵀ`, `s⁺ = s + ((A⁺⁻¹c) ⊗ I)(ỹ − Hs)`.
pub fn dl_update(state: &DlState, y_reduced: &DVector<f64>, c: &DVector<f64>) -> Result<DlState> {
    let m = state.block_len;
    check_observation(state.mean.len(), m, y_reduced, c, false)?;
    let mut gram = state.gram.clone();
    gram.ger(1.0, c, c, 1.0);
    let weights = match Cholesky::new(gram.clone()) {
        Some(ch) => ch.solve(c),
        None => {
            let mut reg = gram.clone();
            for i in 0..reg.nrows() {
                reg[(i, i)] += 1e-10;
            }
            let lu = reg.lu();
            lu.solve(c).ok_or_else(|| {
                Error::Numerical("regularized concentration Gram matrix is singular".into())
            })?
        }
    };
    let residual = y_reduced - observe(c, &state.mean, m);
    let mut mean = state.mean.clone();
    for (k, &g) in weights.iter().enumerate() {
        mean.rows_mut(k * m, m).axpy(g, &residual, 1.0);
    }
    Ok(DlState {
        mean,
        gram,
        block_len: m,
        t: state.t + 1,
    })
}
