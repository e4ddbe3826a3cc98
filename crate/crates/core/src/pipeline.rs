//! The streaming unmixing loop and the experiment driver around it.
//!
//! [`kf_osu_init`] consumes the first `P` spectra, [`kf_osu_step`] folds in
//! one further spectrum, and [`run_experiment`] replays a dataset in a given
//! acquisition order while recording figures of merit against the ground
//! truth, optionally alongside batch baselines re-run on the growing prefix.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::abundance::{estimate_concentrations, FclsConfig, FclsSolver};
use crate::datamodel::{format_value, ConcentrationMatrix, DatasetBundle, EndmemberMatrix, SpectraMatrix};
use crate::dimred::{build_basis, select_num_harmonics, FourierBasis};
use crate::error::{Error, Result};
use crate::geometric::{vca, VcaConfig};
use crate::kalman::{dl_update, kf_update, rls_update, DlState, FilterState, NoiseConfig, RlsState};
use crate::mcrals::{mcr_als, pca_init, McrConfig};
use crate::metrics::{asad_aligned, reconstruction_error, rmse_concentrations, MetricRecord};
use crate::protocols::AcquisitionOrder;
use crate::regression::{solve_regression, AdmmConfig, RegressorSet};
use crate::synthdata::estimate_noise_variance;

/// Segment length used by the noise-variance estimate.
pub const NOISE_SEGMENT_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Updater {
    Kalman,
    /// Recursive least squares with forgetting factor λ.
    Rls(f64),
    /// Online dictionary learning.
    Dl,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitMethod {
    Vca,
    Provided(EndmemberMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McrInit {
    Pca,
    Vca,
}

/// Batch methods re-run on the acquired prefix every `stride` spectra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub vca: bool,
    pub mcr_als: bool,
    pub stride: usize,
    pub mcr_iters: usize,
    pub mcr_init: McrInit,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            vca: false,
            mcr_als: false,
            stride: 20,
            mcr_iters: 60,
            mcr_init: McrInit::Vca,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_endmembers: usize,
    /// Number of leading spectra used as regressors (`P`).
    pub n_regressors: usize,
    /// Percentage of spectral energy the Fourier subspace must keep.
    pub eta: f64,
    pub sigma_v2: f64,
    pub rho: f64,
    pub admm_iters: usize,
    pub updater: Updater,
    pub init: InitMethod,
    pub seed: u64,
    /// Metrics are computed every `eval_stride` steps (and at the last one).
    pub eval_stride: usize,
    /// Forces the number of harmonics instead of deriving it from `eta`.
    pub m_override: Option<usize>,
    /// Forces σ²ₑ instead of estimating it from the first `P` spectra.
    pub sigma_e2_override: Option<f64>,
    pub baselines: BaselineConfig,
}

impl PipelineConfig {
    pub fn new(n_endmembers: usize) -> Self {
        Self {
            n_endmembers,
            n_regressors: 30,
            eta: 87.0,
            sigma_v2: 1.0,
            rho: 1.0,
            admm_iters: 50,
            updater: Updater::Kalman,
            init: InitMethod::Vca,
            seed: 0,
            eval_stride: 1,
            m_override: None,
            sigma_e2_override: None,
            baselines: BaselineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_endmembers == 0 {
            return bad("K must be at least 1".into());
        }
        if self.n_regressors < self.n_endmembers {
            return bad(format!(
                "P={} regressors cannot represent K={} endmembers",
                self.n_regressors, self.n_endmembers
            ));
        }
        if !(self.eta > 0.0 && self.eta <= 100.0) {
            return bad(format!("eta {} outside (0, 100]", self.eta));
        }
        if !(self.sigma_v2 >= 0.0 && self.sigma_v2.is_finite()) {
            return bad(format!("sigma_v2 {} must be >= 0", self.sigma_v2));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho {} must be > 0", self.rho));
        }
        if self.admm_iters == 0 || self.eval_stride == 0 || self.baselines.stride == 0 {
            return bad("iteration counts and strides must be positive".into());
        }
        if let Updater::Rls(lambda) = self.updater {
            if !(lambda > 0.0 && lambda <= 1.0) {
                return bad(format!("forgetting factor {lambda} outside (0, 1]"));
            }
        }
        if let Some(v) = self.sigma_e2_override {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("sigma_e2 {v} must be > 0"));
            }
        }
        if let InitMethod::Provided(s) = &self.init {
            if s.n_endmembers() != self.n_endmembers {
                return bad(format!(
                    "provided init has {} endmembers, expected {}",
                    s.n_endmembers(),
                    self.n_endmembers
                ));
            }
        }
        Ok(())
    }

    fn admm(&self) -> AdmmConfig {
        AdmmConfig {
            rho: self.rho,
            max_iters: self.admm_iters,
            primal_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum UpdaterState {
    Kalman(FilterState, NoiseConfig),
    Rls(RlsState, f64),
    Dl(DlState),
}

impl UpdaterState {
    fn mean(&self) -> &DVector<f64> {
        match self {
            UpdaterState::Kalman(s, _) => s.mean(),
            UpdaterState::Rls(s, _) => s.mean(),
            UpdaterState::Dl(s) => s.mean(),
        }
    }

    fn reduced_endmembers(&self) -> DMatrix<f64> {
        match self {
            UpdaterState::Kalman(s, _) => s.reduced_endmembers(),
            UpdaterState::Rls(s, _) => s.reduced_endmembers(),
            UpdaterState::Dl(s) => s.reduced_endmembers(),
        }
    }

    fn update(&mut self, y: &DVector<f64>, c: &DVector<f64>) -> Result<()> {
        *self = match self {
            UpdaterState::Kalman(s, noise) => UpdaterState::Kalman(kf_update(s, y, c, noise)?, *noise),
            UpdaterState::Rls(s, lambda) => UpdaterState::Rls(rls_update(s, y, c, *lambda)?, *lambda),
            UpdaterState::Dl(s) => UpdaterState::Dl(dl_update(s, y, c)?),
        };
        Ok(())
    }

    fn set_mean_from_reduced(&mut self, reduced: &DMatrix<f64>) -> Result<()> {
        match self {
            UpdaterState::Kalman(s, _) => s.set_mean_from_reduced(reduced),
            UpdaterState::Rls(s, _) => s.set_mean_from_reduced(reduced),
            UpdaterState::Dl(s) => s.set_mean_from_reduced(reduced),
        }
    }
}

/// Everything carried from one time step to the next.
#[derive(Debug, Clone)]
pub struct OsuState {
    updater: UpdaterState,
    regressors: RegressorSet,
    basis: FourierBasis,
    endmembers: DMatrix<f64>,
    sigma_e2: f64,
    admm: AdmmConfig,
    t: usize,
}

impl OsuState {
    /// Current nonnegative full-resolution estimate, `L×K`.
    pub fn endmembers(&self) -> &DMatrix<f64> {
        &self.endmembers
    }

    /// Posterior mean `vec(S̃)`.
    pub fn mean(&self) -> &DVector<f64> {
        self.updater.mean()
    }

    /// Posterior covariance, when the Kalman updater is in use.
    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        match &self.updater {
            UpdaterState::Kalman(s, _) => Some(s.covariance()),
            _ => None,
        }
    }

    pub fn basis(&self) -> &FourierBasis {
        &self.basis
    }

    pub fn regressors(&self) -> &RegressorSet {
        &self.regressors
    }

    pub fn sigma_e2(&self) -> f64 {
        self.sigma_e2
    }

    /// Number of spectra consumed so far, including the initial `P`.
    pub fn t(&self) -> usize {
        self.t
    }
}

/// Noise variance from the regressor spectra. A zero estimate (noiseless
/// data) is raised to a tiny fraction of the mean signal power so that the
/// innovation covariance stays invertible.
fn noise_variance(first: &SpectraMatrix) -> Result<f64> {
    let est = estimate_noise_variance(first, NOISE_SEGMENT_LEN)?;
    let power = first.values().norm_squared() / first.values().len() as f64;
    let floor = (1e-12 * power).max(f64::MIN_POSITIVE);
    if est < floor {
        log::warn!("estimated noise variance {est:.3e} is negligible, using {floor:.3e}");
    }
    Ok(est.max(floor))
}

/// Sets up the subspace, the regressors, the initial estimate and the prior
/// from the first `P` spectra.
pub fn kf_osu_init(first: &SpectraMatrix, config: &PipelineConfig) -> Result<OsuState> {
    config.validate()?;
    let p = config.n_regressors;
    if first.n_pixels() != p {
        return Err(Error::Dimension(format!(
            "initialization needs exactly P={p} spectra, got {}",
            first.n_pixels()
        )));
    }
    let l = first.n_channels();
    let m = match config.m_override {
        Some(m) => m,
        None => select_num_harmonics(first, config.eta)?,
    };
    let basis = build_basis(l, m)?;
    let sigma_e2 = match config.sigma_e2_override {
        Some(v) => v,
        None => noise_variance(first)?,
    };
    let endmembers = match &config.init {
        InitMethod::Vca => vca(first, &VcaConfig::new(config.n_endmembers, config.seed))?,
        InitMethod::Provided(s) => {
            if s.n_channels() != l {
                return Err(Error::Dimension(format!(
                    "provided endmembers have {} channels, spectra have {l}",
                    s.n_channels()
                )));
            }
            s.clone()
        }
    };
    let reduced = basis.reduce_columns(endmembers.values())?;
    let regressors = RegressorSet::new(first, &basis, config.rho)?;
    let n = reduced.len();
    let mean = DVector::from_column_slice(reduced.as_slice());
    let updater = match config.updater {
        Updater::Kalman => UpdaterState::Kalman(
            FilterState::from_reduced_endmembers(&reduced, config.sigma_v2)?,
            NoiseConfig::new(config.sigma_v2, sigma_e2)?,
        ),
        Updater::Rls(lambda) => {
            let scale = if config.sigma_v2 > 0.0 { config.sigma_v2 } else { 1.0 };
            UpdaterState::Rls(
                RlsState::new(mean, DMatrix::identity(n, n) * scale, reduced.nrows())?,
                lambda,
            )
        }
        Updater::Dl => {
            let c = estimate_concentrations(first.values(), endmembers.values(), &FclsConfig::default())?;
            UpdaterState::Dl(DlState::new(mean, c.tr_mul(&c), reduced.nrows())?)
        }
    };
    Ok(OsuState {
        updater,
        regressors,
        basis,
        endmembers: endmembers.into_inner(),
        sigma_e2,
        admm: config.admm(),
        t: p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Abundances of the new spectrum against the previous estimate.
    pub concentrations: DVector<f64>,
    pub wall_ms: f64,
}

/// Folds one spectrum into the estimate: abundances against the previous
/// estimate, subspace update, nonnegative regression back to full
/// resolution, and re-projection of that estimate into the state mean.
pub fn kf_osu_step(state: &mut OsuState, y: &DVector<f64>) -> Result<StepReport> {
    let start = Instant::now();
    let c = FclsSolver::new(&state.endmembers, FclsConfig::default())?.solve(y)?.c;
    let y_reduced = state.basis.reduce(y)?;
    state.updater.update(&y_reduced, &c)?;
    let target = state.updater.reduced_endmembers();
    let sol = solve_regression(&state.regressors, &target, &state.admm, None)?;
    let mut s_plus = sol.s_plus;
    for k in 0..s_plus.ncols() {
        if s_plus.column(k).iter().all(|&v| v == 0.0) {
            log::warn!("endmember {k} collapsed to zero at t={}; keeping the previous estimate", state.t + 1);
            s_plus.set_column(k, &state.endmembers.column(k));
        }
    }
    let reduced = state.basis.reduce_columns(&s_plus)?;
    state.updater.set_mean_from_reduced(&reduced)?;
    state.endmembers = s_plus;
    state.t += 1;
    Ok(StepReport {
        concentrations: c,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub t: usize,
    pub message: String,
    pub numerical: bool,
}

/// Parameters chosen or estimated during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSnapshot {
    pub config: PipelineConfig,
    pub n_harmonics: usize,
    pub sigma_e2: f64,
}

#[derive(Debug, Clone)]
pub struct BaselineTrace {
    pub name: String,
    pub records: Vec<MetricRecord>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<MetricRecord>,
    /// Wall time of every streaming update, in order.
    pub step_wall_ms: Vec<f64>,
    pub final_endmembers: EndmemberMatrix,
    /// Abundances of every processed spectrum (acquisition order) against
    /// the final endmembers.
    pub final_concentrations: ConcentrationMatrix,
    pub baselines: Vec<BaselineTrace>,
    pub snapshot: RunSnapshot,
    pub aborted: Option<StepFailure>,
}

/// Metrics of the estimate `s_hat` against the acquired prefix.
fn evaluate(
    t: usize,
    prefix: &DMatrix<f64>,
    truth_c: Option<&DMatrix<f64>>,
    truth_s: Option<&DMatrix<f64>>,
    s_hat: &DMatrix<f64>,
    wall_ms: f64,
) -> Result<MetricRecord> {
    let c_hat = estimate_concentrations(prefix, s_hat, &FclsConfig::default())?;
    let re = reconstruction_error(prefix, &c_hat, s_hat)?;
    let (asad_deg, rmse) = match truth_s {
        Some(s) => {
            let (a, perm) = asad_aligned(s_hat, s)?;
            let rmse = match truth_c {
                Some(c) => rmse_concentrations(&c_hat, c, &perm)?,
                None => f64::NAN,
            };
            (a, rmse)
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(MetricRecord {
        t,
        asad_deg,
        rmse,
        re,
        wall_ms,
    })
}

fn is_eval_point(t: usize, first: usize, stride: usize, last: usize) -> bool {
    (t - first) % stride == 0 || t == last
}

/// Replays `dataset` in `order`, initializing on the first `P` ordered
/// spectra and stepping through the rest.
pub fn run_experiment(
    dataset: &DatasetBundle,
    order: &AcquisitionOrder,
    config: &PipelineConfig,
) -> Result<RunTrace> {
    config.validate()?;
    let n_total = dataset.spectra.n_pixels();
    let ordered_order = AcquisitionOrder::new(order.indices().to_vec(), n_total)?;
    let p = config.n_regressors;
    if ordered_order.len() <= p {
        return Err(Error::InvalidParameter(format!(
            "order has {} spectra, more than P={p} are needed",
            ordered_order.len()
        )));
    }
    let y = dataset.spectra.select_rows(ordered_order.indices())?;
    let n = y.n_pixels();
    let truth_c = dataset
        .concentrations
        .as_ref()
        .map(|c| c.select_rows(ordered_order.indices()).into_inner());
    let truth_s = dataset.endmembers.as_ref().map(|s| s.values().clone());
    if let Some(s) = &truth_s {
        if s.ncols() != config.n_endmembers {
            return Err(Error::Dimension(format!(
                "dataset has {} endmembers, config expects {}",
                s.ncols(),
                config.n_endmembers
            )));
        }
    }

    let mut state = kf_osu_init(&y.prefix(p)?, config)?;
    let snapshot = RunSnapshot {
        config: config.clone(),
        n_harmonics: state.basis.n_harmonics(),
        sigma_e2: state.sigma_e2,
    };
    let mut records = Vec::new();
    let mut step_wall_ms = Vec::with_capacity(n - p);
    let mut vca_trace = Vec::new();
    let mut mcr_trace = Vec::new();
    let mut aborted = None;
    let values = y.values();

    for t in (p + 1)..=n {
        let spectrum = values.row(t - 1).transpose();
        let report = match kf_osu_step(&mut state, &spectrum) {
            Ok(r) => r,
            Err(e) => {
                log::error!("update failed at t={t}: {e}");
                aborted = Some(StepFailure {
                    t,
                    message: e.to_string(),
                    numerical: e.is_numerical(),
                });
                break;
            }
        };
        step_wall_ms.push(report.wall_ms);
        let b = &config.baselines;
        let eval_here = is_eval_point(t, p + 1, config.eval_stride, n);
        let baseline_here = (b.vca || b.mcr_als) && is_eval_point(t, p + 1, b.stride, n);
        if !eval_here && !baseline_here {
            continue;
        }
        let prefix = values.rows(0, t).into_owned();
        let c_prefix = truth_c.as_ref().map(|c| c.rows(0, t).into_owned());
        if eval_here {
            records.push(evaluate(
                t,
                &prefix,
                c_prefix.as_ref(),
                truth_s.as_ref(),
                &state.endmembers,
                report.wall_ms,
            )?);
        }
        if baseline_here {
            let prefix_spectra = SpectraMatrix::new(prefix.clone())?;
            if b.vca {
                let start = Instant::now();
                let s = vca(&prefix_spectra, &VcaConfig::new(config.n_endmembers, config.seed))?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                vca_trace.push(evaluate(t, &prefix, c_prefix.as_ref(), truth_s.as_ref(), s.values(), ms)?);
            }
            if b.mcr_als {
                let start = Instant::now();
                let init = match b.mcr_init {
                    McrInit::Pca => pca_init(&prefix_spectra, config.n_endmembers, config.seed)?,
                    McrInit::Vca => vca(&prefix_spectra, &VcaConfig::new(config.n_endmembers, config.seed))?,
                };
                let mut mcfg = McrConfig::new(init);
                mcfg.max_iters = b.mcr_iters;
                let res = mcr_als(&prefix_spectra, &mcfg)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                mcr_trace.push(evaluate(t, &prefix, c_prefix.as_ref(), truth_s.as_ref(), &res.endmembers, ms)?);
            }
        }
    }

    let processed = p + step_wall_ms.len();
    let final_c = estimate_concentrations(&values.rows(0, processed).into_owned(), &state.endmembers, &FclsConfig::default())?;
    let mut baselines = Vec::new();
    if config.baselines.vca {
        baselines.push(BaselineTrace {
            name: "vca".into(),
            records: vca_trace,
        });
    }
    if config.baselines.mcr_als {
        baselines.push(BaselineTrace {
            name: "mcr-als".into(),
            records: mcr_trace,
        });
    }
    Ok(RunTrace {
        records,
        step_wall_ms,
        final_endmembers: EndmemberMatrix::new(state.endmembers)?,
        final_concentrations: ConcentrationMatrix::new(final_c)?,
        baselines,
        snapshot,
        aborted,
    })
}

/// Mean and standard deviation of each metric across replicates at one
/// time index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub n: usize,
    pub asad_mean: f64,
    pub asad_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub re_mean: f64,
    pub re_std: f64,
    pub wall_ms_mean: f64,
    pub wall_ms_std: f64,
}

pub const SUMMARY_HEADER: &str =
    "t,n,asad_mean,asad_std,rmse_mean,rmse_std,re_mean,re_std,wall_ms_mean,wall_ms_std";

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates replicate traces per time index. Each time index is averaged
/// over the traces that contain it; the standard deviation uses `n − 1`.
pub fn summarize(traces: &[Vec<MetricRecord>]) -> Vec<SummaryRow> {
    let mut by_t: std::collections::BTreeMap<usize, Vec<&MetricRecord>> = Default::default();
    for trace in traces {
        for r in trace {
            by_t.entry(r.t).or_default().push(r);
        }
    }
    by_t.into_iter()
        .map(|(t, recs)| {
            let col = |f: fn(&MetricRecord) -> f64| recs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (asad_mean, asad_std) = mean_std(&col(|r| r.asad_deg));
            let (rmse_mean, rmse_std) = mean_std(&col(|r| r.rmse));
            let (re_mean, re_std) = mean_std(&col(|r| r.re));
            let (wall_ms_mean, wall_ms_std) = mean_std(&col(|r| r.wall_ms));
            SummaryRow {
                t,
                n: recs.len(),
                asad_mean,
                asad_std,
                rmse_mean,
                rmse_std,
                re_mean,
                re_std,
                wall_ms_mean,
                wall_ms_std,
            }
        })
        .collect()
}

pub fn write_summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    for r in rows {
        out.push('\n');
        let vals = [
            r.asad_mean,
            r.asad_std,
            r.rmse_mean,
            r.rmse_std,
            r.re_mean,
            r.re_std,
            r.wall_ms_mean,
            r.wall_ms_std,
        ];
        out.push_str(&format!("{},{}", r.t, r.n));
        for v in vals {
            out.push(',');
            out.push_str(&format_value(v));
        }
    }
    out
}

pub fn save_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    fs::write(path, write_summary_csv(rows)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// First time index whose aSAD is at or below `threshold`.
pub fn first_time_below(records: &[MetricRecord], threshold: f64) -> Option<usize> {
    records.iter().find(|r| r.asad_deg <= threshold).map(|r| r.t)
}

/// Median and 95th percentile (nearest rank) of a set of timings.
pub fn timing_quantiles(wall_ms: &[f64]) -> Option<(f64, f64)> {
    if wall_ms.is_empty() {
        return None;
    }
    let mut v = wall_ms.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Some((median, v[rank - 1]))
}
