//! Synthetic mixtures and noise-level estimation.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::datamodel::{ConcentrationMatrix, DatasetBundle, EndmemberMatrix, SpectraMatrix};
use crate::error::{Error, Result};
use crate::linalg::angle_deg;

/// Minimum pairwise spectral angle between generated endmembers.
pub const MIN_ENDMEMBER_SAD_DEG: f64 = 10.0;
const MAX_SPECTRA_ATTEMPTS: usize = 100;
const MAX_DIRICHLET_DRAWS: usize = 1_000_000;

/// Shape of the Gaussian peaks that make up each synthetic endmember.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakSpec {
    pub min_peaks: usize,
    pub max_peaks: usize,
    /// Standard deviation range of a peak, in channels.
    pub min_width: f64,
    pub max_width: f64,
}

impl PeakSpec {
    pub fn for_channels(n_channels: usize) -> Self {
        let l = n_channels as f64;
        Self {
            min_peaks: 3,
            max_peaks: 8,
            min_width: (0.005 * l).max(1.0),
            max_width: (0.03 * l).max(2.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.min_peaks == 0 || self.min_peaks > self.max_peaks {
            return Err(Error::InvalidParameter(format!(
                "peak count range {}..={} is empty",
                self.min_peaks, self.max_peaks
            )));
        }
        if !(self.min_width > 0.0 && self.min_width <= self.max_width && self.max_width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "peak width range [{}, {}] is invalid",
                self.min_width, self.max_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_spectra: usize,
    pub n_channels: usize,
    pub n_endmembers: usize,
    /// `f64::INFINITY` disables the noise.
    pub snr_db: f64,
    pub dirichlet_alpha: Vec<f64>,
    /// Rows whose largest concentration exceeds this are redrawn.
    pub purity_cap: Option<f64>,
    pub seed: u64,
    pub peak_spec: PeakSpec,
    /// Replace K randomly placed rows with exactly pure pixels.
    pub plant_pure: bool,
    /// Rescale the endmembers so that the noise variance implied by
    /// `snr_db` equals this value.
    pub target_noise_variance: Option<f64>,
}

impl SynthConfig {
    /// Uniform Dirichlet mixtures at 20 dB with pure pixels present.
    pub fn new(n_spectra: usize, n_channels: usize, n_endmembers: usize, seed: u64) -> Self {
        Self {
            n_spectra,
            n_channels,
            n_endmembers,
            snr_db: 20.0,
            dirichlet_alpha: vec![1.0; n_endmembers],
            purity_cap: None,
            seed,
            peak_spec: PeakSpec::for_channels(n_channels),
            plant_pure: true,
            target_noise_variance: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_spectra == 0 || self.n_channels < 2 || self.n_endmembers == 0 {
            return Err(Error::InvalidParameter(format!(
                "invalid dataset size N={} L={} K={}",
                self.n_spectra, self.n_channels, self.n_endmembers
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidParameter("SNR is NaN".into()));
        }
        if self.dirichlet_alpha.len() != self.n_endmembers {
            return Err(Error::Dimension(format!(
                "{} Dirichlet parameters for {} endmembers",
                self.dirichlet_alpha.len(),
                self.n_endmembers
            )));
        }
        if self.dirichlet_alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(
                "Dirichlet parameters must be positive".into(),
            ));
        }
        if let Some(cap) = self.purity_cap {
            if !(cap > 0.0 && cap <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "purity cap {cap} outside (0, 1]"
                )));
            }
            if self.plant_pure && cap < 1.0 {
                return Err(Error::InvalidParameter(
                    "planted pure pixels contradict a purity cap".into(),
                ));
            }
        }
        if let Some(v) = self.target_noise_variance {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "target noise variance {v} must be positive"
                )));
            }
        }
        self.peak_spec.validate()
    }
}

fn peak_curve(n_channels: usize, spec: &PeakSpec, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let l = n_channels as f64;
    let n_peaks = rng.random_range(spec.min_peaks..=spec.max_peaks);
    let mut curve = DVector::<f64>::zeros(n_channels);
    for _ in 0..n_peaks {
        let center = rng.random_range(0.05 * l..=0.95 * l);
        let width = if spec.min_width == spec.max_width {
            spec.min_width
        } else {
            rng.random_range(spec.min_width..spec.max_width)
        };
        let amp = rng.random_range(0.2..=1.0);
        for (i, v) in curve.iter_mut().enumerate() {
            let z = (i as f64 - center) / width;
            *v += amp * (-0.5 * z * z).exp();
        }
    }
    let max = curve.max();
    curve / max
}

/// Draws K endmembers made of Gaussian peaks, each scaled to unit maximum,
/// with every pair at least [`MIN_ENDMEMBER_SAD_DEG`] apart.
pub fn generate_pure_spectra(
    n_channels: usize,
    n_endmembers: usize,
    peak_spec: &PeakSpec,
    seed: u64,
) -> Result<EndmemberMatrix> {
    if n_endmembers == 0 {
        return Err(Error::InvalidParameter("need at least one endmember".into()));
    }
    if n_channels < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 channels, got {n_channels}"
        )));
    }
    peak_spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = DMatrix::zeros(n_channels, n_endmembers);
    for k in 0..n_endmembers {
        let mut accepted = false;
        for _ in 0..MAX_SPECTRA_ATTEMPTS {
            let curve = peak_curve(n_channels, peak_spec, &mut rng);
            let far_enough = (0..k).all(|j| {
                angle_deg(curve.as_slice(), s.column(j).as_slice()) >= MIN_ENDMEMBER_SAD_DEG
            });
            if far_enough {
                s.set_column(k, &curve);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::Numerical(format!(
                "could not draw endmember {k} at least {MIN_ENDMEMBER_SAD_DEG} degrees from the others"
            )));
        }
    }
    EndmemberMatrix::new(s)
}

/// Mixes `endmembers` with Dirichlet abundances and adds white Gaussian
/// noise at the configured SNR.
pub fn generate_dataset(endmembers: &EndmemberMatrix, config: &SynthConfig) -> Result<DatasetBundle> {
    config.validate()?;
    if endmembers.n_channels() != config.n_channels || endmembers.n_endmembers() != config.n_endmembers {
        return Err(Error::Dimension(format!(
            "endmembers are {}×{}, config asks for L={} K={}",
            endmembers.n_channels(),
            endmembers.n_endmembers(),
            config.n_channels,
            config.n_endmembers
        )));
    }
    let (n, l, k) = (config.n_spectra, config.n_channels, config.n_endmembers);
    if config.plant_pure && n < k {
        return Err(Error::InvalidParameter(format!(
            "cannot plant {k} pure pixels among {n} spectra"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gammas = config
        .dirichlet_alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::InvalidParameter(e.to_string())))
        .collect::<Result<Vec<_>>>()?;

    let mut c = DMatrix::zeros(n, k);
    let mut draws = 0usize;
    let mut row = vec![0.0; k];
    for i in 0..n {
        loop {
            draws += 1;
            if draws > MAX_DIRICHLET_DRAWS {
                return Err(Error::Numerical(format!(
                    "purity cap {:?} rejected more than {MAX_DIRICHLET_DRAWS} Dirichlet draws",
                    config.purity_cap
                )));
            }
            let mut sum = 0.0;
            for (v, g) in row.iter_mut().zip(&gammas) {
                *v = g.sample(&mut rng);
                sum += *v;
            }
            if !(sum > 0.0) {
                continue;
            }
            row.iter_mut().for_each(|v| *v /= sum);
            let max = row.iter().cloned().fold(0.0, f64::max);
            if config.purity_cap.is_none_or(|cap| max <= cap) {
                break;
            }
        }
        for (j, v) in row.iter().enumerate() {
            c[(i, j)] = *v;
        }
    }
    if config.plant_pure {
        let positions = sample(&mut rng, n, k);
        for (j, pos) in positions.iter().enumerate() {
            c.row_mut(pos).fill(0.0);
            c[(pos, j)] = 1.0;
        }
    }

    let mut s = endmembers.values().clone();
    let mut clean = &c * s.transpose();
    let snr_linear = 10f64.powf(config.snr_db / 10.0);
    let mut sigma2 = clean.norm_squared() / ((n * l) as f64 * snr_linear);
    if let Some(target) = config.target_noise_variance {
        if sigma2 > 0.0 {
            let scale = (target / sigma2).sqrt();
            s *= scale;
            clean *= scale;
            sigma2 = target;
        }
    }
    let mut y = clean;
    if sigma2 > 0.0 {
        let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
        for v in y.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    DatasetBundle::new(
        SpectraMatrix::new(y)?,
        Some(ConcentrationMatrix::new(c)?),
        Some(EndmemberMatrix::new(s)?),
        Some(sigma2),
        config.seed,
    )
}

/// Pure spectra followed by a mixture dataset, both derived from `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<DatasetBundle> {
    config.validate()?;
    let s = generate_pure_spectra(
        config.n_channels,
        config.n_endmembers,
        &config.peak_spec,
        config.seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    generate_dataset(&s, config)
}

/// Rows of the projection onto polynomials of degree ≤ `order` sampled at
/// `window` equispaced points. Row i gives the weights that evaluate the
/// least-squares fit at position i.
fn savgol_projection(order: usize, window: usize) -> DMatrix<f64> {
    let half = (window / 2) as f64;
    let v = DMatrix::from_fn(window, order + 1, |i, p| {
        let x = (i as f64 - half) / half.max(1.0);
        x.powi(p as i32)
    });
    let gram = v.tr_mul(&v);
    let inv = gram
        .cholesky()
        .expect("Vandermonde Gram of distinct points is positive definite")
        .inverse();
    &v * inv * v.transpose()
}

/// Savitzky–Golay smoothing. Interior samples take the value at the
/// centre of the local least-squares polynomial; the first and last
/// `window/2` samples are evaluated on the fit of the first and last window.
pub fn savitzky_golay(y: &DVector<f64>, order: usize, window: usize) -> Result<DVector<f64>> {
    if window % 2 == 0 || window <= order {
        return Err(Error::InvalidParameter(format!(
            "window {window} must be odd and larger than the order {order}"
        )));
    }
    let n = y.len();
    if n < window {
        return Err(Error::InvalidParameter(format!(
            "signal of length {n} is shorter than the window {window}"
        )));
    }
    let h = savgol_projection(order, window);
    let half = window / 2;
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let (start, row) = if i < half {
            (0, i)
        } else if i + half >= n {
            (n - window, i + window - n)
        } else {
            (i - half, half)
        };
        let mut acc = 0.0;
        for j in 0..window {
            acc += h[(row, j)] * y[start + j];
        }
        out[i] = acc;
    }
    Ok(out)
}

/// Noise variance estimate from the residuals of cubic Savitzky–Golay
/// smoothing (window 5): per spectrum, the median of the sample variances
/// over consecutive segments of `segment_len` channels, then the mean over
/// spectra. Any trailing partial segment is ignored.
pub fn estimate_noise_variance(spectra: &SpectraMatrix, segment_len: usize) -> Result<f64> {
    let l = spectra.n_channels();
    if segment_len < 2 {
        return Err(Error::InvalidParameter(format!(
            "segment length {segment_len} must be at least 2"
        )));
    }
    if l < segment_len {
        return Err(Error::InvalidParameter(format!(
            "{l} channels are fewer than the segment length {segment_len}"
        )));
    }
    let q = l / segment_len;
    let mut total = 0.0;
    for i in 0..spectra.n_pixels() {
        let y = spectra.spectrum(i);
        let residual = &y - savitzky_golay(&y, 3, 5)?;
        let mut vars: Vec<f64> = (0..q)
            .map(|s| {
                let seg = residual.rows(s * segment_len, segment_len);
                let mean = seg.mean();
                seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (segment_len - 1) as f64
            })
            .collect();
        vars.sort_by(f64::total_cmp);
        let median = if q % 2 == 1 {
            vars[q / 2]
        } else {
            0.5 * (vars[q / 2 - 1] + vars[q / 2])
        };
        total += median;
    }
    Ok(total / spectra.n_pixels() as f64)
}
