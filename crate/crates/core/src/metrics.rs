//! Figures of merit: spectral angles, concentration RMSE, reconstruction
//! error and the PCA lower bound on it.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::datamodel::format_value;
use crate::error::{Error, Result};
use crate::linalg::{angle_deg, sorted_symmetric_eigen};

/// Spectral angle between two nonzero vectors, in degrees.
pub fn sad(s_hat: &[f64], s: &[f64]) -> Result<f64> {
    if s_hat.len() != s.len() {
        return Err(Error::Dimension(format!(
            "vectors of length {} and {}",
            s_hat.len(),
            s.len()
        )));
    }
    if s_hat.iter().all(|&v| v == 0.0) || s.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidData("spectral angle of a zero vector".into()));
    }
    Ok(angle_deg(s_hat, s))
}

/// `cost[(i, j)]` is the angle between estimated column `i` and true column `j`.
pub fn sad_matrix(s_hat: &DMatrix<f64>, s_true: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s_hat.shape() != s_true.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, truth is {:?}",
            s_hat.shape(),
            s_true.shape()
        )));
    }
    let k = s_true.ncols();
    let mut cost = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            cost[(i, j)] = sad(s_hat.column(i).as_slice(), s_true.column(j).as_slice())?;
        }
    }
    Ok(cost)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials). Returns `assign` with `assign[row] = column`.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Matches estimated endmembers to true ones. `perm[k]` is the column of
/// `s_hat` paired with true column `k`; the total angle is minimal.
pub fn align_components(s_hat: &DMatrix<f64>, s_true: &DMatrix<f64>) -> Result<Vec<usize>> {
    let cost = sad_matrix(s_hat, s_true)?;
    // rows of the transposed cost are true components
    Ok(min_cost_assignment(&cost.transpose()))
}

/// Mean spectral angle after optimal alignment, with the alignment.
pub fn asad_aligned(s_hat: &DMatrix<f64>, s_true: &DMatrix<f64>) -> Result<(f64, Vec<usize>)> {
    let cost = sad_matrix(s_hat, s_true)?;
    let perm = min_cost_assignment(&cost.transpose());
    let k = perm.len();
    let total: f64 = perm.iter().enumerate().map(|(j, &i)| cost[(i, j)]).sum();
    Ok((total / k as f64, perm))
}

pub fn asad(s_hat: &DMatrix<f64>, s_true: &DMatrix<f64>) -> Result<f64> {
    Ok(asad_aligned(s_hat, s_true)?.0)
}

/// `sqrt(‖C_true − C_hat·Π‖²_F / (N·K))`, where column `k` of the permuted
/// estimate is column `alignment[k]` of `c_hat`.
pub fn rmse_concentrations(c_hat: &DMatrix<f64>, c_true: &DMatrix<f64>, alignment: &[usize]) -> Result<f64> {
    if c_hat.shape() != c_true.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, truth is {:?}",
            c_hat.shape(),
            c_true.shape()
        )));
    }
    let (n, k) = c_true.shape();
    if alignment.len() != k || alignment.iter().any(|&a| a >= k) {
        return Err(Error::Dimension(format!("alignment {alignment:?} does not fit K={k}")));
    }
    let mut sum = 0.0;
    for (j, &a) in alignment.iter().enumerate() {
        sum += (c_true.column(j) - c_hat.column(a)).norm_squared();
    }
    Ok((sum / (n * k) as f64).sqrt())
}

/// `‖Y − Ĉ·Ŝᵀ‖_F / ‖Y‖_F`.
pub fn reconstruction_error(y: &DMatrix<f64>, c_hat: &DMatrix<f64>, s_hat: &DMatrix<f64>) -> Result<f64> {
    if c_hat.nrows() != y.nrows() || s_hat.nrows() != y.ncols() || c_hat.ncols() != s_hat.ncols() {
        return Err(Error::Dimension(format!(
            "Y is {:?}, C is {:?}, S is {:?}",
            y.shape(),
            c_hat.shape(),
            s_hat.shape()
        )));
    }
    let norm = y.norm();
    if norm == 0.0 {
        return Err(Error::InvalidData("reconstruction error of an all-zero Y".into()));
    }
    Ok((y - c_hat * s_hat.transpose()).norm() / norm)
}

fn principal_axes(gram: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (vals, vecs) = sorted_symmetric_eigen(gram);
    let tiny = vals[0].abs().max(f64::MIN_POSITIVE) * 1e-12;
    if vals[k - 1] <= tiny {
        log::warn!("data rank is below {k}; the PCA bound is exact");
    }
    vecs.columns(0, k).into_owned()
}

fn check_pca_args(y: &DMatrix<f64>, k: usize) -> Result<f64> {
    let (n, l) = y.shape();
    if k == 0 || k > n || k > l {
        return Err(Error::InvalidParameter(format!(
            "PCA bound with K={k} on a {n}×{l} matrix"
        )));
    }
    let norm = y.norm();
    if norm == 0.0 {
        return Err(Error::InvalidData("PCA bound of an all-zero Y".into()));
    }
    Ok(norm)
}

/// `‖Y − Y·P·Pᵀ‖_F / ‖Y‖_F` with `P` the first K right singular vectors of
/// the uncentered data.
pub fn pca_lower_bound(y: &DMatrix<f64>, k: usize) -> Result<f64> {
    let norm = check_pca_args(y, k)?;
    let p = principal_axes(&y.tr_mul(y), k);
    let proj = y * &p * p.transpose();
    Ok((y - proj).norm() / norm)
}

/// Same bound with the mean spectrum removed before projecting and added
/// back afterwards.
pub fn pca_lower_bound_centered(y: &DMatrix<f64>, k: usize) -> Result<f64> {
    let norm = check_pca_args(y, k)?;
    let mean: DVector<f64> = y.row_mean().transpose();
    let mut centered = y.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let p = principal_axes(&centered.tr_mul(&centered), k);
    let residual = &centered - &centered * &p * p.transpose();
    Ok(residual.norm() / norm)
}

/// Figures of merit at one time index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord {
    pub t: usize,
    pub asad_deg: f64,
    pub rmse: f64,
    pub re: f64,
    /// Wall-clock time of the update that produced this estimate.
    pub wall_ms: f64,
}

pub const METRIC_HEADER: &str = "t,asad_deg,rmse,re,wall_ms";

pub fn write_metrics_csv(records: &[MetricRecord]) -> String {
    let mut out = String::from(METRIC_HEADER);
    for r in records {
        out.push('\n');
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.t,
            format_value(r.asad_deg),
            format_value(r.rmse),
            format_value(r.re),
            format_value(r.wall_ms)
        ));
    }
    out
}

pub fn save_metrics_csv(records: &[MetricRecord], path: &Path) -> Result<()> {
    fs::write(path, write_metrics_csv(records)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_metrics_csv(text: &str, origin: &Path) -> Result<Vec<MetricRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim() == METRIC_HEADER => {}
        Some((n, h)) => return Err(err(n + 1, format!("expected header `{METRIC_HEADER}`, found `{h}`"))),
        None => return Err(err(1, "empty metrics file".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(err(n + 1, format!("expected 5 fields, found {}", fields.len())));
        }
        let t = fields[0]
            .parse::<usize>()
            .map_err(|e| err(n + 1, format!("`{}`: {e}", fields[0])))?;
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields[1..]) {
            *v = f.parse::<f64>().map_err(|e| err(n + 1, format!("`{f}`: {e}")))?;
        }
        out.push(MetricRecord {
            t,
            asad_deg: vals[0],
            rmse: vals[1],
            re: vals[2],
            wall_ms: vals[3],
        });
    }
    Ok(out)
}

pub fn load_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_metrics_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, r: usize, c: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>())
    }

    #[test]
    fn sad_examples() {
        assert!(sad(&[2.0, 4.0], &[1.0, 2.0]).unwrap().abs() < 1e-6);
        assert!((sad(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 90.0).abs() < 1e-12);
        assert!((sad(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 45.0).abs() < 1e-12);
        assert!(sad(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn swapped_columns_are_aligned() {
        let s = random(1, 10, 3);
        let mut hat = s.clone();
        hat.swap_columns(0, 2);
        assert_eq!(align_components(&hat, &s).unwrap(), vec![2, 1, 0]);
        assert!(asad(&hat, &s).unwrap() < 1e-6);
        let one = random(2, 5, 1);
        assert_eq!(align_components(&one, &one).unwrap(), vec![0]);
    }

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..k {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn hungarian_matches_enumeration() {
        for seed in 0..50 {
            let cost = random(seed, 5, 5);
            let assign = min_cost_assignment(&cost);
            let best = permutations(5)
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let got: f64 = assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
            assert!((got - best).abs() < 1e-12);
        }
    }

    #[test]
    fn asad_half_wrong() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let hat = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let hat = {
            let mut h = hat;
            h[(0, 1)] = 1.0;
            h
        };
        // column 0 exact, column 1 parallel to true column 0 → 90° off column 1
        assert!((asad(&hat, &s).unwrap() - 45.0).abs() < 1e-9);
    }

    #[test]
    fn rmse_examples() {
        let c = random(3, 20, 3);
        let id = [0, 1, 2];
        assert_eq!(rmse_concentrations(&c, &c, &id).unwrap(), 0.0);
        let shifted = c.add_scalar(0.1);
        assert!((rmse_concentrations(&shifted, &c, &id).unwrap() - 0.1).abs() < 1e-12);
        let mut swapped = c.clone();
        swapped.swap_columns(0, 1);
        assert_eq!(rmse_concentrations(&swapped, &c, &[1, 0, 2]).unwrap(), 0.0);
        assert!(rmse_concentrations(&c, &c, &[0, 1]).is_err());
    }

    #[test]
    fn re_examples() {
        let c = random(4, 10, 2);
        let s = random(5, 6, 2);
        let y = &c * s.transpose();
        assert!(reconstruction_error(&y, &c, &s).unwrap() < 1e-15);
        assert!((reconstruction_error(&y, &DMatrix::zeros(10, 2), &s).unwrap() - 1.0).abs() < 1e-15);
        assert!(reconstruction_error(&DMatrix::zeros(10, 6), &c, &s).is_err());
    }

    #[test]
    fn pca_bound_of_exact_rank() {
        let y = random(6, 30, 3) * random(7, 12, 3).transpose();
        assert!(pca_lower_bound(&y, 3).unwrap() < 1e-10);
        assert!(pca_lower_bound(&y, 12).unwrap() < 1e-10);
    }

    #[test]
    fn pca_bound_matches_svd() {
        let mut y = random(8, 40, 2) * random(9, 10, 2).transpose();
        let noise = random(10, 40, 10).add_scalar(-0.5) * 0.01;
        y += noise;
        let svd = y.clone().svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sv[2..].iter().map(|s| s * s).sum();
        let expect = tail.sqrt() / y.norm();
        assert!((pca_lower_bound(&y, 2).unwrap() - expect).abs() < 1e-10);
        assert!(pca_lower_bound_centered(&y, 2).unwrap() <= pca_lower_bound(&y, 1).unwrap() + 1e-12);
    }

    #[test]
    fn metrics_csv_round_trip() {
        let recs = vec![
            MetricRecord { t: 31, asad_deg: 4.5, rmse: 0.01, re: 0.2, wall_ms: 1.25 },
            MetricRecord { t: 32, asad_deg: 1e-7, rmse: 0.0, re: 1.0 / 3.0, wall_ms: 0.5 },
        ];
        let text = write_metrics_csv(&recs);
        assert!(text.starts_with("t,asad_deg,rmse,re,wall_ms\n31,4.5,0.01,0.2,1.25"));
        assert_eq!(parse_metrics_csv(&text, Path::new("m.csv")).unwrap(), recs);
        assert!(parse_metrics_csv("t,x\n1", Path::new("m.csv")).is_err());
    }

    proptest! {
        #[test]
        fn asad_is_scale_invariant(seed in 0u64..1000, scales in proptest::collection::vec(0.01f64..100.0, 4)) {
            let s = random(seed, 15, 4);
            let hat = random(seed + 1, 15, 4);
            let mut scaled = hat.clone();
            for (j, f) in scales.iter().enumerate() {
                scaled.column_mut(j).scale_mut(*f);
            }
            let a = asad(&hat, &s).unwrap();
            let b = asad(&scaled, &s).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn asad_is_permutation_invariant(seed in 0u64..1000) {
            let s = random(seed, 12, 3);
            let hat = random(seed + 7, 12, 3);
            let mut perm = hat.clone();
            perm.swap_columns(0, 2);
            prop_assert!((asad(&hat, &s).unwrap() - asad(&perm, &s).unwrap()).abs() < 1e-9);
        }
    }
}
