//! Acquisition-order simulation.
//!
//! P1 keeps every spectrum, in raw or shuffled order. P2 keeps only
//! essential spectra: convex hulls of the phasor plot are peeled until
//! enough candidates accumulate, the candidates are clustered, and the
//! order is built round by round by taking one spectrum close to each
//! cluster centre.

mod hull;
mod kmeans;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datamodel::SpectraMatrix;
use crate::error::{Error, Result};

pub use self::hull::convex_hull;
pub use self::kmeans::{kmeans, nearest, KMeansResult, MAX_LLOYD_ITERS};

/// Distinct row indices in the order the spectra are acquired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcquisitionOrder {
    indices: Vec<usize>,
    n_essential: usize,
}

impl AcquisitionOrder {
    /// Validates that `indices` are distinct and below `n_total`.
    pub fn new(indices: Vec<usize>, n_total: usize) -> Result<Self> {
        let mut seen = vec![false; n_total];
        for &i in &indices {
            if i >= n_total {
                return Err(Error::InvalidData(format!(
                    "order index {i} out of range for {n_total} spectra"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidData(format!("order index {i} repeated")));
            }
            seen[i] = true;
        }
        let n_essential = indices.len();
        Ok(Self { indices, n_essential })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn n_essential(&self) -> usize {
        self.n_essential
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Single-column CSV with an `index` header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index");
        for i in &self.indices {
            out.push('\n');
            out.push_str(&i.to_string());
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_csv(path: &Path, n_total: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "index" => {}
            Some((n, h)) => return Err(parse_err(n + 1, format!("expected header `index`, found `{h}`"))),
            None => return Err(parse_err(1, "empty order file".into())),
        }
        let mut indices = Vec::new();
        for (n, line) in lines {
            let v = line
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(n + 1, format!("`{}`: {e}", line.trim())))?;
            indices.push(v);
        }
        Self::new(indices, n_total)
    }
}

/// All `n` spectra, in raw order or shuffled with the given seed.
pub fn protocol_p1(n: usize, shuffle_seed: Option<u64>) -> Result<AcquisitionOrder> {
    if n == 0 {
        return Err(Error::InvalidParameter("P1 needs at least one spectrum".into()));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    AcquisitionOrder::new(indices, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct P2Config {
    pub n_essential: usize,
    pub n_clusters: usize,
    pub seed: u64,
}

impl P2Config {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_clusters == 0 || self.n_clusters > self.n_essential || self.n_essential > n {
            return Err(Error::InvalidParameter(format!(
                "P2 needs 1 ≤ J ≤ N_ess ≤ N, got J={} N_ess={} N={n}",
                self.n_clusters, self.n_essential
            )));
        }
        Ok(())
    }
}

/// First-harmonic phasor of each spectrum, normalized by the spectrum's
/// sum so that a mixture lands inside the polygon of its endmembers.
pub fn phasor_coordinates(spectra: &SpectraMatrix) -> Vec<[f64; 2]> {
    let l = spectra.n_channels();
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..l)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / l as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    spectra
        .values()
        .row_iter()
        .map(|row| {
            let mut g = 0.0;
            let mut s = 0.0;
            let mut total = 0.0;
            let mut total_abs = 0.0;
            for j in 0..l {
                g += row[j] * cos[j];
                s -= row[j] * sin[j];
                total += row[j];
                total_abs += row[j].abs();
            }
            let norm = if total > 0.0 { total } else { total_abs };
            if norm > 0.0 {
                [g / norm, s / norm]
            } else {
                [0.0, 0.0]
            }
        })
        .collect()
}

/// Peels phasor-plot convex hulls until at least `n_essential` candidates
/// are collected or no point is left. Candidates come out layer by layer,
/// each layer in counterclockwise order.
pub fn peel_candidates(points: &[[f64; 2]], n_essential: usize) -> Result<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut candidates = Vec::with_capacity(n_essential);
    while candidates.len() < n_essential && !remaining.is_empty() {
        let layer_points: Vec<[f64; 2]> = remaining.iter().map(|&i| points[i]).collect();
        let layer = convex_hull(&layer_points)?;
        let mut taken = vec![false; remaining.len()];
        for &h in &layer {
            candidates.push(remaining[h]);
            taken[h] = true;
        }
        let mut w = 0;
        remaining.retain(|_| {
            let keep = !taken[w];
            w += 1;
            keep
        });
    }
    Ok(candidates)
}

/// Essential-spectra order.
pub fn protocol_p2(spectra: &SpectraMatrix, config: &P2Config) -> Result<AcquisitionOrder> {
    let n = spectra.n_pixels();
    config.validate(n)?;
    let points = phasor_coordinates(spectra);
    if points.iter().all(|p| *p == points[0]) {
        log::warn!("all phasor coordinates coincide; falling back to raw order");
        return AcquisitionOrder::new((0..config.n_essential).collect(), n);
    }

    let candidates = peel_candidates(&points, config.n_essential)?;
    let cand_points: Vec<[f64; 2]> = candidates.iter().map(|&i| points[i]).collect();
    let j_count = config.n_clusters.min(candidates.len());
    let clusters = kmeans(&cand_points, j_count, config.seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut taken = vec![false; candidates.len()];
    let mut order = Vec::with_capacity(config.n_essential);
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    while order.len() < config.n_essential {
        let mut round = Vec::with_capacity(j_count);
        for (j, centre) in clusters.centroids.iter().enumerate() {
            // closest free member of cluster j, else the closest free candidate
            let pick = |own_only: bool, taken: &[bool]| {
                (0..candidates.len())
                    .filter(|&c| !taken[c] && (!own_only || clusters.assignments[c] == j))
                    .min_by(|&a, &b| {
                        dist(cand_points[a], *centre)
                            .total_cmp(&dist(cand_points[b], *centre))
                            .then(a.cmp(&b))
                    })
            };
            if let Some(c) = pick(true, &taken).or_else(|| pick(false, &taken)) {
                taken[c] = true;
                round.push(candidates[c]);
            }
        }
        if round.is_empty() {
            break;
        }
        round.shuffle(&mut rng);
        order.extend(round);
    }
    order.truncate(config.n_essential);
    AcquisitionOrder::new(order, n)
}
