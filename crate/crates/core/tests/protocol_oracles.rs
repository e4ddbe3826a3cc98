use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kfunmix::protocols::{convex_hull, peel_candidates, phasor_coordinates, protocol_p2, P2Config};
use kfunmix::synthdata::{generate, SynthConfig};

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Directed edge `i → j` is on the counterclockwise hull when every other
/// point lies strictly to its left.
fn brute_force_hull(points: &[[f64; 2]]) -> Vec<usize> {
    let n = points.len();
    let mut next = HashMap::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (0..n).all(|k| k == i || k == j || cross(points[i], points[j], points[k]) > 0.0) {
                next.insert(i, j);
            }
        }
    }
    let start = *next
        .keys()
        .min_by(|&&a, &&b| points[a].partial_cmp(&points[b]).unwrap())
        .unwrap();
    let mut out = vec![start];
    let mut cur = next[&start];
    while cur != start {
        out.push(cur);
        cur = next[&cur];
    }
    out
}

#[test]
fn hull_of_disk_points_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // coordinates on a 2^-20 grid keep the oracle's products exact
    let q = |v: f64| (v * 1048576.0).round() / 1048576.0;
    let mut points = Vec::new();
    while points.len() < 1000 {
        let (x, y) = (rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
        if x * x + y * y <= 1.0 {
            points.push([q(x), q(y)]);
        }
    }
    assert_eq!(convex_hull(&points).unwrap(), brute_force_hull(&points));
}

#[test]
fn planted_pure_pixels_are_hull_candidates() {
    let mut cfg = SynthConfig::new(400, 100, 3, 3);
    cfg.snr_db = f64::INFINITY;
    let data = generate(&cfg).unwrap();
    let c = data.concentrations.as_ref().unwrap().values();
    let pure: Vec<usize> = (0..c.nrows()).filter(|&i| c.row(i).max() == 1.0).collect();
    assert_eq!(pure.len(), 3);
    let points = phasor_coordinates(&data.spectra);
    let candidates = peel_candidates(&points, 3).unwrap();
    for i in &pure {
        assert!(candidates.contains(i), "pure pixel {i} missing from {candidates:?}");
    }
}

#[test]
fn p2_visits_every_cluster_early() {
    let mut cfg = SynthConfig::new(600, 80, 3, 9);
    cfg.snr_db = 30.0;
    let data = generate(&cfg).unwrap();
    let config = P2Config {
        n_essential: 120,
        n_clusters: 12,
        seed: 4,
    };
    let order = protocol_p2(&data.spectra, &config).unwrap();
    assert_eq!(order.len(), 120);
    assert_eq!(order, protocol_p2(&data.spectra, &config).unwrap());

    // the first round takes one spectrum per cluster, so its phasor points
    // are spread over the whole candidate cloud
    let points = phasor_coordinates(&data.spectra);
    let first: Vec<[f64; 2]> = order.indices()[..12].iter().map(|&i| points[i]).collect();
    let all: Vec<[f64; 2]> = order.indices().iter().map(|&i| points[i]).collect();
    let spread = |pts: &[[f64; 2]]| {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (hi[0] - lo[0]).hypot(hi[1] - lo[1])
    };
    assert!(spread(&first) > 0.5 * spread(&all));
}
