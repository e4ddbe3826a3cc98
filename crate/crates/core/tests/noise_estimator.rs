use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use kfunmix::datamodel::SpectraMatrix;
use kfunmix::synthdata::{estimate_noise_variance, generate_pure_spectra, PeakSpec};

fn noisy(clean: &DMatrix<f64>, std: f64, seed: u64) -> SpectraMatrix {
    let normal = Normal::new(0.0, std).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpectraMatrix::new(clean.map(|v| v + normal.sample(&mut rng))).unwrap()
}

#[test]
fn estimate_scales_with_the_noise_variance() {
    let spec = PeakSpec {
        min_peaks: 2,
        max_peaks: 5,
        min_width: 8.0,
        max_width: 20.0,
    };
    let pure = generate_pure_spectra(300, 2, &spec, 1).unwrap();
    let clean = DMatrix::from_fn(40, 2, |i, j| if (i + j) % 2 == 0 { 0.7 } else { 0.3 }) * pure.values().transpose() * 500.0;
    let base = estimate_noise_variance(&noisy(&clean, 1.0, 2), 10).unwrap();
    // cubic smoothing over 5 points absorbs 17/35 of white noise variance
    assert!((base - 18.0 / 35.0).abs() < 0.1, "estimate {base}");
    for std in [2.0, 5.0, 10.0] {
        let est = estimate_noise_variance(&noisy(&clean, std, 2), 10).unwrap();
        let ratio = est / base / (std * std);
        assert!((ratio - 1.0).abs() < 0.1, "std {std}: ratio {ratio}");
    }
}

#[test]
fn noiseless_smooth_spectra_give_a_small_estimate() {
    let spec = PeakSpec {
        min_peaks: 2,
        max_peaks: 4,
        min_width: 10.0,
        max_width: 20.0,
    };
    let pure = generate_pure_spectra(200, 2, &spec, 3).unwrap();
    let clean = SpectraMatrix::new(pure.values().transpose()).unwrap();
    let est = estimate_noise_variance(&clean, 10).unwrap();
    assert!(est < 1e-6, "estimate {est}");
}
