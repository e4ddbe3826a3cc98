use kfunmix::datamodel::EndmemberMatrix;
use kfunmix::metrics::write_metrics_csv;
use kfunmix::pipeline::{run_experiment, InitMethod, PipelineConfig, Updater};
use kfunmix::protocols::protocol_p1;
use kfunmix::synthdata::{generate, SynthConfig};

/// Trace CSV with the timing column dropped.
fn without_timing(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
        .collect()
}

#[test]
fn identical_seeds_give_identical_traces() {
    let data = generate(&SynthConfig::new(150, 60, 3, 4)).unwrap();
    let order = protocol_p1(150, Some(2)).unwrap();
    for updater in [Updater::Kalman, Updater::Rls(0.99), Updater::Dl] {
        let mut config = PipelineConfig::new(3);
        config.updater = updater;
        config.seed = 8;
        config.eval_stride = 7;
        let a = run_experiment(&data, &order, &config).unwrap();
        let b = run_experiment(&data, &order, &config).unwrap();
        assert_eq!(
            without_timing(&write_metrics_csv(&a.records)),
            without_timing(&write_metrics_csv(&b.records))
        );
        assert_eq!(a.final_endmembers.values(), b.final_endmembers.values());
    }
}

#[test]
fn high_snr_stream_stays_close_to_the_truth() {
    let mut cfg = SynthConfig::new(300, 80, 3, 11);
    cfg.snr_db = 60.0;
    let data = generate(&cfg).unwrap();
    let mut config = PipelineConfig::new(3);
    config.eval_stride = 10;
    let trace = run_experiment(&data, &protocol_p1(300, None).unwrap(), &config).unwrap();
    let last = trace.records.last().unwrap();
    assert_eq!(last.t, 300);
    assert!(last.asad_deg < 10.0, "final aSAD {}", last.asad_deg);
    assert!(last.re < 0.05, "final RE {}", last.re);
}

#[test]
fn noiseless_stream_started_at_the_truth_keeps_a_good_fit() {
    let mut cfg = SynthConfig::new(200, 64, 2, 5);
    cfg.snr_db = f64::INFINITY;
    let data = generate(&cfg).unwrap();
    let mut config = PipelineConfig::new(2);
    // noiseless mixtures have rank K, so only K regressors are independent
    config.n_regressors = 2;
    config.init = InitMethod::Provided(EndmemberMatrix::new(data.endmembers.as_ref().unwrap().values().clone()).unwrap());
    config.eval_stride = 20;
    let trace = run_experiment(&data, &protocol_p1(200, None).unwrap(), &config).unwrap();
    assert!(trace.aborted.is_none());
    for r in &trace.records {
        assert!(r.re < 0.05, "t={} RE {}", r.t, r.re);
    }
}

#[test]
fn high_snr_p2_stream_improves_over_its_first_steps() {
    use kfunmix::protocols::{protocol_p2, P2Config};
    for seed in 0..3 {
        let mut cfg = SynthConfig::new(400, 80, 3, seed);
        cfg.snr_db = 60.0;
        let data = generate(&cfg).unwrap();
        let order = protocol_p2(
            &data.spectra,
            &P2Config {
                n_essential: 150,
                n_clusters: 15,
                seed,
            },
        )
        .unwrap();
        let trace = run_experiment(&data, &order, &PipelineConfig::new(3)).unwrap();
        let window = |from: usize| -> f64 {
            trace.records[from..from + 5].iter().map(|r| r.asad_deg).sum::<f64>() / 5.0
        };
        // records start at t = P+1, so index i is t = P+1+i
        let (early, late) = (window(2), window(47));
        assert!(late <= early, "seed {seed}: aSAD around P+5 {early:.3}, around P+50 {late:.3}");
    }
}
