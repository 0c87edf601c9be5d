use subcusum::detectors::{run_detector, DetectorConfig};
use subcusum::eigen::PowerIteration;
use subcusum::model::{basis_vector, reduce_switching, sample_stream, Scenario, SpikedModel};
use subcusum::tuning::tune;

const TAU: u64 = 200;
const SEEDS: u64 = 20;

fn delays(config: &DetectorConfig, scenario: &Scenario, b: f64, project: impl Fn(Vec<f64>) -> Vec<f64>) -> Vec<Option<u64>> {
    (0..SEEDS)
        .map(|seed| {
            let stream: Vec<Vec<f64>> = sample_stream(scenario, 1000, seed).unwrap().into_iter().map(&project).collect();
            let mut detector = config.build().unwrap();
            let report = run_detector(&mut detector, &stream, b, stream.len() as u64).unwrap();
            (report.stopped && report.effective_time > TAU).then(|| report.effective_time - TAU)
        })
        .collect()
}

#[test]
fn tuned_subspace_cusum_detects_emerging_spike() {
    let (k, sigma2, theta) = (5, 1.0, 4.0);
    let t = tune(1e4, k, theta / sigma2, sigma2).unwrap();
    let post = SpikedModel::spiked(sigma2, theta, basis_vector(k, 2)).unwrap();
    let scenario = Scenario::emerging(post, TAU).unwrap();
    let config = DetectorConfig::SubspaceCusum {
        k,
        w: t.w_star,
        drift: t.d_star,
        eigen: PowerIteration::default(),
    };
    let found = delays(&config, &scenario, t.b_subspace, |x| x);
    let hits = found.iter().flatten().filter(|&&d| d <= 300).count();
    assert!(hits >= 18, "{found:?}");
}

#[test]
fn reduced_switching_stream_feeds_exact_cusum() {
    let (k, sigma2, theta) = (4, 1.0, 4.0);
    let scenario = Scenario::switching(sigma2, theta, basis_vector(k, 0), basis_vector(k, 1), TAU).unwrap();
    let (reduced, q) = reduce_switching(&scenario).unwrap();
    assert_eq!(reduced.k(), k - 1);

    let config = DetectorConfig::ExactCusum {
        model: reduced.post().clone(),
    };
    let b = 1e4f64.ln();
    let found = delays(&config, &scenario, b, |x| q.apply(&x).unwrap());
    let hits = found.iter().flatten().filter(|&&d| d <= 100).count();
    assert!(hits >= 18, "{found:?}");
}
