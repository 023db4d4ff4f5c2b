use epidistill::pool::query_by_key;
use epidistill::teacher::{
    calibrate, sample_scenarios, CalibrateOptions, GridConfig, ParameterGrid,
};

fn grid(toml_src: &str) -> ParameterGrid {
    let cfg: GridConfig = toml::from_str(toml_src).unwrap();
    ParameterGrid::from_config(&cfg).unwrap()
}

const SMALL: &str = r#"
n_communities = 1
populations = [1e4, 1e5]
seed_cases = 5
beta = [0.2, 0.4, 0.8]
sigma = [0.2, 0.5]
gamma = [0.1, 0.2]
"#;

const THREE: &str = r#"
n_communities = 3
populations = { min = 1e3, max = 5e5, count = 5, spacing = "log" }
seed_cases = 10
beta = { min = 0.05, max = 1.0, count = 5, spacing = "log" }
sigma = { min = 0.0714285714285714, max = 0.5, count = 5 }
gamma = { min = 0.0714285714285714, max = 0.25, count = 5 }
"#;

#[test]
fn sampled_keys_are_uniform_over_the_grid() {
    let g = grid(SMALL);
    let cells = 2 * 2 * 3 * 2 * 2;
    let n = 10_000;
    let mut counts = vec![0usize; cells];
    for key in sample_scenarios(&g, n, 99).unwrap() {
        let [p, ic, b, s, gm] = key.grid_indices[0].as_array().map(|v| v as usize);
        counts[(((p * 2 + ic) * 3 + b) * 2 + s) * 2 + gm] += 1;
    }
    let expected = n as f64 / cells as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 47 degrees of freedom; 0.1% critical value is about 82.7
    assert!(chi2 < 82.7, "chi-square {chi2}");
}

#[test]
fn calibration_is_identical_across_worker_counts() {
    let g = grid(THREE);
    let keys = sample_scenarios(&g, 3000, 5).unwrap();
    let obs = query_by_key(&sample_scenarios(&g, 1, 77).unwrap()[0], 60, 14, 1.0)
        .unwrap()
        .observation;
    let results: Vec<_> = [1, 2, 3, 8]
        .iter()
        .map(|&workers| {
            let opts = CalibrateOptions {
                workers,
                chunk_size: 37,
                ..CalibrateOptions::default()
            };
            calibrate(&obs, &keys, 60, 14, &opts).unwrap()
        })
        .collect();
    for r in &results[1..] {
        assert_eq!(r.best_index, results[0].best_index);
        assert_eq!(r.fit_mse.to_bits(), results[0].fit_mse.to_bits());
        assert_eq!(r.fitted_trajectory, results[0].fitted_trajectory);
    }
}

#[test]
fn more_candidates_never_fit_worse() {
    let g = grid(THREE);
    let keys = sample_scenarios(&g, 2000, 8).unwrap();
    let obs = query_by_key(&sample_scenarios(&g, 1, 13).unwrap()[0], 90, 21, 1.0)
        .unwrap()
        .observation;
    let opts = CalibrateOptions::default();
    let mut last = f64::INFINITY;
    for n in [10, 100, 500, 2000] {
        let r = calibrate(&obs, &keys[..n], 90, 21, &opts).unwrap();
        assert!(r.fit_mse <= last);
        last = r.fit_mse;
    }
}
