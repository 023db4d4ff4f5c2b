//! Runs the synthetic teacher / student / coarse comparison for a few
//! experiment seeds and prints the projection errors and stage timings.
//!
//! ```text
//! cargo run --release -p epidistill --example desk_benchmark -- configs/desk_benchmark.toml 3
//! ```

use std::path::PathBuf;

use epidistill::config::{RunConfig, Seeds};
use epidistill::pipeline::{run_benchmark, synthetic_truth};

fn main() -> epidistill::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(
        args.next()
            .unwrap_or_else(|| "configs/desk_benchmark.toml".into()),
    );
    let n_seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let base = RunConfig::load(&path)?;
    let syn = base
        .synthetic
        .as_ref()
        .ok_or_else(|| epidistill::Error::Config("config needs a [synthetic] section".into()))?;
    let (cal, proj) = base.windows.lengths()?;
    let truth = synthetic_truth(&base.teacher.grid()?, &syn.indices(), cal, proj, base.dt)?;
    for seed in 1..=n_seeds {
        let cfg = RunConfig {
            seeds: Seeds::derived(seed),
            ..base.clone()
        };
        let out = run_benchmark(&cfg, &truth, None, None)?;
        println!("seed {seed}");
        print!("{}", out.report.render_table());
        println!("{:?}", out.timings);
        println!(
            "final loss {:e}\n",
            out.loss_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
