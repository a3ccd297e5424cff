//! Mask 10% of the cells, fit on what is left and fill the gaps.

use abda::inference::{impute_dataset, nrmse, ImputeMode};
use abda::model::{fit, FitConfig};
use abda::synth::{generate, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (full, _) = generate(
        &SynthConfig {
            rows: 1000,
            features: 4,
            ..Default::default()
        },
        &mut rng,
    );
    let (masked, removed) = full.inject_missing(0.1, &mut rng);
    println!(
        "masked {} of {} cells",
        removed.len(),
        full.num_rows() * full.num_features()
    );

    let mut config = FitConfig::default().with_seed(5);
    config.gibbs.iterations = 300;
    config.gibbs.burn_in = 150;
    let model = fit(&masked, &config)?.model;

    let ranges: Vec<f64> = (0..full.num_features())
        .map(|d| {
            let s = masked.feature_stats(d);
            s.max - s.min
        })
        .collect();
    for mode in [ImputeMode::MapSample, ImputeMode::McAverage] {
        let filled = impute_dataset(&model, &masked, mode)?;
        let cells: Vec<(usize, f64, f64)> = removed
            .iter()
            .map(|&(i, d, x)| (d, filled.get(i, d).unwrap(), x))
            .collect();
        let scores: Vec<String> = nrmse(&cells, &ranges)
            .iter()
            .enumerate()
            .map(|(d, e)| {
                format!(
                    "{}={}",
                    full.features()[d].name,
                    e.map_or("-".into(), |e| format!("{e:.3}"))
                )
            })
            .collect();
        println!("{mode:?}: NRMSE {}", scores.join(" "));
    }
    Ok(())
}
