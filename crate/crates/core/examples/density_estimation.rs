//! Fit a model on synthetic mixed-type data and score held-out rows.

use abda::inference::mean_log_density;
use abda::model::{fit, FitConfig};
use abda::synth::{generate, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (data, truth) = generate(
        &SynthConfig {
            rows: 1000,
            features: 4,
            ..Default::default()
        },
        &mut rng,
    );
    let (train, _valid, test) = data.holdout_split([0.7, 0.1, 0.2], &mut rng)?;

    let mut config = FitConfig::default().with_seed(3);
    config.gibbs.iterations = 300;
    config.gibbs.burn_in = 150;
    config.gibbs.thinning = 5;
    let fitted = fit(&train, &config)?;

    let model = &fitted.model;
    println!(
        "network: {} nodes, {} sums, {} posterior draws",
        model.spn.len(),
        model.spn.num_sums(),
        model.samples.len()
    );
    println!(
        "test mean log-likelihood:       {:.4}",
        mean_log_density(model, &test)?
    );
    println!(
        "generating model on same rows:  {:.4}",
        truth.mean_loglik(&test)
    );
    if let Some(last) = fitted.trace.entries.last() {
        println!(
            "final train log-likelihood:     {:.4} after {:.1}s",
            last.mean_loglik, last.seconds
        );
    }
    Ok(())
}
