//! Type recovery and likelihood gap over a few generated datasets.

use abda::likelihood::StatType;
use abda::model::{fit, FitConfig};
use abda::synth::{confusion_matrix, evaluate, generate, SynthConfig, SynthEval};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn main() {
    let evals: Vec<SynthEval> = (0..4u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (data, truth) = generate(&SynthConfig::default(), &mut rng);
            let (train, _valid, test) = data
                .holdout_split([0.7, 0.1, 0.2], &mut rng)
                .expect("split");
            let mut config = FitConfig::default().with_seed(seed);
            config.gibbs.iterations = 600;
            config.gibbs.burn_in = 400;
            config.gibbs.thinning = 10;
            let model = fit(&train, &config).expect("fit").model;
            evaluate(&model, &test, &truth).expect("evaluate")
        })
        .collect();

    for (seed, e) in evals.iter().enumerate() {
        println!(
            "dataset {seed}: mean cosine {:.3}, LL gap per feature {:+.3}",
            e.mean_cosine(),
            e.gap_per_feature()
        );
    }
    println!("confusion (rows true, columns inferred):");
    let names: Vec<&str> = StatType::ALL.iter().map(|t| t.name()).collect();
    println!(
        "      {}",
        names.iter().map(|n| format!("{n:>5}")).collect::<String>()
    );
    for (t, row) in confusion_matrix(&evals).iter().enumerate() {
        println!(
            "{:>5} {}",
            names[t],
            row.iter().map(|c| format!("{c:>5}")).collect::<String>()
        );
    }
}
