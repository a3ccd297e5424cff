//! Posterior over likelihood kinds and statistical types per feature,
//! compared with the generator's ground truth.

use abda::inference::{cosine_similarity, type_posterior};
use abda::model::{fit, FitConfig};
use abda::synth::{generate, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (data, truth) = generate(
        &SynthConfig {
            rows: 1500,
            features: 4,
            ..Default::default()
        },
        &mut rng,
    );
    let mut config = FitConfig::default().with_seed(2);
    config.gibbs.iterations = 600;
    config.gibbs.burn_in = 300;
    config.gibbs.thinning = 5;
    let model = fit(&data, &config)?.model;

    for d in 0..data.num_features() {
        let post = type_posterior(&model, d)?;
        let cos = cosine_similarity(&post.stat_type_vector(), &truth.stat_type_vector(d))?;
        println!(
            "{} (true {}):",
            data.features()[d].name,
            truth.stat_types[d].name()
        );
        for (kind, mass, se) in &post.kinds {
            if *mass > 0.01 {
                println!("    {:<12} {:.3} ± {:.3}", kind.name(), mass, se);
            }
        }
        println!(
            "    most likely {}, cosine to truth {:.3}",
            post.most_likely_kind().name(),
            cos
        );
    }
    Ok(())
}
