//! Mine interval patterns from a fitted model and check one rule's confidence.

use abda::data::{Dataset, Feature};
use abda::likelihood::MetaType;
use abda::model::{fit, FitConfig};
use abda::patterns::{confidence, mine, MineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // age-like and count-like features that move together across two groups
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<Option<f64>>> = (0..800)
        .map(|_| {
            let young = rng.random_bool(0.6);
            let (age, visits) = if young { (25.0, 1.0) } else { (60.0, 8.0) };
            vec![
                Some(Normal::new(age, 4.0).unwrap().sample(&mut rng)),
                Some(Poisson::new(visits).unwrap().sample(&mut rng)),
            ]
        })
        .collect();
    let features = vec![
        Feature {
            name: "age".into(),
            meta: MetaType::Continuous,
        },
        Feature {
            name: "visits".into(),
            meta: MetaType::Discrete,
        },
    ];
    let data = Dataset::from_rows(features, &rows)?;
    let mut config = FitConfig::default().with_seed(4);
    config.gibbs.iterations = 300;
    config.gibbs.burn_in = 150;
    config.gibbs.thinning = 10;
    let model = fit(&data, &config)?.model;

    let patterns = mine(
        &model,
        &MineConfig {
            lambda: 0.8,
            ..Default::default()
        },
    )?;
    for p in patterns.iter().take(8) {
        println!("{}", p.describe(data.features()));
    }
    if let Some(p) = patterns.iter().find(|p| p.atoms.len() == 2) {
        let ivs = p.intervals();
        let c = confidence(&model, &ivs[..1], &ivs[1..])?;
        println!("confidence of the first composite read as a rule: {c:.3}");
    }
    Ok(())
}
