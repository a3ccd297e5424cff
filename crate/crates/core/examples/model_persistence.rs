//! Save a fitted model, load it back and confirm the densities agree.

use abda::inference::row_log_density;
use abda::model::{fit, FitConfig, Model};
use abda::synth::{generate, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (data, _) = generate(
        &SynthConfig {
            rows: 500,
            features: 3,
            ..Default::default()
        },
        &mut rng,
    );
    let mut config = FitConfig::default().with_seed(9);
    config.gibbs.iterations = 100;
    config.gibbs.burn_in = 50;
    let model = fit(&data, &config)?.model;

    let dir = std::env::temp_dir().join("abda-persistence-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.abda");
    model.save(&path)?;
    let loaded = Model::load(&path)?;
    println!(
        "saved {} bytes to {}",
        std::fs::metadata(&path)?.len(),
        path.display()
    );

    let same = (0..data.num_rows()).all(|i| {
        let (row, obs) = (data.row(i), data.observed_row(i));
        row_log_density(&model, row, obs).unwrap().to_bits()
            == row_log_density(&loaded, row, obs).unwrap().to_bits()
    });
    println!("log-densities identical after reload: {same}");
    println!(
        "trained on {} rows, seed {}",
        loaded.provenance.rows, loaded.provenance.seed
    );
    Ok(())
}
