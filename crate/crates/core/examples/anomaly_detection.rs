//! Rank rows by negative log-density on two clusters with a few far outliers.

use abda::data::{Dataset, Feature};
use abda::inference::{anomaly_scores, auc_roc};
use abda::likelihood::MetaType;
use abda::model::{fit, FitConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 600;
    let outliers = 12;
    let rows: Vec<Vec<Option<f64>>> = (0..n)
        .map(|i| {
            if i < outliers {
                (0..3)
                    .map(|_| {
                        Some(
                            if rng.random_bool(0.5) { 12.0 } else { -12.0 }
                                + rng.random_range(-1.0..1.0),
                        )
                    })
                    .collect()
            } else {
                let c = if rng.random_bool(0.5) { 3.0 } else { -3.0 };
                (0..3)
                    .map(|_| Some(Normal::new(c, 1.0).unwrap().sample(&mut rng)))
                    .collect()
            }
        })
        .collect();
    let features = (0..3)
        .map(|d| Feature {
            name: format!("x{d}"),
            meta: MetaType::Continuous,
        })
        .collect();
    let data = Dataset::from_rows(features, &rows)?;

    let mut config = FitConfig::default().with_seed(1);
    config.gibbs.iterations = 200;
    config.gibbs.burn_in = 100;
    let model = fit(&data, &config)?.model;

    let scores = anomaly_scores(&model, &data)?;
    println!("top 5 rows by score:");
    for s in scores.iter().take(5) {
        println!(
            "  row {:>3}  score {:>8.3}  outlier: {}",
            s.row,
            s.score,
            s.row < outliers
        );
    }
    let mut by_row = vec![0.0; n];
    for s in &scores {
        by_row[s.row] = s.score;
    }
    let labels: Vec<bool> = (0..n).map(|i| i < outliers).collect();
    println!("AUC ROC: {:.4}", auc_roc(&by_row, &labels)?);
    Ok(())
}
