//! Learn a network with different minimum slice sizes and inspect it.

use abda::model::{fit, FitConfig};
use abda::patterns::{partition_report, render_partitions};
use abda::structure::{learn_structure, StructureConfig};
use abda::synth::{generate, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (data, _) = generate(
        &SynthConfig {
            rows: 1000,
            features: 4,
            ..Default::default()
        },
        &mut rng,
    );

    for m in [0.3, 0.1, 0.02] {
        let learned = learn_structure(
            &data,
            &StructureConfig {
                min_instances_fraction: m,
                ..Default::default()
            },
        )?;
        let spn = &learned.spn;
        println!(
            "m = {m:<5} nodes {:>4}  sums {:>3}  products {:>3}  induced trees {:e}",
            spn.len(),
            spn.num_sums(),
            spn.product_nodes().count(),
            spn.count_induced_trees()
        );
    }

    let mut config = FitConfig::default().with_seed(5);
    config.gibbs.iterations = 200;
    config.gibbs.burn_in = 100;
    let model = fit(&data, &config)?.model;
    println!(
        "structure sparsity after inference: {:.3}",
        model.summary.sparsity
    );
    print!(
        "{}",
        render_partitions(&partition_report(&model, &data)?, data.features())
    );
    Ok(())
}
