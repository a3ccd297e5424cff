use std::sync::OnceLock;

use abda::data::{Dataset, Feature};
use abda::gibbs::{self, GibbsConfig, TreeInit};
use abda::likelihood::{Likelihood, MetaType};
use abda::model::{self, FitConfig, Model};
use abda::patterns::{pattern_support, Interval};
use abda::spn::{LeafMixture, NodeId, Params, Spn, SpnBuilder};
use abda::synth::{generate, SynthConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model() -> &'static (Model, Dataset) {
    static MODEL: OnceLock<(Model, Dataset)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (data, _) = generate(
            &SynthConfig {
                rows: 300,
                features: 3,
                min_fraction: 0.2,
                ..Default::default()
            },
            &mut rng,
        );
        let mut config = FitConfig::default().with_seed(21);
        config.structure.min_instances_fraction = 0.2;
        config.gibbs.iterations = 40;
        config.gibbs.burn_in = 20;
        config.gibbs.thinning = 5;
        (model::fit(&data, &config).unwrap().model, data)
    })
}

/// Random network over categorical leaves with `k` categories.
fn categorical_spn(seed: u64, d: usize, k: usize) -> (Spn, Params) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fn node(b: &mut SpnBuilder, scope: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> NodeId {
        if scope.len() == 1 && (depth > 2 || rng.random_bool(0.5)) {
            return b.leaf(scope[0]);
        }
        if scope.len() > 1 && (depth > 2 || rng.random_bool(0.5)) {
            let cut = rng.random_range(1..scope.len());
            let children = vec![
                node(b, &scope[..cut], depth, rng),
                node(b, &scope[cut..], depth, rng),
            ];
            return b.product(children);
        }
        let children = (0..2).map(|_| node(b, scope, depth + 1, rng)).collect();
        b.sum(children)
    }
    let mut b = SpnBuilder::new(d);
    let scope: Vec<usize> = (0..d).collect();
    let root = node(&mut b, &scope, 0, &mut rng);
    let spn = b.build(root).unwrap();
    let mut simplex = |n: usize| {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let t: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / t).collect::<Vec<f64>>()
    };
    let sum_log_weights = spn
        .sums()
        .iter()
        .map(|&s| {
            simplex(spn.node(s).children().len())
                .iter()
                .map(|w| w.ln())
                .collect()
        })
        .collect();
    let leaves = (0..d)
        .map(|f| {
            (0..spn.num_leaves(f))
                .map(|_| LeafMixture {
                    log_weights: vec![0.0],
                    components: vec![Likelihood::Categorical { probs: simplex(k) }],
                })
                .collect()
        })
        .collect();
    (
        spn,
        Params {
            sum_log_weights,
            leaves,
        },
    )
}

fn any_likelihood() -> impl Strategy<Value = Likelihood> {
    prop_oneof![
        (-5.0..5.0f64, 0.1..4.0f64).prop_map(|(mean, var)| Likelihood::Gaussian { mean, var }),
        (0.5..5.0f64, 0.2..3.0f64).prop_map(|(shape, rate)| Likelihood::Gamma { shape, rate }),
        (0.2..3.0f64).prop_map(|rate| Likelihood::Exponential { rate }),
        (0.2..10.0f64).prop_map(|rate| Likelihood::Poisson { rate }),
        (0.05..0.95f64).prop_map(|p| Likelihood::Geometric { p, shift: 0.0 }),
        (0.05..0.95f64).prop_map(|p| Likelihood::Bernoulli { p }),
        prop::collection::vec(0.05..1.0f64, 2..6).prop_map(|raw| {
            let t: f64 = raw.iter().sum();
            Likelihood::Categorical {
                probs: raw.iter().map(|r| r / t).collect(),
            }
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marginalizing_everything_gives_zero(seed in any::<u64>(), d in 1usize..5) {
        let (spn, params) = categorical_spn(seed, d, 3);
        let row = vec![0.0; d];
        prop_assert_eq!(spn.log_density(&params, &row, &vec![false; d]).unwrap(), 0.0);
    }

    #[test]
    fn one_feature_marginal_sums_to_one(seed in any::<u64>(), d in 1usize..5, f in 0usize..4) {
        let f = f % d;
        let (spn, params) = categorical_spn(seed, d, 4);
        let mut observed = vec![false; d];
        observed[f] = true;
        let total: f64 = (0..4)
            .map(|v| {
                let mut row = vec![0.0; d];
                row[f] = v as f64;
                spn.log_density(&params, &row, &observed).unwrap().exp()
            })
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "{}", total);
    }

    #[test]
    fn joint_over_all_cells_sums_to_one(seed in any::<u64>()) {
        let (spn, params) = categorical_spn(seed, 3, 3);
        let mut total = 0.0;
        for code in 0..27usize {
            let row = [(code % 3) as f64, (code / 3 % 3) as f64, (code / 9) as f64];
            total += spn.log_density(&params, &row, &[true; 3]).unwrap().exp();
        }
        prop_assert!((total - 1.0).abs() < 1e-12, "{}", total);
    }

    #[test]
    fn interval_mass_is_a_probability_and_grows_with_the_interval(
        l in any_likelihood(), lo in -6.0..6.0f64, width in 0.0..8.0f64, extra in 0.0..4.0f64
    ) {
        let inner = l.interval_log_mass(lo, lo + width).unwrap().exp();
        let outer = l.interval_log_mass(lo - extra, lo + width + extra).unwrap().exp();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&inner));
        prop_assert!(outer + 1e-12 >= inner);
    }

    #[test]
    fn continuous_quantile_inverts_cdf(l in any_likelihood(), p in 0.01..0.99f64) {
        if matches!(l.kind(), abda::likelihood::LikelihoodKind::Gaussian | abda::likelihood::LikelihoodKind::Gamma | abda::likelihood::LikelihoodKind::Exponential) {
            let q = l.quantile(p);
            prop_assert!((l.cdf(q) - p).abs() < 1e-6, "cdf(quantile({})) = {}", p, l.cdf(q));
        }
    }

    #[test]
    fn csv_round_trip_is_exact(
        cells in prop::collection::vec((any::<bool>(), -1e6..1e6f64, 0u32..20, any::<bool>()), 1..40)
    ) {
        let features = vec![
            Feature { name: "real".into(), meta: MetaType::Continuous },
            Feature { name: "count".into(), meta: MetaType::Discrete },
        ];
        let rows: Vec<Vec<Option<f64>>> = cells
            .iter()
            .map(|&(keep_a, a, b, keep_b)| vec![keep_a.then_some(a), keep_b.then_some(b as f64)])
            .collect();
        let data = Dataset::from_rows(features, &rows).unwrap();
        let back = Dataset::read_csv(data.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back.features(), data.features());
        for i in 0..data.num_rows() {
            for d in 0..2 {
                prop_assert_eq!(back.get(i, d).map(f64::to_bits), data.get(i, d).map(f64::to_bits));
            }
        }
    }

    #[test]
    fn sweeps_keep_weights_normalized(seed in any::<u64>()) {
        let (model, data) = small_model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<Vec<f64>> = model.best_draw().unwrap().sum_log_weights.iter().map(|w| w.iter().map(|x| x.exp()).collect()).collect();
        let config = GibbsConfig::default();
        let mut state = gibbs::init_state(&model.spn, &model.dictionaries, &weights, data, TreeInit::Prior, &config, &mut rng).unwrap();
        for _ in 0..2 {
            gibbs::sweep(&mut state, &model.spn, &model.dictionaries, data, &config, &mut rng).unwrap();
        }
        let all = state.params.sum_log_weights.iter().chain(state.params.leaves.iter().flatten().map(|l| &l.log_weights));
        for w in all {
            prop_assert!((w.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let sparsity = gibbs::structure_sparsity(&state, &model.spn);
        prop_assert!((0.0..=1.0).contains(&sparsity));
    }

    #[test]
    fn adding_an_interval_never_raises_support(
        bounds in prop::collection::vec((-10.0..30.0f64, 0.5..20.0f64), 3)
    ) {
        let (model, _) = small_model();
        let intervals: Vec<Interval> =
            bounds.iter().enumerate().map(|(f, &(low, w))| Interval { feature: f, low, high: low + w }).collect();
        let mut previous = 1.0;
        for k in 1..=intervals.len() {
            let s = pattern_support(model, &intervals[..k]).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
            prop_assert!(s <= previous + 1e-12, "{} > {}", s, previous);
            previous = s;
        }
    }
}
