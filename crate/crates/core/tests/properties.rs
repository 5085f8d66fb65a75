use esgnn::denoise::lemma1_random;
use esgnn::graph::{homophily_ratio, inject_fake_edges, make_split, Graph, Labels, SplitScheme};
use esgnn::io::{Dataset, FeatureNorm};
use esgnn::model::{EsGnn, EsGnnConfig, ModelInput, NodeClassifier, Supervision};
use esgnn::synth::{class_of, generate, kind_of, EdgeTag, SynthConfig};
use esgnn::tensor::Tape;
use esgnn::train::{train, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph_from_seed(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

fn small_synth(seed: u64, n: usize) -> Dataset {
    let s = generate(&SynthConfig {
        n,
        features: 12,
        p_e: 0.3,
        p_i: 0.3,
        kappa: 1.0,
        q: 0.01,
        seed,
        ..Default::default()
    })
    .unwrap();
    Dataset::from_synth("prop", s).normalized(FeatureNorm::RowL2)
}

proptest! {
    #[test]
    fn splits_are_disjoint(n in 10usize..300, train in 0.05f64..0.8, seed in any::<u64>()) {
        let labels = Labels::new((0..n).map(|i| i % 3).collect(), 3).unwrap();
        let val = (1.0 - train) / 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = make_split(&labels, SplitScheme::Fractions { train, val }, &mut rng).unwrap();
        prop_assert!(s.validate(n).is_ok());
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), n);
    }

    #[test]
    fn per_class_splits_are_disjoint(per_class in 1usize..10, seed in any::<u64>()) {
        let labels = Labels::new((0..200).map(|i| i % 4).collect(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = SplitScheme::PerClass { per_class, val: 50, test: 60 };
        let s = make_split(&labels, scheme, &mut rng).unwrap();
        prop_assert!(s.validate(200).is_ok());
        prop_assert_eq!(s.train.len(), 4 * per_class);
        for c in 0..4 {
            prop_assert_eq!(s.train.iter().filter(|&&i| labels.get(i) == c).count(), per_class);
        }
    }

    #[test]
    fn homophily_ignores_class_names(n in 5usize..60, seed in any::<u64>(), shift in 1usize..4) {
        let g = graph_from_seed(n, 0.3, seed);
        prop_assume!(g.num_edges() > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let a = Labels::new(y.clone(), 4).unwrap();
        let b = Labels::new(y.iter().map(|c| (c + shift) % 4).collect(), 4).unwrap();
        prop_assert_eq!(homophily_ratio(&g, &a).unwrap(), homophily_ratio(&g, &b).unwrap());
    }

    #[test]
    fn homophily_ignores_node_order(n in 5usize..60, seed in any::<u64>()) {
        let g = graph_from_seed(n, 0.3, seed);
        prop_assume!(g.num_edges() > 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(seed as usize % n);
        let mut py = vec![0; n];
        for i in 0..n {
            py[perm[i]] = y[i];
        }
        let h = homophily_ratio(&g, &Labels::new(y, 3).unwrap()).unwrap();
        let ph = homophily_ratio(&g.permute(&perm).unwrap(), &Labels::new(py, 3).unwrap()).unwrap();
        prop_assert!((h - ph).abs() < 1e-15);
    }

    #[test]
    fn distinct_labels_have_zero_homophily(n in 2usize..60, seed in any::<u64>()) {
        let g = graph_from_seed(n, 0.4, seed);
        prop_assume!(g.num_edges() > 0);
        let labels = Labels::new((0..n).collect(), n).unwrap();
        prop_assert_eq!(homophily_ratio(&g, &labels).unwrap(), 0.0);
    }

    #[test]
    fn injection_adds_exact_count(n in 10usize..80, rate in 0.0f64..1.5, seed in any::<u64>()) {
        let g = graph_from_seed(n, 0.1, seed);
        let m = g.num_edges();
        let want = (rate * m as f64).round() as usize;
        prop_assume!(want <= n * (n - 1) / 2 - m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, fake) = inject_fake_edges(&g, rate, &mut rng).unwrap();
        prop_assert_eq!(h.num_edges(), m + want);
        prop_assert_eq!(fake.len(), want);
        for &(u, v) in g.edges() {
            prop_assert!(h.has_edge(u, v));
        }
        for &(u, v) in &fake {
            prop_assert!(u < v && !g.has_edge(u, v));
        }
    }

    #[test]
    fn lemma_identity_is_exact(seed in any::<u64>(), n in 2usize..=20, d in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, _) = lemma1_random(&mut rng, n, d, None).unwrap();
        prop_assert!(r.max_dev <= 1e-12, "{}", r.max_dev);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_tags_match_endpoints(k in 3usize..30, seed in any::<u64>()) {
        let n = 3 * k;
        let cfg = SynthConfig { n, features: 4, p_e: 0.4, p_i: 0.4, kappa: 1.0, q: 0.05, seed, ..Default::default() };
        let s = match generate(&cfg) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(s.provenance.len(), s.graph.num_edges());
        for (&(u, v), tag) in s.graph.edges().iter().zip(&s.provenance) {
            let same_class = class_of(u, n) == class_of(v, n);
            let same_kind = kind_of(u, n) == kind_of(v, n);
            prop_assert_eq!(s.labels.get(u) == s.labels.get(v), same_class);
            match tag {
                EdgeTag::Relevant => prop_assert!(same_class),
                EdgeTag::Irrelevant => prop_assert!(!same_class && same_kind),
                EdgeTag::Noise => prop_assert!(!same_class && !same_kind),
            }
        }
    }

    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        let cfg = SynthConfig { n: 60, features: 5, p_e: 0.2, p_i: 0.1, kappa: 1.0, seed, ..Default::default() };
        let (a, b) = (generate(&cfg).unwrap(), generate(&cfg).unwrap());
        prop_assert_eq!(a.graph.edges(), b.graph.edges());
        prop_assert_eq!(a.features, b.features);
        prop_assert_eq!(a.provenance, b.provenance);
    }

    #[test]
    fn tape_replay_is_deterministic(seed in any::<u64>()) {
        let data = small_synth(7, 30);
        let model = EsGnn::new(EsGnnConfig { hidden: 6, dropout: 0.4, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = model.init(data.num_features(), 3, &mut rng).unwrap();
        let mut srng = ChaCha8Rng::seed_from_u64(seed);
        let split = make_split(&data.labels, SplitScheme::DENSE, &mut srng).unwrap();
        let sup = Supervision::from_train(&data.labels, &split).unwrap();
        let input = ModelInput::new(&data.graph, &data.features);
        let run = || {
            let mut t = Tape::new();
            let pv = params.leaves(&mut t).unwrap();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
            let l = model.loss(&mut t, &pv, &input, &sup, Some(&mut drop_rng)).unwrap();
            let g = t.backward(l.total).unwrap();
            (t.scalar(l.total), pv.vars().iter().map(|&v| g.wrt(v)).collect::<Vec<_>>())
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.0.to_bits(), b.0.to_bits());
        prop_assert_eq!(a.1, b.1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn training_records_are_consistent(seed in 0u64..1000, patience in 1usize..8, lambda in 1e-4f64..1.0) {
        let data = small_synth(seed, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = make_split(&data.labels, SplitScheme::DENSE, &mut rng).unwrap();
        let cfg = TrainConfig {
            hidden: 6,
            epochs: 40,
            patience,
            lambda_icr: lambda,
            seed,
            ..Default::default()
        };
        let model = cfg.build().unwrap();
        let r = train(model.as_ref(), &data, None, &split, &cfg).unwrap();
        prop_assert!(r.epochs_run <= r.best_epoch + patience + 1);
        prop_assert_eq!(r.val_curve.len(), r.epochs_run);
        for rec in &r.losses {
            let icr = rec.icr.unwrap();
            prop_assert!((rec.total - (rec.pred + lambda * icr)).abs() <= 1e-10);
        }
    }

    #[test]
    fn training_ignores_test_labels(seed in 0u64..1000) {
        let data = small_synth(seed, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = make_split(&data.labels, SplitScheme::DENSE, &mut rng).unwrap();
        let cfg = TrainConfig { hidden: 6, epochs: 15, patience: 100, seed, ..Default::default() };
        let mut scrambled = data.clone();
        let mut y = data.labels.as_slice().to_vec();
        for &i in &split.test {
            y[i] = (y[i] + 1) % 3;
        }
        scrambled.labels = Labels::new(y, 3).unwrap();
        let model = cfg.build().unwrap();
        let a = train(model.as_ref(), &data, None, &split, &cfg).unwrap();
        let b = train(model.as_ref(), &scrambled, None, &split, &cfg).unwrap();
        prop_assert_eq!(a.losses, b.losses);
        prop_assert_eq!(a.val_curve, b.val_curve);
        prop_assert_eq!(a.params.tensors(), b.params.tensors());
    }
}
