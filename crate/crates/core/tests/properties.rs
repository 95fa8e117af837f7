use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use i3dol::attention::{AttentionConfig, GeometricAttention};
use i3dol::centroid::CentroidConfig;
use i3dol::config::RunConfig;
use i3dol::data::{format_cloud, generate, incremental_split, parse_cloud, GenerateConfig, PCD_DECIMALS};
use i3dol::encoder::{Encoder, EncoderConfig};
use i3dol::geometry::{normalize, Point, PointCloud};
use i3dol::head::{argmax, record_statistics, rectify_scores, ClassScores, ClassifierConfig, StateRecord, StateStats};
use i3dol::model::{Architecture, Model, ModelConfig};
use i3dol::nncore::{Graph, ParamSet, Tensor};
use i3dol::trainer::{herding, Selection};

fn cloud_from_seed(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Point> = (0..n)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    normalize(&PointCloud::new(pts, 0)).unwrap()
}

fn small_model(seed: u64, arch: Architecture) -> Model {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            widths: vec![3, 8, 12],
            tap: 2,
        },
        centroid: CentroidConfig {
            structures: 6,
            neighbors: 5,
            refine_iters: 1,
        },
        reduction: 3,
        classifier: ClassifierConfig { hidden: [8, 8, 6] },
    };
    Model::new(&cfg, arch, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn distribution(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Stats for a state-2 view where classes `0..past` were learned in state 1.
fn two_state_stats(past: usize, psi: &[(f64, f64)], psi_new_1: f64, psi_new_2: f64) -> StateStats {
    let mut st = StateStats::new();
    st.record_state(
        1,
        StateRecord {
            psi_new: psi_new_1,
            psi_cur: BTreeMap::new(),
        },
    )
    .unwrap();
    for (t, &(init, _)) in psi.iter().enumerate().take(past) {
        st.record_class(t, 1, init).unwrap();
    }
    let cur = psi.iter().take(past).enumerate().map(|(t, &(_, c))| (t, c)).collect();
    st.record_state(
        2,
        StateRecord {
            psi_new: psi_new_2,
            psi_cur: cur,
        },
    )
    .unwrap();
    st
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..6, logits in prop::collection::vec(-60.0f64..60.0, 30)) {
        let cols = logits.len() / rows;
        let t = Tensor::new(rows, cols, logits[..rows * cols].to_vec()).unwrap();
        let mut g = Graph::new();
        let x = g.input(t);
        let p = g.softmax(x).unwrap();
        for r in 0..rows {
            let row = g.value(p).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn encoder_is_per_point_equivariant(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let enc = Encoder::new(&mut ps, &EncoderConfig { widths: vec![3, 8, 8], tap: 2 }, &mut rng).unwrap();
        let cloud = cloud_from_seed(seed ^ 1, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let a = enc.encode(&ps, &cloud).unwrap();
        let b = enc.encode(&ps, &cloud.permuted(&perm)).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(b.row(i), a.row(p));
        }
    }

    #[test]
    fn attention_gates_lie_strictly_inside_unit_interval(seed in any::<u64>(), rows in 1usize..10, scale in 0.01f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let att = GeometricAttention::new(&mut ps, &AttentionConfig::new(8, 4).unwrap(), &mut rng).unwrap();
        let fg = Tensor::new(rows, 8, (0..rows * 8).map(|_| rng.random_range(-scale..scale)).collect()).unwrap();
        let (fp, ag) = att.apply(&ps, &fg).unwrap();
        for i in 0..fg.len() {
            let a = ag.data()[i];
            prop_assert!(a > 0.0 && a < 1.0);
            prop_assert_eq!(fp.data()[i], a * fg.data()[i] + fg.data()[i]);
        }
    }

    #[test]
    fn rectification_touches_only_past_scores_of_new_argmax(
        raw in prop::collection::vec(0.01f64..1.0, 4..8),
        psi in prop::collection::vec((0.05f64..1.0, 0.05f64..1.0), 8),
        psi_new in (0.05f64..1.0, 0.05f64..1.0),
        past in 1usize..4,
    ) {
        let scores = distribution(&raw);
        let past = past.min(scores.len() - 1);
        let st = two_state_stats(past, &psi, psi_new.0, psi_new.1);
        let out = rectify_scores(&scores, &st, 2, past).unwrap();
        prop_assert_eq!(&out[past..], &scores[past..]);
        if argmax(&scores) < past {
            prop_assert_eq!(&out, &scores);
        } else {
            for t in 0..past {
                let coef = (psi[t].0 / psi[t].1) * (psi_new.1 / psi_new.0);
                prop_assert_eq!(out[t], scores[t] * coef);
            }
        }
        prop_assert_eq!(rectify_scores(&scores, &st, 1, past).unwrap(), scores);
    }

    #[test]
    fn recorded_statistics_match_direct_sums(seed in any::<u64>(), per_class in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = 4;
        let mut table = |class: usize| ClassScores {
            class,
            scores: (0..per_class)
                .map(|_| distribution(&(0..classes).map(|_| rng.random_range(0.01..1.0)).collect::<Vec<_>>()))
                .collect(),
        };
        let past = vec![table(0), table(1)];
        let new = vec![table(2), table(3)];
        let mut st = StateStats::new();
        st.record_state(1, StateRecord { psi_new: 0.5, psi_cur: BTreeMap::new() }).unwrap();
        st.record_class(0, 1, 0.5).unwrap();
        st.record_class(1, 1, 0.5).unwrap();
        record_statistics(&mut st, 2, &new, &past).unwrap();
        let direct = |cs: &ClassScores| {
            let mut total = 0.0;
            for row in &cs.scores {
                total += row[cs.class];
            }
            total / cs.scores.len() as f64
        };
        let psi_new = (direct(&new[0]) + direct(&new[1])) / 2.0;
        prop_assert!((st.state(2).unwrap().psi_new - psi_new).abs() < 1e-12);
        for cs in &past {
            prop_assert!((st.state(2).unwrap().psi_cur[&cs.class] - direct(cs)).abs() < 1e-12);
        }
        for cs in &new {
            prop_assert!((st.class(cs.class).unwrap().psi_init - direct(cs)).abs() < 1e-12);
        }
    }

    #[test]
    fn herding_picks_distinct_rows(seed in any::<u64>(), rows in 1usize..30, count in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Tensor::new(rows, 5, (0..rows * 5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let picked = herding(&f, count);
        prop_assert_eq!(picked.len(), count.min(rows));
        prop_assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), picked.len());
        prop_assert!(picked.iter().all(|&i| i < rows));
    }

    #[test]
    fn pcd_round_trip_is_exact(seed in any::<u64>(), n in 1usize..50, label in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = 10f64.powi(PCD_DECIMALS as i32);
        let pts: Vec<Point> = (0..n)
            .map(|_| [0, 1, 2].map(|_| (rng.random_range(-1.0f64..1.0) * q).round() / q))
            .collect();
        let cloud = PointCloud::new(pts, label);
        prop_assert_eq!(parse_cloud(&format_cloud(&cloud), "p").unwrap(), cloud);
    }

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        states in 1usize..10,
        exemplars in 0usize..500,
        lr in 1e-5f64..1.0,
        flags in prop::array::uniform5(any::<bool>()),
        random in any::<bool>(),
    ) {
        let cfg = RunConfig {
            seed,
            states,
            exemplars,
            lr,
            agc: flags[0],
            gaa: flags[1],
            sfc: flags[2],
            joint: flags[3],
            augment: flags[4],
            selection: if random { Selection::Random } else { Selection::Herding },
            ..RunConfig::default()
        };
        prop_assert_eq!(RunConfig::from_text(&cfg.to_text(), "echo").unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn global_feature_ignores_point_order(seed in any::<u64>(), n in 6usize..40, attention in any::<bool>(), adaptive in any::<bool>()) {
        let model = small_model(seed, Architecture { adaptive_centroids: adaptive, attention });
        let cloud = cloud_from_seed(seed.wrapping_add(9), n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = model.embed(std::slice::from_ref(&cloud)).unwrap();
        let b = model.embed(&[cloud.permuted(&perm)]).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn expansion_preserves_old_logits(seed in any::<u64>(), extra in 1usize..4) {
        let mut model = small_model(seed, Architecture::default());
        let clouds = [cloud_from_seed(seed ^ 3, 12), cloud_from_seed(seed ^ 4, 12)];
        let logits = |m: &Model| {
            let mut g = Graph::new();
            let vars = g.bind_params(&m.params);
            let out = m.forward(&mut g, &vars, &[&clouds[0], &clouds[1]]).unwrap();
            g.value(out.logits).clone()
        };
        let before = logits(&model);
        model.expand_classes(extra, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let after = logits(&model);
        prop_assert_eq!(after.cols(), before.cols() + extra);
        for r in 0..before.rows() {
            prop_assert_eq!(&after.row(r)[..before.cols()], before.row(r));
        }
    }

    #[test]
    fn splits_are_class_and_sample_disjoint(seed in any::<u64>(), per_state in prop::sample::select(vec![1usize, 2, 5])) {
        let dataset = generate(&GenerateConfig {
            num_classes: 10,
            train_per_class: 3,
            test_per_class: 2,
            points: 64,
            seed,
        })
        .unwrap();
        let split = incremental_split(&dataset, &vec![per_state; 10 / per_state], seed).unwrap();
        let mut order = split.class_order.clone();
        order.sort();
        prop_assert_eq!(order, (0..10).collect::<Vec<_>>());
        let mut seen = BTreeSet::new();
        for state in &split.states {
            let classes: BTreeSet<usize> = state.train.iter().chain(&state.test).map(|c| c.label).collect();
            prop_assert_eq!(classes.iter().copied().collect::<Vec<_>>(), state.classes().collect::<Vec<_>>());
            prop_assert!(classes.is_disjoint(&seen));
            seen.extend(classes);
            for t in &state.test {
                prop_assert!(!state.train.contains(t));
            }
        }
    }
}
