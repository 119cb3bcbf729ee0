use std::collections::BTreeSet;

use proptest::prelude::*;

use nocguard::cnn::{batch_gradient, train, DetectorModel, DetectorSample, Tensor, TrainConfig};
use nocguard::localize::{
    binarize, dir_sets, fuse, localize_masks, validate_attackers, vce, DirMask,
};
use nocguard::sim::{Attacker, MeshConfig, ScenarioConfig, Simulator};
use nocguard::telemetry::{normalize_boc, route_ground_truth, FeatureFrame, FeatureKind};
use nocguard::traffic::Pattern;
use nocguard::{Direction, NodeId};

fn truth_masks(radix: usize, attacker: usize, tv: usize) -> Vec<DirMask> {
    let gt = route_ground_truth(radix, &[NodeId(attacker)], NodeId(tv)).unwrap();
    Direction::ALL
        .into_iter()
        .map(|d| DirMask {
            direction: d,
            radix,
            mask: gt.mask(d).to_vec(),
        })
        .collect()
}

fn masks_strategy() -> impl Strategy<Value = (usize, Vec<DirMask>)> {
    (2usize..=8).prop_flat_map(|r| {
        let one =
            (0usize..4, prop::collection::vec(0u8..=1, r * r)).prop_map(move |(d, mask)| DirMask {
                direction: Direction::from_index(d).unwrap(),
                radix: r,
                mask,
            });
        (Just(r), prop::collection::vec(one, 0..6))
    })
}

/// Distinct attacker and target victim on a mesh of radix 2..=10.
fn route_strategy() -> impl Strategy<Value = (usize, usize, usize)> {
    (2usize..=10)
        .prop_flat_map(|r| (Just(r), 0..r * r, 1..r * r))
        .prop_map(|(r, a, off)| (r, a, (a + off) % (r * r)))
}

fn sample(radix: usize, seed: u64) -> DetectorSample {
    let data = (0..4 * radix * radix)
        .map(|i| ((i as u64 * 2_654_435_761 + seed) % 97) as f64 / 96.0)
        .collect();
    DetectorSample {
        input: Tensor::from_vec(4, radix, radix, data).unwrap(),
        label: (seed % 2) as f64,
    }
}

fn quiet_config(
    radix: usize,
    seed: u64,
    rate: f64,
    attacker: Option<(usize, usize)>,
) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        mesh: MeshConfig {
            radix,
            seed,
            ..MeshConfig::default()
        },
        pattern: Pattern::UniformRandom,
        normal_rate: rate,
        warmup_cycles: 0,
        run_cycles: 400,
        sample_period: 100,
        ..ScenarioConfig::default()
    };
    if let Some((a, tv)) = attacker {
        cfg.attackers = vec![Attacker {
            node: NodeId(a),
            fir: 0.8,
        }];
        cfg.target_victim = NodeId(tv);
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fused_support_is_the_union((_r, masks) in masks_strategy()) {
        let (_, fused) = fuse(&masks).unwrap();
        let union: BTreeSet<NodeId> = masks.iter().flat_map(|m| m.support()).collect();
        prop_assert_eq!(fused, union);
    }

    #[test]
    fn binarize_is_monotone_in_threshold(
        probs in prop::collection::vec(0.0f64..=1.0, 36),
        d in 0usize..4,
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let dir = Direction::from_index(d).unwrap();
        let strict = binarize(&probs, dir, 6, hi).support();
        let loose = binarize(&probs, dir, 6, lo).support();
        prop_assert!(strict.is_subset(&loose));
        for n in &loose {
            prop_assert!(dir.port_exists(*n, 6));
        }
    }

    #[test]
    fn validation_never_confirms_a_victim_or_the_target(
        victims in prop::collection::btree_set(0usize..36, 0..20),
        candidates in prop::collection::vec(0usize..40, 1..8),
        tv in 0usize..36,
    ) {
        let victims: BTreeSet<NodeId> = victims.into_iter().map(NodeId).collect();
        let cands: Vec<NodeId> = candidates.into_iter().map(NodeId).collect();
        if let Ok(confirmed) = validate_attackers(&cands, NodeId(tv), &victims, 6) {
            for a in confirmed {
                prop_assert!(!victims.contains(&a));
                prop_assert_ne!(a, NodeId(tv));
                prop_assert!(a.0 < 36);
            }
        }
    }

    #[test]
    fn vce_only_adds_detections((r, a, tv) in route_strategy(), keep in prop::collection::vec(any::<bool>(), 32)) {
        let full = dir_sets(&truth_masks(r, a, tv));
        let mut partial = full.clone();
        let mut k = keep.iter().cycle();
        for s in partial.iter_mut() {
            s.retain(|_| *k.next().unwrap());
        }
        let out = vce(&partial, Some(NodeId(tv)), r);
        for d in 0..4 {
            prop_assert!(partial[d].is_subset(&out.sets[d]));
            // Completion replays routes toward the true target, so it stays
            // inside the true footprint.
            prop_assert!(out.sets[d].is_subset(&full[d]));
        }
    }

    #[test]
    fn truth_masks_name_the_attacker((r, a, tv) in route_strategy(), use_vce in any::<bool>()) {
        let rep = localize_masks(r, 0, &truth_masks(r, a, tv), use_vce).unwrap();
        prop_assert_eq!(rep.target_victim, NodeId(tv));
        prop_assert_eq!(rep.attackers, vec![NodeId(a)]);
    }

    #[test]
    fn normalization_is_idempotent(values in prop::collection::vec(0u32..1000, 20)) {
        let mut frame = FeatureFrame::zeros(Direction::N, FeatureKind::Boc, 5, 0);
        frame.values = values.into_iter().map(f64::from).collect();
        let once = normalize_boc(&frame);
        let twice = normalize_boc(&once);
        for (x, y) in once.values.iter().zip(&twice.values) {
            prop_assert!((0.0..=1.0).contains(x));
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn padding_round_trips(values in prop::collection::vec(-5.0f64..5.0, 30), d in 0usize..4) {
        let dir = Direction::from_index(d).unwrap();
        let mut frame = FeatureFrame::zeros(dir, FeatureKind::Vco, 6, 3);
        frame.values = values;
        let back = FeatureFrame::from_padded(dir, FeatureKind::Vco, 6, 3, &frame.padded()).unwrap();
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn batch_gradient_ignores_sample_order(seeds in prop::collection::vec(0u64..1000, 2..6), rot in 0usize..6) {
        let model = DetectorModel::init(4, 7);
        let samples: Vec<_> = seeds.iter().map(|&s| sample(4, s)).collect();
        let batch: Vec<&DetectorSample> = samples.iter().collect();
        let mut rotated = batch.clone();
        rotated.rotate_left(rot % batch.len());
        let (l1, g1) = batch_gradient(&model, &batch, false).unwrap();
        let (l2, g2) = batch_gradient(&model, &rotated, false).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0));
        for (x, y) in g1.iter().zip(&g2) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), (r, a, tv) in route_strategy()) {
        let cfg = quiet_config(r.max(3), seed, 0.02, Some((a % 9, tv % 9)).filter(|(a, tv)| a != tv));
        let run = || {
            let mut sim = Simulator::new(&cfg).unwrap();
            (0..3).map(|_| sim.advance_window()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn boc_adds_across_windows(seed in any::<u64>(), split in 1u64..200) {
        let cfg = quiet_config(4, seed, 0.05, Some((3, 12)));
        let mut a = Simulator::new(&cfg).unwrap();
        let mut b = Simulator::new(&cfg).unwrap();
        for _ in 0..split {
            a.step();
        }
        let first = a.snapshot();
        for _ in split..200 {
            a.step();
        }
        let second = a.snapshot();
        for _ in 0..200 {
            b.step();
        }
        let whole = b.snapshot();
        for node in 0..16 {
            for d in 0..4 {
                let sum = first.ports[node][d].map(|p| p.boc_window)
                    .zip(second.ports[node][d].map(|p| p.boc_window))
                    .map(|(x, y)| x + y);
                prop_assert_eq!(sum, whole.ports[node][d].map(|p| p.boc_window));
            }
        }
        prop_assert!(a.check_invariants().is_ok());
    }

    #[test]
    fn training_is_reproducible(seed in 0u64..1000) {
        let data: Vec<_> = (0..12).map(|i| sample(4, seed * 31 + i)).collect();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, seed, patience: 0, ..TrainConfig::default() };
        let seq = train(DetectorModel::init(4, seed), &data, &TrainConfig { parallel: false, ..cfg }).unwrap();
        let par = train(DetectorModel::init(4, seed), &data, &TrainConfig { parallel: true, ..cfg }).unwrap();
        prop_assert_eq!(seq.model, par.model);
    }
}
