use std::sync::OnceLock;

use gesturebench::classify::{classify_one, evaluate, score, EvalConfig, Gallery, LabeledBundle, MethodId};
use gesturebench::dataset::{normalize_samples, prepare_bundles};
use gesturebench::descriptors::{FeatureConfig, FeatureSet};
use gesturebench::mask::NormalizationConfig;
use gesturebench::matching::CombineWeights;
use gesturebench::synth::{render_dataset, SynthConfig};
use proptest::prelude::*;

const CLASSES: usize = 6;
const PER_CLASS: usize = 5;

fn data() -> &'static [LabeledBundle] {
    static CELL: OnceLock<Vec<LabeledBundle>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = SynthConfig {
            classes: CLASSES,
            per_class: PER_CLASS,
            seed: 21,
            ..SynthConfig::default()
        };
        let masks = normalize_samples(&render_dataset(&cfg).unwrap(), &NormalizationConfig::default()).unwrap();
        prepare_bundles(&masks, &FeatureConfig::default(), FeatureSet::ALL).unwrap()
    })
}

/// Gallery of the instances listed in `picks` for every class.
fn gallery(picks: &[usize]) -> Gallery {
    Gallery::new(
        data()
            .iter()
            .enumerate()
            .filter(|(i, _)| picks.contains(&(i % PER_CLASS)))
            .map(|(_, b)| b.clone())
            .collect(),
    )
    .unwrap()
}

fn method() -> impl Strategy<Value = MethodId> {
    (0usize..8).prop_map(|k| MethodId::ALL[k])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank_matches_resort_oracle(m in method(), probe in 0usize..CLASSES * PER_CLASS, g0 in 0usize..PER_CLASS) {
        let g = gallery(&[g0]);
        let p = &data()[probe];
        let w = CombineWeights::default();
        let res = classify_one(p, &g, m, &w).unwrap();
        let mut per_class: Vec<(String, f64)> = Vec::new();
        for e in g.entries() {
            let c = score(&p.bundle, &e.bundle, m, &w).unwrap();
            match per_class.iter_mut().find(|(l, _)| *l == e.label) {
                Some(slot) => slot.1 = slot.1.min(c),
                None => per_class.push((e.label.clone(), c)),
            }
        }
        let truth = per_class.iter().find(|(l, _)| *l == p.label).unwrap().1;
        let better = per_class
            .iter()
            .filter(|(l, c)| *c < truth || (*c == truth && *l < p.label))
            .count();
        prop_assert_eq!(res.rank, better + 1);
        prop_assert!(res.candidates.windows(2).all(|w| w[0].cost <= w[1].cost));
    }

    #[test]
    fn extra_gallery_images_never_raise_class_cost(m in method(), probe in 0usize..CLASSES * PER_CLASS, a in 0usize..PER_CLASS, b in 0usize..PER_CLASS) {
        prop_assume!(a != b);
        let w = CombineWeights::default();
        let p = &data()[probe];
        let small = classify_one(p, &gallery(&[a]), m, &w).unwrap();
        let large = classify_one(p, &gallery(&[a, b]), m, &w).unwrap();
        for c in &small.candidates {
            let after = large.candidates.iter().find(|x| x.label == c.label).unwrap();
            prop_assert!(after.cost <= c.cost);
        }
    }

    #[test]
    fn exact_match_is_rank_one(m in method(), probe in 0usize..CLASSES * PER_CLASS) {
        let inst = probe % PER_CLASS;
        let res = classify_one(&data()[probe], &gallery(&[inst]), m, &CombineWeights::default()).unwrap();
        prop_assert_eq!(res.rank, 1);
        prop_assert_eq!(res.top1().cost, 0.0);
    }

    #[test]
    fn ranking_ignores_joint_weight_scale(probe in 0usize..CLASSES * PER_CLASS, lambda in 0.05f64..20.0, which in 0usize..2) {
        let m = [MethodId::Scdt, MethodId::Sch][which];
        let w = CombineWeights::default();
        let scaled = CombineWeights::new(w.alpha * lambda, w.beta * lambda).unwrap();
        let g = gallery(&[0]);
        let base = classify_one(&data()[probe], &g, m, &w).unwrap();
        let other = classify_one(&data()[probe], &g, m, &scaled).unwrap();
        let gap = base.candidates[1].cost - base.candidates[0].cost;
        if gap > 1e-12 * base.candidates[1].cost {
            prop_assert_eq!(&base.top1().label, &other.top1().label);
        }
    }
}

#[test]
fn evaluate_is_pure_and_crc_is_monotone() {
    for m in MethodId::ALL {
        let cfg = EvalConfig {
            method: m,
            g: 2,
            repeats: 4,
            seed: 5,
            threads: 2,
            weights: CombineWeights::default(),
        };
        let a = evaluate(data(), &cfg).unwrap();
        let b = evaluate(data(), &cfg).unwrap();
        assert_eq!(a, b);
        for curve in a.per_repeat.iter().chain(std::iter::once(&a.mean)) {
            assert!(curve.windows(2).all(|w| w[0] <= w[1]), "{m}: {curve:?}");
            assert_eq!(*curve.last().unwrap(), 100.0);
        }
    }
}
