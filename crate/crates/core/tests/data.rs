use std::collections::BTreeSet;

use fedskew_core::data::{stratified_split, synth_generate};
use fedskew_core::evaluation::accuracy;
use fedskew_core::federation::run_centralized;
use fedskew_core::{
    Arch, BatchSize, Method, Mitigations, ProtocolConfig, SplitFractions, SynthSpec,
};
use proptest::prelude::*;

#[test]
fn synth_histogram_follows_counts() {
    let spec = SynthSpec {
        num_categories: 4,
        per_category: vec![100, 100, 100, 100],
        extent: 16,
        seed: 1,
    };
    let ds = synth_generate(&spec).unwrap();
    assert_eq!(ds.histogram(), [100, 100, 100, 100]);
    assert_eq!(ds.image_extent(), [1, 16, 16]);
    assert_eq!(ds, synth_generate(&spec).unwrap());
    let other = synth_generate(&SynthSpec { seed: 2, ..spec }).unwrap();
    assert_ne!(ds.images(), other.images());
}

#[test]
fn synth_rejects_degenerate_specs() {
    assert!(synth_generate(&SynthSpec::balanced(1, 5, 8, 0)).is_err());
    assert!(synth_generate(&SynthSpec {
        num_categories: 2,
        per_category: vec![3, 0],
        extent: 8,
        seed: 0
    })
    .is_err());
    assert!(synth_generate(&SynthSpec {
        num_categories: 3,
        per_category: vec![3, 3],
        extent: 8,
        seed: 0
    })
    .is_err());
}

#[test]
fn linear_probe_falls_short_of_perfect() {
    let ds = synth_generate(&SynthSpec::balanced(4, 100, 16, 1)).unwrap();
    let [tr, va, te] = stratified_split(&ds, SplitFractions::default(), 1).unwrap();
    let arch = Arch {
        input: [1, 16, 16],
        num_classes: 4,
        layers: vec![
            fedskew_core::Layer::Flatten,
            fedskew_core::Layer::Dense {
                in_features: 256,
                out_features: 4,
            },
        ],
    };
    let cfg = ProtocolConfig {
        method: Method::Centralized,
        mitigations: Mitigations::default(),
        batch_size: BatchSize::Fixed(16),
        lr: 0.05,
        epochs: 30,
        model_seed: 1,
        data_seed: 1,
        arch,
        fedavg_uniform: false,
        trace: false,
    };
    let out = run_centralized(&tr, &[&va], &cfg).unwrap();
    assert!(accuracy(&out.model, &tr).unwrap() < 1.0);
    assert!(accuracy(&out.model, &te).unwrap() < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn split_is_a_stratified_partition(
        counts in prop::collection::vec(8usize..60, 2..5),
        train in 0.3f64..0.8,
        seed in any::<u64>(),
    ) {
        let rest = 1.0 - train;
        let fractions = SplitFractions { train, val: rest / 2.0, test: rest - rest / 2.0 };
        let ds = synth_generate(&SynthSpec { num_categories: counts.len(), per_category: counts.clone(), extent: 4, seed: 0 }).unwrap();
        let splits = match stratified_split(&ds, fractions, seed) {
            Ok(s) => s,
            Err(e) => {
                prop_assert!(matches!(e, fedskew_core::Error::Infeasible(_)));
                return Ok(());
            }
        };
        let mut seen = BTreeSet::new();
        for (s, part) in splits.iter().enumerate() {
            prop_assert_eq!(part.num_categories(), ds.num_categories());
            let f = fractions.as_array()[s];
            for (k, &c) in part.histogram().iter().enumerate() {
                prop_assert!((c as f64 - f * counts[k] as f64).abs() <= 1.0);
            }
            for id in part.ids() {
                prop_assert!(seen.insert(*id));
            }
        }
        prop_assert_eq!(seen, ds.ids().iter().copied().collect::<BTreeSet<_>>());
    }
}
