use eds_core::baselines::{bhattacharyya, neg_l2, ssim};
use eds_core::data::{decode_partition, encode_partition, Image, LabeledExample, Mask, Subclass};
use eds_core::eds::{balanced_arms, LossDecomposition, Stat};
use eds_core::explainers::{decode_f32_base64, encode_f32_base64, Family, Fidelity, Heatmap};
use eds_core::numerics::{decode_checkpoint, encode_checkpoint, Geometry, ModelCheckpoint, ModelSpec};
use eds_core::pipeline::{to_csv, BaselineCells, EdsCells, Report, ReportRow, CSV_COLUMNS};
use proptest::prelude::*;

fn subclass() -> impl Strategy<Value = Subclass> {
    (0u8..4).prop_map(|c| Subclass::from_code(c).unwrap())
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arms_balance_globally_and_per_subclass(subs in prop::collection::vec(subclass(), 0..300), seed: u64) {
        let arms = balanced_arms(&subs, seed);
        prop_assert_eq!(arms.len(), subs.len());
        let count = |f: &dyn Fn(usize) -> bool| {
            let (mut c, mut s) = (0i64, 0i64);
            for i in (0..subs.len()).filter(|&i| f(i)) {
                if arms[i] == eds_core::data::Arm::Spurious { s += 1 } else { c += 1 }
            }
            (c - s).abs()
        };
        prop_assert!(count(&|_| true) <= 1);
        for sc in Subclass::ALL {
            prop_assert!(count(&|i| subs[i] == sc) <= 1);
        }
        prop_assert_eq!(balanced_arms(&subs, seed), arms);
    }

    #[test]
    fn loss_bound_holds_for_any_loss(loss in 0.0f64..3.0) {
        let d = LossDecomposition::from_loss(loss);
        prop_assert!((0.0..=1.0).contains(&d.js_estimate_bits));
        prop_assert!(d.loss_bits >= 1.0 - d.js_estimate_bits - 1e-15);
        prop_assert!(d.kl_slack(d.js_estimate_bits) >= -1e-15);
    }

    #[test]
    fn subclass_codes_round_trip(label in 0usize..3, artifact: bool, spurious in 0usize..3) {
        let s = Subclass::of(label, artifact, spurious);
        prop_assert_eq!(Subclass::from_code(s.code()), Some(s));
        prop_assert_eq!(s.has_artifact(), artifact);
        prop_assert_eq!(s.is_spurious_class(), label == spurious);
    }

    #[test]
    fn ssim_is_maximal_on_identical_maps(a in prop::collection::vec(-2.0f64..2.0, 144), b in prop::collection::vec(-2.0f64..2.0, 144)) {
        let ha = Heatmap::new(12, 12, a).unwrap();
        let hb = Heatmap::new(12, 12, b).unwrap();
        prop_assert!((ssim(&ha, &ha).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!(ssim(&ha, &hb).unwrap() <= 1.0 + 1e-9);
    }

    #[test]
    fn bhattacharyya_is_maximal_on_identical_distributions(p in distribution(5), q in distribution(5)) {
        prop_assert!((bhattacharyya(&p, &p).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!(bhattacharyya(&p, &q).unwrap() <= 1.0);
    }

    #[test]
    fn neg_l2_is_maximal_on_identical_vectors(a in prop::collection::vec(0.0f64..1.0, 1..8), shift in 0.01f64..1.0) {
        prop_assert_eq!(neg_l2(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        prop_assert!(neg_l2(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn base64_payloads_round_trip(v in prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 0..64)) {
        prop_assert_eq!(decode_f32_base64(&encode_f32_base64(&v)).unwrap(), v);
    }

    #[test]
    fn partitions_round_trip(
        pixels in prop::collection::vec(0.0f32..=1.0, 3 * 36),
        labels in prop::collection::vec(0usize..2, 3),
        flags in prop::collection::vec(any::<bool>(), 3),
        bits in prop::collection::vec(any::<bool>(), 3 * 36),
    ) {
        let g = Geometry::new(6, 6, 1);
        let examples: Vec<LabeledExample> = (0..3)
            .map(|i| {
                let mut mask = Mask::empty(6, 6);
                for p in 0..36 {
                    mask.set(p / 6, p % 6, bits[i * 36 + p]);
                }
                LabeledExample {
                    image: Image { geometry: g, data: pixels[i * 36..(i + 1) * 36].to_vec() },
                    label: labels[i],
                    artifact: flags[i],
                    subclass: Subclass::of(labels[i], flags[i], 1),
                    mask,
                }
            })
            .collect();
        let bytes = encode_partition(&examples, g, 1).unwrap();
        let (back, geometry, spurious) = decode_partition(&bytes).unwrap();
        prop_assert_eq!(back, examples);
        prop_assert_eq!(geometry, g);
        prop_assert_eq!(spurious, 1);
    }

    #[test]
    fn checkpoints_round_trip(seed: u64, step in 0u64..10_000) {
        let spec = ModelSpec::vector_discriminator(5);
        let mut params = spec.init(seed).unwrap();
        params.round_to_f32();
        let c = ModelCheckpoint { params, step, learning_rate: 0.01f32 as f64, seed };
        prop_assert_eq!(decode_checkpoint(&encode_checkpoint(&c).unwrap(), seed).unwrap(), c);
    }

    #[test]
    fn csv_rows_have_fixed_width(mean in -1.0f64..1.0, ci in prop::option::of(0.0f64..0.1), with_eds: bool) {
        let s = Stat { mean, std: ci, ci95: ci };
        let row = ReportRow {
            explainer: "x".into(),
            family: Family::Heatmap,
            fidelity: Some(Fidelity::Noisy),
            artifact: "square".into(),
            eds: with_eds.then_some(EdsCells { overall: s, s_na: s, ns_na: s, s_a: s, ns_a: s }),
            baselines: Some(BaselineCells { kssd: mean, ccm: mean, fam: mean }),
        };
        let r = Report { name: "p".into(), dataset: "d".into(), runs: 2, rows: vec![row] };
        for line in to_csv(&r).lines() {
            prop_assert_eq!(line.split(',').count(), CSV_COLUMNS.len());
        }
        let back: Report = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        prop_assert_eq!(back, r);
    }
}
