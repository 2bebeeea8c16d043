use eds_core::data::{build_dataset, Arm, ArtifactSpec, DatasetBundle, DatasetMode, Shape, TaskConfig};
use eds_core::eds::{
    aggregate_runs, estimate_js_divergence, evaluate_eds, make_discriminator_dataset, run_datasets,
    train_discriminator, DiscriminatorSpec, EdsSetup, ModelSet,
};
use eds_core::explainers::{
    ConceptSchema, EncodingConfig, Family, Fidelity, InfluenceEncoding, ReferencePool, SyntheticContext,
    SyntheticExplainer, SyntheticExplainerSpec,
};
use eds_core::numerics::Geometry;
use eds_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn entropy_bits(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum()
}

/// JS divergence in bits by summation over the shared support.
fn js_bits(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    entropy_bits(&m) - 0.5 * (entropy_bits(p) + entropy_bits(q))
}

fn bernoulli(p: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| vec![f64::from(u8::from(rng.gen_bool(p)))]).collect()
}

fn scalar_spec(seed: u64) -> DiscriminatorSpec {
    DiscriminatorSpec::for_geometry(Geometry::new(1, 1, 1), DiscriminatorSpec::default_train(seed))
}

#[test]
fn analytic_js_oracle() {
    let js = js_bits(&[0.9, 0.1], &[0.1, 0.9]);
    let h = -(0.1f64 * 0.1f64.log2() + 0.9 * 0.9f64.log2());
    assert!((js - (1.0 - h)).abs() < 1e-12);
    assert!((js - 0.531).abs() < 1e-3);
}

#[test]
fn classifier_js_estimate_matches_bernoulli_oracle() {
    let js = js_bits(&[0.9, 0.1], &[0.1, 0.9]);
    let est = estimate_js_divergence(&bernoulli(0.1, 4000, 1), &bernoulli(0.9, 4000, 2), &scalar_spec(3)).unwrap();
    assert!((est.js_estimate_bits - js).abs() <= 0.05, "estimate {} vs {js}", est.js_estimate_bits);
    // The loss bound: loss >= 1 - JS up to estimation error.
    assert!(est.loss_bits >= 1.0 - js - 0.05);
    assert!(est.kl_slack(js) >= -0.05);
}

#[test]
fn identical_distributions_estimate_near_zero() {
    let est = estimate_js_divergence(&bernoulli(0.3, 4000, 4), &bernoulli(0.3, 4000, 5), &scalar_spec(6)).unwrap();
    assert!(est.js_estimate_bits <= 0.05, "estimate {}", est.js_estimate_bits);
}

#[test]
fn aggregation_of_two_runs() {
    let s = aggregate_runs(&[0.6, 0.8]).unwrap();
    assert!((s.mean - 0.7).abs() < 1e-12);
    assert!((s.std.unwrap() - 0.1 * 2f64.sqrt()).abs() < 1e-12);
    assert!((s.ci95.unwrap() - 1.96 * 0.1).abs() < 1e-12);
    assert!(matches!(aggregate_runs(&[0.5]), Err(Error::Aggregation(_))));
}

fn bundle(per_class: usize) -> DatasetBundle {
    build_dataset(&TaskConfig {
        mode: DatasetMode::DspritesLike,
        classes: vec![Shape::Heart, Shape::Ellipse],
        per_class,
        artifact: ArtifactSpec::default_stripe(),
        spurious_class: 0,
        seed: 9,
    })
    .unwrap()
}

fn explainer(b: &DatasetBundle, family: Family, fidelity: Fidelity) -> SyntheticExplainer<'_> {
    SyntheticExplainer {
        spec: SyntheticExplainerSpec::new(family, fidelity),
        context: SyntheticContext {
            artifact_region: b.artifact.region(b.geometry()),
            pool: ReferencePool::from_partition(&b.model_train, 2, 1).unwrap(),
            k: 8,
            schema: ConceptSchema::for_classes(2),
            spurious_class: 0,
        },
        encoding: EncodingConfig { influence: InfluenceEncoding::Summary, class_count: 2 },
        pool_images: None,
    }
}

#[test]
fn partition_of_140_images_is_arm_balanced() {
    let b = bundle(500);
    assert_eq!(b.discriminator_train.len(), 140);
    let ex = explainer(&b, Family::Concept, Fidelity::Ideal);
    for seed in 0..5 {
        let d = make_discriminator_dataset(&ModelSet::synthetic(4, 0), &b.discriminator_train, &ex, seed).unwrap();
        assert_eq!(d.len(), 140);
        let [clean, spurious] = d.arm_counts();
        assert!(clean.abs_diff(70) <= 1 && spurious.abs_diff(70) <= 1, "{clean}/{spurious}");
        assert!(d.samples.iter().all(|s| s.model.arm == s.arm));
    }
}

#[test]
fn shared_models_are_leakage() {
    let b = bundle(500);
    let ex = explainer(&b, Family::Concept, Fidelity::Ideal);
    let train = ModelSet::synthetic(4, 0);
    let validation = ModelSet::synthetic(2, 3);
    let setup = EdsSetup {
        train_models: &train,
        validation_models: &validation,
        train_partition: &b.discriminator_train,
        validation_partition: &b.validation,
    };
    assert!(matches!(run_datasets(&setup, &ex, 1), Err(Error::Leakage(_))));
}

#[test]
fn overall_is_count_weighted_subclass_mean_and_constant_predictor_is_chance() {
    let b = bundle(1500);
    let ex = explainer(&b, Family::Concept, Fidelity::Noisy);
    let train = ModelSet::synthetic(4, 0);
    let validation = ModelSet::synthetic(2, 4);
    let setup = EdsSetup {
        train_models: &train,
        validation_models: &validation,
        train_partition: &b.discriminator_train,
        validation_partition: &b.validation,
    };
    let (t, v) = run_datasets(&setup, &ex, 2).unwrap();
    let spec = DiscriminatorSpec::for_geometry(t.geometry, DiscriminatorSpec::default_train(7));
    let d = train_discriminator(&t, &spec).unwrap();
    let r = evaluate_eds(&d, &v).unwrap();
    let n: usize = r.counts.iter().sum();
    let weighted: f64 = r.subclass.iter().zip(r.counts).map(|(a, c)| a * c as f64).sum::<f64>() / n as f64;
    assert!((weighted - r.overall).abs() < 1e-12);
    let spurious = v.samples.iter().filter(|s| s.arm == Arm::Spurious).count() as f64 / v.len() as f64;
    assert!((spurious - 0.5).abs() <= 1.0 / (v.len() as f64).sqrt());
}
