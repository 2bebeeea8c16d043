//! Similarity-based comparison metrics: KSSD, CCM and FAM.
//!
//! Each compares explanations with a reference explanation per input:
//! SSIM for heatmaps, a Bhattacharyya coefficient over class labels and
//! artifact presence for influence sets, and negative mean squared
//! distance for concept vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledExample, Mask, Subclass};
use crate::error::{Error, Result};
use crate::explainers::{ConceptSchema, Explainer, Explanation, Family, Heatmap, InfluenceSet};
use crate::rng::{derive_seed, rng_for};
use crate::zoo::ModelId;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let (r, q) = ((i / SSIM_WINDOW) as f64 - c, (i % SSIM_WINDOW) as f64 - c);
            (-(r * r + q * q) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean SSIM over all 8×8 Gaussian-weighted windows. The dynamic range is
/// the span of values across both maps.
pub fn ssim(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Shape(format!("ssim of {}x{} and {}x{} maps", a.height, a.width, b.height, b.width)));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::Shape(format!("maps smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let (lo, hi) =
        a.values.iter().chain(&b.values).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        return Ok(1.0);
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let w = gaussian_window();
    let width = a.width;
    let mut total = 0.0;
    let mut n = 0usize;
    for r0 in 0..=a.height - SSIM_WINDOW {
        for q0 in 0..=width - SSIM_WINDOW {
            let (mut ma, mut mb) = (0.0, 0.0);
            for (i, wi) in w.iter().enumerate() {
                let p = (r0 + i / SSIM_WINDOW) * width + q0 + i % SSIM_WINDOW;
                ma += wi * a.values[p];
                mb += wi * b.values[p];
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for (i, wi) in w.iter().enumerate() {
                let p = (r0 + i / SSIM_WINDOW) * width + q0 + i % SSIM_WINDOW;
                let (da, db) = (a.values[p] - ma, b.values[p] - mb);
                va += wi * da * da;
                vb += wi * db * db;
                cov += wi * da * db;
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1;
        }
    }
    Ok(total / n as f64)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::Domain("distribution has negative or NaN mass".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("distribution sums to {s}")));
    }
    Ok(())
}

/// Σ √(p_i q_i).
pub fn bhattacharyya(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum::<f64>().min(1.0))
}

/// −(1/c) Σ (a_i − b_i)².
pub fn neg_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("concept vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(-a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// Class-label and artifact-presence distributions of a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceProfile {
    pub classes: Vec<f64>,
    pub presence: [f64; 2],
}

impl InfluenceProfile {
    pub fn of(set: &InfluenceSet, class_count: usize) -> Result<Self> {
        let k = set.refs.len();
        if k == 0 {
            return Err(Error::Precondition("empty influence set".into()));
        }
        let mut classes = vec![0.0; class_count];
        let mut with = 0.0;
        for r in &set.refs {
            *classes
                .get_mut(r.label)
                .ok_or_else(|| Error::Domain(format!("reference label {} outside classes", r.label)))? +=
                1.0 / k as f64;
            with += r.artifact as u8 as f64 / k as f64;
        }
        Ok(InfluenceProfile { classes, presence: [1.0 - with, with] })
    }

    /// Point masses at one class and one presence value.
    pub fn point(class: usize, artifact: bool, class_count: usize) -> Self {
        let mut classes = vec![0.0; class_count];
        classes[class] = 1.0;
        InfluenceProfile { classes, presence: if artifact { [0.0, 1.0] } else { [1.0, 0.0] } }
    }

    /// Product of the class and presence coefficients.
    pub fn similarity(&self, other: &InfluenceProfile) -> Result<f64> {
        Ok(bhattacharyya(&self.classes, &other.classes)? * bhattacharyya(&self.presence, &other.presence)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Ssim,
    Bhattacharyya,
    NegL2,
}

impl Similarity {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Heatmap => Similarity::Ssim,
            Family::Influence => Similarity::Bhattacharyya,
            Family::Concept => Similarity::NegL2,
        }
    }
}

/// What the reference explanations are built from.
#[derive(Debug, Clone)]
pub struct ReferenceContext {
    pub artifact_region: Mask,
    pub spurious_class: usize,
    pub class_count: usize,
    pub schema: ConceptSchema,
}

/// Which reference an explanation is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Artifact region, spurious class with artifact, or true concepts with
    /// the artifact switched on.
    Spurious,
    /// Shape mask, true class and presence, or true concepts.
    True,
}

/// Similarity between `explanation` and the chosen reference for `example`.
pub fn reference_similarity(
    explanation: &Explanation,
    example: &LabeledExample,
    reference: Reference,
    ctx: &ReferenceContext,
) -> Result<f64> {
    match explanation {
        Explanation::Heatmap(h) => {
            let mask = match reference {
                Reference::Spurious => &ctx.artifact_region,
                Reference::True => &example.mask,
            };
            ssim(h, &Heatmap::new(mask.height, mask.width, mask.to_f64())?)
        }
        Explanation::Influence(set) => {
            let r = match reference {
                Reference::Spurious => InfluenceProfile::point(ctx.spurious_class, true, ctx.class_count),
                Reference::True => InfluenceProfile::point(example.label, example.artifact, ctx.class_count),
            };
            InfluenceProfile::of(set, ctx.class_count)?.similarity(&r)
        }
        Explanation::Concept(c) => {
            let mut truth = ctx.schema.truth(example.label, example.artifact);
            if reference == Reference::Spurious {
                truth[ctx.schema.artifact_position()] = 1.0;
            }
            neg_l2(&c.values, &truth)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSizes {
    pub kssd: usize,
    pub ccm: usize,
    pub fam: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub explainer: String,
    pub kssd: f64,
    pub ccm: f64,
    pub fam: f64,
    pub similarity: Similarity,
    pub sizes: SubsetSizes,
    /// The metric definitions used here are operational reconstructions.
    pub definitions: String,
}

fn mean_similarity(
    explainer: &dyn Explainer,
    models: &[ModelId],
    examples: &[&LabeledExample],
    reference: Reference,
    ctx: &ReferenceContext,
    seed: u64,
    subset: &str,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Precondition(format!("{subset} evaluation subset is empty")));
    }
    if models.is_empty() {
        return Err(Error::Precondition(format!("no models for the {subset} subset")));
    }
    let mut total = 0.0;
    for (i, e) in examples.iter().enumerate() {
        let model = models[rng_for(seed, &[i as u64]).gen_range(0..models.len())];
        let x = explainer.explanation(model, e, derive_seed(seed, &[0xb1, i as u64]))?;
        total += reference_similarity(&x, e, reference, ctx)?;
    }
    Ok(total / examples.len() as f64)
}

/// KSSD: spurious-arm explanations vs the spurious reference on
/// artifact-bearing inputs. CCM: spurious-arm explanations vs the true
/// reference on artifact-free inputs. FAM: clean-arm explanations vs the
/// spurious reference on non-spurious-class inputs with the artifact.
/// Each input is explained by a model drawn uniformly from its arm.
pub fn baseline_metrics(
    explainer: &dyn Explainer,
    spurious: &[ModelId],
    clean: &[ModelId],
    examples: &[LabeledExample],
    ctx: &ReferenceContext,
    seed: u64,
) -> Result<BaselineReport> {
    let pick = |f: &dyn Fn(Subclass) -> bool| examples.iter().filter(|e| f(e.subclass)).collect::<Vec<_>>();
    let with = pick(&|s| s.has_artifact());
    let without = pick(&|s| !s.has_artifact());
    let ns_a = pick(&|s| s == Subclass::NsA);
    Ok(BaselineReport {
        explainer: explainer.id(),
        kssd: mean_similarity(explainer, spurious, &with, Reference::Spurious, ctx, derive_seed(seed, &[1]), "KSSD")?,
        ccm: mean_similarity(explainer, spurious, &without, Reference::True, ctx, derive_seed(seed, &[2]), "CCM")?,
        fam: mean_similarity(explainer, clean, &ns_a, Reference::Spurious, ctx, derive_seed(seed, &[3]), "FAM")?,
        similarity: Similarity::for_family(explainer.family()),
        sizes: SubsetSizes { kssd: with.len(), ccm: without.len(), fam: ns_a.len() },
        definitions: "operational".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(side: usize, f: impl Fn(usize) -> f64) -> Heatmap {
        Heatmap::new(side, side, (0..side * side).map(f).collect()).unwrap()
    }

    #[test]
    fn ssim_identity_and_shift() {
        let a = map(12, |i| ((i * 7) % 5) as f64);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        // Single window, constant maps 0.2 and 0.7: only the luminance term
        // is left, with range 0.5.
        let c = map(8, |_| 0.2);
        let d = map(8, |_| 0.7);
        let c1 = (0.01f64 * 0.5).powi(2);
        let expected = (2.0 * 0.2 * 0.7 + c1) / (0.04 + 0.49 + c1);
        assert!((ssim(&c, &d).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_negation_is_negative() {
        let a = map(8, |i| if (i / 8 + i % 8) % 2 == 0 { 1.0 } else { -1.0 });
        let b = Heatmap::new(8, 8, a.values.iter().map(|v| -v).collect()).unwrap();
        assert!(ssim(&a, &b).unwrap() < 0.0);
        assert!(ssim(&a, &map(9, |_| 0.0)).is_err());
    }

    #[test]
    fn bhattacharyya_cases() {
        assert!((bhattacharyya(&[0.3, 0.7], &[0.3, 0.7]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(bhattacharyya(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = bhattacharyya(&[0.5, 0.5], &[0.1, 0.9]).unwrap();
        assert!((v - (0.05f64.sqrt() + 0.45f64.sqrt())).abs() < 1e-12);
        assert!(bhattacharyya(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn neg_l2_cases() {
        assert_eq!(neg_l2(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(neg_l2(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), -0.5);
        assert_eq!(neg_l2(&[0.0; 4], &[1.0; 4]).unwrap(), -1.0);
        assert!(neg_l2(&[0.0], &[0.0, 1.0]).is_err());
    }
}
