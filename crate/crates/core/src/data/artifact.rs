//! Spurious artifacts injected into images.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raster::{Image, Mask};
use crate::error::{Error, Result};
use crate::numerics::Geometry;
use crate::rng::rng_for;

/// Column of the stripe's left edge.
pub const STRIPE_OFFSET: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArtifactSpec {
    /// `side × side` block anchored at pixel (0, 0).
    Square { side: usize, fill: f32 },
    /// Columns `[offset, offset + width)`.
    Stripe { offset: usize, width: usize, fill: f32 },
    /// I.i.d. zero-mean Gaussian noise on every pixel, clamped to `[0, 1]`.
    Noise { sigma: f64, seed: u64 },
}

impl ArtifactSpec {
    pub fn default_square() -> Self {
        ArtifactSpec::Square { side: 4, fill: 1.0 }
    }

    pub fn default_stripe() -> Self {
        ArtifactSpec::Stripe { offset: STRIPE_OFFSET, width: 2, fill: 1.0 }
    }

    pub fn default_noise() -> Self {
        ArtifactSpec::Noise { sigma: 0.1, seed: 0 }
    }

    pub fn id(&self) -> &'static str {
        match self {
            ArtifactSpec::Square { .. } => "square",
            ArtifactSpec::Stripe { .. } => "stripe",
            ArtifactSpec::Noise { .. } => "noise",
        }
    }

    /// Scalar strength used to order sweep points: square side, stripe
    /// width or noise sigma.
    pub fn intensity(&self) -> f64 {
        match *self {
            ArtifactSpec::Square { side, .. } => side as f64,
            ArtifactSpec::Stripe { width, .. } => width as f64,
            ArtifactSpec::Noise { sigma, .. } => sigma,
        }
    }

    pub fn validate(&self, geometry: Geometry) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            ArtifactSpec::Square { side, fill } => {
                if !(0.0..=1.0).contains(&fill) {
                    return bad(format!("square fill {fill} outside [0, 1]"));
                }
                if side == 0 || side > geometry.height || side > geometry.width {
                    return bad(format!("square side {side} does not fit {}x{}", geometry.height, geometry.width));
                }
            }
            ArtifactSpec::Stripe { offset, width, fill } => {
                if !(0.0..=1.0).contains(&fill) {
                    return bad(format!("stripe fill {fill} outside [0, 1]"));
                }
                if width == 0 || offset + width > geometry.width {
                    return bad(format!(
                        "stripe columns [{offset}, {}) outside width {}",
                        offset + width,
                        geometry.width
                    ));
                }
            }
            ArtifactSpec::Noise { sigma, .. } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return bad(format!("noise sigma {sigma} must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Pixels the artifact occupies; every pixel for noise.
    pub fn region(&self, geometry: Geometry) -> Mask {
        let mut m = Mask::empty(geometry.height, geometry.width);
        for row in 0..geometry.height {
            for col in 0..geometry.width {
                let on = match *self {
                    ArtifactSpec::Square { side, .. } => row < side && col < side,
                    ArtifactSpec::Stripe { offset, width, .. } => col >= offset && col < offset + width,
                    ArtifactSpec::Noise { .. } => true,
                };
                if on {
                    m.set(row, col, true);
                }
            }
        }
        m
    }

    /// Applies the artifact in place. `key` selects the noise draw so each
    /// image gets its own, reproducible, perturbation.
    pub fn apply(&self, image: &mut Image, key: u64) -> Result<()> {
        self.validate(image.geometry)?;
        let g = image.geometry;
        match *self {
            ArtifactSpec::Square { side, fill } => {
                for row in 0..side {
                    for col in 0..side {
                        image.set_pixel(row, col, fill);
                    }
                }
            }
            ArtifactSpec::Stripe { offset, width, fill } => {
                for row in 0..g.height {
                    for col in offset..offset + width {
                        image.set_pixel(row, col, fill);
                    }
                }
            }
            ArtifactSpec::Noise { sigma, seed } => {
                if sigma == 0.0 {
                    return Ok(());
                }
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
                let mut rng = rng_for(seed, &[key]);
                for v in image.data.iter_mut() {
                    *v = ((*v as f64) + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
            }
        }
        Ok(())
    }
}

/// Returns a copy of `image` with the artifact applied.
pub fn apply_artifact(image: &Image, spec: &ArtifactSpec, key: u64) -> Result<Image> {
    let mut out = image.clone();
    spec.apply(&mut out, key)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank() -> Image {
        Image::filled(Geometry::new(64, 64, 1), 0.0)
    }

    #[test]
    fn square_sets_top_left_block() {
        let out = apply_artifact(&blank(), &ArtifactSpec::Square { side: 4, fill: 1.0 }, 0).unwrap();
        let ones: Vec<(usize, usize)> =
            (0..64).flat_map(|r| (0..64).map(move |c| (r, c))).filter(|&(r, c)| out.get(r, c, 0) == 1.0).collect();
        assert_eq!(ones.len(), 16);
        assert!(ones.iter().all(|&(r, c)| r < 4 && c < 4));
    }

    #[test]
    fn stripe_at_column_nine() {
        let out = apply_artifact(&blank(), &ArtifactSpec::Stripe { offset: 9, width: 1, fill: 1.0 }, 0).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                assert_eq!(out.get(r, c, 0), if c == 9 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_noise_is_identity_and_noise_is_keyed() {
        let mut img = blank();
        img.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i % 7) as f32 / 7.0);
        assert_eq!(apply_artifact(&img, &ArtifactSpec::Noise { sigma: 0.0, seed: 3 }, 1).unwrap(), img);
        let spec = ArtifactSpec::Noise { sigma: 0.2, seed: 3 };
        let a = apply_artifact(&img, &spec, 1).unwrap();
        assert_eq!(a, apply_artifact(&img, &spec, 1).unwrap());
        assert_ne!(a, apply_artifact(&img, &spec, 2).unwrap());
        assert!(a.in_unit_range());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let g = Geometry::new(64, 64, 1);
        assert!(ArtifactSpec::Square { side: 65, fill: 1.0 }.validate(g).is_err());
        assert!(ArtifactSpec::Stripe { offset: 63, width: 2, fill: 1.0 }.validate(g).is_err());
        assert!(ArtifactSpec::Square { side: 2, fill: 1.5 }.validate(g).is_err());
        assert!(ArtifactSpec::Noise { sigma: -1.0, seed: 0 }.validate(g).is_err());
    }
}
