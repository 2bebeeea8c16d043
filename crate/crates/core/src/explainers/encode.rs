//! Fixed-size discriminator inputs.

use serde::{Deserialize, Serialize};

use super::Explanation;
use crate::data::{Image, LabeledExample};
use crate::error::{Error, Result};
use crate::numerics::Geometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfluenceEncoding {
    /// `[class histogram, artifact rate, rank-weighted normalized score]`.
    #[default]
    Summary,
    /// The referenced images, downsampled to 16x16 and stacked on channels.
    ImageStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub influence: InfluenceEncoding,
    pub class_count: usize,
}

/// Encoded explanation, stored at `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub geometry: Geometry,
    pub values: Vec<f32>,
}

impl Encoded {
    /// Raster encodings feed the convolutional discriminator.
    pub fn is_raster(&self) -> bool {
        self.geometry.height > 1
    }
}

pub const STACK_SIDE: usize = 16;

/// Block-average downsampling of an image to `side × side`.
pub fn downsample(image: &Image, side: usize) -> Result<Vec<f64>> {
    let g = image.geometry;
    if !g.height.is_multiple_of(side) || !g.width.is_multiple_of(side) {
        return Err(Error::Shape(format!("cannot downsample {}x{} to {side}x{side}", g.height, g.width)));
    }
    let (fy, fx) = (g.height / side, g.width / side);
    let mut out = vec![0.0; side * side * g.channels];
    for r in 0..g.height {
        for c in 0..g.width {
            for ch in 0..g.channels {
                out[((r / fy) * side + c / fx) * g.channels + ch] += image.get(r, c, ch) as f64;
            }
        }
    }
    let n = (fy * fx) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// `pool` supplies the referenced training images for image-stack mode.
pub fn encode(explanation: &Explanation, config: &EncodingConfig, pool: Option<&[LabeledExample]>) -> Result<Encoded> {
    match explanation {
        Explanation::Heatmap(h) => {
            let n = h.values.len() as f64;
            let mean = h.values.iter().sum::<f64>() / n;
            let var = h.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            let values = if sd > 1e-12 {
                h.values.iter().map(|v| ((v - mean) / sd) as f32).collect()
            } else {
                vec![0.0; h.values.len()]
            };
            Ok(Encoded { geometry: Geometry::new(h.height, h.width, 1), values })
        }
        Explanation::Influence(set) => {
            let k = set.refs.len();
            if k == 0 {
                return Err(Error::Precondition("empty influence set".into()));
            }
            match config.influence {
                InfluenceEncoding::Summary => {
                    let mut v = vec![0.0f64; config.class_count + 2];
                    for r in &set.refs {
                        if r.label >= config.class_count {
                            return Err(Error::Domain(format!("reference label {} outside classes", r.label)));
                        }
                        v[r.label] += 1.0 / k as f64;
                        if r.artifact {
                            v[config.class_count] += 1.0 / k as f64;
                        }
                    }
                    let top = set.refs.iter().map(|r| r.score.abs()).fold(0.0, f64::max);
                    let (mut num, mut den) = (0.0, 0.0);
                    for (rank, r) in set.refs.iter().enumerate() {
                        let w = (k - rank) as f64 / k as f64;
                        num += w * if top > 0.0 { r.score / top } else { 0.0 };
                        den += w;
                    }
                    v[config.class_count + 1] = num / den;
                    Ok(Encoded {
                        geometry: Geometry::new(1, v.len(), 1),
                        values: v.iter().map(|&x| x as f32).collect(),
                    })
                }
                InfluenceEncoding::ImageStack => {
                    let pool =
                        pool.ok_or_else(|| Error::Config("image-stack encoding needs the training images".into()))?;
                    let mut layers = Vec::with_capacity(k);
                    for r in &set.refs {
                        let e = pool
                            .get(r.index)
                            .ok_or_else(|| Error::Domain(format!("reference {} outside the training pool", r.index)))?;
                        layers.push(downsample(&e.image, STACK_SIDE)?);
                    }
                    let c = pool[set.refs[0].index].image.geometry.channels;
                    let depth = k * c;
                    let mut values = vec![0.0f32; STACK_SIDE * STACK_SIDE * depth];
                    for (li, layer) in layers.iter().enumerate() {
                        for p in 0..STACK_SIDE * STACK_SIDE {
                            for ch in 0..c {
                                values[p * depth + li * c + ch] = layer[p * c + ch] as f32;
                            }
                        }
                    }
                    Ok(Encoded { geometry: Geometry::new(STACK_SIDE, STACK_SIDE, depth), values })
                }
            }
        }
        Explanation::Concept(c) => Ok(Encoded {
            geometry: Geometry::new(1, c.values.len(), 1),
            values: c.values.iter().map(|&x| x as f32).collect(),
        }),
    }
}
