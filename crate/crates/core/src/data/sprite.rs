//! Procedural sprite rendering for the dSprites-like and 3dshapes-like modes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::{Image, Mask};
use crate::error::{Error, Result};
use crate::numerics::Geometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Ellipse,
    Heart,
}

impl Shape {
    pub fn code(self) -> u8 {
        match self {
            Shape::Square => 0,
            Shape::Ellipse => 1,
            Shape::Heart => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Shape::Square),
            1 => Some(Shape::Ellipse),
            2 => Some(Shape::Heart),
            _ => None,
        }
    }

    /// Radius (in units of scale) of a disc around the center that contains
    /// the whole shape.
    pub fn bounding_radius(self) -> f64 {
        match self {
            Shape::Square => std::f64::consts::SQRT_2,
            Shape::Ellipse => 1.0,
            Shape::Heart => 1.45,
        }
    }

    /// Membership test in the shape's local frame (y pointing down).
    pub fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
            Shape::Ellipse => u * u + (v / ELLIPSE_MINOR) * (v / ELLIPSE_MINOR) <= 1.0,
            Shape::Heart => heart_implicit(u, -v) <= 0.0,
        }
    }
}

/// Semi-minor axis of the ellipse relative to its semi-major axis.
pub const ELLIPSE_MINOR: f64 = 0.5;

/// `(x² + y² − 1)³ − x²y³`; non-positive inside the heart.
pub fn heart_implicit(x: f64, y: f64) -> f64 {
    let a = x * x + y * y - 1.0;
    a * a * a - x * x * y * y * y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetMode {
    DspritesLike,
    ShapesLike,
}

impl DatasetMode {
    pub fn geometry(self) -> Geometry {
        match self {
            DatasetMode::DspritesLike => Geometry::new(64, 64, 1),
            DatasetMode::ShapesLike => Geometry::new(64, 64, 3),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            DatasetMode::DspritesLike => 0,
            DatasetMode::ShapesLike => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DatasetMode::DspritesLike),
            1 => Some(DatasetMode::ShapesLike),
            _ => None,
        }
    }
}

/// Hues in `[0, 1)` for the 3dshapes-like scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneHues {
    pub floor: f64,
    pub wall: f64,
    pub object: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpriteSpec {
    pub shape: Shape,
    /// Center in pixel coordinates `(x, y)`; pixel `(row, col)` covers
    /// `[col, col + 1) × [row, row + 1)`.
    pub center: (f64, f64),
    /// Half-extent of the shape in pixels.
    pub scale: f64,
    /// Rotation in radians.
    pub orientation: f64,
    pub foreground: f32,
    pub background: f32,
    pub hues: Option<SceneHues>,
}

impl SpriteSpec {
    pub fn new(shape: Shape, center: (f64, f64), scale: f64) -> Self {
        SpriteSpec { shape, center, scale, orientation: 0.0, foreground: 1.0, background: 0.0, hues: None }
    }
}

/// Row where the wall band ends and the floor band begins.
pub const HORIZON_FRACTION: f64 = 0.625;

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

/// Renders a sprite and its foreground mask.
pub fn render_sprite(spec: &SpriteSpec, geometry: Geometry) -> Result<(Image, Mask)> {
    if !(spec.scale.is_finite() && spec.center.0.is_finite() && spec.center.1.is_finite()) {
        return Err(Error::Generation("non-finite sprite placement".into()));
    }
    let reach = spec.shape.bounding_radius() * spec.scale;
    let (cx, cy) = spec.center;
    if cx - reach < 0.0 || cy - reach < 0.0 || cx + reach > geometry.width as f64 || cy + reach > geometry.height as f64
    {
        return Err(Error::Generation(format!(
            "{:?} at ({cx:.2}, {cy:.2}) with scale {:.2} leaves the {}x{} image",
            spec.shape, spec.scale, geometry.height, geometry.width
        )));
    }
    let mut mask = Mask::empty(geometry.height, geometry.width);
    if spec.scale > 0.0 {
        let (sin, cos) = spec.orientation.sin_cos();
        for row in 0..geometry.height {
            for col in 0..geometry.width {
                let dx = col as f64 + 0.5 - cx;
                let dy = row as f64 + 0.5 - cy;
                let u = (dx * cos + dy * sin) / spec.scale;
                let v = (-dx * sin + dy * cos) / spec.scale;
                if spec.shape.contains(u, v) {
                    mask.set(row, col, true);
                }
            }
        }
    }
    if mask.is_empty() {
        return Err(Error::Generation(format!("{:?} with scale {} covers no pixel", spec.shape, spec.scale)));
    }
    let mut image = Image::filled(geometry, spec.background);
    match spec.hues {
        Some(h) if geometry.channels == 3 => {
            let wall = hsv(h.wall, 0.6, 0.5);
            let floor = hsv(h.floor, 0.6, 0.4);
            let object = hsv(h.object, 0.9, 0.9);
            let horizon = (geometry.height as f64 * HORIZON_FRACTION) as usize;
            for row in 0..geometry.height {
                for col in 0..geometry.width {
                    let rgb = if mask.get(row, col) {
                        object
                    } else if row < horizon {
                        wall
                    } else {
                        floor
                    };
                    let i = image.index(row, col, 0);
                    image.data[i..i + 3].copy_from_slice(&rgb);
                }
            }
        }
        Some(_) => return Err(Error::Generation("scene hues need a 3-channel geometry".into())),
        None => {
            for row in 0..geometry.height {
                for col in 0..geometry.width {
                    if mask.get(row, col) {
                        image.set_pixel(row, col, spec.foreground);
                    }
                }
            }
        }
    }
    Ok((image, mask))
}

/// Draws a random placement of `shape` for the given mode.
pub fn sample_sprite<R: Rng>(rng: &mut R, shape: Shape, mode: DatasetMode) -> SpriteSpec {
    let g = mode.geometry();
    match mode {
        DatasetMode::DspritesLike => {
            let scale = rng.gen_range(10.0..14.0);
            let reach = shape.bounding_radius() * scale + 1.0;
            let cx = rng.gen_range(reach..g.width as f64 - reach);
            let cy = rng.gen_range(reach..g.height as f64 - reach);
            let orientation = rng.gen_range(0.0..std::f64::consts::TAU);
            SpriteSpec { shape, center: (cx, cy), scale, orientation, foreground: 1.0, background: 0.0, hues: None }
        }
        DatasetMode::ShapesLike => {
            let scale = rng.gen_range(5.0..8.0);
            let cx = g.width as f64 / 2.0 + rng.gen_range(-4.0..4.0);
            let cy = g.height as f64 * HORIZON_FRACTION + rng.gen_range(-4.0..2.0);
            let orientation = rng.gen_range(-0.25..0.25);
            let hue = |rng: &mut R| rng.gen_range(0..10) as f64 / 10.0;
            let hues = SceneHues { floor: hue(rng), wall: hue(rng), object: hue(rng) };
            SpriteSpec {
                shape,
                center: (cx, cy),
                scale,
                orientation,
                foreground: 1.0,
                background: 0.0,
                hues: Some(hues),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn axis_aligned_square_is_a_pixel_block() {
        let g = Geometry::new(64, 64, 1);
        let (img, mask) = render_sprite(&SpriteSpec::new(Shape::Square, (32.0, 32.0), 4.0), g).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let inside = (28..36).contains(&r) && (28..36).contains(&c);
                assert_eq!(mask.get(r, c), inside, "({r}, {c})");
                assert_eq!(img.get(r, c, 0), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn bounding_radii_cover_shapes() {
        for shape in [Shape::Square, Shape::Ellipse, Shape::Heart] {
            let mut reach: f64 = 0.0;
            for i in -300..=300 {
                for j in -300..=300 {
                    let (u, v) = (i as f64 / 200.0, j as f64 / 200.0);
                    if shape.contains(u, v) {
                        reach = reach.max(u.hypot(v));
                    }
                }
            }
            assert!(reach <= shape.bounding_radius() + 1e-9, "{shape:?}: {reach}");
        }
    }

    #[test]
    fn zero_scale_and_out_of_bounds_are_rejected() {
        let g = Geometry::new(64, 64, 1);
        assert!(matches!(
            render_sprite(&SpriteSpec::new(Shape::Ellipse, (32.0, 32.0), 0.0), g),
            Err(Error::Generation(_))
        ));
        assert!(matches!(
            render_sprite(&SpriteSpec::new(Shape::Square, (3.0, 32.0), 8.0), g),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn sampled_sprites_render_in_both_modes() {
        let mut rng = rng_for(5, &[]);
        for mode in [DatasetMode::DspritesLike, DatasetMode::ShapesLike] {
            for shape in [Shape::Square, Shape::Ellipse, Shape::Heart] {
                for _ in 0..20 {
                    let spec = sample_sprite(&mut rng, shape, mode);
                    let (img, mask) = render_sprite(&spec, mode.geometry()).unwrap();
                    assert!(img.in_unit_range());
                    assert!(mask.count() > 20);
                }
            }
        }
    }
}
