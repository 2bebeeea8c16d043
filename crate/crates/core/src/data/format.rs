//! `EDSD` dataset files.
//!
//! One block per partition: magic `EDSD`, version u16, n u32, H/W/C u16,
//! spurious class u16, n f32 rasters, n u8 labels, n u8 artifact flags, n u8
//! subclass codes, n bit-packed masks. A bundle file is the model-training,
//! discriminator-training and validation blocks followed by a trailer with
//! the generation seed, mode, class shapes and artifact spec.

use std::path::Path;

use super::artifact::ArtifactSpec;
use super::dataset::{DatasetBundle, LabeledExample, Subclass};
use super::raster::{Image, Mask};
use super::sprite::{DatasetMode, Shape};
use crate::codec::{narrow, Reader, Writer};
use crate::error::Result;
use crate::numerics::Geometry;

pub const DATASET_MAGIC: &[u8; 4] = b"EDSD";
pub const DATASET_VERSION: u16 = 1;

pub fn encode_partition(examples: &[LabeledExample], geometry: Geometry, spurious_class: usize) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    write_partition(&mut w, examples, geometry, spurious_class)?;
    Ok(w.bytes)
}

fn write_partition(
    w: &mut Writer,
    examples: &[LabeledExample],
    geometry: Geometry,
    spurious_class: usize,
) -> Result<()> {
    w.raw(DATASET_MAGIC);
    w.u16(DATASET_VERSION);
    w.u32(narrow(examples.len(), "example count")?);
    w.u16(narrow(geometry.height, "height")?);
    w.u16(narrow(geometry.width, "width")?);
    w.u16(narrow(geometry.channels, "channels")?);
    w.u16(narrow(spurious_class, "spurious class")?);
    for e in examples {
        if e.image.geometry != geometry {
            return Err(crate::Error::Shape(format!("image {:?} in a {geometry:?} partition", e.image.geometry)));
        }
        for &v in &e.image.data {
            w.f32(v);
        }
    }
    for e in examples {
        w.u8(narrow(e.label, "label")?);
    }
    for e in examples {
        w.u8(e.artifact as u8);
    }
    for e in examples {
        w.u8(e.subclass.code());
    }
    for e in examples {
        w.raw(&e.mask.bytes);
    }
    Ok(())
}

/// Decodes one block, returning the examples, geometry and spurious class.
pub fn decode_partition(bytes: &[u8]) -> Result<(Vec<LabeledExample>, Geometry, usize)> {
    let mut r = Reader::new(bytes);
    let out = read_partition(&mut r)?;
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }
    Ok(out)
}

fn read_partition(r: &mut Reader) -> Result<(Vec<LabeledExample>, Geometry, usize)> {
    r.magic(DATASET_MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return r.fail(format!("unsupported dataset version {version}"));
    }
    let n = r.u32()? as usize;
    let geometry = Geometry::new(r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
    let spurious = r.u16()? as usize;
    let len = geometry.len();
    // Check the whole payload is present before allocating for it.
    let mask_len = geometry.height * Mask::row_bytes_for(geometry.width);
    let need = n as u128 * (4 * len as u128 + 3 + mask_len as u128);
    if need > r.remaining() as u128 {
        return r.fail(format!("truncated: {n} examples need {need} bytes, {} left", r.remaining()));
    }
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = r.take(4 * len)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        images.push(Image { geometry, data });
    }
    let labels = r.take(n)?.to_vec();
    let flags_at = r.position();
    let flags = r.take(n)?.to_vec();
    let codes_at = r.position();
    let codes = r.take(n)?.to_vec();
    let mut out = Vec::with_capacity(n);
    for (i, image) in images.into_iter().enumerate() {
        let artifact = match flags[i] {
            0 => false,
            1 => true,
            f => return Err(crate::Error::Format { offset: flags_at + i, detail: format!("artifact flag {f}") }),
        };
        let label = labels[i] as usize;
        let subclass = Subclass::from_code(codes[i])
            .filter(|s| *s == Subclass::of(label, artifact, spurious))
            .ok_or_else(|| crate::Error::Format {
                offset: codes_at + i,
                detail: format!("subclass code {} inconsistent with label {label}, flag {artifact}", codes[i]),
            })?;
        let mask = Mask { height: geometry.height, width: geometry.width, bytes: r.take(mask_len)?.to_vec() };
        out.push(LabeledExample { image, label, artifact, subclass, mask });
    }
    Ok((out, geometry, spurious))
}

pub fn serialize_bundle(bundle: &DatasetBundle) -> Result<Vec<u8>> {
    let g = bundle.geometry();
    let mut w = Writer::default();
    for part in [&bundle.model_train, &bundle.discriminator_train, &bundle.validation] {
        write_partition(&mut w, part, g, bundle.spurious_class)?;
    }
    w.u64(bundle.seed);
    w.u8(bundle.mode.code());
    w.u8(narrow(bundle.classes.len(), "class count")?);
    for s in &bundle.classes {
        w.u8(s.code());
    }
    match bundle.artifact {
        ArtifactSpec::Square { side, fill } => {
            w.u8(0);
            w.u32(narrow(side, "square side")?);
            w.f32(fill);
        }
        ArtifactSpec::Stripe { offset, width, fill } => {
            w.u8(1);
            w.u32(narrow(offset, "stripe offset")?);
            w.u32(narrow(width, "stripe width")?);
            w.f32(fill);
        }
        ArtifactSpec::Noise { sigma, seed } => {
            w.u8(2);
            w.u64(sigma.to_bits());
            w.u64(seed);
        }
    }
    Ok(w.bytes)
}

pub fn deserialize_bundle(bytes: &[u8]) -> Result<DatasetBundle> {
    let mut r = Reader::new(bytes);
    let (model_train, g0, spurious_class) = read_partition(&mut r)?;
    let (discriminator_train, g1, s1) = read_partition(&mut r)?;
    let (validation, g2, s2) = read_partition(&mut r)?;
    if g0 != g1 || g0 != g2 || spurious_class != s1 || spurious_class != s2 {
        return r.fail("partition headers disagree");
    }
    let seed = r.u64()?;
    let mode_code = r.u8()?;
    let mode = DatasetMode::from_code(mode_code).map_or_else(|| r.fail(format!("mode code {mode_code}")), Ok)?;
    if mode.geometry() != g0 {
        return r.fail(format!("geometry {g0:?} does not match mode {mode:?}"));
    }
    let k = r.u8()? as usize;
    let mut classes = Vec::with_capacity(k);
    for _ in 0..k {
        let c = r.u8()?;
        classes.push(Shape::from_code(c).map_or_else(|| r.fail(format!("shape code {c}")), Ok)?);
    }
    let artifact = match r.u8()? {
        0 => ArtifactSpec::Square { side: r.u32()? as usize, fill: r.f32()? },
        1 => ArtifactSpec::Stripe { offset: r.u32()? as usize, width: r.u32()? as usize, fill: r.f32()? },
        2 => ArtifactSpec::Noise { sigma: f64::from_bits(r.u64()?), seed: r.u64()? },
        other => return r.fail(format!("artifact kind {other}")),
    };
    if r.remaining() != 0 {
        return r.fail(format!("{} trailing bytes", r.remaining()));
    }
    Ok(DatasetBundle { mode, classes, model_train, discriminator_train, validation, spurious_class, seed, artifact })
}

pub fn save_bundle(path: &Path, bundle: &DatasetBundle) -> Result<()> {
    std::fs::write(path, serialize_bundle(bundle)?)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<DatasetBundle> {
    deserialize_bundle(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn tiny() -> Vec<LabeledExample> {
        let g = Geometry::new(4, 4, 1);
        (0..2)
            .map(|i| {
                let mut image = Image::filled(g, 0.25 * i as f32);
                image.data[5] = 1.0;
                let mut mask = Mask::empty(4, 4);
                mask.set(1, 1, true);
                LabeledExample { image, label: i, artifact: i == 1, subclass: Subclass::of(i, i == 1, 0), mask }
            })
            .collect()
    }

    #[test]
    fn block_length_matches_layout() {
        let bytes = encode_partition(&tiny(), Geometry::new(4, 4, 1), 0).unwrap();
        let header = 4 + 2 + 4 + 2 + 2 + 2 + 2;
        assert_eq!(bytes.len(), header + 2 * 16 * 4 + 2 + 2 + 2 + 2 * 4);
        assert_eq!(&bytes[..4], b"EDSD");
        let (back, g, s) = decode_partition(&bytes).unwrap();
        assert_eq!((back, g, s), (tiny(), Geometry::new(4, 4, 1), 0));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_partition(&tiny(), Geometry::new(4, 4, 1), 0).unwrap();
        for cut in 0..bytes.len() {
            assert!(matches!(decode_partition(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
    }

    #[test]
    fn inconsistent_subclass_is_rejected() {
        let mut bytes = encode_partition(&tiny(), Geometry::new(4, 4, 1), 0).unwrap();
        let code_at = 18 + 128 + 4;
        bytes[code_at] = 3;
        assert!(matches!(decode_partition(&bytes), Err(Error::Format { offset, .. }) if offset == code_at));
    }
}
