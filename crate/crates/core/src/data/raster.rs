use serde::{Deserialize, Serialize};

use crate::numerics::Geometry;

/// H×W×C raster with values in `[0, 1]`, stored at the persisted `f32`
/// precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub geometry: Geometry,
    pub data: Vec<f32>,
}

impl Image {
    pub fn filled(geometry: Geometry, value: f32) -> Self {
        Image { geometry, data: vec![value; geometry.len()] }
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.geometry.width + col) * self.geometry.channels + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[self.index(row, col, channel)]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, value: f32) {
        for c in 0..self.geometry.channels {
            let i = self.index(row, col, c);
            self.data[i] = value;
        }
    }

    pub fn write_f64(&self, out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(&self.data) {
            *o = *v as f64;
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Binary H×W raster, bit-packed per row (MSB first, rows padded to bytes).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bytes: Vec<u8>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask { height, width, bytes: vec![0; height * Self::row_bytes_for(width)] }
    }

    pub fn row_bytes_for(width: usize) -> usize {
        width.div_ceil(8)
    }

    pub fn row_bytes(&self) -> usize {
        Self::row_bytes_for(self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let b = self.bytes[row * self.row_bytes() + col / 8];
        b & (0x80 >> (col % 8)) != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        let i = row * self.row_bytes() + col / 8;
        let bit = 0x80 >> (col % 8);
        if on {
            self.bytes[i] |= bit;
        } else {
            self.bytes[i] &= !bit;
        }
    }

    pub fn count(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Row-major 0/1 values.
    pub fn to_f64(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.get(r, c) { 1.0 } else { 0.0 });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_bits_are_msb_first_and_padded() {
        let mut m = Mask::empty(2, 10);
        assert_eq!(m.bytes.len(), 4);
        m.set(0, 0, true);
        m.set(1, 9, true);
        assert_eq!(m.bytes, vec![0x80, 0, 0, 0x40]);
        assert!(m.get(1, 9) && !m.get(1, 8));
        assert_eq!(m.count(), 2);
    }
}
