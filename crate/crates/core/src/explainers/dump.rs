//! JSON-lines explanation dumps.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::data::Arm;
use crate::error::{Error, Result};

/// One encoded explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    pub explainer: String,
    pub run: usize,
    /// `train` or `validation`.
    pub split: String,
    pub model_seed: u64,
    pub arm: Arm,
    /// Subclass code: 0 S/NA, 1 NS/NA, 2 S/A, 3 NS/A.
    pub subclass: u8,
    /// Position of the explained image in its partition.
    pub image: usize,
    /// Height, width, channels of the encoding.
    pub shape: [usize; 3],
    /// Little-endian `f32` values, base64.
    pub encoded: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<Vec<usize>>,
}

pub fn encode_f32_base64(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32_base64(text: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD.decode(text).map_err(|e| Error::Format { offset: 0, detail: format!("base64: {e}") })?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format { offset: bytes.len(), detail: "payload is not a whole number of f32".into() });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base64_round_trip_is_bit_exact() {
        let v = vec![0.1f32, -3.5, f32::MIN_POSITIVE, 1e30];
        assert_eq!(decode_f32_base64(&encode_f32_base64(&v)).unwrap(), v);
        assert!(decode_f32_base64("AAA=").is_err());
    }
}
