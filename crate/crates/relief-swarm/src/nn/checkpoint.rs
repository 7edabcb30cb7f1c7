//! Parameter serialization: a JSON header (names, shapes, dtype, seed,
//! schema version, free-form metadata) followed by little-endian float
//! arrays in header name order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NnError, ParameterSet, Tensor};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointDtype {
    F32,
    F64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub dtype: CheckpointDtype,
    pub seed: u64,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Writes `params` with the given dtype. `meta` rides along in the header
/// (net topology, step counters).
pub fn save_params<W: Write>(
    mut out: W,
    params: &ParameterSet,
    dtype: CheckpointDtype,
    seed: u64,
    meta: serde_json::Value,
) -> Result<(), NnError> {
    let header = CheckpointHeader {
        schema_version: SCHEMA_VERSION,
        dtype,
        seed,
        names: params.names().cloned().collect(),
        shapes: params.iter().map(|(_, t)| t.shape().to_vec()).collect(),
        meta,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
    out.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    for (_, tensor) in params.iter() {
        match dtype {
            CheckpointDtype::F64 => {
                for &v in tensor.data() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
            CheckpointDtype::F32 => {
                for &v in tensor.data() {
                    out.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Reads a parameter file written by [`save_params`].
pub fn load_params<R: Read>(mut input: R) -> Result<(ParameterSet, CheckpointHeader), NnError> {
    let mut len_bytes = [0u8; 4];
    input.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| NnError::BadCheckpoint(format!("header parse: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "schema version {} (expected {SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    if header.names.len() != header.shapes.len() {
        return Err(NnError::BadCheckpoint(format!(
            "{} names vs {} shapes",
            header.names.len(),
            header.shapes.len()
        )));
    }
    let mut params = ParameterSet::new();
    for (name, shape) in header.names.iter().zip(&header.shapes) {
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        match header.dtype {
            CheckpointDtype::F64 => {
                let mut buf = [0u8; 8];
                for _ in 0..count {
                    input.read_exact(&mut buf)?;
                    data.push(f64::from_le_bytes(buf));
                }
            }
            CheckpointDtype::F32 => {
                let mut buf = [0u8; 4];
                for _ in 0..count {
                    input.read_exact(&mut buf)?;
                    data.push(f32::from_le_bytes(buf) as f64);
                }
            }
        }
        params.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok((params, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        params.insert_glorot("layer.w", &[4, 3], 4, 3, &mut rng);
        params.insert(
            "layer.b",
            Tensor::from_vec(&[3], (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        );
        params
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let params = random_params(7);
        let mut bytes = Vec::new();
        save_params(
            &mut bytes,
            &params,
            CheckpointDtype::F64,
            7,
            serde_json::json!({"kind": "test"}),
        )
        .unwrap();
        let (back, header) = load_params(bytes.as_slice()).unwrap();
        assert_eq!(params, back);
        assert_eq!(header.seed, 7);
        assert_eq!(header.meta["kind"], "test");
    }

    #[test]
    fn f32_file_round_trips_bit_exactly() {
        let params = random_params(9);
        let mut bytes = Vec::new();
        save_params(&mut bytes, &params, CheckpointDtype::F32, 9, serde_json::Value::Null)
            .unwrap();
        let (loaded, _) = load_params(bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        save_params(&mut bytes2, &loaded, CheckpointDtype::F32, 9, serde_json::Value::Null)
            .unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let params = random_params(3);
        let mut bytes = Vec::new();
        save_params(&mut bytes, &params, CheckpointDtype::F64, 3, serde_json::Value::Null)
            .unwrap();
        bytes.truncate(bytes.len() - 5);
        assert!(load_params(bytes.as_slice()).is_err());
    }
}
