//! Parameter checkpoints: a text header describing every tensor,
//! followed by all values as little-endian 64-bit floats.
//!
//! The header embeds a hash of the model description so a checkpoint
//! trained under one architecture cannot be silently loaded into
//! another. Offsets are element counts into the payload.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::io::fnv1a;
use crate::nn::Params;
use crate::stages::ModelSpec;

const MAGIC: &str = "scenecast-checkpoint v1";

fn config_hash(spec: &ModelSpec) -> String {
    format!("{:016x}", fnv1a(spec.canonical_string().as_bytes()))
}

/// Writes `params` to `path`, stamped with the hash of `spec`.
pub fn save_checkpoint(path: &Path, params: &Params, spec: &ModelSpec) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!("config_hash {}\n", config_hash(spec)));
    header.push_str(&format!("config {}\n", spec.canonical_string()));
    header.push_str(&format!("tensors {}\n", params.len()));

    let mut payload: Vec<u8> = Vec::with_capacity(params.element_count() * 8);
    let mut offset = 0usize;
    for (name, value) in params.iter() {
        let dims: Vec<String> = value.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!(
            "tensor {name} {offset} {} {}\n",
            value.ndim(),
            dims.join(" ")
        ));
        for v in value.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += value.len();
    }
    header.push_str("end\n");

    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).map_err(|e| Error::file(path, e))?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

/// Reads a checkpoint, refusing when its hash differs from `spec`'s.
pub fn load_checkpoint(path: &Path, spec: &ModelSpec) -> Result<Params> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let header_end = find_header_end(&bytes)?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| corrupt("header is not UTF-8"))?;
    let payload = &bytes[header_end..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("missing magic line"));
    }
    let hash_line = lines.next().ok_or_else(|| corrupt("missing hash line"))?;
    let found = hash_line
        .strip_prefix("config_hash ")
        .ok_or_else(|| corrupt("malformed hash line"))?
        .to_string();
    let expected = config_hash(spec);
    if found != expected {
        return Err(Error::ConfigHashMismatch { expected, found });
    }
    let config_line = lines.next().ok_or_else(|| corrupt("missing config line"))?;
    if !config_line.starts_with("config ") {
        return Err(corrupt("malformed config line"));
    }
    let count_line = lines.next().ok_or_else(|| corrupt("missing tensor count"))?;
    let count: usize = count_line
        .strip_prefix("tensors ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("malformed tensor count"))?;

    if payload.len() % 8 != 0 {
        return Err(corrupt("payload is not a whole number of floats"));
    }
    let total = payload.len() / 8;
    let read_f64 = |i: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&payload[i * 8..i * 8 + 8]);
        f64::from_le_bytes(b)
    };

    let mut params = Params::new();
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| corrupt("truncated tensor list"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 || toks[0] != "tensor" {
            return Err(corrupt(format!("malformed tensor line '{line}'")));
        }
        let name = toks[1];
        let offset: usize = toks[2].parse().map_err(|_| corrupt("bad offset"))?;
        let ndim: usize = toks[3].parse().map_err(|_| corrupt("bad rank"))?;
        if toks.len() != 4 + ndim {
            return Err(corrupt(format!("tensor '{name}' lists wrong dimension count")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for d in &toks[4..] {
            shape.push(d.parse::<usize>().map_err(|_| corrupt("bad dimension"))?);
        }
        let len: usize = shape.iter().product();
        if offset + len > total {
            return Err(corrupt(format!("tensor '{name}' runs past the payload")));
        }
        let values: Vec<f64> = (offset..offset + len).map(read_f64).collect();
        if !values.iter().all(|v| v.is_finite()) {
            return Err(corrupt(format!("tensor '{name}' holds non-finite values")));
        }
        params.insert(
            name,
            ArrayD::from_shape_vec(IxDyn(&shape), values).expect("len matches shape"),
        );
    }
    if lines.next() != Some("end") {
        return Err(corrupt("missing end marker"));
    }
    Ok(params)
}

/// Byte offset just past the `end` line.
fn find_header_end(bytes: &[u8]) -> Result<usize> {
    let needle = b"\nend\n";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + needle.len())
        .ok_or_else(|| corrupt("missing end marker"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ForecastConfig;
    use crate::types::Skeleton;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn tiny_spec() -> ModelSpec {
        ModelSpec::new(ForecastConfig {
            observed_frames: 4,
            future_frames: 5,
            joint_count: 3,
            dct_coeffs: 3,
            sample_count: 12,
            hidden_dim: 4,
            ..ForecastConfig::default()
        })
    }

    fn tiny_skeleton() -> Skeleton {
        Skeleton::new(
            vec!["root".into(), "mid".into(), "foot".into()],
            vec![(0, 1), (1, 2)],
            0,
            vec![2],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = spec.init_params(&tiny_skeleton(), &mut rng);
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &spec).unwrap();
        let back = load_checkpoint(&path, &spec).unwrap();

        assert_eq!(params.len(), back.len());
        for (name, value) in params.iter() {
            let loaded = back.get(name);
            assert_eq!(value.shape(), loaded.shape());
            assert!(value.iter().zip(loaded.iter()).all(|(a, b)| a == b));
        }
    }

    #[test]
    fn tampered_hash_is_refused() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = spec.init_params(&tiny_skeleton(), &mut rng);
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &spec).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        let pos = MAGIC.len() + 1 + "config_hash ".len();
        bytes[pos] = if bytes[pos] == b'0' { b'1' } else { b'0' };
        fs::write(&path, bytes).unwrap();
        match load_checkpoint(&path, &spec) {
            Err(Error::ConfigHashMismatch { .. }) => {}
            other => panic!("expected hash mismatch, got {other:?}"),
        }
    }

    #[test]
    fn different_architecture_is_refused() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = spec.init_params(&tiny_skeleton(), &mut rng);
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &spec).unwrap();

        let mut other = tiny_spec();
        other.use_time_to_go = false;
        assert!(matches!(
            load_checkpoint(&path, &other),
            Err(Error::ConfigHashMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = spec.init_params(&tiny_skeleton(), &mut rng);
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &spec).unwrap();

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 64]).unwrap();
        assert!(matches!(
            load_checkpoint(&path, &spec),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn per_stage_parameter_counts_survive_the_trip() {
        let dir = tempdir().unwrap();
        let spec = tiny_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = spec.init_params(&tiny_skeleton(), &mut rng);
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &spec).unwrap();
        let back = load_checkpoint(&path, &spec).unwrap();
        for stage in ["s1.", "s2.", "s3."] {
            assert_eq!(
                params.with_prefix(stage).element_count(),
                back.with_prefix(stage).element_count(),
                "stage {stage}"
            );
            assert!(params.with_prefix(stage).element_count() > 0);
        }
    }
}
