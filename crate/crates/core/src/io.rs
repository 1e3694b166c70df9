//! On-disk artifacts.
//!
//! Bulk numeric data is stored as raw little-endian `f64` payloads (`NAME.bin`)
//! with a JSON sidecar (`NAME.json`) recording shape, layout, a SHA-256
//! checksum of the payload and the hash of the configuration that produced
//! it. Everything else is plain JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fom::ParameterVector;
use crate::normalize::InputNormalizer;
use crate::reduction::{JointSample, ReducedBasis, ReducedState, SnapshotMatrix};
use crate::rom::{DenseLayer, EennRom, MlpNetwork};
use crate::validator::{PacDesign, PacValidator};
use crate::{Error, Result};

pub const LAYOUT: &str = "column-major";
pub const DTYPE: &str = "float64-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixMeta {
    pub rows: usize,
    pub cols: usize,
    pub layout: String,
    pub dtype: String,
    pub sha256: String,
    pub config_hash: String,
}

fn sidecar(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.json"))
}

fn payload(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.bin"))
}

/// Paths of the named artifacts under `dir` that do not exist.
pub fn missing(dir: &Path, files: &[&str]) -> Vec<PathBuf> {
    files
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.exists())
        .collect()
}

fn require(paths: &[PathBuf]) -> Result<()> {
    let absent: Vec<PathBuf> = paths.iter().filter(|p| !p.exists()).cloned().collect();
    if absent.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(absent))
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CorruptArtifact {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn check_hash(path: &Path, found: &str, expected: Option<&str>) -> Result<()> {
    match expected {
        Some(e) if e != found => Err(Error::ConfigMismatch {
            left: format!("{} ({found})", path.display()),
            right: e.to_string(),
        }),
        _ => Ok(()),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require(&[path.to_path_buf()])?;
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e.to_string()))
}

/// Writes a column-major `rows × cols` matrix as `NAME.bin` + `NAME.json`.
pub fn write_matrix(dir: &Path, name: &str, rows: usize, cols: usize, data: &[f64], config_hash: &str) -> Result<MatrixMeta> {
    if data.len() != rows * cols {
        return Err(Error::dim("matrix payload", rows * cols, data.len()));
    }
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let meta = MatrixMeta {
        rows,
        cols,
        layout: LAYOUT.into(),
        dtype: DTYPE.into(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        config_hash: config_hash.into(),
    };
    fs::write(payload(dir, name), &bytes)?;
    write_json(&sidecar(dir, name), &meta)?;
    Ok(meta)
}

/// Reads and verifies a matrix written by [`write_matrix`].
pub fn read_matrix(dir: &Path, name: &str, expected_hash: Option<&str>) -> Result<(MatrixMeta, Vec<f64>)> {
    let (meta_path, bin_path) = (sidecar(dir, name), payload(dir, name));
    require(&[meta_path.clone(), bin_path.clone()])?;
    let meta: MatrixMeta = read_json(&meta_path)?;
    if meta.layout != LAYOUT || meta.dtype != DTYPE {
        return Err(corrupt(&meta_path, format!("unsupported layout {} / dtype {}", meta.layout, meta.dtype)));
    }
    check_hash(&meta_path, &meta.config_hash, expected_hash)?;
    let bytes = fs::read(&bin_path)?;
    if bytes.len() != meta.rows * meta.cols * 8 {
        return Err(corrupt(
            &bin_path,
            format!("expected {} bytes, found {}", meta.rows * meta.cols * 8, bytes.len()),
        ));
    }
    if hex::encode(Sha256::digest(&bytes)) != meta.sha256 {
        return Err(corrupt(&bin_path, "checksum mismatch"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((meta, data))
}

pub fn save_snapshots(dir: &Path, name: &str, y: &SnapshotMatrix, config_hash: &str) -> Result<MatrixMeta> {
    write_matrix(dir, name, y.nrows(), y.ncols(), y.data(), config_hash)
}

pub fn load_snapshots(dir: &Path, name: &str, expected_hash: Option<&str>) -> Result<SnapshotMatrix> {
    let (meta, data) = read_matrix(dir, name, expected_hash)?;
    SnapshotMatrix::from_column_major(meta.rows, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BasisMeta {
    sign_convention: String,
    singular_values: Vec<f64>,
    config_hash: String,
}

const SIGN_CONVENTION: &str = "largest-magnitude-entry-positive";

pub fn save_basis(dir: &Path, name: &str, basis: &ReducedBasis, config_hash: &str) -> Result<()> {
    write_matrix(dir, name, basis.rows(), basis.n(), basis.data(), config_hash)?;
    write_json(
        &dir.join(format!("{name}.spectrum.json")),
        &BasisMeta {
            sign_convention: SIGN_CONVENTION.into(),
            singular_values: basis.singular_values().to_vec(),
            config_hash: config_hash.into(),
        },
    )
}

pub fn load_basis(dir: &Path, name: &str, expected_hash: Option<&str>) -> Result<ReducedBasis> {
    let (meta, data) = read_matrix(dir, name, expected_hash)?;
    let spectrum: BasisMeta = read_json(&dir.join(format!("{name}.spectrum.json")))?;
    ReducedBasis::from_parts(meta.rows, meta.cols, data, spectrum.singular_values)
}

/// Joint samples as a `(n + N_m) × count` matrix; lifted caches are not stored.
pub fn save_joint_samples(dir: &Path, name: &str, samples: &[JointSample], config_hash: &str) -> Result<()> {
    let width = samples.first().map_or(0, |s| s.y_r.len() + s.mu.len());
    let data: Vec<f64> = samples.iter().flat_map(|s| s.joint_vector()).collect();
    write_matrix(dir, name, width, samples.len(), &data, config_hash)?;
    Ok(())
}

pub fn load_joint_samples(dir: &Path, name: &str, n: usize, expected_hash: Option<&str>) -> Result<Vec<JointSample>> {
    let (meta, data) = read_matrix(dir, name, expected_hash)?;
    if meta.cols > 0 && meta.rows <= n {
        return Err(corrupt(&sidecar(dir, name), format!("rows {} too few for n = {n}", meta.rows)));
    }
    Ok(data
        .chunks_exact(meta.rows.max(1))
        .take(meta.cols)
        .map(|c| JointSample {
            y_r: ReducedState(c[..n].to_vec()),
            mu: ParameterVector(c[n..].to_vec()),
            lifted: None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorMeta {
    pub design: PacDesign,
    pub n: usize,
    pub dt: f64,
    pub config_hash: String,
}

pub fn save_validator(dir: &Path, v: &PacValidator, config_hash: &str) -> Result<()> {
    let n = v.samples.first().map_or(0, |s| s.y_r.len());
    save_joint_samples(dir, "validator_samples", &v.samples, config_hash)?;
    save_snapshots(dir, "validator_inputs", &v.inputs, config_hash)?;
    save_snapshots(dir, "validator_references", &v.references, config_hash)?;
    write_json(
        &dir.join("validator.json"),
        &ValidatorMeta {
            design: v.design,
            n,
            dt: v.dt,
            config_hash: config_hash.into(),
        },
    )
}

pub fn load_validator(dir: &Path, expected_hash: Option<&str>) -> Result<PacValidator> {
    let meta_path = dir.join("validator.json");
    let meta: ValidatorMeta = read_json(&meta_path)?;
    check_hash(&meta_path, &meta.config_hash, expected_hash)?;
    let hash = Some(meta.config_hash.as_str());
    let samples = load_joint_samples(dir, "validator_samples", meta.n, hash)?;
    let inputs = load_snapshots(dir, "validator_inputs", hash)?;
    let references = load_snapshots(dir, "validator_references", hash)?;
    if samples.len() != meta.design.s || inputs.ncols() != meta.design.s || references.ncols() != meta.design.s {
        return Err(corrupt(&meta_path, "test count does not match the design"));
    }
    Ok(PacValidator {
        design: meta.design,
        samples,
        inputs,
        references,
        dt: meta.dt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomMeta {
    pub layer_sizes: Vec<usize>,
    pub dt: f64,
    pub n: usize,
    pub state_dim: usize,
    pub config_hash: String,
    /// Free-form training summary.
    #[serde(default)]
    pub training: serde_json::Value,
}

/// Writes `NAME.json` (header) plus `NAME_params` (normalizer, output scale
/// and network weights, flattened) and `NAME_basis` matrices.
pub fn save_rom(dir: &Path, name: &str, rom: &EennRom, config_hash: &str, training: serde_json::Value) -> Result<()> {
    let mut params: Vec<f64> = Vec::new();
    params.extend(&rom.normalizer.shift);
    params.extend(&rom.normalizer.scale);
    params.extend(&rom.output_scale);
    for l in rom.net.layers() {
        params.extend(&l.weights);
        params.extend(&l.bias);
    }
    write_matrix(dir, &format!("{name}_params"), params.len(), 1, &params, config_hash)?;
    save_basis(dir, &format!("{name}_basis"), &rom.basis, config_hash)?;
    write_json(
        &dir.join(format!("{name}.json")),
        &RomMeta {
            layer_sizes: rom.net.layer_sizes(),
            dt: rom.dt,
            n: rom.basis.n(),
            state_dim: rom.basis.rows(),
            config_hash: config_hash.into(),
            training,
        },
    )
}

pub fn load_rom(dir: &Path, name: &str, expected_hash: Option<&str>) -> Result<(EennRom, RomMeta)> {
    let meta_path = dir.join(format!("{name}.json"));
    let meta: RomMeta = read_json(&meta_path)?;
    check_hash(&meta_path, &meta.config_hash, expected_hash)?;
    let hash = Some(meta.config_hash.as_str());
    let (_, params) = read_matrix(dir, &format!("{name}_params"), hash)?;
    let basis = load_basis(dir, &format!("{name}_basis"), hash)?;
    let sizes = &meta.layer_sizes;
    if sizes.len() < 2 {
        return Err(corrupt(&meta_path, "network needs at least two layers"));
    }
    let d_in = sizes[0];
    let d_out = *sizes.last().unwrap();
    let expected = 2 * d_in + d_out + sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
    if params.len() != expected {
        return Err(corrupt(&meta_path, format!("expected {expected} parameters, found {}", params.len())));
    }
    let mut it = params.into_iter();
    let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<f64>>();
    let normalizer = InputNormalizer {
        shift: take(d_in),
        scale: take(d_in),
    };
    let output_scale = take(d_out);
    let layers = sizes
        .windows(2)
        .map(|w| DenseLayer {
            inputs: w[0],
            outputs: w[1],
            weights: take(w[0] * w[1]),
            bias: take(w[1]),
        })
        .collect();
    let rom = EennRom::new(basis, MlpNetwork::from_layers(layers)?, normalizer, output_scale, meta.dt)?;
    Ok((rom, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::pod;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> SnapshotMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SnapshotMatrix::from_column_major(rows, (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap()
    }

    #[test]
    fn matrix_round_trip_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let y = random_matrix(7, 5, 1);
        let meta = save_snapshots(dir.path(), "y", &y, "abc").unwrap();
        assert_eq!((meta.rows, meta.cols), (7, 5));
        assert_eq!(load_snapshots(dir.path(), "y", Some("abc")).unwrap(), y);
        assert!(matches!(
            load_snapshots(dir.path(), "y", Some("other")),
            Err(Error::ConfigMismatch { .. })
        ));
        let bin = dir.path().join("y.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[3] ^= 1;
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(load_snapshots(dir.path(), "y", None), Err(Error::CorruptArtifact { .. })));
        fs::write(&bin, &bytes[..8]).unwrap();
        assert!(matches!(load_snapshots(dir.path(), "y", None), Err(Error::CorruptArtifact { .. })));
        assert!(matches!(load_snapshots(dir.path(), "nope", None), Err(Error::MissingArtifact(p)) if p.len() == 2));
    }

    #[test]
    fn rom_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let basis = pod(&random_matrix(12, 6, 2), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNetwork::he_init(&[5, 4, 3], &mut rng).unwrap();
        let normalizer = InputNormalizer::from_bounds(&[-1.0, 0.0, 2.0, 20.0, 20.0], &[1.0, 3.0, 4.0, 1000.0, 1000.0]).unwrap();
        let rom = EennRom::new(basis, net, normalizer, vec![0.5, 2.0, 1.0 / 3.0], 0.02).unwrap();
        save_rom(dir.path(), "rom", &rom, "h", serde_json::json!({"epochs": 3})).unwrap();
        let (back, meta) = load_rom(dir.path(), "rom", Some("h")).unwrap();
        assert_eq!(back, rom);
        assert_eq!(meta.training["epochs"], 3);
    }

    #[test]
    fn joint_samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<JointSample> = (0..4)
            .map(|i| JointSample {
                y_r: ReducedState(vec![i as f64 * 0.1, -1.0 / 3.0]),
                mu: ParameterVector(vec![20.0 + i as f64, 999.9]),
                lifted: None,
            })
            .collect();
        save_joint_samples(dir.path(), "pool", &samples, "h").unwrap();
        assert_eq!(load_joint_samples(dir.path(), "pool", 2, None).unwrap(), samples);
    }
}
