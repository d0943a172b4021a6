//! On-disk formats.
//!
//! Trace files (`.csibin`): the magic `CSIB`, a little-endian `u32` header
//! length, a JSON header, the payload of `(re, im)` little-endian `f64`
//! pairs (packet-major, then subcarrier, then antenna pair) and a trailing
//! CRC32 over everything before it. Manifests, models and reports are JSON;
//! feature images and CDFs are also exported as CSV.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::csi::CsiTrace;
use crate::dataset::{Dataset, DatasetManifest, SCHEMA_VERSION};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CSIB";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceHeader {
    schema_version: u32,
    ap_id: u32,
    cell_id: Option<u32>,
    carrier_band: String,
    n_packets: usize,
    n_subcarriers: usize,
    n_pairs: usize,
}

pub fn write_trace(path: &Path, trace: &CsiTrace) -> Result<()> {
    let header = serde_json::to_vec(&TraceHeader {
        schema_version: SCHEMA_VERSION,
        ap_id: trace.ap_id(),
        cell_id: trace.cell_id(),
        carrier_band: trace.carrier_band().to_owned(),
        n_packets: trace.n_packets(),
        n_subcarriers: trace.n_subcarriers(),
        n_pairs: trace.n_pairs(),
    })?;
    let payload_len = 16 * trace.n_packets() * trace.n_subcarriers() * trace.n_pairs();
    let mut buf = Vec::with_capacity(8 + header.len() + payload_len + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for p in trace.packets() {
        for h in p.iter() {
            buf.extend_from_slice(&h.re.to_le_bytes());
            buf.extend_from_slice(&h.im.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<CsiTrace> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = |detail: String| Error::Truncated {
        path: path.to_owned(),
        detail,
    };
    let malformed = |detail: String| Error::Malformed {
        path: path.to_owned(),
        detail,
    };
    if bytes.len() < 8 {
        return Err(truncated(format!("{} bytes, no room for a header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed("missing CSIB magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| truncated(format!("header of {header_len} bytes does not fit")))?;
    let header: TraceHeader = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| malformed(format!("header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            path: path.to_owned(),
            found: header.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let entries = header
        .n_packets
        .checked_mul(header.n_subcarriers)
        .and_then(|v| v.checked_mul(header.n_pairs))
        .ok_or_else(|| malformed("header sizes overflow".into()))?;
    let expected = entries
        .checked_mul(16)
        .and_then(|v| v.checked_add(header_end + 4))
        .ok_or_else(|| malformed("header sizes overflow".into()))?;
    if bytes.len() < expected {
        return Err(truncated(format!("{} bytes, expected {expected}", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(malformed(format!(
            "{} trailing bytes after the checksum",
            bytes.len() - expected
        )));
    }
    let body = &bytes[..expected - 4];
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            path: path.to_owned(),
            stored,
            computed,
        });
    }
    let mut values = body[header_end..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let shape = (header.n_subcarriers, header.n_pairs);
    let packets = (0..header.n_packets)
        .map(|_| {
            Array2::from_shape_simple_fn(shape, || {
                let re = values.next().expect("length checked");
                let im = values.next().expect("length checked");
                Complex64::new(re, im)
            })
        })
        .collect();
    CsiTrace::new(header.ap_id, header.cell_id, packets, header.carrier_band)
        .map_err(|e| malformed(e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::Malformed {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

pub fn trace_file_name(cell: u32, ap: u32) -> String {
    format!("cell{cell}_ap{ap}.csibin")
}

/// Writes `manifest.json` and one trace file per (cell, AP).
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(MANIFEST_FILE), &dataset.manifest)?;
    for per_ap in &dataset.traces {
        for t in per_ap {
            let cell = t.cell_id().expect("validated dataset traces are labeled");
            write_trace(&dir.join(trace_file_name(cell, t.ap_id())), t)?;
        }
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            path,
            found: manifest.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let traces = manifest
        .grid
        .cell_ids()
        .into_iter()
        .map(|c| {
            (1..=manifest.n_aps as u32)
                .map(|ap| read_trace(&dir.join(trace_file_name(c, ap))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset { manifest, traces };
    dataset.validate()?;
    Ok(dataset)
}

/// Matrix as headerless CSV, one matrix row per line.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Malformed {
                path: path.to_owned(),
                detail: e.to_string(),
            })?;
        rows.push(row);
    }
    let n_cols = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), n_cols), flat).map_err(|e| Error::Malformed {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

/// `error_m,fraction` rows.
pub fn write_cdf_csv(path: &Path, cdf: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["error_m", "fraction"])?;
    for (e, f) in cdf {
        w.write_record([e.to_string(), f.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Output path helper that creates the parent directory.
pub fn prepare_output(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.join(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_benchmark, ChannelScenario};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_trace(seed: u64) -> CsiTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let packets = (0..7)
            .map(|_| {
                Array2::from_shape_simple_fn((5, 4), || {
                    Complex64::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
                })
            })
            .collect();
        CsiTrace::new(2, Some(5), packets, "5GHz").unwrap()
    }

    #[test]
    fn trace_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csibin");
        let mut trace = random_trace(1);
        let mut packets = trace.packets().to_vec();
        packets[0][[0, 0]] = Complex64::new(-0.0, f64::MIN_POSITIVE / 3.0);
        trace = CsiTrace::new(2, Some(5), packets, "5GHz").unwrap();
        write_trace(&path, &trace).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(back.ap_id(), 2);
        assert_eq!(back.cell_id(), Some(5));
        for (a, b) in trace.packets().iter().zip(back.packets()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
        let unlabeled = trace.unlabeled();
        write_trace(&path, &unlabeled).unwrap();
        assert_eq!(read_trace(&path).unwrap(), unlabeled);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csibin");
        write_trace(&path, &random_trace(2)).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let k = bytes.len() - 20;
        bytes[k] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csibin");
        write_trace(&path, &random_trace(3)).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 30]).unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Truncated { .. })));
        fs::write(&path, &bytes[..5]).unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn future_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csibin");
        write_trace(&path, &random_trace(4)).unwrap();
        let bytes = fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("\"schema_version\":1").unwrap() + "\"schema_version\":".len();
        let mut edited = bytes.clone();
        edited[at] = b'7';
        fs::write(&path, &edited).unwrap();
        let err = read_trace(&path).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { found: 7, supported: 1, .. }));
        assert!(err.to_string().contains("schema_version 7"));
    }

    #[test]
    fn bad_magic_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csibin");
        fs::write(&path, b"NOPE\0\0\0\0rest").unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scenario = ChannelScenario::reference(3, 4, 2).unwrap();
        let ds = make_benchmark(&scenario, 12).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        assert!(dir.path().join("cell4_ap2.csibin").exists());
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_round_trip_and_cdf_header() {
        let dir = tempfile::tempdir().unwrap();
        let m = ndarray::array![[1.0, -2.5, 1e-300], [0.1, 0.2, 0.30000000000000004]];
        let path = dir.path().join("m.csv");
        write_matrix_csv(&path, &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);

        let cdf_path = dir.path().join("cdf.csv");
        write_cdf_csv(&cdf_path, &[(0.0, 0.5), (0.5, 1.0)]).unwrap();
        let text = fs::read_to_string(cdf_path).unwrap();
        assert_eq!(text, "error_m,fraction\n0,0.5\n0.5,1\n");
    }
}
