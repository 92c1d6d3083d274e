//! Binary product-table files.
//!
//! Layout, all little-endian:
//!
//! | offset | size   | field                                   |
//! |--------|--------|-----------------------------------------|
//! | 0      | 8      | magic `AXMULT8\0`                       |
//! | 8      | 32     | id, UTF-8, zero padded                  |
//! | 40     | 8      | energy per multiplication, pJ (`f64`)   |
//! | 48     | 131072 | 65536 × `u16` products, index `a·256+b`  |

use std::path::Path;

use super::{MultError, MultiplierModel, TableSource, TABLE_LEN};

pub const LUT_MAGIC: &[u8; 8] = b"AXMULT8\0";
pub const LUT_FILE_LEN: usize = 8 + 32 + 8 + 2 * TABLE_LEN;

const ID_OFFSET: usize = 8;
const ENERGY_OFFSET: usize = 40;
const TABLE_OFFSET: usize = 48;

pub fn encode_lut(model: &MultiplierModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(LUT_FILE_LEN);
    out.extend_from_slice(LUT_MAGIC);
    let mut id = [0u8; 32];
    id[..model.id().len()].copy_from_slice(model.id().as_bytes());
    out.extend_from_slice(&id);
    out.extend_from_slice(&model.energy_pj().to_le_bytes());
    for &p in model.table() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn write_lut_file(model: &MultiplierModel, path: impl AsRef<Path>) -> Result<(), MultError> {
    let path = path.as_ref();
    std::fs::write(path, encode_lut(model)).map_err(|source| MultError::Io { path: path.into(), source })
}

pub fn load_lut_file(path: impl AsRef<Path>) -> Result<MultiplierModel, MultError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| MultError::Io { path: path.into(), source })?;
    parse_lut(&bytes, path)
}

/// Parses file contents; `path` is used for provenance and diagnostics.
pub fn parse_lut(bytes: &[u8], path: &Path) -> Result<MultiplierModel, MultError> {
    let fail = |offset: usize, reason: String| MultError::Format { path: path.into(), offset: offset as u64, reason };

    if bytes.len() < LUT_MAGIC.len() || &bytes[..8] != LUT_MAGIC {
        return Err(fail(0, "bad magic, expected AXMULT8\\0".into()));
    }
    if bytes.len() != LUT_FILE_LEN {
        let offset = bytes.len().min(LUT_FILE_LEN);
        return Err(fail(offset, format!("file is {} bytes, expected {LUT_FILE_LEN}", bytes.len())));
    }

    let id_field = &bytes[ID_OFFSET..ENERGY_OFFSET];
    let id_len = id_field.iter().position(|&b| b == 0).unwrap_or(id_field.len());
    if id_len == 0 || id_len == id_field.len() {
        return Err(fail(ID_OFFSET, "id must be 1..=31 bytes followed by NUL padding".into()));
    }
    if let Some(pos) = id_field[id_len..].iter().position(|&b| b != 0) {
        return Err(fail(ID_OFFSET + id_len + pos, "non-zero byte in id padding".into()));
    }
    let id = std::str::from_utf8(&id_field[..id_len])
        .map_err(|e| fail(ID_OFFSET + e.valid_up_to(), "id is not UTF-8".into()))?;

    let energy = f64::from_le_bytes(bytes[ENERGY_OFFSET..TABLE_OFFSET].try_into().unwrap());
    if !(energy.is_finite() && energy > 0.0) {
        return Err(fail(ENERGY_OFFSET, format!("energy {energy} pJ is not positive and finite")));
    }

    let table: Vec<u16> = bytes[TABLE_OFFSET..]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    MultiplierModel::from_table(id, table, energy, TableSource::LutFile { path: path.into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_length() {
        assert_eq!(LUT_FILE_LEN, 131_120);
    }

    #[test]
    fn exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exact.lut");
        let exact = MultiplierModel::build_exact("mul8u_JFF", 0.56).unwrap();
        write_lut_file(&exact, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 131_120);
        let loaded = load_lut_file(&path).unwrap();
        assert!(loaded.is_exact());
        assert_eq!(loaded.id(), "mul8u_JFF");
        assert_eq!(loaded.energy_pj(), 0.56);
    }

    #[test]
    fn truncated_round_trip_matches_generator() {
        let t3 = MultiplierModel::build_truncated("trunc3", 3, 0.12).unwrap();
        let loaded = parse_lut(&encode_lut(&t3), Path::new("t3.lut")).unwrap();
        assert_eq!(loaded.table(), t3.table());
        assert_eq!(loaded.error_metrics(), t3.error_metrics());
        assert_eq!(loaded.source(), &TableSource::LutFile { path: "t3.lut".into() });
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let m = MultiplierModel::build_exact("ab", 0.5).unwrap();
        let bytes = encode_lut(&m);
        assert_eq!(&bytes[..8], b"AXMULT8\0");
        assert_eq!(&bytes[8..10], b"ab");
        assert!(bytes[10..40].iter().all(|&b| b == 0));
        assert_eq!(&bytes[40..48], &0.5f64.to_le_bytes());
        // entry (1, 2) = 2 sits at index 258
        assert_eq!(&bytes[48 + 2 * 258..48 + 2 * 259], &[2, 0]);
        assert_eq!(&bytes[LUT_FILE_LEN - 2..], &65025u16.to_le_bytes());
    }

    #[test]
    fn malformed_files_name_the_offset() {
        let good = encode_lut(&MultiplierModel::build_exact("e", 0.5).unwrap());
        let p = Path::new("x.lut");

        let short = &good[..LUT_FILE_LEN - 2];
        match parse_lut(short, p) {
            Err(MultError::Format { offset, .. }) => assert_eq!(offset, (LUT_FILE_LEN - 2) as u64),
            other => panic!("{other:?}"),
        }

        let mut bad_magic = good.clone();
        bad_magic[3] = b'x';
        assert!(matches!(parse_lut(&bad_magic, p), Err(MultError::Format { offset: 0, .. })));

        let mut bad_energy = good.clone();
        bad_energy[40..48].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(matches!(parse_lut(&bad_energy, p), Err(MultError::Format { offset: 40, .. })));

        let mut bad_pad = good;
        bad_pad[20] = 7;
        assert!(matches!(parse_lut(&bad_pad, p), Err(MultError::Format { offset: 20, .. })));
    }
}
