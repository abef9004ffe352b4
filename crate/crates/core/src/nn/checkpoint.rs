//! Checkpoint container: named f64 tensors in a little-endian binary layout.
//!
//! Layout: magic `MACK`, format version (u32), entry count (u32), then per
//! entry a length-prefixed UTF-8 name (u16), a rank byte, the dimensions
//! (u32 each), and the row-major f64 payload. Everything little-endian.
//! Writing the same entries twice produces byte-identical files, so
//! checkpoints can be compared with a plain byte diff.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::NnError;

const MAGIC: &[u8; 4] = b"MACK";
const VERSION: u32 = 1;

/// One named tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MackEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl MackEntry {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        Self { name: name.into(), dims, data }
    }
}

/// Writes `entries` to `path` in the given order.
pub fn write_mack(path: &Path, entries: &[MackEntry]) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    let count = u32::try_from(entries.len())
        .map_err(|_| NnError::Format(format!("{} entries exceed the format limit", entries.len())))?;
    w.write_u32::<LittleEndian>(count)?;
    for e in entries {
        let name_len = u16::try_from(e.name.len())
            .map_err(|_| NnError::Format(format!("name {:?} is too long", e.name)))?;
        let rank = u8::try_from(e.dims.len())
            .map_err(|_| NnError::Format(format!("rank {} exceeds 255", e.dims.len())))?;
        if rank == 0 {
            return Err(NnError::Format(format!("entry {:?} has rank 0", e.name)));
        }
        let numel: usize = e.dims.iter().product();
        if numel != e.data.len() {
            return Err(NnError::Format(format!(
                "entry {:?} dims {:?} imply {numel} values, payload has {}",
                e.name,
                e.dims,
                e.data.len()
            )));
        }
        w.write_u16::<LittleEndian>(name_len)?;
        w.write_all(e.name.as_bytes())?;
        w.write_u8(rank)?;
        for &d in &e.dims {
            let d = u32::try_from(d)
                .map_err(|_| NnError::Format(format!("dimension {d} exceeds u32")))?;
            w.write_u32::<LittleEndian>(d)?;
        }
        for &v in &e.data {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back, validating the header, every entry, name
/// uniqueness, and that no bytes trail the last payload.
pub fn read_mack(path: &Path) -> Result<Vec<MackEntry>, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format(format!("bad magic {magic:?}, want {MAGIC:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(NnError::Format(format!(
            "unsupported checkpoint version {version}, this build reads {VERSION}"
        )));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| NnError::Format(format!("entry name is not UTF-8: {e}")))?;
        if entries.iter().any(|e: &MackEntry| e.name == name) {
            return Err(NnError::Format(format!("duplicate entry name {name:?}")));
        }
        let rank = r.read_u8()? as usize;
        if rank == 0 {
            return Err(NnError::Format(format!("entry {name:?} has rank 0")));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.read_u32::<LittleEndian>()? as usize;
            dims.push(d);
            numel = numel.checked_mul(d).ok_or_else(|| {
                NnError::Format(format!("entry {name:?} dims {dims:?}… overflow"))
            })?;
        }
        let mut data = vec![0.0f64; numel];
        for v in &mut data {
            *v = r.read_f64::<LittleEndian>().map_err(|e| {
                NnError::Format(format!("entry {name:?} payload truncated: {e}"))
            })?;
        }
        entries.push(MackEntry { name, dims, data });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(NnError::Format("trailing bytes after the last entry".into()));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn sample_entries() -> Vec<MackEntry> {
        vec![
            MackEntry::new("gen.enc0.w", vec![2, 1, 3, 3, 3], (0..54).map(|i| i as f64 * 0.5).collect()),
            MackEntry::new("gen.enc0.b", vec![2], vec![-1.0, f64::MIN_POSITIVE]),
            MackEntry::new("opt.step", vec![1], vec![17.0]),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.mack");
        let entries = sample_entries();
        write_mack(&path, &entries).unwrap();
        let back = read_mack(&path).unwrap();
        assert_eq!(back.len(), entries.len());
        for (a, b) in entries.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.dims, b.dims);
            let bits_a: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "payload of {} must survive bit-exactly", a.name);
        }
    }

    #[test]
    fn identical_writes_yield_identical_bytes() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.mack");
        let p2 = dir.path().join("b.mack");
        write_mack(&p1, &sample_entries()).unwrap();
        write_mack(&p2, &sample_entries()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn golden_bytes_for_a_minimal_checkpoint() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tiny.mack");
        write_mack(&path, &[MackEntry::new("w", vec![2], vec![1.0, 2.0])]).unwrap();
        let mut want: Vec<u8> = Vec::new();
        want.extend_from_slice(b"MACK");
        want.extend_from_slice(&1u32.to_le_bytes()); // version
        want.extend_from_slice(&1u32.to_le_bytes()); // count
        want.extend_from_slice(&1u16.to_le_bytes()); // name length
        want.push(b'w');
        want.push(1); // rank
        want.extend_from_slice(&2u32.to_le_bytes()); // dim
        want.extend_from_slice(&1.0f64.to_le_bytes());
        want.extend_from_slice(&2.0f64.to_le_bytes());
        assert_eq!(std::fs::read(&path).unwrap(), want);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("good.mack");
        write_mack(&path, &sample_entries()).unwrap();
        let good = std::fs::read(&path).unwrap();

        let bad_magic = dir.path().join("magic.mack");
        let mut b = good.clone();
        b[0] = b'X';
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(matches!(read_mack(&bad_magic), Err(NnError::Format(_))));

        let bad_version = dir.path().join("version.mack");
        let mut b = good.clone();
        b[4] = 9;
        std::fs::write(&bad_version, &b).unwrap();
        assert!(matches!(read_mack(&bad_version), Err(NnError::Format(_))));

        let truncated = dir.path().join("short.mack");
        std::fs::write(&truncated, &good[..good.len() - 3]).unwrap();
        assert!(read_mack(&truncated).is_err());

        let trailing = dir.path().join("long.mack");
        let mut b = good.clone();
        b.push(0);
        std::fs::write(&trailing, &b).unwrap();
        assert!(matches!(read_mack(&trailing), Err(NnError::Format(_))));
    }

    #[test]
    fn writer_validates_entries() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.mack");
        let wrong_len = MackEntry::new("w", vec![3], vec![1.0]);
        assert!(matches!(write_mack(&path, &[wrong_len]), Err(NnError::Format(_))));
        let rank0 = MackEntry::new("w", vec![], vec![1.0]);
        assert!(matches!(write_mack(&path, &[rank0]), Err(NnError::Format(_))));
    }

    #[test]
    fn duplicate_names_are_rejected_on_read() {
        // Hand-assemble a file with the same name twice.
        let dir = tempdir().unwrap();
        let path = dir.path().join("dup.mack");
        let mut raw: Vec<u8> = Vec::new();
        raw.extend_from_slice(b"MACK");
        raw.extend_from_slice(&1u32.to_le_bytes());
        raw.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            raw.extend_from_slice(&1u16.to_le_bytes());
            raw.push(b'w');
            raw.push(1);
            raw.extend_from_slice(&1u32.to_le_bytes());
            raw.extend_from_slice(&0.0f64.to_le_bytes());
        }
        std::fs::write(&path, &raw).unwrap();
        assert!(matches!(read_mack(&path), Err(NnError::Format(_))));
    }
}
