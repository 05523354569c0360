//! Probe checkpoint: `b"TPRB"`, u32 version, u32 rows, u32 cols, then
//! `rows * cols` little-endian f32 entries in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ProbeMatrix;
use crate::error::{Error, Result};

pub const TPRB_MAGIC: &[u8; 4] = b"TPRB";
pub const TPRB_VERSION: u32 = 1;

pub fn write_probe<W: Write>(mut w: W, f: &ProbeMatrix) -> Result<()> {
    w.write_all(TPRB_MAGIC)?;
    w.write_all(&TPRB_VERSION.to_le_bytes())?;
    w.write_all(&(f.rows() as u32).to_le_bytes())?;
    w.write_all(&(f.cols() as u32).to_le_bytes())?;
    for &v in f.as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_probe<R: Read>(mut r: R) -> Result<ProbeMatrix> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::Truncated {
        offset: 0,
        expected: 16,
        what: "probe header".into(),
    })?;
    if &header[0..4] != TPRB_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad probe magic".into(),
        });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != TPRB_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported probe version {version}"),
        });
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut body = vec![0u8; rows * cols * 4];
    r.read_exact(&mut body).map_err(|_| Error::Truncated {
        offset: 16,
        expected: body.len(),
        what: "probe entries".into(),
    })?;
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    ProbeMatrix::from_vec(rows, cols, data).map_err(|e| Error::Format {
        offset: 8,
        message: e.to_string(),
    })
}

impl ProbeMatrix {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_probe(BufWriter::new(File::create(path)?), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ProbeMatrix> {
        read_probe(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_single_precision() {
        let f = ProbeMatrix::from_vec(2, 3, vec![0.1, -0.2, 0.3, 1.5, 0.0, -7.25]).unwrap();
        let mut buf = Vec::new();
        write_probe(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 16 + 24);
        assert_eq!(&buf[0..4], b"TPRB");
        let g = read_probe(buf.as_slice()).unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 3));
        for (a, b) in f.as_slice().iter().zip(g.as_slice()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let f = ProbeMatrix::zeros(1, 2);
        let mut buf = Vec::new();
        write_probe(&mut buf, &f).unwrap();
        assert!(matches!(
            read_probe(&buf[..buf.len() - 1]),
            Err(Error::Truncated { offset: 16, .. })
        ));
        buf[0] = b'Z';
        assert!(matches!(
            read_probe(buf.as_slice()),
            Err(Error::Format { .. })
        ));
    }
}
