//! Binary spectrogram dump: `"DPSG"`, `u32` frames, `u32` bins, then the
//! real plane and the imaginary plane as time-major little-endian `f32`.

use std::fs;
use std::path::Path;

use super::Spectrogram;
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 4] = b"DPSG";

pub fn write_dump(path: impl AsRef<Path>, spec: &Spectrogram<f32>) -> Result<()> {
    spec.validate()?;
    let mut buf = Vec::with_capacity(12 + 8 * spec.real.len());
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&(spec.frames as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.bins as u32).to_le_bytes());
    for v in spec.real.iter().chain(&spec.imag) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<Spectrogram<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != DUMP_MAGIC {
        return Err(Error::InvalidArgument("not a spectrogram dump".into()));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = frames * bins;
    if bytes.len() != 12 + 8 * n {
        return Err(Error::InvalidArgument(format!(
            "dump of {frames}x{bins} should be {} bytes, found {}",
            12 + 8 * n,
            bytes.len()
        )));
    }
    let vals: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Spectrogram::new(frames, bins, vals[..n].to_vec(), vals[n..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.dpsg");
        let spec = Spectrogram::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![-1.0, -2.0, -3.0, -4.0, -5.0, -6.0]).unwrap();
        write_dump(&path, &spec).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DPSG");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[12 + 24..12 + 28], &(-1.0f32).to_le_bytes());
        assert_eq!(read_dump(&path).unwrap(), spec);
        fs::write(&path, &bytes[..20]).unwrap();
        assert!(read_dump(&path).is_err());
    }
}
