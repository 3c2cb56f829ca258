//! Little-endian tensor files: `rank: u32`, `dims: [u32; rank]`, `scale: f64`,
//! then the int8 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::QTensor;
use crate::error::{Error, Result};

pub fn write_tensor<W: Write>(mut w: W, t: &QTensor) -> Result<()> {
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dim {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&t.scale().to_le_bytes())?;
    let payload: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<QTensor> {
    let mut u4 = [0u8; 4];
    r.read_exact(&mut u4)?;
    let rank = u32::from_le_bytes(u4) as usize;
    if rank > 8 {
        return Err(Error::Parse(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        r.read_exact(&mut u4)?;
        shape.push(u32::from_le_bytes(u4) as usize);
    }
    let mut u8s = [0u8; 8];
    r.read_exact(&mut u8s)?;
    let scale = f64::from_le_bytes(u8s);
    let len: usize = shape.iter().product();
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Parse("trailing bytes after tensor payload".into()));
    }
    QTensor::new(shape, payload.into_iter().map(|b| b as i8).collect(), scale)
}

pub fn write_tensor_file(path: &Path, t: &QTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<QTensor> {
    read_tensor(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let t = QTensor::new(vec![2, 3], vec![1, -2, 3, -127, 127, 0], 0.125).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), 4 + 2 * 4 + 8 + 6);
        assert_eq!(&buf[..4], &2u32.to_le_bytes());
        assert_eq!(&buf[12..20], &0.125f64.to_le_bytes());
        assert_eq!(read_tensor(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn rejects_truncated_and_trailing() {
        let t = QTensor::new(vec![4], vec![1, 2, 3, 4], 1.0).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert!(read_tensor(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_tensor(buf.as_slice()).is_err());
    }
}
