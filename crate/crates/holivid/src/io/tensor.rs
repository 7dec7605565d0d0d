//! Flat binary tensors: four little-endian `u32` dimensions followed by the
//! values as little-endian `f32` in C order.

use std::path::Path;

use holivid_core::tensor::Tensor;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    if t.ndim() > 4 || t.ndim() == 0 {
        return Err(Error::Usage(format!("cannot store a {}-dimensional tensor", t.ndim())));
    }
    let mut dims = [1u32; 4];
    for (d, &s) in dims.iter_mut().zip(t.shape()) {
        *d = u32::try_from(s).map_err(|_| Error::Usage(format!("dimension {s} does not fit in 32 bits")))?;
    }
    let mut out = Vec::with_capacity(16 + 4 * t.len());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "file is shorter than the 16-byte header"));
    }
    let dims: Vec<usize> = bytes[..16]
        .chunks(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != 16 + 4 * n {
        return Err(Error::format(
            path,
            format!("header {:?} needs {} bytes of data, found {}", dims, 4 * n, bytes.len() - 16),
        ));
    }
    let data = bytes[16..]
        .chunks(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Tensor::from_vec(&dims, data)?)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t)?)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(path, &read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_header_then_f32() {
        let t = Tensor::from_vec(&[1, 2, 1, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let b = encode_tensor(&t).unwrap();
        assert_eq!(&b[..16], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..20], &0.5f32.to_le_bytes());
        assert_eq!(b.len(), 32);
        assert_eq!(decode_tensor(Path::new("x"), &b).unwrap(), t);
    }

    #[test]
    fn matrices_are_padded_to_four_dims() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        let back = decode_tensor(Path::new("x"), &encode_tensor(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), &[2, 3, 1, 1]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let t = Tensor::zeros(&[2, 2, 1, 1]);
        let b = encode_tensor(&t).unwrap();
        assert!(decode_tensor(Path::new("x"), &b[..b.len() - 1]).is_err());
        assert!(decode_tensor(Path::new("x"), &b[..8]).is_err());
    }
}
