use std::fs;
use std::path::Path;

use super::FormatError;

pub const MAGIC: &[u8; 8] = b"DEEP2TNS";
pub const VERSION: u16 = 1;

/// magic + version + dtype + rank
const FIXED_HEADER: usize = 8 + 2 + 1 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    U8 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// Row-major array with a shape of one or more dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<u64>,
    data: TensorData,
}

fn element_count(shape: &[u64]) -> Result<u64, FormatError> {
    if shape.is_empty() {
        return Err(FormatError::EmptyShape);
    }
    shape
        .iter()
        .try_fold(1u64, |a, &d| a.checked_mul(d))
        .ok_or_else(|| FormatError::InvalidShape(format!("{shape:?} overflows")))
}

impl Tensor {
    pub fn new(shape: Vec<u64>, data: TensorData) -> Result<Self, FormatError> {
        let n = element_count(&shape)?;
        let len = match &data {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        } as u64;
        if n != len {
            return Err(FormatError::InvalidShape(format!(
                "shape {shape:?} holds {n} elements, data has {len}"
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<u64>, data: Vec<f32>) -> Result<Self, FormatError> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_u8(shape: Vec<u64>, data: Vec<u8>) -> Result<Self, FormatError> {
        Self::new(shape, TensorData::U8(data))
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::U8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let n = t.shape.iter().product::<u64>() as usize;
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * t.shape.len() + n * t.dtype().size() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.dtype() as u8);
    out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
    for d in &t.shape {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let found = bytes.len() as u64;
    let truncated = |expected: u64| FormatError::Truncated { expected, found };
    if bytes.len() < MAGIC.len() || &bytes[..8] != MAGIC {
        return Err(if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            truncated(FIXED_HEADER as u64)
        } else {
            FormatError::BadMagic
        });
    }
    if bytes.len() < FIXED_HEADER {
        return Err(truncated(FIXED_HEADER as u64));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { found: version });
    }
    let dtype = match bytes[10] {
        0 => DType::F32,
        1 => DType::U8,
        other => return Err(FormatError::UnknownDtype(other)),
    };
    let rank = u64_at(bytes, 11);
    let header = (rank.checked_mul(8))
        .and_then(|s| s.checked_add(FIXED_HEADER as u64))
        .ok_or_else(|| FormatError::InvalidShape(format!("rank {rank}")))?;
    if found < header {
        return Err(truncated(header));
    }
    let shape: Vec<u64> = (0..rank as usize)
        .map(|i| u64_at(bytes, FIXED_HEADER + 8 * i))
        .collect();
    let n = element_count(&shape)?;
    let expected = n
        .checked_mul(dtype.size() as u64)
        .and_then(|p| p.checked_add(header + 4))
        .ok_or_else(|| FormatError::InvalidShape(format!("{shape:?} overflows")))?;
    if found < expected {
        return Err(truncated(expected));
    }
    if found > expected {
        return Err(FormatError::TrailingBytes {
            extra: found - expected,
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::CrcMismatch { stored, computed });
    }
    let payload = &body[header as usize..];
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
        DType::U8 => TensorData::U8(payload.to_vec()),
    };
    Tensor::new(shape, data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<(), FormatError> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, FormatError> {
    decode_tensor(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor {
        Tensor::from_f32(
            vec![2, 3],
            vec![0.0, -1.5, 2.25, f32::MIN_POSITIVE, 1e30, -0.0],
        )
        .unwrap()
    }

    #[test]
    fn byte_layout() {
        let b = encode_tensor(&Tensor::from_u8(vec![3], vec![7, 8, 9]).unwrap());
        assert_eq!(&b[..8], b"DEEP2TNS");
        assert_eq!(&b[8..10], &[1, 0]);
        assert_eq!(b[10], 1);
        assert_eq!(&b[11..19], &1u64.to_le_bytes());
        assert_eq!(&b[19..27], &3u64.to_le_bytes());
        assert_eq!(&b[27..30], &[7, 8, 9]);
        assert_eq!(&b[30..], &crc32fast::hash(&b[..30]).to_le_bytes());
        assert_eq!(b.len(), 34);
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(encode_tensor(&back), encode_tensor(&t));
    }

    #[test]
    fn distinct_errors() {
        let good = encode_tensor(&sample());

        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(decode_tensor(&b), Err(FormatError::BadMagic)));

        let mut b = good.clone();
        b[8] = 2;
        assert!(matches!(
            decode_tensor(&b),
            Err(FormatError::UnsupportedVersion { found: 2 })
        ));

        let mut b = good.clone();
        b[10] = 9;
        assert!(matches!(
            decode_tensor(&b),
            Err(FormatError::UnknownDtype(9))
        ));

        assert!(matches!(
            decode_tensor(&good[..good.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(
            decode_tensor(&good[..5]),
            Err(FormatError::Truncated { .. })
        ));

        let mut b = good.clone();
        b.push(0);
        assert!(matches!(
            decode_tensor(&b),
            Err(FormatError::TrailingBytes { extra: 1 })
        ));

        let mut b = good.clone();
        let last_payload = b.len() - 5;
        b[last_payload] ^= 0x01;
        assert!(matches!(
            decode_tensor(&b),
            Err(FormatError::CrcMismatch { .. })
        ));
    }

    #[test]
    fn empty_shape_rejected() {
        assert!(matches!(
            Tensor::from_f32(vec![], vec![1.0]),
            Err(FormatError::EmptyShape)
        ));
        let mut b = encode_tensor(&Tensor::from_u8(vec![1], vec![5]).unwrap());
        // rewrite as rank 0 with a consistent checksum
        b.truncate(FIXED_HEADER);
        b[11..19].copy_from_slice(&0u64.to_le_bytes());
        b.push(5);
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_tensor(&b), Err(FormatError::EmptyShape)));
    }

    #[test]
    fn shape_data_mismatch() {
        assert!(matches!(
            Tensor::from_u8(vec![2, 2], vec![1, 2, 3]),
            Err(FormatError::InvalidShape(_))
        ));
    }
}
