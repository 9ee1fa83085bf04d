//! Reading and writing single arrays in the numpy `.npy` format.
//!
//! Only C-order arrays with little-endian (or byte-sized) integer and float
//! element types are supported. Files are written as format version 1.0.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
}

impl Dtype {
    fn parse(descr: &str) -> Option<Self> {
        // '|' marks byte-sized types; '=' is native, which is little-endian on
        // every platform we build for.
        let (order, code) = descr.split_at(1);
        if !matches!(order, "<" | "|" | "=") {
            return None;
        }
        Some(match code {
            "f4" => Dtype::F32,
            "f8" => Dtype::F64,
            "i1" => Dtype::I8,
            "u1" => Dtype::U8,
            "i2" => Dtype::I16,
            "u2" => Dtype::U16,
            "i4" => Dtype::I32,
            "u4" => Dtype::U32,
            "i8" => Dtype::I64,
            "u8" => Dtype::U64,
            _ => return None,
        })
    }

    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I8 => "|i1",
            Dtype::U8 => "|u1",
            Dtype::I16 => "<i2",
            Dtype::U16 => "<u2",
            Dtype::I32 => "<i4",
            Dtype::U32 => "<u4",
            Dtype::I64 => "<i8",
            Dtype::U64 => "<u8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::I8 | Dtype::U8 => 1,
            Dtype::I16 | Dtype::U16 => 2,
            Dtype::F32 | Dtype::I32 | Dtype::U32 => 4,
            Dtype::F64 | Dtype::I64 | Dtype::U64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::F32 | Dtype::F64)
    }
}

#[derive(Debug)]
struct Header {
    dtype: Dtype,
    shape: Vec<usize>,
}

fn parse_header(text: &str) -> std::result::Result<Header, String> {
    let value_after = |key: &str| -> std::result::Result<&str, String> {
        let quoted = format!("'{key}'");
        let at = text.find(&quoted).ok_or_else(|| format!("header lacks key {key}"))?;
        let rest = &text[at + quoted.len()..];
        let colon = rest.find(':').ok_or("malformed header dict")?;
        Ok(rest[colon + 1..].trim_start())
    };

    let descr = value_after("descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or("descr is not a string")?;
    let dtype = Dtype::parse(descr).ok_or_else(|| format!("unsupported dtype {descr}"))?;

    let fortran = value_after("fortran_order")?;
    if fortran.starts_with("True") {
        return Err("fortran-order arrays are not supported".into());
    } else if !fortran.starts_with("False") {
        return Err("malformed fortran_order".into());
    }

    let shape = value_after("shape")?;
    let shape = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or("shape is not a tuple")?;
    let shape = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| format!("bad shape entry {s}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    Ok(Header { dtype, shape })
}

fn read_header<R: Read>(reader: &mut R) -> std::result::Result<Header, String> {
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic != MAGIC {
        return Err("missing npy magic".into());
    }
    let mut version = [0u8; 2];
    reader.read_exact(&mut version).map_err(|e| e.to_string())?;
    let header_len = match version[0] {
        1 => {
            let mut b = [0u8; 2];
            reader.read_exact(&mut b).map_err(|e| e.to_string())?;
            u16::from_le_bytes(b) as usize
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            reader.read_exact(&mut b).map_err(|e| e.to_string())?;
            u32::from_le_bytes(b) as usize
        }
        v => return Err(format!("unsupported npy version {v}")),
    };
    let mut text = vec![0u8; header_len];
    reader.read_exact(&mut text).map_err(|e| e.to_string())?;
    let text = String::from_utf8(text).map_err(|_| "header is not valid text".to_string())?;
    parse_header(&text)
}

/// An array as stored on disk, before conversion.
#[derive(Debug, Clone, PartialEq)]
pub enum RawArray {
    Float(ArrayD<f64>, Dtype),
    Int(ArrayD<i64>, Dtype),
}

impl RawArray {
    pub fn shape(&self) -> &[usize] {
        match self {
            RawArray::Float(a, _) => a.shape(),
            RawArray::Int(a, _) => a.shape(),
        }
    }

    /// Values as `f64`. Integer arrays are converted.
    pub fn into_f64(self) -> ArrayD<f64> {
        match self {
            RawArray::Float(a, _) => a,
            RawArray::Int(a, _) => a.mapv(|v| v as f64),
        }
    }
}

macro_rules! decode {
    ($bytes:expr, $t:ty, $n:expr) => {
        $bytes
            .chunks_exact($n)
            .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()))
    };
}

/// Reads one array from a stream positioned at the magic string.
pub fn read_from<R: Read>(reader: &mut R, origin: &Path) -> Result<RawArray> {
    let header = read_header(reader).map_err(|r| Error::npy(origin, r))?;
    let count: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; count * header.dtype.size()];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| Error::npy(origin, "data section shorter than the declared shape"))?;
    let shape = IxDyn(&header.shape);
    let out = match header.dtype {
        Dtype::F64 => RawArray::Float(
            ArrayD::from_shape_vec(shape, decode!(bytes, f64, 8).collect()).unwrap(),
            header.dtype,
        ),
        Dtype::F32 => RawArray::Float(
            ArrayD::from_shape_vec(shape, decode!(bytes, f32, 4).map(f64::from).collect()).unwrap(),
            header.dtype,
        ),
        dt => {
            let values: Vec<i64> = match dt {
                Dtype::I8 => bytes.iter().map(|&b| i64::from(b as i8)).collect(),
                Dtype::U8 => bytes.iter().map(|&b| i64::from(b)).collect(),
                Dtype::I16 => decode!(bytes, i16, 2).map(i64::from).collect(),
                Dtype::U16 => decode!(bytes, u16, 2).map(i64::from).collect(),
                Dtype::I32 => decode!(bytes, i32, 4).map(i64::from).collect(),
                Dtype::U32 => decode!(bytes, u32, 4).map(i64::from).collect(),
                Dtype::I64 => decode!(bytes, i64, 8).collect(),
                Dtype::U64 => decode!(bytes, u64, 8)
                    .map(|v| i64::try_from(v).map_err(|_| Error::npy(origin, "u64 overflow")))
                    .collect::<Result<_>>()?,
                Dtype::F32 | Dtype::F64 => unreachable!(),
            };
            RawArray::Int(ArrayD::from_shape_vec(shape, values).unwrap(), dt)
        }
    };
    Ok(out)
}

pub fn read(path: impl AsRef<Path>) -> Result<RawArray> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_from(&mut BufReader::new(file), path)
}

/// Shape declared in a file's header, without reading the data section.
pub fn read_shape(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let header = read_header(&mut BufReader::new(file)).map_err(|r| Error::npy(path, r))?;
    Ok(header.shape)
}

/// Reads a float (or integer) array and returns it as `f64`.
pub fn read_f64(path: impl AsRef<Path>) -> Result<ArrayD<f64>> {
    read(path).map(RawArray::into_f64)
}

/// Reads an integer array. Float arrays are rejected.
pub fn read_int(path: impl AsRef<Path>) -> Result<ArrayD<i64>> {
    let path = path.as_ref();
    match read(path)? {
        RawArray::Int(a, _) => Ok(a),
        RawArray::Float(..) => Err(Error::npy(path, "expected an integer array")),
    }
}

fn header_bytes(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_text = match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_text
    );
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of 64
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

/// Element types that can be written.
pub trait NpyElement: Copy {
    const DTYPE: Dtype;
    fn write_le<W: Write>(self, w: &mut W) -> std::io::Result<()>;
}

macro_rules! element {
    ($t:ty, $d:expr) => {
        impl NpyElement for $t {
            const DTYPE: Dtype = $d;
            fn write_le<W: Write>(self, w: &mut W) -> std::io::Result<()> {
                w.write_all(&self.to_le_bytes())
            }
        }
    };
}

element!(f64, Dtype::F64);
element!(f32, Dtype::F32);
element!(i32, Dtype::I32);
element!(i64, Dtype::I64);
element!(u8, Dtype::U8);

pub fn write_to<W: Write, T: NpyElement>(
    writer: &mut W,
    shape: &[usize],
    values: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    writer.write_all(&header_bytes(T::DTYPE, shape))?;
    for v in values {
        v.write_le(writer)?;
    }
    Ok(())
}

pub fn write<T: NpyElement>(
    path: impl AsRef<Path>,
    shape: &[usize],
    values: impl IntoIterator<Item = T>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(&mut w, shape, values).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes an array in logical (C) order.
pub fn write_array<T: NpyElement>(path: impl AsRef<Path>, array: &ArrayD<T>) -> Result<()> {
    write(path, array.shape(), array.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_aligned_and_parsable() {
        for shape in [vec![3], vec![2, 3], vec![4, 5, 6], vec![]] {
            let h = header_bytes(Dtype::F64, &shape);
            assert_eq!(h.len() % 64, 0);
            let parsed = read_header(&mut h.as_slice()).unwrap();
            assert_eq!(parsed.shape, shape);
            assert_eq!(parsed.dtype, Dtype::F64);
        }
    }

    #[test]
    fn parses_numpy_written_header() {
        let text = "{'descr': '<f4', 'fortran_order': False, 'shape': (224, 224), }";
        let h = parse_header(text).unwrap();
        assert_eq!(h.dtype, Dtype::F32);
        assert_eq!(h.shape, vec![224, 224]);
    }

    #[test]
    fn rejects_fortran_order_and_big_endian() {
        let f = "{'descr': '<f8', 'fortran_order': True, 'shape': (2,), }";
        assert!(parse_header(f).is_err());
        let be = "{'descr': '>f8', 'fortran_order': False, 'shape': (2,), }";
        assert!(parse_header(be).is_err());
    }

    #[test]
    fn f32_values_widen_exactly() {
        let mut buf = Vec::new();
        write_to(&mut buf, &[3], [0.1f32, -2.5, 7.0]).unwrap();
        let a = read_from(&mut buf.as_slice(), Path::new("mem")).unwrap();
        let RawArray::Float(a, Dtype::F32) = a else {
            panic!("wrong dtype")
        };
        assert_eq!(a.as_slice().unwrap(), &[0.1f32 as f64, -2.5, 7.0]);
    }

    #[test]
    fn truncated_data_is_an_error() {
        let mut buf = Vec::new();
        write_to(&mut buf, &[4], [1.0f64, 2.0, 3.0, 4.0]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_from(&mut buf.as_slice(), Path::new("mem")),
            Err(Error::Npy { .. })
        ));
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f64>(), 1..40),
            rows in 1usize..4,
        ) {
            let n = values.len() - values.len() % rows;
            prop_assume!(n > 0);
            let shape = [rows, n / rows];
            let mut buf = Vec::new();
            write_to(&mut buf, &shape, values[..n].iter().copied()).unwrap();
            let back = read_from(&mut buf.as_slice(), Path::new("mem")).unwrap();
            let RawArray::Float(back, _) = back else { panic!() };
            prop_assert_eq!(back.shape(), &shape[..]);
            for (a, b) in back.iter().zip(&values[..n]) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn i32_round_trip(values in proptest::collection::vec(any::<i32>(), 1..40)) {
            let mut buf = Vec::new();
            write_to(&mut buf, &[values.len()], values.iter().copied()).unwrap();
            let back = read_from(&mut buf.as_slice(), Path::new("mem")).unwrap();
            let RawArray::Int(back, Dtype::I32) = back else { panic!() };
            let expect: Vec<i64> = values.iter().map(|&v| i64::from(v)).collect();
            prop_assert_eq!(back.into_raw_vec_and_offset().0, expect);
        }
    }
}
