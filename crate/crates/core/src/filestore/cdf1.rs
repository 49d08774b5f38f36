//! The CDF1 container format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "CDF1" | u16 version = 1 | u32 dataset count N
//! N x { u16 name length | name (UTF-8) | u8 dtype | u8 ndim | ndim x u64 shape
//!       | u64 payload offset | u64 payload length | u32 CRC32 of payload }
//! payload region
//! ```
//!
//! Payload offsets are absolute. The payload region is the concatenation of
//! the dataset payloads in table order.

use std::io::{Read, Seek, SeekFrom};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CDF1";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
    I8,
    I16,
    I32,
    I64,
    U8,
    U16,
    U32,
    U64,
}

impl Dtype {
    pub const ALL: [Dtype; 10] = [
        Dtype::F32,
        Dtype::F64,
        Dtype::I8,
        Dtype::I16,
        Dtype::I32,
        Dtype::I64,
        Dtype::U8,
        Dtype::U16,
        Dtype::U32,
        Dtype::U64,
    ];

    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
            Dtype::I8 => 3,
            Dtype::I16 => 4,
            Dtype::I32 => 5,
            Dtype::I64 => 6,
            Dtype::U8 => 7,
            Dtype::U16 => 8,
            Dtype::U32 => 9,
            Dtype::U64 => 10,
        }
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        Dtype::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::I8 | Dtype::U8 => 1,
            Dtype::I16 | Dtype::U16 => 2,
            Dtype::F32 | Dtype::I32 | Dtype::U32 => 4,
            Dtype::F64 | Dtype::I64 | Dtype::U64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::I8 => "i8",
            Dtype::I16 => "i16",
            Dtype::I32 => "i32",
            Dtype::I64 => "i64",
            Dtype::U8 => "u8",
            Dtype::U16 => "u16",
            Dtype::U32 => "u32",
            Dtype::U64 => "u64",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Dtype::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown dtype {s:?}"))
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A scalar type that can be stored in a dataset.
pub trait Element: Copy + Send + Sync + 'static {
    const DTYPE: Dtype;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn to_f64(self) -> f64;
    fn from_f64(x: f64) -> Self;
}

macro_rules! element {
    ($($t:ty => $d:ident),* $(,)?) => {$(
        impl Element for $t {
            const DTYPE: Dtype = Dtype::$d;
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn from_f64(x: f64) -> Self {
                x as $t
            }
        }
    )*};
}

element!(
    f32 => F32, f64 => F64,
    i8 => I8, i16 => I16, i32 => I32, i64 => I64,
    u8 => U8, u16 => U16, u32 => U32, u64 => U64,
);

/// A named n-dimensional array with a row-major little-endian payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    pub payload: Vec<u8>,
}

pub(crate) fn expected_len(dtype: Dtype, shape: &[u64]) -> Option<u64> {
    shape
        .iter()
        .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d))
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        dtype: Dtype,
        shape: Vec<u64>,
        payload: Vec<u8>,
    ) -> Result<Dataset> {
        let ds = Dataset {
            name: name.into(),
            dtype,
            shape,
            payload,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_slice<T: Element>(
        name: impl Into<String>,
        shape: Vec<u64>,
        values: &[T],
    ) -> Result<Dataset> {
        let mut payload = Vec::with_capacity(values.len() * T::DTYPE.size());
        for v in values {
            v.write_le(&mut payload);
        }
        Dataset::new(name, T::DTYPE, shape, payload)
    }

    /// One-dimensional dataset.
    pub fn vector<T: Element>(name: impl Into<String>, values: &[T]) -> Dataset {
        Dataset::from_slice(name, vec![values.len() as u64], values)
            .expect("vector shape matches payload")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.len() > usize::from(u16::MAX) {
            return Err(Error::InvalidArgument(
                "dataset name longer than 65535 bytes".into(),
            ));
        }
        if self.shape.len() > usize::from(u8::MAX) {
            return Err(Error::InvalidArgument("more than 255 dimensions".into()));
        }
        let expected = expected_len(self.dtype, &self.shape).unwrap_or(u64::MAX);
        if expected != self.payload.len() as u64 {
            return Err(Error::ShapePayloadMismatch {
                expected,
                actual: self.payload.len() as u64,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.payload.len() / self.dtype.size()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    /// Decodes the payload as `T`; fails if the dtype differs.
    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::InvalidArgument(format!(
                "dataset {:?} is {}, not {}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        Ok(self
            .payload
            .chunks_exact(T::DTYPE.size())
            .map(T::read_le)
            .collect())
    }

    /// Every element widened (or rounded, for 64-bit integers) to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        fn conv<T: Element>(p: &[u8]) -> Vec<f64> {
            p.chunks_exact(T::DTYPE.size())
                .map(|c| T::read_le(c).to_f64())
                .collect()
        }
        let p = &self.payload;
        match self.dtype {
            Dtype::F32 => conv::<f32>(p),
            Dtype::F64 => conv::<f64>(p),
            Dtype::I8 => conv::<i8>(p),
            Dtype::I16 => conv::<i16>(p),
            Dtype::I32 => conv::<i32>(p),
            Dtype::I64 => conv::<i64>(p),
            Dtype::U8 => conv::<u8>(p),
            Dtype::U16 => conv::<u16>(p),
            Dtype::U32 => conv::<u32>(p),
            Dtype::U64 => conv::<u64>(p),
        }
    }
}

/// One dataset table entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<u64>,
    pub offset: u64,
    pub length: u64,
    pub crc: u32,
}

impl TableEntry {
    fn encoded_len(&self) -> usize {
        2 + self.name.len() + 1 + 1 + 8 * self.shape.len() + 8 + 8 + 4
    }
}

/// Encoded header and table, plus checksums over both regions.
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub table_len: usize,
    pub payload_crc: u32,
    pub table_crc: u32,
}

/// Serializes a complete container. `payload` holds the datasets' bytes in order;
/// each entry's `offset` is relative to the start of `payload` and is rebased here.
pub fn encode(entries: &[TableEntry], payload: &[u8]) -> Encoded {
    let table_len = 4 + 2 + 4 + entries.iter().map(TableEntry::encoded_len).sum::<usize>();
    let mut bytes = Vec::with_capacity(table_len + payload.len());
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        bytes.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        bytes.extend_from_slice(e.name.as_bytes());
        bytes.push(e.dtype.code());
        bytes.push(e.shape.len() as u8);
        for d in &e.shape {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&(e.offset + table_len as u64).to_le_bytes());
        bytes.extend_from_slice(&e.length.to_le_bytes());
        bytes.extend_from_slice(&e.crc.to_le_bytes());
    }
    debug_assert_eq!(bytes.len(), table_len);
    let table_crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(payload);
    Encoded {
        bytes,
        table_len,
        payload_crc: crc32fast::hash(payload),
        table_crc,
    }
}

struct Reader<R> {
    inner: R,
    consumed: Vec<u8>,
}

impl<R: Read> Reader<R> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::InvalidFormat("truncated header".into()))?;
        self.consumed.extend_from_slice(&buf);
        Ok(buf)
    }

    fn take_vec(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::InvalidFormat("truncated header".into()))?;
        self.consumed.extend_from_slice(&buf);
        Ok(buf)
    }
}

/// Parsed header: dataset table and the raw bytes it was read from.
pub struct Table {
    pub entries: Vec<TableEntry>,
    pub raw: Vec<u8>,
}

pub fn read_table<R: Read>(r: R) -> Result<Table> {
    let mut rd = Reader {
        inner: r,
        consumed: Vec::new(),
    };
    if rd.take::<4>()? != MAGIC {
        return Err(Error::InvalidFormat("bad magic".into()));
    }
    let version = u16::from_le_bytes(rd.take()?);
    if version != VERSION {
        return Err(Error::InvalidFormat(format!(
            "unsupported version {version}"
        )));
    }
    let count = u32::from_le_bytes(rd.take()?);
    let mut entries = Vec::with_capacity(count.min(1024) as usize);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(rd.take()?);
        let name = String::from_utf8(rd.take_vec(name_len.into())?)
            .map_err(|_| Error::InvalidFormat("dataset name is not UTF-8".into()))?;
        let [code] = rd.take::<1>()?;
        let dtype = Dtype::from_code(code)
            .ok_or_else(|| Error::InvalidFormat(format!("dtype code {code}")))?;
        let [ndim] = rd.take::<1>()?;
        let mut shape = Vec::with_capacity(ndim.into());
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(rd.take()?));
        }
        let offset = u64::from_le_bytes(rd.take()?);
        let length = u64::from_le_bytes(rd.take()?);
        let crc = u32::from_le_bytes(rd.take()?);
        entries.push(TableEntry {
            name,
            dtype,
            shape,
            offset,
            length,
            crc,
        });
    }
    Ok(Table {
        entries,
        raw: rd.consumed,
    })
}

/// Reads and CRC-checks one dataset's payload.
pub fn read_payload<R: Read + Seek>(r: &mut R, entry: &TableEntry) -> Result<Vec<u8>> {
    if expected_len(entry.dtype, &entry.shape) != Some(entry.length) {
        return Err(Error::ChecksumMismatch(format!(
            "dataset {:?}: shape does not match payload length",
            entry.name
        )));
    }
    r.seek(SeekFrom::Start(entry.offset))?;
    let mut payload = Vec::new();
    r.by_ref().take(entry.length).read_to_end(&mut payload)?;
    if payload.len() as u64 != entry.length || crc32fast::hash(&payload) != entry.crc {
        return Err(Error::ChecksumMismatch(format!("dataset {:?}", entry.name)));
    }
    Ok(payload)
}

/// Decodes a whole container held in memory, verifying every dataset.
pub fn decode_all(bytes: &[u8]) -> Result<Vec<Dataset>> {
    let table = read_table(bytes)?;
    let mut cur = std::io::Cursor::new(bytes);
    table
        .entries
        .iter()
        .map(|e| {
            Ok(Dataset {
                name: e.name.clone(),
                dtype: e.dtype,
                shape: e.shape.clone(),
                payload: read_payload(&mut cur, e)?,
            })
        })
        .collect()
}

/// Encodes datasets into a standalone container (used for exports).
pub fn encode_datasets(datasets: &[Dataset]) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for ds in datasets {
        entries.push(TableEntry {
            name: ds.name.clone(),
            dtype: ds.dtype,
            shape: ds.shape.clone(),
            offset: payload.len() as u64,
            length: ds.payload.len() as u64,
            crc: crc32fast::hash(&ds.payload),
        });
        payload.extend_from_slice(&ds.payload);
    }
    encode(&entries, &payload).bytes
}
