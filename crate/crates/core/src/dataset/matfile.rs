//! DIDM: a flat little-endian container for flow matrices.
//!
//! ```text
//! "DIDM" | version u16 | flags u16 | P u32 | B u32 | count u64
//! [flags & 1: metadata length u32 | UTF-8 metadata]
//! count x ( flow_id length u32 | flow_id bytes | class u16 | (1+P)(1+B) f32 )
//! ```
//!
//! Unlabeled records store class `0xFFFF`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DatasetError;
use crate::matrix::FlowMatrix;

pub const DIDM_MAGIC: [u8; 4] = *b"DIDM";
pub const DIDM_VERSION: u16 = 1;
pub const FLAG_METADATA: u16 = 1;
const UNLABELED: u16 = 0xFFFF;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub max_packets: u32,
    pub max_bytes: u32,
    /// Producing configuration, free-form `key=value` lines.
    pub metadata: Option<String>,
    pub records: Vec<FlowMatrix>,
}

impl MatrixFile {
    pub fn new(max_packets: usize, max_bytes: usize, records: Vec<FlowMatrix>) -> Self {
        MatrixFile {
            max_packets: max_packets as u32,
            max_bytes: max_bytes as u32,
            metadata: None,
            records,
        }
    }

    pub fn rows(&self) -> usize {
        1 + self.max_packets as usize
    }

    pub fn cols(&self) -> usize {
        1 + self.max_bytes as usize
    }

    pub fn labels(&self) -> Vec<u16> {
        self.records.iter().map(|r| r.label.unwrap_or(0)).collect()
    }

    /// A new file holding the records at `indices`, same shape and metadata.
    pub fn subset(&self, indices: &[usize]) -> MatrixFile {
        MatrixFile {
            max_packets: self.max_packets,
            max_bytes: self.max_bytes,
            metadata: self.metadata.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

pub fn write_matrices(path: impl AsRef<Path>, file: &MatrixFile) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrices_to(&mut w, file)?;
    w.flush()?;
    Ok(())
}

pub fn write_matrices_to<W: Write>(w: &mut W, file: &MatrixFile) -> Result<(), DatasetError> {
    let (rows, cols) = (file.rows(), file.cols());
    for (i, r) in file.records.iter().enumerate() {
        if r.rows != rows || r.cols != cols || r.values.len() != rows * cols {
            return Err(DatasetError::ShapeMismatch(format!(
                "record {i} is {}x{}, file is {rows}x{cols}",
                r.rows, r.cols
            )));
        }
    }
    let flags = if file.metadata.is_some() { FLAG_METADATA } else { 0 };
    w.write_all(&DIDM_MAGIC)?;
    w.write_all(&DIDM_VERSION.to_le_bytes())?;
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&file.max_packets.to_le_bytes())?;
    w.write_all(&file.max_bytes.to_le_bytes())?;
    w.write_all(&(file.records.len() as u64).to_le_bytes())?;
    if let Some(meta) = &file.metadata {
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
    }
    let mut buf = Vec::with_capacity(rows * cols * 4);
    for r in &file.records {
        w.write_all(&(r.flow_id.len() as u32).to_le_bytes())?;
        w.write_all(r.flow_id.as_bytes())?;
        w.write_all(&r.label.unwrap_or(UNLABELED).to_le_bytes())?;
        buf.clear();
        for v in &r.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_matrices(path: impl AsRef<Path>) -> Result<MatrixFile, DatasetError> {
    read_matrices_from(BufReader::new(File::open(path)?))
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    match r.read_exact(buf) {
        Ok(()) => Ok(true),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(e),
    }
}

pub fn read_matrices_from<R: Read>(mut r: R) -> Result<MatrixFile, DatasetError> {
    let mut magic = [0u8; 4];
    if !fill(&mut r, &mut magic)? {
        return Err(DatasetError::TruncatedHeader);
    }
    if magic != DIDM_MAGIC {
        return Err(DatasetError::BadMagic(magic));
    }
    let mut hdr = [0u8; 20];
    if !fill(&mut r, &mut hdr)? {
        return Err(DatasetError::TruncatedHeader);
    }
    let version = u16::from_le_bytes([hdr[0], hdr[1]]);
    if version != DIDM_VERSION {
        return Err(DatasetError::VersionMismatch(version));
    }
    let flags = u16::from_le_bytes([hdr[2], hdr[3]]);
    let max_packets = u32::from_le_bytes(hdr[4..8].try_into().unwrap());
    let max_bytes = u32::from_le_bytes(hdr[8..12].try_into().unwrap());
    let count = u64::from_le_bytes(hdr[12..20].try_into().unwrap());

    let metadata = if flags & FLAG_METADATA != 0 {
        let mut len = [0u8; 4];
        if !fill(&mut r, &mut len)? {
            return Err(DatasetError::TruncatedHeader);
        }
        let mut bytes = Vec::new();
        (&mut r).take(u32::from_le_bytes(len) as u64).read_to_end(&mut bytes)?;
        if bytes.len() != u32::from_le_bytes(len) as usize {
            return Err(DatasetError::TruncatedHeader);
        }
        Some(String::from_utf8(bytes).map_err(|_| DatasetError::TruncatedHeader)?)
    } else {
        None
    };

    let rows = 1 + max_packets as usize;
    let cols = 1 + max_bytes as usize;
    let cells = rows
        .checked_mul(cols)
        .ok_or_else(|| DatasetError::ShapeMismatch("matrix dimensions overflow".into()))?;
    let corrupt = |index: u64, reason: &str| DatasetError::CorruptRecord {
        index,
        reason: reason.to_string(),
    };

    let mut records = Vec::with_capacity(count.min(1 << 16) as usize);
    let mut data = vec![0u8; cells * 4];
    for index in 0..count {
        let mut len = [0u8; 4];
        if !fill(&mut r, &mut len)? {
            return Err(corrupt(index, "truncated before flow id"));
        }
        let id_len = u32::from_le_bytes(len) as u64;
        let mut id = Vec::new();
        (&mut r).take(id_len).read_to_end(&mut id)?;
        if id.len() as u64 != id_len {
            return Err(corrupt(index, "truncated flow id"));
        }
        let flow_id = String::from_utf8(id).map_err(|_| corrupt(index, "flow id is not UTF-8"))?;
        let mut class = [0u8; 2];
        if !fill(&mut r, &mut class)? {
            return Err(corrupt(index, "truncated before class id"));
        }
        let class = u16::from_le_bytes(class);
        if !fill(&mut r, &mut data)? {
            return Err(corrupt(index, "truncated matrix data"));
        }
        let values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(FlowMatrix {
            rows,
            cols,
            values,
            label: (class != UNLABELED).then_some(class),
            flow_id,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(corrupt(count, "trailing bytes after last record"));
    }
    Ok(MatrixFile {
        max_packets,
        max_bytes,
        metadata,
        records,
    })
}
