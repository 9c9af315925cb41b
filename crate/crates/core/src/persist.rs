//! The `UNMX` model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "UNMX" | version u16 | kind u8 | source_id u8
//! n_header u32 | header u32 * n_header
//! n_matrices u32 | (rows u32 | cols u32 | f64 * rows*cols, row-major) * n_matrices
//! crc32 u32 over every preceding byte
//! ```
//!
//! NMF files hold one matrix (the dictionary) and an empty header. DNN files
//! use `source_id = 0`, a header of `[context_frames, n_0, ..., n_K]` and the
//! matrices `W_1, b_1, ..., W_K, b_K` with each bias stored as a column.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::dnn::DnnModel;
use crate::nmf::NmfModel;
use crate::{Error, Result, Source};

pub const MAGIC: &[u8; 4] = b"UNMX";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Nmf = 1,
    Dnn = 2,
}

impl ModelKind {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(ModelKind::Nmf),
            2 => Ok(ModelKind::Dnn),
            other => Err(Error::Format(format!("unknown model kind {other}"))),
        }
    }
}

/// Decoded container contents before interpretation as a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ModelKind,
    pub source_id: u8,
    pub header: Vec<u32>,
    pub matrices: Vec<Array2<f64>>,
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in 32 bits")))
}

impl Container {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.push(self.source_id);
        out.extend_from_slice(&to_u32(self.header.len(), "header length")?.to_le_bytes());
        for h in &self.header {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&to_u32(self.matrices.len(), "matrix count")?.to_le_bytes());
        for m in &self.matrices {
            out.extend_from_slice(&to_u32(m.nrows(), "row count")?.to_le_bytes());
            out.extend_from_slice(&to_u32(m.ncols(), "column count")?.to_le_bytes());
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 2 + 2 + 4 + 4 + 4 {
            return Err(Error::Format("file too short for a model container".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing UNMX magic".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let kind = ModelKind::from_byte(r.take(1)?[0])?;
        let source_id = r.take(1)?[0];
        let n_header = r.u32()? as usize;
        let header = (0..n_header).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n_matrices = r.u32()? as usize;
        let mut matrices = Vec::new();
        for _ in 0..n_matrices {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| Error::Format(format!("matrix {rows}x{cols} exceeds the file")))?;
            let data = r
                .take(8 * n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            matrices.push(Array2::from_shape_vec((rows, cols), data).expect("length checked"));
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Container {
            kind,
            source_id,
            header,
            matrices,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("unexpected end of model file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn nmf_to_container(model: &NmfModel) -> Container {
    Container {
        kind: ModelKind::Nmf,
        source_id: model.source.id(),
        header: Vec::new(),
        matrices: vec![model.dictionary.clone()],
    }
}

pub fn nmf_from_container(c: Container) -> Result<NmfModel> {
    if c.kind != ModelKind::Nmf {
        return Err(Error::Format("expected an NMF model file".into()));
    }
    let source = Source::from_id(c.source_id)?;
    let [dictionary]: [Array2<f64>; 1] = c
        .matrices
        .try_into()
        .map_err(|_| Error::Format("NMF model must hold exactly one matrix".into()))?;
    NmfModel::new(dictionary, source)
}

pub fn dnn_to_container(model: &DnnModel) -> Result<Container> {
    let mut header = vec![to_u32(model.context_frames, "context frames")?];
    for n in model.layer_sizes() {
        header.push(to_u32(n, "layer size")?);
    }
    let mut matrices = Vec::with_capacity(2 * model.n_layers());
    for (w, b) in model.weights.iter().zip(&model.biases) {
        matrices.push(w.clone());
        matrices.push(b.clone().insert_axis(Axis(1)));
    }
    Ok(Container {
        kind: ModelKind::Dnn,
        source_id: 0,
        header,
        matrices,
    })
}

pub fn dnn_from_container(c: Container) -> Result<DnnModel> {
    if c.kind != ModelKind::Dnn {
        return Err(Error::Format("expected a DNN model file".into()));
    }
    let (&ctx, sizes) = c
        .header
        .split_first()
        .ok_or_else(|| Error::Format("DNN header is empty".into()))?;
    if sizes.len() < 2 || c.matrices.len() != 2 * (sizes.len() - 1) {
        return Err(Error::Format(format!(
            "{} layer sizes do not match {} matrices",
            sizes.len(),
            c.matrices.len()
        )));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut it = c.matrices.into_iter();
    for pair in sizes.windows(2) {
        let w = it.next().unwrap();
        let b = it.next().unwrap();
        if w.dim() != (pair[1] as usize, pair[0] as usize) || b.dim() != (pair[1] as usize, 1) {
            return Err(Error::Format(
                "DNN matrix shapes disagree with the header".into(),
            ));
        }
        weights.push(w);
        biases.push(b.column(0).to_owned());
    }
    DnnModel::new(weights, biases, ctx as usize)
}

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so `path` is either untouched or complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_nmf(path: &Path, model: &NmfModel) -> Result<()> {
    write_atomic(path, &nmf_to_container(model).to_bytes()?)
}

pub fn load_nmf(path: &Path) -> Result<NmfModel> {
    nmf_from_container(Container::from_bytes(&fs::read(path)?)?)
}

pub fn save_dnn(path: &Path, model: &DnnModel) -> Result<()> {
    write_atomic(path, &dnn_to_container(model)?.to_bytes()?)
}

pub fn load_dnn(path: &Path) -> Result<DnnModel> {
    dnn_from_container(Container::from_bytes(&fs::read(path)?)?)
}
