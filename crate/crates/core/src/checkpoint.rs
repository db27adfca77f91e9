//! Binary checkpoint: `VQL1`, a length-prefixed JSON header, then named
//! tensor records (name length, name, rank, dims, little-endian f32 data).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::VqAutoencoder;
use crate::codebook::{Codebook, QuantizerConfig};
use crate::error::{Result, VqlError};
use crate::model::{ModelConfig, Seq2Seq};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 4] = b"VQL1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub quantizer: QuantizerConfig,
    pub vocab: Vec<String>,
}

fn u32_of(n: usize, what: &str) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| VqlError::Format(format!("{what} {n} does not fit in 32 bits")))
}

fn push_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    out.extend_from_slice(&u32_of(name.len(), "name length")?);
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&u32_of(t.shape().len(), "rank")?);
    for &d in t.shape() {
        out.extend_from_slice(&u32_of(d, "dimension")?);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_f32_bits().to_le_bytes());
    }
    Ok(())
}

pub fn to_bytes<T: Scalar>(ae: &VqAutoencoder<T>) -> Result<Vec<u8>> {
    let header = Header {
        model: ae.model.config().clone(),
        quantizer: ae.quantizer,
        vocab: ae.vocab.words().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32_of(json.len(), "header length")?);
    out.extend_from_slice(&json);
    for (name, t) in ae.model.params().iter() {
        push_tensor(&mut out, name, t)?;
    }
    let cb = &ae.codebook;
    push_tensor(&mut out, "codebook.z", cb.entries())?;
    push_tensor(&mut out, "codebook.N", &Tensor::new(vec![cb.size()], cb.counts().to_vec())?)?;
    push_tensor(&mut out, "codebook.m", cb.sums())?;
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| VqlError::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn from_bytes<T: Scalar>(buf: &[u8]) -> Result<VqAutoencoder<T>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(VqlError::Format("not a checkpoint (bad magic)".into()));
    }
    let len = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let mut named: Vec<(String, Tensor<T>)> = Vec::new();
    while !r.done() {
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| VqlError::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let raw = r.take(count.checked_mul(4).ok_or_else(|| VqlError::Format("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| T::from_f32_bits(u32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        named.push((name, Tensor::new(dims, data).map_err(|e| VqlError::Format(e.to_string()))?));
    }
    let mut take = |name: &str| -> Result<Tensor<T>> {
        let i = named
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| VqlError::Format(format!("missing tensor {name}")))?;
        Ok(named.remove(i).1)
    };
    let z = take("codebook.z")?;
    let counts = take("codebook.N")?.into_data();
    let m = take("codebook.m")?;
    let codebook = Codebook::from_parts(z, counts, m)?;
    let model = Seq2Seq::from_named(header.model, &named)?;
    let vocab = Vocabulary::from_words(&header.vocab);
    if vocab.words().len() != header.vocab.len() {
        return Err(VqlError::Format("duplicate word in checkpoint vocabulary".into()));
    }
    header.quantizer.validate()?;
    Ok(VqAutoencoder {
        model,
        codebook,
        quantizer: header.quantizer,
        vocab,
    })
}

pub fn save<T: Scalar>(ae: &VqAutoencoder<T>, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &to_bytes(ae)?)
}

pub fn load<T: Scalar>(path: &Path) -> Result<VqAutoencoder<T>> {
    from_bytes(&std::fs::read(path)?)
}
