//! Little-endian model containers.
//!
//! Both formats share a 16-byte header: 4-byte magic, `u16` version, `u16`
//! reserved (zero), `u64` body length. `TPDM` holds an f32 graph (with or
//! without batch norm), `TPDQ` an int8 model. Byte layouts are spelled out in
//! `docs/formats.md`.

use std::path::Path;

use tinytherm_core::detect::AnchorSet;
use tinytherm_core::graph::{Activation, BatchNorm, Layer, LayerDesc, LayerKind, ModelGraph};
use tinytherm_core::quant::{QuantLayer, QuantParams, QuantizedModel, Requant};

use crate::error::{Error, Result};

pub const F32_MAGIC: [u8; 4] = *b"TPDM";
pub const INT8_MAGIC: [u8; 4] = *b"TPDQ";
pub const F32_VERSION: u16 = 1;
pub const INT8_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone)]
pub enum ModelFile {
    F32(ModelGraph),
    Int8(QuantizedModel),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn anchors(&mut self, a: &AnchorSet) {
        self.u32(a.len());
        for &(w, h) in &a.0 {
            self.f32s(&[w, h]);
        }
    }
    fn desc(&mut self, d: &LayerDesc) {
        self.u8(match d.kind {
            LayerKind::Conv3x3 => 0,
            LayerKind::Depthwise3x3 => 1,
            LayerKind::Pointwise1x1 => 2,
        });
        self.u8(d.stride as u8);
        self.u8((d.activation == Activation::Relu6) as u8);
        self.u8(d.has_batchnorm as u8);
        self.u32(d.in_channels);
        self.u32(d.out_channels);
    }
    fn finish(self, magic: [u8; 4], version: u16) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.0.len());
        out.extend_from_slice(&magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.0);
        out
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Corrupt(format!("truncated body: needed {n} bytes at offset {}", HEADER_LEN + self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn bytes_for(&self, count: usize, width: usize) -> Result<usize> {
        count.checked_mul(width).ok_or_else(|| Error::Corrupt("element count overflows".into()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(self.bytes_for(n, 4)?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn i32s(&mut self, n: usize) -> Result<Vec<i32>> {
        let raw = self.take(self.bytes_for(n, 4)?)?;
        Ok(raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn anchors(&mut self) -> Result<AnchorSet> {
        let n = self.u32()?;
        let flat = self.f32s(self.bytes_for(n, 2)?)?;
        Ok(AnchorSet::new(flat.chunks_exact(2).map(|p| (p[0], p[1])).collect())?)
    }
    fn desc(&mut self) -> Result<LayerDesc> {
        let kind = match self.u8()? {
            0 => LayerKind::Conv3x3,
            1 => LayerKind::Depthwise3x3,
            2 => LayerKind::Pointwise1x1,
            k => return Err(Error::Corrupt(format!("unknown layer kind {k}"))),
        };
        let stride = self.u8()? as usize;
        let activation = match self.u8()? {
            0 => Activation::None,
            1 => Activation::Relu6,
            a => return Err(Error::Corrupt(format!("unknown activation {a}"))),
        };
        let has_batchnorm = match self.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Corrupt(format!("bad batch-norm flag {b}"))),
        };
        let (in_channels, out_channels) = (self.u32()?, self.u32()?);
        let d = LayerDesc { kind, in_channels, out_channels, stride, has_batchnorm, activation };
        // Reject absurd shapes before multiplying them out.
        if d.in_channels.checked_mul(d.out_channels).and_then(|n| n.checked_mul(9)).is_none() {
            return Err(Error::Corrupt("layer shape overflows".into()));
        }
        Ok(d)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes after the last section", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Check magic, version and body length; returns the body.
fn open<'a>(bytes: &'a [u8], magic: [u8; 4], version: u16, kind: &'static str) -> Result<Reader<'a>> {
    if bytes.len() < 4 || bytes[..4] != magic {
        return Err(Error::Format(format!("not a {kind} container (bad magic)")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!("header truncated at {} bytes", bytes.len())));
    }
    let found = u16::from_le_bytes([bytes[4], bytes[5]]);
    if found != version {
        return Err(Error::UnsupportedVersion { kind, found, supported: version });
    }
    let declared = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if declared != body.len() as u64 {
        return Err(Error::Corrupt(format!("header declares {declared} body bytes, file has {}", body.len())));
    }
    Ok(Reader { buf: body, pos: 0 })
}

pub fn encode_f32(graph: &ModelGraph) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(graph.input_channels);
    w.u32(graph.input_height);
    w.u32(graph.input_width);
    w.anchors(&graph.anchors);
    w.u32(graph.layers.len());
    for l in &graph.layers {
        w.desc(&l.desc);
        w.f32s(&l.weights);
        match &l.bn {
            Some(bn) => {
                w.f32s(&bn.gamma);
                w.f32s(&bn.beta);
                w.f32s(&bn.mean);
                w.f32s(&bn.var);
            }
            None => w.f32s(&l.bias),
        }
    }
    w.finish(F32_MAGIC, F32_VERSION)
}

pub fn decode_f32(bytes: &[u8]) -> Result<ModelGraph> {
    let mut r = open(bytes, F32_MAGIC, F32_VERSION, "f32 model")?;
    let (input_channels, input_height, input_width) = (r.u32()?, r.u32()?, r.u32()?);
    let anchors = r.anchors()?;
    let n = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..n {
        let desc = r.desc()?;
        let weights = r.f32s(desc.weight_count())?;
        let c = desc.out_channels;
        let (bias, bn) = if desc.has_batchnorm {
            let (gamma, beta, mean, var) = (r.f32s(c)?, r.f32s(c)?, r.f32s(c)?, r.f32s(c)?);
            (Vec::new(), Some(BatchNorm { gamma, beta, mean, var }))
        } else {
            (r.f32s(c)?, None)
        };
        layers.push(Layer { desc, weights, bias, bn });
    }
    r.finish()?;
    let g = ModelGraph::new(layers, anchors, input_channels, input_height, input_width)?;
    g.validate_detector()?;
    Ok(g)
}

pub fn encode_int8(model: &QuantizedModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(model.input_height);
    w.u32(model.input_width);
    w.anchors(&model.anchors);
    w.u32(model.layers.len());
    for qp in &model.activations {
        w.f32s(&[qp.scale]);
        w.i32(qp.zero_point);
    }
    for l in &model.layers {
        w.desc(&l.desc);
        w.0.extend(l.weights.iter().map(|&v| v as u8));
        w.f32s(&l.weight_scales);
        l.bias.iter().for_each(|&b| w.i32(b));
        for rq in &l.requant {
            w.i32(rq.multiplier);
            w.i32(rq.shift);
        }
        w.i32(l.clamp.0);
        w.i32(l.clamp.1);
    }
    w.finish(INT8_MAGIC, INT8_VERSION)
}

pub fn decode_int8(bytes: &[u8]) -> Result<QuantizedModel> {
    let mut r = open(bytes, INT8_MAGIC, INT8_VERSION, "int8 model")?;
    let (input_height, input_width) = (r.u32()?, r.u32()?);
    let anchors = r.anchors()?;
    let n = r.u32()?;
    let mut activations = Vec::new();
    for _ in 0..=n {
        let (scale, zp) = (r.f32()?, r.i32()?);
        activations.push(QuantParams::new(scale, zp)?);
    }
    let mut layers: Vec<QuantLayer> = Vec::new();
    for i in 0..n {
        let desc = r.desc()?;
        let prev = layers.last().map(|l: &QuantLayer| l.desc.out_channels);
        if desc.has_batchnorm || desc.stride == 0 || desc.stride > 2 || prev.is_some_and(|c| c != desc.in_channels) {
            return Err(Error::Corrupt(format!("layer {i} does not chain or carries batch norm")));
        }
        if desc.kind == LayerKind::Depthwise3x3 && desc.in_channels != desc.out_channels {
            return Err(Error::Corrupt(format!("depthwise layer {i} changes channel count")));
        }
        let weights = r.take(desc.weight_count())?.iter().map(|&b| b as i8).collect();
        let c = desc.out_channels;
        let weight_scales = r.f32s(c)?;
        let bias = r.i32s(c)?;
        let mut requant = Vec::with_capacity(c);
        for _ in 0..c {
            requant.push(Requant { multiplier: r.i32()?, shift: r.i32()? });
        }
        let clamp = (r.i32()?, r.i32()?);
        if clamp.0 > clamp.1 {
            return Err(Error::Corrupt(format!("layer {i} has an empty clamp range")));
        }
        layers.push(QuantLayer { desc, weights, weight_scales, bias, requant, clamp });
    }
    r.finish()?;
    if layers.is_empty() || layers.last().unwrap().desc.out_channels != 5 * anchors.len() {
        return Err(Error::Corrupt("head does not match the anchor count".into()));
    }
    Ok(QuantizedModel { layers, activations, anchors, input_height, input_width })
}

/// Decode either container, dispatching on the magic.
pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    match bytes.get(..4) {
        Some(m) if m == F32_MAGIC => decode_f32(bytes).map(ModelFile::F32),
        Some(m) if m == INT8_MAGIC => decode_int8(bytes).map(ModelFile::Int8),
        _ => Err(Error::Format("unknown model container magic".into())),
    }
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn write_f32(path: &Path, graph: &ModelGraph) -> Result<()> {
    std::fs::write(path, encode_f32(graph)).map_err(|e| Error::io(path, e))
}

pub fn write_int8(path: &Path, model: &QuantizedModel) -> Result<()> {
    std::fs::write(path, encode_int8(model)).map_err(|e| Error::io(path, e))
}
