//! `ZNQW` weight containers, `ZNQT` tensor files and seeded random weights.
//!
//! Both formats are little-endian throughout.
//!
//! ```text
//! ZNQW: "ZNQW" u32:version=1 { u32:name_len name u32:ch_in u32:ch_out u32:k
//!                              f32[ch_out*ch_in*k*k] filters  f32[ch_out] bias }*
//! ZNQT: "ZNQT" u32:version=1 u32:ch u32:h u32:w f32[ch*h*w]
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::engine::{LayerWeights, Tensor3D, WeightMap};
use crate::ir::{GraphError, LayerKind, NetworkGraph, TensorShape};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"ZNQW";
pub const TENSOR_MAGIC: &[u8; 4] = b"ZNQT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    TruncatedFile { offset: usize, needed: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("layer name is not valid UTF-8 at offset {0}")]
    BadName(usize),
    #[error("duplicate entry `{0}`")]
    DuplicateEntry(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(WeightsError::TruncatedFile { offset: self.pos, needed: n.saturating_sub(self.remaining()) })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: u64) -> Result<Vec<f32>, WeightsError> {
        let bytes = n
            .checked_mul(4)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or(WeightsError::TruncatedFile { offset: self.pos, needed: usize::MAX })?;
        Ok(self.take(bytes)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<(), WeightsError> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if &found != magic {
            return Err(WeightsError::BadMagic { found, expected: *magic });
        }
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(WeightsError::VersionUnsupported(v)),
        }
    }
}

fn put_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_weights(weights: &WeightMap) -> Result<Vec<u8>, WeightsError> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, w) in weights {
        if !w.is_consistent() {
            return Err(WeightsError::DimMismatch(format!("`{name}`: buffers do not match {}->{} k={}", w.ch_in, w.ch_out, w.k)));
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in [w.ch_in, w.ch_out, w.k] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_f32s(&mut out, &w.filters);
        put_f32s(&mut out, &w.bias);
    }
    Ok(out)
}

pub fn decode_weights(buf: &[u8]) -> Result<WeightMap, WeightsError> {
    let mut r = Reader { buf, pos: 0 };
    r.header(WEIGHTS_MAGIC)?;
    let mut map = WeightMap::new();
    while r.remaining() > 0 {
        let name_len = r.u32()? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| WeightsError::BadName(name_at))?.to_string();
        let (ch_in, ch_out, k) = (r.u32()?, r.u32()?, r.u32()?);
        let n_filters = ch_out as u64 * ch_in as u64 * k as u64 * k as u64;
        let filters = r.f32s(n_filters)?;
        let bias = r.f32s(ch_out as u64)?;
        if map.contains_key(&name) {
            return Err(WeightsError::DuplicateEntry(name));
        }
        map.insert(name, LayerWeights { ch_in, ch_out, k, filters, bias });
    }
    Ok(map)
}

pub fn save_weights(path: impl AsRef<Path>, weights: &WeightMap) -> Result<(), WeightsError> {
    fs::write(path, encode_weights(weights)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightMap, WeightsError> {
    decode_weights(&fs::read(path)?)
}

pub fn encode_tensor(t: &Tensor3D) -> Result<Vec<u8>, WeightsError> {
    if t.data.len() as u64 != t.shape.elements() {
        return Err(WeightsError::DimMismatch(format!("tensor {} holds {} values", t.shape, t.data.len())));
    }
    let mut out = Vec::with_capacity(20 + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in [t.shape.ch, t.shape.h, t.shape.w] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    put_f32s(&mut out, &t.data);
    Ok(out)
}

pub fn decode_tensor(buf: &[u8]) -> Result<Tensor3D, WeightsError> {
    let mut r = Reader { buf, pos: 0 };
    r.header(TENSOR_MAGIC)?;
    let shape = TensorShape::new(r.u32()?, r.u32()?, r.u32()?);
    let declared = shape.elements().checked_mul(4);
    match declared {
        Some(b) if b == r.remaining() as u64 => {}
        Some(b) if b > r.remaining() as u64 => {
            return Err(WeightsError::TruncatedFile { offset: r.pos, needed: (b - r.remaining() as u64) as usize })
        }
        _ => {
            return Err(WeightsError::DimMismatch(format!(
                "header declares {shape} but payload holds {} bytes",
                r.remaining()
            )))
        }
    }
    let data = r.f32s(shape.elements())?;
    Ok(Tensor3D { shape, data })
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor3D) -> Result<(), WeightsError> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor3D, WeightsError> {
    decode_tensor(&fs::read(path)?)
}

/// SplitMix64: a 64-bit counter passed through a fixed mixing function.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) from the top 53 bits.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [-r, r), rounded to f32.
    pub fn next_symmetric(&mut self, r: f64) -> f32 {
        ((2.0 * self.next_unit() - 1.0) * r) as f32
    }
}

/// Half-width of the uniform initialisation range for a layer with the given fan-in.
pub fn init_range(fan_in: u64) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

/// Deterministic weights for every Convolution and InnerProduct layer.
///
/// One SplitMix64 stream is drawn in topological layer order, filters in
/// `[co][ci][j][i]` order, each uniform in `[-r, r]` with
/// `r = sqrt(3 / (k*k*ch_in))`. Biases are zero.
pub fn random_weights(graph: &NetworkGraph, seed: u64) -> Result<WeightMap, WeightsError> {
    let owned;
    let graph = if graph.shapes.len() == graph.layers.len() {
        graph
    } else {
        owned = graph.infer_shapes()?;
        &owned
    };
    let producers = graph.producers()?;
    let mut rng = SplitMix64::new(seed);
    let mut map = WeightMap::new();
    for i in graph.topo_sort()? {
        let layer = &graph.layers[i];
        let (ch_in, k) = match layer.kind {
            LayerKind::Convolution => {
                let input = graph.input_shapes(i, &producers)[0];
                (input.ch, layer.conv.as_ref().map_or(1, |c| c.kernel))
            }
            LayerKind::InnerProduct => {
                let input = graph.input_shapes(i, &producers)[0];
                let flat = u32::try_from(input.elements())
                    .map_err(|_| WeightsError::DimMismatch(format!("`{}` has too many inputs", layer.name)))?;
                (flat, 1)
            }
            _ => continue,
        };
        let ch_out = graph.shapes[&layer.name].ch;
        let r = init_range(k as u64 * k as u64 * ch_in as u64);
        let n = ch_out as usize * ch_in as usize * (k * k) as usize;
        let filters = (0..n).map(|_| rng.next_symmetric(r)).collect();
        map.insert(layer.name.clone(), LayerWeights { ch_in, ch_out, k, filters, bias: vec![0.0; ch_out as usize] });
    }
    Ok(map)
}

/// Checks that `weights` has one correctly sized entry per weighted layer.
pub fn check_against(graph: &NetworkGraph, weights: &WeightMap) -> Result<(), WeightsError> {
    let expected = random_shapes(graph)?;
    let mut seen = HashSet::new();
    for (name, (ch_in, ch_out, k)) in &expected {
        let w = weights.get(name).ok_or_else(|| WeightsError::DimMismatch(format!("no entry for layer `{name}`")))?;
        if (w.ch_in, w.ch_out, w.k) != (*ch_in, *ch_out, *k) {
            return Err(WeightsError::DimMismatch(format!(
                "`{name}` is {}->{} k={}, layer needs {ch_in}->{ch_out} k={k}",
                w.ch_in, w.ch_out, w.k
            )));
        }
        seen.insert(name.as_str());
    }
    if let Some(extra) = weights.keys().find(|n| !seen.contains(n.as_str())) {
        return Err(WeightsError::DimMismatch(format!("entry `{extra}` matches no weighted layer")));
    }
    Ok(())
}

fn random_shapes(graph: &NetworkGraph) -> Result<Vec<(String, (u32, u32, u32))>, WeightsError> {
    let g = graph.infer_shapes()?;
    let producers = g.producers()?;
    let mut out = Vec::new();
    for i in g.topo_sort()? {
        let l = &g.layers[i];
        let input = || g.input_shapes(i, &producers)[0];
        match l.kind {
            LayerKind::Convolution => {
                out.push((l.name.clone(), (input().ch, g.shapes[&l.name].ch, l.conv.as_ref().map_or(1, |c| c.kernel))))
            }
            LayerKind::InnerProduct => out.push((l.name.clone(), (input().elements() as u32, g.shapes[&l.name].ch, 1))),
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::LayerSpec;

    #[test]
    fn bad_magic() {
        let e = decode_weights(b"XXXX\x01\0\0\0").unwrap_err();
        assert!(matches!(e, WeightsError::BadMagic { found, .. } if &found == b"XXXX"));
    }

    #[test]
    fn version_check() {
        assert!(matches!(decode_weights(b"ZNQW\x02\0\0\0"), Err(WeightsError::VersionUnsupported(2))));
    }

    #[test]
    fn header_only_file_is_empty_map() {
        let bytes = encode_weights(&WeightMap::new()).unwrap();
        assert_eq!(bytes, b"ZNQW\x01\0\0\0");
        assert!(decode_weights(&bytes).unwrap().is_empty());
    }

    #[test]
    fn truncated_entry() {
        let mut m = WeightMap::new();
        m.insert("c".into(), LayerWeights::zeros(2, 2, 3));
        let bytes = encode_weights(&m).unwrap();
        assert!(matches!(decode_weights(&bytes[..bytes.len() - 3]), Err(WeightsError::TruncatedFile { .. })));
    }

    #[test]
    fn inconsistent_weights_refuse_to_encode() {
        let mut m = WeightMap::new();
        let mut w = LayerWeights::zeros(2, 2, 3);
        w.bias.pop();
        m.insert("c".into(), w);
        assert!(matches!(encode_weights(&m), Err(WeightsError::DimMismatch(_))));
    }

    #[test]
    fn tensor_payload_must_match_header() {
        let t = Tensor3D::from_vec(TensorShape::new(1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = encode_tensor(&t).unwrap();
        assert_eq!(decode_tensor(&bytes).unwrap(), t);
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(decode_tensor(&bytes), Err(WeightsError::DimMismatch(_))));
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(decode_tensor(&bytes), Err(WeightsError::TruncatedFile { .. })));
    }

    #[test]
    fn init_range_closed_form() {
        assert!((init_range(27) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn random_weights_are_deterministic_and_bounded() {
        let mut g = NetworkGraph::new("t");
        g.push(LayerSpec::data("data", TensorShape::new(3, 8, 8))).push(LayerSpec::conv("c", "data", 4, 3, 1, 1));
        let a = random_weights(&g, 0).unwrap();
        let b = random_weights(&g, 0).unwrap();
        assert_eq!(encode_weights(&a).unwrap(), encode_weights(&b).unwrap());
        let w = &a["c"];
        assert_eq!(w.filters.len(), 4 * 3 * 9);
        assert!(w.filters.iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert!(w.bias.iter().all(|&b| b == 0.0));
        assert_ne!(encode_weights(&random_weights(&g, 1).unwrap()).unwrap(), encode_weights(&a).unwrap());
        check_against(&g, &a).unwrap();
    }
}
