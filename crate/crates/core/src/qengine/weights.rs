//! Per-layer parameters keyed by originating node and slot, with inheritance
//! across mutations and a binary checkpoint format.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cgpnet::Coord;
use crate::netir::{LayerGraph, LayerKey, Op};
use crate::Scalar;

use super::EngineError;

const CHECKPOINT_TAG: &str = "cgpnas-weights";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> ParamTensor<T> {
    fn filled(name: &str, dims: Vec<usize>, v: T) -> Self {
        let n = dims.iter().product();
        Self { name: name.into(), dims, data: vec![v; n] }
    }
}

/// Parameters of one layer. The first `trainable` tensors receive gradients;
/// the rest (batch-norm running statistics) are updated by the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub tensors: Vec<ParamTensor<T>>,
    pub trainable: usize,
}

impl<T: Scalar> LayerParams<T> {
    /// Dimension signature the graph expects for `op` fed by `input`.
    fn expected_dims(op: &Op, input: crate::netir::TensorShape) -> Vec<Vec<usize>> {
        match *op {
            Op::Conv { kernel, filters, .. } => vec![vec![kernel, kernel, input.channels, filters], vec![filters]],
            Op::Dense { units } => vec![vec![input.numel(), units], vec![units]],
            Op::BatchNorm => vec![vec![input.channels]; 4],
            _ => vec![],
        }
    }

    /// He-uniform kernels, zero biases, identity batch norm.
    fn init<R: Rng + ?Sized>(op: &Op, input: crate::netir::TensorShape, rng: &mut R) -> Self {
        let dims = Self::expected_dims(op, input);
        match *op {
            Op::Conv { .. } | Op::Dense { .. } => {
                let fan_in: usize = dims[0][..dims[0].len() - 1].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                let n: usize = dims[0].iter().product();
                let kernel = ParamTensor {
                    name: "kernel".into(),
                    dims: dims[0].clone(),
                    data: (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect(),
                };
                let bias = ParamTensor::filled("bias", dims[1].clone(), T::zero());
                Self { tensors: vec![kernel, bias], trainable: 2 }
            }
            Op::BatchNorm => {
                let c = dims[0].clone();
                Self {
                    tensors: vec![
                        ParamTensor::filled("gamma", c.clone(), T::one()),
                        ParamTensor::filled("beta", c.clone(), T::zero()),
                        ParamTensor::filled("running_mean", c.clone(), T::zero()),
                        ParamTensor::filled("running_var", c, T::one()),
                    ],
                    trainable: 2,
                }
            }
            _ => Self { tensors: vec![], trainable: 0 },
        }
    }

    fn dims(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.dims.clone()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore<T> {
    layers: BTreeMap<LayerKey, LayerParams<T>>,
    pending: BTreeSet<Coord>,
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        Self { layers: BTreeMap::new(), pending: BTreeSet::new() }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn get(&self, key: &LayerKey) -> Option<&LayerParams<T>> {
        self.layers.get(key)
    }

    pub fn get_mut(&mut self, key: &LayerKey) -> Option<&mut LayerParams<T>> {
        self.layers.get_mut(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &LayerKey> {
        self.layers.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LayerKey, &LayerParams<T>)> {
        self.layers.iter()
    }

    /// Marks every layer of these nodes for re-initialization at the next
    /// [`ensure`](Self::ensure).
    pub fn flag_reinit<I: IntoIterator<Item = Coord>>(&mut self, nodes: I) {
        self.pending.extend(nodes);
    }

    pub fn is_flagged(&self, node: &Coord) -> bool {
        self.pending.contains(node)
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Brings the store in line with `graph`: layers that are missing, have
    /// different dims, or belong to a flagged node are freshly initialized;
    /// entries the graph no longer uses are dropped. Clears all flags.
    /// Returns the number of initialized layers.
    pub fn ensure<R: Rng + ?Sized>(&mut self, graph: &LayerGraph, rng: &mut R) -> usize {
        let mut fresh = 0;
        let mut used = BTreeSet::new();
        for layer in &graph.layers {
            let Some(key) = layer.key else { continue };
            used.insert(key);
            let input = layer.input_shapes[0];
            let want = LayerParams::<T>::expected_dims(&layer.op, input);
            let keep = !self.pending.contains(&key.node) && self.layers.get(&key).is_some_and(|p| p.dims() == want);
            if !keep {
                self.layers.insert(key, LayerParams::init(&layer.op, input, rng));
                fresh += 1;
            }
        }
        self.layers.retain(|k, _| used.contains(k));
        self.pending.clear();
        fresh
    }

    /// Fresh store for `graph`.
    pub fn init<R: Rng + ?Sized>(graph: &LayerGraph, rng: &mut R) -> Self {
        let mut s = Self::new();
        s.ensure(graph, rng);
        s
    }

    /// Every parametrized layer of `graph` has an entry of the right dims.
    pub fn covers(&self, graph: &LayerGraph) -> Result<(), EngineError> {
        for layer in &graph.layers {
            let Some(key) = layer.key else { continue };
            let want = LayerParams::<T>::expected_dims(&layer.op, layer.input_shapes[0]);
            match self.layers.get(&key) {
                Some(p) if p.dims() == want => {}
                Some(p) => {
                    return Err(EngineError::Shape(format!(
                        "weights for {}#{} have dims {:?}, layer needs {want:?}",
                        key.node,
                        key.slot,
                        p.dims()
                    )))
                }
                None => return Err(EngineError::Shape(format!("no weights for {}#{}", key.node, key.slot))),
            }
        }
        Ok(())
    }

    /// Sum of squared kernel entries (biases and batch norm excluded).
    pub fn kernel_sq_norm(&self) -> T {
        self.layers
            .values()
            .flat_map(|p| p.tensors.iter().filter(|t| t.name == "kernel"))
            .flat_map(|t| t.data.iter())
            .fold(T::zero(), |a, &v| a + v * v)
    }

    /// FNV-1a over the f32 bit patterns of every tensor in key order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.layers.values() {
            for t in &p.tensors {
                for v in &t.data {
                    for b in v.to_le_f32_bytes() {
                        h ^= b as u64;
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
            }
        }
        h
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        let layers = self
            .layers
            .iter()
            .map(|(k, p)| {
                let tensors = p
                    .tensors
                    .iter()
                    .map(|t| ParamTensor {
                        name: t.name.clone(),
                        dims: t.dims.clone(),
                        data: t.data.iter().map(|v| U::of(v.as_f64())).collect(),
                    })
                    .collect();
                (*k, LayerParams { tensors, trainable: p.trainable })
            })
            .collect();
        WeightStore { layers, pending: self.pending.clone() }
    }

    /// Checkpoint bytes: a header line `cgpnas-weights <n>`, `n` bytes of TOML
    /// manifest listing each tensor in storage order, then the tensors as
    /// little-endian f32.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (k, p) in &self.layers {
            for (i, t) in p.tensors.iter().enumerate() {
                entries.push(ManifestEntry {
                    node: [k.node.col, k.node.row],
                    slot: k.slot,
                    name: t.name.clone(),
                    dims: t.dims.clone(),
                    offset,
                    trainable: i < p.trainable,
                });
                offset += t.data.len();
            }
        }
        let manifest = toml::to_string(&Manifest { version: 1, total: offset, tensor: entries }).expect("manifest");
        let mut out = format!("{CHECKPOINT_TAG} {}\n", manifest.len()).into_bytes();
        out.extend_from_slice(manifest.as_bytes());
        for p in self.layers.values() {
            for t in &p.tensors {
                for v in &t.data {
                    out.extend_from_slice(&v.to_le_f32_bytes());
                }
            }
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, EngineError> {
        let bad = |m: String| EngineError::Checkpoint(m);
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not text".into()))?;
        let len: usize = header
            .strip_prefix(CHECKPOINT_TAG)
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let body = &bytes[nl + 1..];
        if body.len() < len {
            return Err(bad("truncated manifest".into()));
        }
        let text = std::str::from_utf8(&body[..len]).map_err(|_| bad("manifest is not text".into()))?;
        let manifest: Manifest = toml::from_str(text).map_err(|e| bad(format!("manifest: {e}")))?;
        let raw = &body[len..];
        if raw.len() != manifest.total * 4 {
            return Err(bad(format!("expected {} floats, found {} bytes", manifest.total, raw.len())));
        }
        let floats: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut layers: BTreeMap<LayerKey, LayerParams<T>> = BTreeMap::new();
        for e in manifest.tensor {
            let n: usize = e.dims.iter().product();
            let data = floats
                .get(e.offset..e.offset + n)
                .ok_or_else(|| bad(format!("tensor {} runs past the data", e.name)))?
                .iter()
                .map(|&v| T::of(v as f64))
                .collect();
            let key = LayerKey { node: Coord::new(e.node[0], e.node[1]), slot: e.slot };
            let p = layers.entry(key).or_insert(LayerParams { tensors: vec![], trainable: 0 });
            if e.trainable {
                p.trainable += 1;
            }
            p.tensors.push(ParamTensor { name: e.name, dims: e.dims, data });
        }
        Ok(Self { layers, pending: BTreeSet::new() })
    }

    pub fn save(&self, path: &Path) -> Result<(), EngineError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        Self::from_checkpoint(&std::fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    total: usize,
    tensor: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    node: [usize; 2],
    slot: usize,
    name: String,
    dims: Vec<usize>,
    offset: usize,
    trainable: bool,
}
