//! Little-endian checkpoint file:
//!
//! ```text
//! "ESTC" | version u32 = 1 | precision tag u8
//! section* : id u8 | payload length u64 | payload | crc32(payload) u32
//!   1 config     UTF-8 `key=value` lines
//!   2 tensors    count u32, then per tensor:
//!                name_len u32 | name | kind u8 (0 sparse, 1 dense) | rank u32 | dims u64[rank] | data
//!   3 optimizer  epoch u32 | step u64 | count u32, then per tensor:
//!                name_len u32 | name | t u64 | n u64 | m[n] | v[n]
//!   4 snapshot   initial sparse values, laid out like `tensors`
//! ```
//! Sections 1 and 2 are mandatory and come first; 3 and 4 are optional.

use std::path::Path;

use super::{FieldSpec, FieldTable, Model, ModelConfig, ModelError, ParamKind};
use crate::tensor::{Float, Precision, Tensor};

pub const MAGIC: &[u8; 4] = b"ESTC";
pub const VERSION: u32 = 1;

const SEC_CONFIG: u8 = 1;
const SEC_TENSORS: u8 = 2;
const SEC_OPTIMIZER: u8 = 3;
const SEC_SNAPSHOT: u8 = 4;

/// AdamW moments of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T: Float> {
    pub name: String,
    /// Number of updates applied to this tensor.
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Float> {
    pub epoch: u32,
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T: Float> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Float> {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor<T>>,
    pub optimizer: Option<OptimizerState<T>>,
    /// Sparse tensors as they were before the first update.
    pub snapshot: Option<Vec<NamedTensor<T>>>,
}

impl<T: Float> Checkpoint<T> {
    pub fn from_model(model: &Model<T>) -> Self {
        Checkpoint {
            config: model.cfg.clone(),
            tensors: model
                .params
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: plain(&p.tensor),
                })
                .collect(),
            optimizer: None,
            snapshot: None,
        }
    }

    /// Rebuilds the model, checking that names, kinds and shapes line up.
    pub fn to_model(&self) -> Result<Model<T>, ModelError> {
        let mut model = Model::new(self.config.clone(), 0)?;
        if model.params.len() != self.tensors.len() {
            return Err(ModelError::Schema(format!(
                "checkpoint holds {} tensors, config implies {}",
                self.tensors.len(),
                model.params.len()
            )));
        }
        for t in &self.tensors {
            copy_into(&mut model, t)?;
        }
        Ok(model)
    }

    /// Warm start: copies only the sparse tensors into `model`.
    pub fn load_sparse_into(&self, model: &mut Model<T>) -> Result<usize, ModelError> {
        let mut n = 0;
        for t in self.tensors.iter().filter(|t| t.kind == ParamKind::Sparse) {
            copy_into(model, t)?;
            n += 1;
        }
        Ok(n)
    }
}

fn plain<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::new(t.shape(), t.data().to_vec()).expect("same shape")
}

fn copy_into<T: Float>(model: &mut Model<T>, t: &NamedTensor<T>) -> Result<(), ModelError> {
    let id = model
        .params
        .id(&t.name)
        .ok_or_else(|| ModelError::Schema(format!("unknown tensor `{}`", t.name)))?;
    let p = model.params.param(id);
    if p.kind != t.kind || p.tensor.shape() != t.tensor.shape() {
        return Err(ModelError::Schema(format!(
            "tensor `{}` is {:?} {:?} in the model but {:?} {:?} in the checkpoint",
            t.name,
            p.kind,
            p.tensor.shape(),
            t.kind,
            t.tensor.shape()
        )));
    }
    model.params.get_mut(id).data_mut().copy_from_slice(t.tensor.data());
    Ok(())
}

// ---- config text ------------------------------------------------------------

fn table_name(t: FieldTable) -> &'static str {
    match t {
        FieldTable::Own => "own",
        FieldTable::Item => "item",
        FieldTable::Category => "category",
    }
}

pub fn config_text(cfg: &ModelConfig) -> String {
    let mut s = String::new();
    for (k, v) in cfg.entries() {
        s.push_str(&format!("{k}={v}\n"));
    }
    let fields: Vec<String> = cfg
        .fields
        .iter()
        .map(|f| format!("{}:{}:{}", f.name, f.cardinality, table_name(f.table)))
        .collect();
    s.push_str(&format!("fields={}\n", fields.join(";")));
    for (k, v) in [
        ("num_items", cfg.num_items),
        ("num_categories", cfg.num_categories),
        ("l_bu", cfg.l_bu),
        ("l_bc", cfg.l_bc),
        ("d_m", cfg.d_m),
    ] {
        s.push_str(&format!("{k}={v}\n"));
    }
    s
}

pub fn parse_config_text(text: &str) -> Result<ModelConfig, ModelError> {
    let mut cfg = ModelConfig {
        layers: 0,
        d: 0,
        k: 0,
        heads: 0,
        emb_dim: 0,
        fields: Vec::new(),
        num_items: 0,
        num_categories: 0,
        l_bu: 0,
        l_bc: 0,
        d_m: 0,
        head_hidden: Vec::new(),
        simtier_bins: 0,
        share_kv: true,
        csa_softmax: false,
        arch: super::Arch::Est,
        precision: Precision::F64,
        init_std: 0.02,
        emb_init_std: 0.02,
        zero_init_outputs: true,
    };
    let bad = |m: String| ModelError::Config(m);
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line `{line}`")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("invalid `{k}` value `{v}`")));
        match k {
            "fields" => {
                cfg.fields = v
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|f| {
                        let parts: Vec<&str> = f.split(':').collect();
                        let [name, card, table] = parts[..] else {
                            return Err(bad(format!("malformed field `{f}`")));
                        };
                        Ok(FieldSpec {
                            name: name.to_string(),
                            cardinality: num(card)?,
                            table: match table {
                                "own" => FieldTable::Own,
                                "item" => FieldTable::Item,
                                "category" => FieldTable::Category,
                                _ => return Err(bad(format!("unknown table `{table}`"))),
                            },
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
            "num_items" => cfg.num_items = num(v)?,
            "num_categories" => cfg.num_categories = num(v)?,
            "l_bu" => cfg.l_bu = num(v)?,
            "l_bc" => cfg.l_bc = num(v)?,
            "d_m" => cfg.d_m = num(v)?,
            _ => cfg.set(k, v)?,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---- encoding ---------------------------------------------------------------

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensors<T: Float>(out: &mut Vec<u8>, tensors: &[NamedTensor<T>]) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        put_str(out, &t.name);
        out.push(t.kind.tag());
        out.extend_from_slice(&(t.tensor.rank() as u32).to_le_bytes());
        for &d in t.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.tensor.data() {
            x.write_le(out);
        }
    }
}

fn section(out: &mut Vec<u8>, id: u8, payload: &[u8]) {
    out.push(id);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

pub fn encode<T: Float>(ck: &Checkpoint<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::TAG);
    section(&mut out, SEC_CONFIG, config_text(&ck.config).as_bytes());
    let mut p = Vec::new();
    put_tensors(&mut p, &ck.tensors);
    section(&mut out, SEC_TENSORS, &p);
    if let Some(opt) = &ck.optimizer {
        let mut p = Vec::new();
        p.extend_from_slice(&opt.epoch.to_le_bytes());
        p.extend_from_slice(&opt.step.to_le_bytes());
        p.extend_from_slice(&(opt.moments.len() as u32).to_le_bytes());
        for m in &opt.moments {
            put_str(&mut p, &m.name);
            p.extend_from_slice(&m.t.to_le_bytes());
            p.extend_from_slice(&(m.m.len() as u64).to_le_bytes());
            for &x in m.m.iter().chain(&m.v) {
                x.write_le(&mut p);
            }
        }
        section(&mut out, SEC_OPTIMIZER, &p);
    }
    if let Some(snap) = &ck.snapshot {
        let mut p = Vec::new();
        put_tensors(&mut p, snap);
        section(&mut out, SEC_SNAPSHOT, &p);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Absolute offset of `buf[0]` in the file, for error messages.
    base: usize,
}

impl<'a> Reader<'a> {
    fn err<X>(&self, at: usize, msg: impl Into<String>) -> Result<X, ModelError> {
        Err(ModelError::Format {
            offset: (self.base + at) as u64,
            msg: msg.into(),
        })
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.remaining() < n {
            return self.err(self.pos, format!("truncated: need {n} bytes, {} remain", self.remaining()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        match std::str::from_utf8(bytes) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.err(at, "name is not UTF-8"),
        }
    }

    fn floats<T: Float>(&mut self, n: usize) -> Result<Vec<T>, ModelError> {
        if n.checked_mul(T::BYTES).map_or(true, |b| b > self.remaining()) {
            return self.err(self.pos, format!("truncated: {n} values do not fit"));
        }
        let bytes = self.take(n * T::BYTES)?;
        Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    fn tensors<T: Float>(&mut self) -> Result<Vec<NamedTensor<T>>, ModelError> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.string()?;
            let at = self.pos;
            let kind = match ParamKind::from_tag(self.u8()?) {
                Some(k) => k,
                None => return self.err(at, format!("bad parameter kind for `{name}`")),
            };
            let at = self.pos;
            let rank = self.u32()? as usize;
            if rank > 8 {
                return self.err(at, format!("implausible rank {rank}"));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut n: usize = 1;
            for _ in 0..rank {
                let d = self.u64()? as usize;
                n = match n.checked_mul(d) {
                    Some(n) => n,
                    None => return self.err(at, "shape overflows"),
                };
                shape.push(d);
            }
            let data = self.floats(n)?;
            out.push(NamedTensor {
                name,
                kind,
                tensor: Tensor::new(&shape, data)?,
            });
        }
        Ok(out)
    }

    fn done(&self) -> Result<(), ModelError> {
        if self.pos != self.buf.len() {
            return self.err(self.pos, "unexpected bytes at the end of a section");
        }
        Ok(())
    }
}

pub fn decode<T: Float>(buf: &[u8]) -> Result<Checkpoint<T>, ModelError> {
    let mut r = Reader { buf, pos: 0, base: 0 };
    if r.take(4)? != MAGIC {
        return r.err(0, "bad magic (expected \"ESTC\")");
    }
    let version = r.u32()?;
    if version != VERSION {
        return r.err(4, format!("unsupported version {version}"));
    }
    let tag = r.u8()?;
    if tag != T::TAG {
        return r.err(8, format!("precision tag {tag} does not match the requested f{}", T::TAG));
    }
    let mut config = None;
    let mut tensors = None;
    let mut optimizer = None;
    let mut snapshot = None;
    let mut last = 0u8;
    while r.remaining() > 0 {
        let at = r.pos;
        let id = r.u8()?;
        let len = r.u64()?;
        if len > r.remaining() as u64 {
            return r.err(at + 1, format!("section length {len} exceeds the file"));
        }
        let start = r.pos;
        let payload = r.take(len as usize)?;
        let crc = r.u32()?;
        if crc32fast::hash(payload) != crc {
            return r.err(start, format!("checksum mismatch in section {id}"));
        }
        if id <= last || id > SEC_SNAPSHOT {
            return r.err(at, format!("unexpected section {id}"));
        }
        last = id;
        let mut s = Reader {
            buf: payload,
            pos: 0,
            base: start,
        };
        match id {
            SEC_CONFIG => {
                let text = match std::str::from_utf8(payload) {
                    Ok(t) => t,
                    Err(_) => return s.err(0, "config is not UTF-8"),
                };
                config = Some(parse_config_text(text).map_err(|e| ModelError::Format {
                    offset: start as u64,
                    msg: e.to_string(),
                })?);
            }
            SEC_TENSORS => {
                tensors = Some(s.tensors()?);
                s.done()?;
            }
            SEC_OPTIMIZER => {
                let epoch = s.u32()?;
                let step = s.u64()?;
                let count = s.u32()?;
                let mut moments = Vec::new();
                for _ in 0..count {
                    let name = s.string()?;
                    let t = s.u64()?;
                    let n = s.u64()? as usize;
                    let m = s.floats(n)?;
                    let v = s.floats(n)?;
                    moments.push(Moments { name, t, m, v });
                }
                s.done()?;
                optimizer = Some(OptimizerState { epoch, step, moments });
            }
            _ => {
                snapshot = Some(s.tensors()?);
                s.done()?;
            }
        }
    }
    let (Some(config), Some(tensors)) = (config, tensors) else {
        return r.err(buf.len(), "missing config or tensor section");
    };
    Ok(Checkpoint {
        config,
        tensors,
        optimizer,
        snapshot,
    })
}

pub fn save<T: Float>(path: impl AsRef<Path>, ck: &Checkpoint<T>) -> Result<(), ModelError> {
    std::fs::write(path, encode(ck))?;
    Ok(())
}

pub fn load<T: Float>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, ModelError> {
    decode(&std::fs::read(path)?)
}

/// Precision recorded in a checkpoint header, without decoding the rest.
pub fn peek_precision(buf: &[u8]) -> Result<Precision, ModelError> {
    if buf.len() < 9 || &buf[..4] != MAGIC {
        return Err(ModelError::Format {
            offset: 0,
            msg: "not a checkpoint".into(),
        });
    }
    Precision::from_tag(buf[8]).ok_or(ModelError::Format {
        offset: 8,
        msg: format!("unknown precision tag {}", buf[8]),
    })
}
