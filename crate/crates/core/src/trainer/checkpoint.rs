//! Binary checkpoints.
//!
//! Layout, all integers `u64` little-endian:
//!
//! ```text
//! "UFO1"
//! n_tensors
//! n_tensors x { name_len, name bytes, rank, dims[rank], f64 LE data (row-major) }
//! n_counters
//! n_counters x { name_len, name bytes, value }
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::encoder::{Activation, ClassifierHeads, EncoderParams, FrozenSnapshot, Head};
use crate::error::{Error, Result};
use crate::eval::PerformanceMatrix;
use crate::flow::{Coupling, FlowModel};
use crate::tensor::{AdamConfig, AdamState, Rng, Tensor};

use super::state::{ContinualState, FrozenModel, ScoreRecord, TaskLog};

pub const MAGIC: &[u8; 4] = b"UFO1";

/// Ordered named tensors plus integer counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    tensors: Vec<(String, Tensor)>,
    counters: Vec<(String, u64)>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    put_u64(out, name.len() as u64);
    out.extend_from_slice(name.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("implausible length {v}")))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not utf-8".into()))
    }
}

impl Archive {
    pub fn put(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn count(&mut self, name: impl Into<String>, v: u64) {
        self.counters.push((name.into(), v));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        put_u64(&mut out, self.tensors.len() as u64);
        for (name, t) in &self.tensors {
            put_name(&mut out, name);
            put_u64(&mut out, 2);
            put_u64(&mut out, t.rows() as u64);
            put_u64(&mut out, t.cols() as u64);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_u64(&mut out, self.counters.len() as u64);
        for (name, v) in &self.counters {
            put_name(&mut out, name);
            put_u64(&mut out, *v);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("missing UFO1 header".into()));
        }
        let mut a = Archive::default();
        for _ in 0..r.len()? {
            let name = r.name()?;
            let rank = r.u64()?;
            if rank != 2 {
                return Err(Error::Format(format!("tensor {name} has rank {rank}, expected 2")));
            }
            let (rows, cols) = (r.len()?, r.len()?);
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= buf.len() / 8)
                .ok_or_else(|| Error::Format(format!("tensor {name} too large")))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            a.put(name, Tensor::new(rows, cols, data)?);
        }
        for _ in 0..r.len()? {
            let name = r.name()?;
            let v = r.u64()?;
            a.count(name, v);
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Keyed read access with typed errors.
struct Lookup {
    tensors: HashMap<String, Tensor>,
    counters: HashMap<String, u64>,
}

impl Lookup {
    fn new(a: Archive) -> Self {
        Lookup {
            tensors: a.tensors.into_iter().collect(),
            counters: a.counters.into_iter().collect(),
        }
    }

    fn tensor(&mut self, name: &str) -> Result<Tensor> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
    }

    fn counter(&self, name: &str) -> Result<u64> {
        self.counters
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("checkpoint lacks counter {name}")))
    }

    fn usize(&self, name: &str) -> Result<usize> {
        usize::try_from(self.counter(name)?).map_err(|_| Error::Format(format!("{name} overflows")))
    }

    fn flag(&self, name: &str) -> Result<bool> {
        match self.counter(name)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("{name} = {v} is not a flag"))),
        }
    }

    fn indices(&mut self, name: &str) -> Result<Vec<usize>> {
        self.tensor(name)?
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
                    Ok(v as usize)
                } else {
                    Err(Error::Format(format!("{name} holds non-index {v}")))
                }
            })
            .collect()
    }

    fn rng(&self, name: &str) -> Result<Rng> {
        let seed = self.counter(&format!("{name}.seed"))?;
        let lo = self.counter(&format!("{name}.pos_lo"))? as u128;
        let hi = self.counter(&format!("{name}.pos_hi"))? as u128;
        Ok(Rng::at_position(seed, (hi << 64) | lo))
    }
}

fn index_row(v: &[usize]) -> Tensor {
    Tensor::new(1, v.len(), v.iter().map(|&i| i as f64).collect()).expect("shape")
}

fn put_rng(a: &mut Archive, name: &str, r: &Rng) {
    let pos = r.position();
    a.count(format!("{name}.seed"), r.seed());
    a.count(format!("{name}.pos_lo"), pos as u64);
    a.count(format!("{name}.pos_hi"), (pos >> 64) as u64);
}

fn put_encoder(a: &mut Archive, p: &str, e: &EncoderParams) {
    a.count(format!("{p}.layers"), e.weights.len() as u64);
    a.count(format!("{p}.activation"), e.activation.code());
    for (l, w) in e.weights.iter().enumerate() {
        a.put(format!("{p}.w{l}"), w.clone());
    }
}

fn get_encoder(l: &mut Lookup, p: &str) -> Result<EncoderParams> {
    let n = l.usize(&format!("{p}.layers"))?;
    let weights = (0..n)
        .map(|i| l.tensor(&format!("{p}.w{i}")))
        .collect::<Result<_>>()?;
    let code = l.counter(&format!("{p}.activation"))?;
    let activation = Activation::from_code(code)
        .ok_or_else(|| Error::Format(format!("{p}.activation = {code} is unknown")))?;
    Ok(EncoderParams { weights, activation })
}

fn put_heads(a: &mut Archive, p: &str, h: &ClassifierHeads) {
    a.count(format!("{p}.count"), h.len() as u64);
    for (j, head) in h.heads.iter().enumerate() {
        a.put(format!("{p}.{j}.weight"), head.weight.clone());
        a.put(format!("{p}.{j}.bias"), head.bias.clone());
    }
}

fn get_heads(l: &mut Lookup, p: &str) -> Result<ClassifierHeads> {
    let n = l.usize(&format!("{p}.count"))?;
    let heads = (0..n)
        .map(|j| {
            Ok(Head {
                weight: l.tensor(&format!("{p}.{j}.weight"))?,
                bias: l.tensor(&format!("{p}.{j}.bias"))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ClassifierHeads { heads })
}

fn put_flow(a: &mut Archive, p: &str, f: Option<&FlowModel>) {
    a.count(format!("{p}.present"), f.is_some() as u64);
    let Some(f) = f else { return };
    a.count(format!("{p}.dim"), f.dim() as u64);
    a.count(format!("{p}.classes"), f.n_classes() as u64);
    a.count(format!("{p}.couplings"), f.n_couplings() as u64);
    for (k, (perm, c)) in f.permutations().iter().zip(&f.couplings).enumerate() {
        a.put(format!("{p}.{k}.perm"), index_row(perm));
        a.put(format!("{p}.{k}.w1"), c.w1.clone());
        a.put(format!("{p}.{k}.b1"), c.b1.clone());
        a.put(format!("{p}.{k}.w2"), c.w2.clone());
        a.put(format!("{p}.{k}.b2"), c.b2.clone());
        a.put(format!("{p}.{k}.gate"), c.gate.clone());
    }
}

fn get_flow(l: &mut Lookup, p: &str) -> Result<Option<FlowModel>> {
    if !l.flag(&format!("{p}.present"))? {
        return Ok(None);
    }
    let dim = l.usize(&format!("{p}.dim"))?;
    let classes = l.usize(&format!("{p}.classes"))?;
    let k = l.usize(&format!("{p}.couplings"))?;
    let mut perms = Vec::with_capacity(k);
    let mut couplings = Vec::with_capacity(k);
    for i in 0..k {
        perms.push(l.indices(&format!("{p}.{i}.perm"))?);
        couplings.push(Coupling {
            w1: l.tensor(&format!("{p}.{i}.w1"))?,
            b1: l.tensor(&format!("{p}.{i}.b1"))?,
            w2: l.tensor(&format!("{p}.{i}.w2"))?,
            b2: l.tensor(&format!("{p}.{i}.b2"))?,
            gate: l.tensor(&format!("{p}.{i}.gate"))?,
        });
    }
    FlowModel::from_parts(dim, classes, perms, couplings).map(Some)
}

fn put_adam(a: &mut Archive, p: &str, s: Option<&AdamState>) {
    a.count(format!("{p}.present"), s.is_some() as u64);
    let Some(s) = s else { return };
    a.count(format!("{p}.t"), s.t);
    a.count(format!("{p}.lr"), s.config.lr.to_bits());
    a.count(format!("{p}.beta1"), s.config.beta1.to_bits());
    a.count(format!("{p}.beta2"), s.config.beta2.to_bits());
    a.count(format!("{p}.eps"), s.config.eps.to_bits());
    a.count(format!("{p}.len"), s.m.len() as u64);
    for (i, (m, v)) in s.m.iter().zip(&s.v).enumerate() {
        a.put(format!("{p}.m{i}"), m.clone());
        a.put(format!("{p}.v{i}"), v.clone());
    }
}

fn get_adam(l: &mut Lookup, p: &str) -> Result<Option<AdamState>> {
    if !l.flag(&format!("{p}.present"))? {
        return Ok(None);
    }
    let f = |l: &Lookup, k: &str| l.counter(&format!("{p}.{k}")).map(f64::from_bits);
    let config = AdamConfig {
        lr: f(l, "lr")?,
        beta1: f(l, "beta1")?,
        beta2: f(l, "beta2")?,
        eps: f(l, "eps")?,
    };
    let n = l.usize(&format!("{p}.len"))?;
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        m.push(l.tensor(&format!("{p}.m{i}"))?);
        v.push(l.tensor(&format!("{p}.v{i}"))?);
    }
    Ok(Some(AdamState {
        config,
        m,
        v,
        t: l.counter(&format!("{p}.t"))?,
    }))
}

fn put_log(a: &mut Archive, t: usize, log: &TaskLog) {
    let summary = vec![
        log.task as f64,
        log.n_train as f64,
        log.flipped as f64,
        log.final_loss,
        log.flow_loss.unwrap_or(f64::NAN),
    ];
    a.put(format!("log.{t}.summary"), Tensor::new(1, 5, summary).expect("shape"));
    let mut rows = Vec::with_capacity(log.scores.len() * 6);
    for r in &log.scores {
        rows.extend([
            r.node as f64,
            r.clean_label as f64,
            r.observed_label as f64,
            r.noisy as u8 as f64,
            r.raw_score,
            r.final_score,
        ]);
    }
    a.put(
        format!("log.{t}.scores"),
        Tensor::new(log.scores.len(), 6, rows).expect("shape"),
    );
}

fn get_log(l: &mut Lookup, t: usize) -> Result<TaskLog> {
    let s = l.tensor(&format!("log.{t}.summary"))?;
    if s.shape() != (1, 5) {
        return Err(Error::Format(format!("log.{t}.summary has shape {:?}", s.shape())));
    }
    let d = s.data();
    let scores = l.tensor(&format!("log.{t}.scores"))?;
    if scores.cols() != 6 {
        return Err(Error::Format(format!("log.{t}.scores has {} columns", scores.cols())));
    }
    Ok(TaskLog {
        task: d[0] as usize,
        n_train: d[1] as usize,
        flipped: d[2] as usize,
        final_loss: d[3],
        flow_loss: (!d[4].is_nan()).then_some(d[4]),
        scores: (0..scores.rows())
            .map(|i| {
                let r = scores.row(i);
                ScoreRecord {
                    node: r[0] as usize,
                    clean_label: r[1] as usize,
                    observed_label: r[2] as usize,
                    noisy: r[3] != 0.0,
                    raw_score: r[4],
                    final_score: r[5],
                }
            })
            .collect(),
    })
}

/// Everything needed to continue a run after task `state.tasks_done`.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Identifies the method that produced the state; resuming under another
    /// method is refused.
    pub method: u64,
    pub seed: u64,
    pub state: ContinualState,
    pub matrix: PerformanceMatrix,
    pub logs: Vec<TaskLog>,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Archive {
        let s = &self.state;
        let mut a = Archive::default();
        a.count("method", self.method);
        a.count("seed", self.seed);
        a.count("tasks_done", s.tasks_done as u64);
        a.count("n_classes", s.n_classes as u64);
        put_encoder(&mut a, "encoder", &s.encoder);
        put_heads(&mut a, "heads", &s.heads);
        put_flow(&mut a, "flow", s.flow.as_ref());
        a.count("frozen.present", s.frozen.is_some() as u64);
        if let Some(f) = &s.frozen {
            a.count("frozen.task", f.task as u64);
            put_encoder(&mut a, "frozen.encoder", &f.model.encoder);
            put_heads(&mut a, "frozen.heads", &f.model.heads);
            put_flow(&mut a, "frozen.flow", f.flow.as_ref());
        }
        a.count("task_classes.count", s.task_classes.len() as u64);
        for (j, c) in s.task_classes.iter().enumerate() {
            a.put(format!("task_classes.{j}"), index_row(c));
        }
        put_adam(&mut a, "opt.classifier", Some(&s.classifier_opt));
        put_adam(&mut a, "opt.flow", s.flow_opt.as_ref());
        a.count("matrix.rows", self.matrix.n_tasks() as u64);
        for (i, row) in self.matrix.rows().iter().enumerate() {
            a.put(format!("matrix.{i}"), Tensor::new(1, row.len(), row.clone()).expect("shape"));
        }
        a.count("log.count", self.logs.len() as u64);
        for (t, log) in self.logs.iter().enumerate() {
            put_log(&mut a, t, log);
        }
        put_rng(&mut a, "rng.flow", &s.flow_rng);
        put_rng(&mut a, "rng.replay", &s.replay_rng);
        a
    }

    pub fn from_archive(a: Archive) -> Result<Self> {
        let mut l = Lookup::new(a);
        let tasks_done = l.usize("tasks_done")?;
        let encoder = get_encoder(&mut l, "encoder")?;
        let heads = get_heads(&mut l, "heads")?;
        let flow = get_flow(&mut l, "flow")?;
        let frozen = if l.flag("frozen.present")? {
            Some(FrozenModel {
                task: l.usize("frozen.task")?,
                model: FrozenSnapshot {
                    encoder: get_encoder(&mut l, "frozen.encoder")?,
                    heads: get_heads(&mut l, "frozen.heads")?,
                },
                flow: get_flow(&mut l, "frozen.flow")?,
            })
        } else {
            None
        };
        let task_classes = (0..l.usize("task_classes.count")?)
            .map(|j| l.indices(&format!("task_classes.{j}")))
            .collect::<Result<_>>()?;
        let classifier_opt = get_adam(&mut l, "opt.classifier")?
            .ok_or_else(|| Error::Format("checkpoint lacks the classifier optimizer".into()))?;
        let flow_opt = get_adam(&mut l, "opt.flow")?;
        let rows = (0..l.usize("matrix.rows")?)
            .map(|i| l.tensor(&format!("matrix.{i}")).map(Tensor::into_data))
            .collect::<Result<Vec<_>>>()?;
        let logs = (0..l.usize("log.count")?)
            .map(|t| get_log(&mut l, t))
            .collect::<Result<Vec<_>>>()?;
        let state = ContinualState {
            tasks_done,
            n_classes: l.usize("n_classes")?,
            encoder,
            heads,
            flow,
            frozen,
            task_classes,
            classifier_opt,
            flow_opt,
            flow_rng: l.rng("rng.flow")?,
            replay_rng: l.rng("rng.replay")?,
        };
        if !l.tensors.is_empty() {
            let mut extra: Vec<&String> = l.tensors.keys().collect();
            extra.sort();
            return Err(Error::Format(format!("unexpected tensors {extra:?}")));
        }
        if logs.len() != tasks_done || rows.len() != tasks_done {
            return Err(Error::Format(format!(
                "checkpoint after {tasks_done} tasks holds {} matrix rows and {} logs",
                rows.len(),
                logs.len()
            )));
        }
        Ok(Checkpoint {
            method: l.counter("method")?,
            seed: l.counter("seed")?,
            state,
            matrix: PerformanceMatrix::from_rows(rows)?,
            logs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(Archive::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_preserves_bits() {
        let mut a = Archive::default();
        a.put("x", Tensor::new(2, 2, vec![0.1, -0.0, f64::NAN, 1e-300]).unwrap());
        a.put("empty", Tensor::zeros(0, 6));
        a.count("n", u64::MAX);
        let bytes = a.to_bytes();
        let b = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(b.to_bytes(), bytes);
        assert_eq!(&bytes[..4], b"UFO1");
    }

    #[test]
    fn wrong_magic_and_truncation_are_rejected() {
        let mut a = Archive::default();
        a.put("x", Tensor::zeros(3, 3));
        let mut bytes = a.to_bytes();
        assert!(matches!(Archive::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        bytes.push(0);
        assert!(matches!(Archive::from_bytes(&bytes), Err(Error::Format(_))));
        bytes[3] = b'2';
        assert!(matches!(Archive::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(matches!(Archive::from_bytes(b"UF"), Err(Error::Format(_))));
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut bytes = MAGIC.to_vec();
        put_u64(&mut bytes, 1);
        put_name(&mut bytes, "x");
        put_u64(&mut bytes, 2);
        put_u64(&mut bytes, u64::MAX / 2);
        put_u64(&mut bytes, 4);
        assert!(Archive::from_bytes(&bytes).is_err());
    }
}
