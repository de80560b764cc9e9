//! Binary checkpoints: little-endian, magic "BIFF", schema version, the
//! canonical config text, RNG state, then length-prefixed parameter records
//! for the model and the frozen anchor head, plus an optional cache of
//! serialized intention sets.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::anchors::{AnchorModel, GridSpec, Intention, IntentionSet};
use crate::config::RunConfig;
use crate::model::BiffModel;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"BIFF";
pub const SCHEMA: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    BadMagic,
    SchemaMismatch { found: u32 },
    Corrupt(String),
    Io(std::io::Error),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::SchemaMismatch { found } => {
                write!(f, "checkpoint schema {found} unsupported, expected {SCHEMA}")
            }
            CheckpointError::Corrupt(msg) => write!(f, "corrupt checkpoint: {msg}"),
            CheckpointError::Io(e) => write!(f, "checkpoint i/o: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentionCacheEntry {
    pub scene_id: String,
    pub sets: [IntentionSet; 2],
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub model_params: Vec<ParamRecord>,
    pub anchor_params: Vec<ParamRecord>,
    pub intentions: Vec<IntentionCacheEntry>,
}

fn records_of(set: &ParamSet) -> Vec<ParamRecord> {
    set.iter()
        .map(|(_, p)| ParamRecord {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().to_vec(),
            adam_m: p.adam_m.clone(),
            adam_v: p.adam_v.clone(),
            step_count: p.step_count,
        })
        .collect()
}

fn fill_set(set: &mut ParamSet, records: &[ParamRecord], what: &str) -> Result<(), CheckpointError> {
    if set.len() != records.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{what}: expected {} parameters, checkpoint has {}",
            set.len(),
            records.len()
        )));
    }
    for (idx, rec) in records.iter().enumerate() {
        let id = crate::tensor::ParamId(idx);
        {
            let p = set.get(id);
            if p.name != rec.name {
                return Err(CheckpointError::Corrupt(format!(
                    "{what}: parameter {idx} is '{}', checkpoint has '{}'",
                    p.name, rec.name
                )));
            }
            if p.value.shape() != rec.shape.as_slice() {
                return Err(CheckpointError::Corrupt(format!(
                    "{what}: '{}' shape {:?} vs checkpoint {:?}",
                    p.name,
                    p.value.shape(),
                    rec.shape
                )));
            }
        }
        let numel: usize = rec.shape.iter().product();
        if rec.data.len() != numel || rec.adam_m.len() != numel || rec.adam_v.len() != numel {
            return Err(CheckpointError::Corrupt(format!(
                "{what}: '{}' blob length {} does not match shape {:?}",
                rec.name,
                rec.data.len(),
                rec.shape
            )));
        }
        set.set_value(id, rec.data.clone())
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let p = set.get_mut(id);
        p.adam_m = rec.adam_m.clone();
        p.adam_v = rec.adam_v.clone();
        p.step_count = rec.step_count;
    }
    Ok(())
}

impl Checkpoint {
    pub fn capture(
        config: &RunConfig,
        model: Option<&BiffModel>,
        anchors: &AnchorModel,
        rng_seed: [u8; 32],
        rng_word_pos: u128,
    ) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            rng_seed,
            rng_word_pos,
            model_params: model.map(|m| records_of(&m.params)).unwrap_or_default(),
            anchor_params: records_of(&anchors.params),
            intentions: Vec::new(),
        }
    }

    /// Rebuild the model and anchor head with checkpointed weights.
    pub fn restore_model(&self) -> Result<(BiffModel, AnchorModel), CheckpointError> {
        if self.model_params.is_empty() {
            return Err(CheckpointError::Corrupt("checkpoint holds no model parameters".into()));
        }
        let mut model = BiffModel::new(&self.config, 0);
        fill_set(&mut model.params, &self.model_params, "model")?;
        let anchors = self.restore_anchors()?;
        Ok((model, anchors))
    }

    pub fn restore_anchors(&self) -> Result<AnchorModel, CheckpointError> {
        let mut anchors = AnchorModel::new(&self.config, 0);
        fill_set(&mut anchors.params, &self.anchor_params, "anchor head")?;
        Ok(anchors)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let mut r = BufReader::new(File::open(path)?);
        Checkpoint::read_from(&mut r)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&SCHEMA.to_le_bytes())?;
        write_bytes(w, self.config.to_canonical_string().as_bytes())?;
        w.write_all(&self.rng_seed)?;
        w.write_all(&self.rng_word_pos.to_le_bytes())?;
        write_params(w, &self.model_params)?;
        write_params(w, &self.anchor_params)?;
        w.write_all(&(self.intentions.len() as u64).to_le_bytes())?;
        for entry in &self.intentions {
            write_bytes(w, entry.scene_id.as_bytes())?;
            for set in &entry.sets {
                w.write_all(&set.agent_id.to_le_bytes())?;
                for v in [set.grid.extent_x, set.grid.extent_y, set.grid.cell] {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&(set.anchors.len() as u64).to_le_bytes())?;
                for a in &set.anchors {
                    for v in [a.x, a.y, a.score] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Checkpoint, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let schema = read_u32(r)?;
        if schema != SCHEMA {
            return Err(CheckpointError::SchemaMismatch { found: schema });
        }
        let config_text = String::from_utf8(read_bytes(r)?)
            .map_err(|e| CheckpointError::Corrupt(format!("config text: {e}")))?;
        let config = RunConfig::parse(&config_text)
            .map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
        let mut rng_seed = [0u8; 32];
        r.read_exact(&mut rng_seed)?;
        let mut pos = [0u8; 16];
        r.read_exact(&mut pos)?;
        let rng_word_pos = u128::from_le_bytes(pos);
        let model_params = read_params(r)?;
        let anchor_params = read_params(r)?;
        let n_entries = read_u64(r)? as usize;
        let mut intentions = Vec::with_capacity(n_entries);
        for _ in 0..n_entries {
            let scene_id = String::from_utf8(read_bytes(r)?)
                .map_err(|e| CheckpointError::Corrupt(format!("scene id: {e}")))?;
            let mut sets = Vec::with_capacity(2);
            for _ in 0..2 {
                let agent_id = read_u64(r)?;
                let extent_x = read_f64(r)?;
                let extent_y = read_f64(r)?;
                let cell = read_f64(r)?;
                let n = read_u64(r)? as usize;
                let mut anchors = Vec::with_capacity(n);
                for _ in 0..n {
                    let x = read_f64(r)?;
                    let y = read_f64(r)?;
                    let score = read_f64(r)?;
                    anchors.push(Intention { x, y, score });
                }
                sets.push(IntentionSet { agent_id, anchors, grid: GridSpec { extent_x, extent_y, cell } });
            }
            let sets: [IntentionSet; 2] =
                sets.try_into().map_err(|_| CheckpointError::Corrupt("intention pair".into()))?;
            intentions.push(IntentionCacheEntry { scene_id, sets });
        }
        Ok(Checkpoint { config, rng_seed, rng_word_pos, model_params, anchor_params, intentions })
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<(), CheckpointError> {
    w.write_all(&(b.len() as u64).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn write_params(w: &mut impl Write, records: &[ParamRecord]) -> Result<(), CheckpointError> {
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for rec in records {
        write_bytes(w, rec.name.as_bytes())?;
        w.write_all(&(rec.shape.len() as u32).to_le_bytes())?;
        for &d in &rec.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for blob in [&rec.data, &rec.adam_m, &rec.adam_v] {
            for v in blob {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&rec.step_count.to_le_bytes())?;
    }
    Ok(())
}

fn read_params(r: &mut impl Read) -> Result<Vec<ParamRecord>, CheckpointError> {
    let count = read_u64(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(r)?)
            .map_err(|e| CheckpointError::Corrupt(format!("param name: {e}")))?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > (1 << 32) {
            return Err(CheckpointError::Corrupt(format!("'{name}' implausible size {numel}")));
        }
        let mut blobs = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut v = Vec::with_capacity(numel);
            for _ in 0..numel {
                v.push(read_f64(r)?);
            }
            blobs.push(v);
        }
        let adam_v = blobs.pop().expect("three blobs");
        let adam_m = blobs.pop().expect("three blobs");
        let data = blobs.pop().expect("three blobs");
        let step_count = read_u64(r)?;
        out.push(ParamRecord { name, shape, data, adam_m, adam_v, step_count });
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>, CheckpointError> {
    let len = read_u64(r)? as usize;
    if len > (1 << 30) {
        return Err(CheckpointError::Corrupt(format!("implausible blob length {len}")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Serialize any parameter set into records (used by tests and tools).
pub fn snapshot_params(set: &ParamSet) -> Vec<ParamRecord> {
    records_of(set)
}

/// Distinguish "values equal" from "bitwise equal" when comparing runs.
pub fn params_bitwise_equal(a: &ParamSet, b: &ParamSet) -> bool {
    if a.len() != b.len() {
        return false;
    }
    a.iter().zip(b.iter()).all(|((_, pa), (_, pb))| {
        pa.name == pb.name
            && pa.value.shape() == pb.value.shape()
            && pa.value.data().iter().zip(pb.value.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

/// Verify a tensor value survives the serialize/deserialize path bit-exactly.
pub fn tensor_roundtrip_bits(t: &Tensor) -> bool {
    t.data().iter().all(|v| f64::from_le_bytes(v.to_le_bytes()).to_bits() == v.to_bits())
}
