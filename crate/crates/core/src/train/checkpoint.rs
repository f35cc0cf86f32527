//! Checkpoint file.
//!
//! Header as the dataset container with record type 1, then: u64 step, u32
//! length + fingerprint, u32 length + canonical config text, u32 V, T, K, V
//! widths, u32 blob count, and the blobs. Each blob is u32 name length, name
//! bytes, u32 rank, rank × u32 extents, then f64 LE values. Blobs hold every
//! parameter, batch-norm running statistics, the standardizer and Adam state.
//! The batch sampler is not saved.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::trainer::{Model, Trainer};
use crate::data::container::{write_header, Reader, RECORD_CHECKPOINT};
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::math::{AdamState, ParamSet, Tensor};

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn read_str(r: &mut Reader) -> Result<String> {
    let n = r.u32()? as usize;
    String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Malformed(e.to_string()))
}

fn adam_blobs(prefix: &str, st: &AdamState, out: &mut BTreeMap<String, Tensor>) {
    out.insert(format!("adam.{prefix}.step"), Tensor::vector(vec![st.step as f64]));
    for (name, m) in &st.moments {
        out.insert(format!("adam.{prefix}.{name}.m"), m.first.clone());
        out.insert(format!("adam.{prefix}.{name}.v"), m.second.clone());
    }
}

fn running_name(layer_weight: &str, stat: &str) -> String {
    let prefix = layer_weight.strip_suffix(".W").unwrap_or(layer_weight);
    format!("{prefix}.{stat}")
}

fn blobs(t: &Trainer) -> BTreeMap<String, Tensor> {
    let m = &t.model;
    let mut out = BTreeMap::new();
    for enc in &m.encoders {
        for p in enc.params() {
            out.insert(p.name.clone(), p.value.clone());
        }
        for layer in &enc.tcn {
            out.insert(running_name(&layer.weight.name, "running_mean"), layer.running_mean.clone());
            out.insert(running_name(&layer.weight.name, "running_var"), layer.running_var.clone());
        }
    }
    for h in &m.heads {
        for p in h.params() {
            out.insert(p.name.clone(), p.value.clone());
        }
    }
    for v in 0..m.views() {
        out.insert(format!("standardizer.view{v}.mean"), Tensor::vector(m.standardizer.mean[v].clone()));
        out.insert(format!("standardizer.view{v}.std"), Tensor::vector(m.standardizer.std[v].clone()));
        adam_blobs(&format!("view{v}"), &t.view_opt[v], &mut out);
    }
    for (h, st) in m.heads.iter().zip(&t.head_opt) {
        adam_blobs(h.mode().name(), st, &mut out);
    }
    out
}

pub fn checkpoint_to_bytes(t: &Trainer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_header(&mut out, RECORD_CHECKPOINT);
    out.extend_from_slice(&(t.step as u64).to_le_bytes());
    put_str(&mut out, &t.cfg.fingerprint())?;
    put_str(&mut out, &t.cfg.canonical())?;
    let dims = t.model.dims();
    put_u32(&mut out, dims.len())?;
    put_u32(&mut out, t.model.seq_len)?;
    put_u32(&mut out, t.model.classes)?;
    for d in dims {
        put_u32(&mut out, d)?;
    }
    let blobs = blobs(t);
    put_u32(&mut out, blobs.len())?;
    for (name, value) in &blobs {
        put_str(&mut out, name)?;
        put_u32(&mut out, value.rank())?;
        for &e in value.shape() {
            put_u32(&mut out, e)?;
        }
        for x in value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn take_blob(blobs: &mut BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<Tensor> {
    let t = blobs
        .remove(name)
        .ok_or_else(|| Error::Malformed(format!("checkpoint is missing `{name}`")))?;
    if t.shape() != shape {
        return Err(Error::ShapeMismatch {
            op: "load_checkpoint",
            expected: shape.to_vec(),
            got: t.shape().to_vec(),
        });
    }
    Ok(t)
}

fn restore_adam(prefix: &str, st: &mut AdamState, blobs: &mut BTreeMap<String, Tensor>) -> Result<()> {
    let step = take_blob(blobs, &format!("adam.{prefix}.step"), &[1])?.data()[0];
    if !(step >= 0.0 && step.fract() == 0.0) {
        return Err(Error::Malformed(format!("bad Adam step {step}")));
    }
    st.step = step as u64;
    for (name, m) in st.moments.iter_mut() {
        let shape = m.first.shape().to_vec();
        m.first = take_blob(blobs, &format!("adam.{prefix}.{name}.m"), &shape)?;
        m.second = take_blob(blobs, &format!("adam.{prefix}.{name}.v"), &shape)?;
    }
    Ok(())
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Trainer> {
    let mut r = Reader::new(buf);
    r.header(RECORD_CHECKPOINT)?;
    let step = r.u64()?;
    let fingerprint = read_str(&mut r)?;
    let cfg = TrainConfig::from_toml(&read_str(&mut r)?)?;
    if cfg.fingerprint() != fingerprint {
        return Err(Error::Malformed(format!(
            "fingerprint {fingerprint} does not match stored config ({})",
            cfg.fingerprint()
        )));
    }
    let views = r.u32()? as usize;
    let seq_len = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let dims = (0..views).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let count = r.u32()? as usize;
    let mut blobs = BTreeMap::new();
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let len = len.filter(|&l| l <= r.remaining() / 8).ok_or(Error::TruncatedPayload {
            offset: buf.len() - r.remaining(),
            needed: shape.iter().product::<usize>().saturating_mul(8),
        })?;
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        blobs.insert(name, Tensor::new(shape, data)?);
    }
    r.finish()?;

    let mut model = Model::new(&dims, seq_len, classes, &cfg, Standardizer::identity(&dims))?;
    for enc in &mut model.encoders {
        for p in enc.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = take_blob(&mut blobs, &p.name, &shape)?;
        }
        for layer in &mut enc.tcn {
            let c = [layer.out_channels()];
            layer.running_mean = take_blob(&mut blobs, &running_name(&layer.weight.name, "running_mean"), &c)?;
            layer.running_var = take_blob(&mut blobs, &running_name(&layer.weight.name, "running_var"), &c)?;
        }
    }
    for h in &mut model.heads {
        for p in h.params_mut() {
            let shape = p.value.shape().to_vec();
            p.value = take_blob(&mut blobs, &p.name, &shape)?;
        }
    }
    for (v, &d) in dims.iter().enumerate() {
        model.standardizer.mean[v] = take_blob(&mut blobs, &format!("standardizer.view{v}.mean"), &[d])?.into_data();
        model.standardizer.std[v] = take_blob(&mut blobs, &format!("standardizer.view{v}.std"), &[d])?.into_data();
    }
    let mut t = Trainer::new(model, cfg)?;
    t.step = usize::try_from(step).map_err(|_| Error::Malformed(format!("step {step} too large")))?;
    for v in 0..views {
        restore_adam(&format!("view{v}"), &mut t.view_opt[v], &mut blobs)?;
    }
    let modes: Vec<&str> = t.model.heads.iter().map(|h| h.mode().name()).collect();
    for (mode, st) in modes.iter().zip(&mut t.head_opt) {
        restore_adam(mode, st, &mut blobs)?;
    }
    if let Some(name) = blobs.keys().next() {
        return Err(Error::Malformed(format!("unexpected checkpoint entry `{name}`")));
    }
    Ok(t)
}

pub fn save_checkpoint(t: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(t)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    checkpoint_from_bytes(&fs::read(path)?)
}
