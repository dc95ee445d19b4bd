//! WMCK checkpoint format: a self-contained, bit-exact snapshot of a
//! [`ModelBundle`] including sphere state and optimizer moments.
//!
//! Layout (all little-endian): magic "WMCK", version u16, identity blob
//! (u32 length + bytes) and its SHA-256, model kind u8, epochs u32, sphere
//! section, named parameter blobs (u16 name, u8 rank, u32 extents, f32
//! data), then per-optimizer Adam state. Strict end-of-file; any surplus
//! or shortfall is an error.

use super::config::ModelKind;
use super::{ModelBundle, SphereState};
use crate::nn::{DecoderParams, DiscriminatorParams, EncoderParams, Linear};
use crate::tensor::{Adam, Tensor};
use crate::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"WMCK";
pub const VERSION: u16 = 1;

pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::with_capacity(1 << 20, file);

    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let blob = bundle.identity_blob.as_bytes();
    w.write_all(&(blob.len() as u32).to_le_bytes())?;
    w.write_all(blob)?;
    let digest: [u8; 32] = Sha256::digest(blob).into();
    w.write_all(&digest)?;

    w.write_all(&[bundle.kind.code()])?;
    w.write_all(&bundle.epochs_done.to_le_bytes())?;

    match &bundle.sphere {
        Some(s) => {
            w.write_all(&[1u8])?;
            write_f32s(&mut w, &s.center)?;
            w.write_all(&s.radius.to_le_bytes())?;
            write_f32s(&mut w, &s.final_distances)?;
        }
        None => w.write_all(&[0u8])?,
    }

    let mut entries = bundle.encoder.param_entries(false);
    if let Some(dec) = &bundle.decoder {
        entries.extend(dec.param_entries());
    }
    if let Some(disc) = &bundle.discriminator {
        entries.extend(disc.param_entries());
    }
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        write_name(&mut w, &name)?;
        w.write_all(&[t.shape.len() as u8])?;
        for &e in &t.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        write_raw_f32s(&mut w, &t.data)?;
    }

    w.write_all(&(bundle.optimizers.len() as u32).to_le_bytes())?;
    for (role, opt) in &bundle.optimizers {
        write_name(&mut w, role)?;
        w.write_all(&opt.state.step_count.to_le_bytes())?;
        w.write_all(&opt.state.learning_rate.to_le_bytes())?;
        w.write_all(&opt.state.beta1.to_le_bytes())?;
        w.write_all(&opt.state.beta2.to_le_bytes())?;
        w.write_all(&opt.state.epsilon.to_le_bytes())?;
        w.write_all(&opt.weight_decay.to_le_bytes())?;
        w.write_all(&(opt.param_count() as u32).to_le_bytes())?;
        for i in 0..opt.param_count() {
            write_name(&mut w, &opt.names()[i])?;
            w.write_all(&[opt.decay[i] as u8])?;
            write_f32s(&mut w, &opt.state.first_moment[i])?;
            write_raw_f32s(&mut w, &opt.state.second_moment[i])?;
        }
    }

    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let mut r = BufReader::with_capacity(1 << 20, file);

    let magic = read_array::<4>(&mut r, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Data("not a checkpoint file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r, "version")?);
    if version != VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let blob_len = u32::from_le_bytes(read_array(&mut r, "identity length")?) as usize;
    if blob_len > 1 << 20 {
        return Err(Error::Data(format!("implausible identity length {blob_len}")));
    }
    let mut blob_bytes = vec![0u8; blob_len];
    read_exact_or(&mut r, &mut blob_bytes, "identity blob")?;
    let stored_digest = read_array::<32>(&mut r, "identity digest")?;
    let digest: [u8; 32] = Sha256::digest(&blob_bytes).into();
    if digest != stored_digest {
        return Err(Error::Config(
            "checkpoint identity digest mismatch (corrupt or drifted config)".into(),
        ));
    }
    let identity_blob = String::from_utf8(blob_bytes)
        .map_err(|_| Error::Data("identity blob is not UTF-8".into()))?;

    let kind_code = read_array::<1>(&mut r, "model kind")?[0];
    let kind = ModelKind::from_code(kind_code)
        .ok_or_else(|| Error::Data(format!("unknown model kind code {kind_code}")))?;
    let epochs_done = u32::from_le_bytes(read_array(&mut r, "epoch count")?);

    let sphere = match read_array::<1>(&mut r, "sphere flag")?[0] {
        0 => None,
        1 => {
            let center = read_f32s(&mut r, "sphere center")?;
            let radius = f32::from_le_bytes(read_array(&mut r, "sphere radius")?);
            let final_distances = read_f32s(&mut r, "distance sample")?;
            Some(SphereState {
                center,
                radius,
                final_distances,
            })
        }
        b => return Err(Error::Data(format!("bad sphere flag {b}"))),
    };
    if kind.uses_sphere() != sphere.is_some() {
        return Err(Error::Data(format!(
            "kind {} disagrees with sphere presence",
            kind.as_str()
        )));
    }

    let param_count = u32::from_le_bytes(read_array(&mut r, "parameter count")?) as usize;
    let mut params: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..param_count {
        let name = read_name(&mut r)?;
        let rank = read_array::<1>(&mut r, "parameter rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_array(&mut r, "parameter extent")?) as usize);
        }
        let n: usize = shape.iter().product();
        if shape.contains(&0) || n > 1 << 28 {
            return Err(Error::Data(format!("implausible shape {shape:?} for {name}")));
        }
        let data = read_raw_f32s(&mut r, n, "parameter data")?;
        let t = Tensor::param(shape, data).map_err(|e| Error::Data(e.to_string()))?;
        if params.insert(name.clone(), t).is_some() {
            return Err(Error::Data(format!("duplicate parameter {name}")));
        }
    }

    let encoder = assemble_encoder(&mut params)?;
    let decoder = assemble_stack(&mut params, "dec.l")?.map(|layers| DecoderParams { layers });
    let discriminator =
        assemble_stack(&mut params, "disc.l")?.map(|layers| DiscriminatorParams { layers });
    if let Some(name) = params.keys().next() {
        return Err(Error::Data(format!("unexpected parameter {name}")));
    }
    if (kind == ModelKind::Dsvdd) != (decoder.is_none() && discriminator.is_none()) {
        return Err(Error::Data(format!(
            "kind {} disagrees with stored networks",
            kind.as_str()
        )));
    }

    let opt_count = u32::from_le_bytes(read_array(&mut r, "optimizer count")?) as usize;
    let mut optimizers = Vec::with_capacity(opt_count);
    for _ in 0..opt_count {
        let role = read_name(&mut r)?;
        let step_count = u64::from_le_bytes(read_array(&mut r, "optimizer step count")?);
        let learning_rate = f32::from_le_bytes(read_array(&mut r, "learning rate")?);
        let beta1 = f32::from_le_bytes(read_array(&mut r, "beta1")?);
        let beta2 = f32::from_le_bytes(read_array(&mut r, "beta2")?);
        let epsilon = f32::from_le_bytes(read_array(&mut r, "epsilon")?);
        let weight_decay = f32::from_le_bytes(read_array(&mut r, "weight decay")?);
        let slots = u32::from_le_bytes(read_array(&mut r, "slot count")?) as usize;
        let mut opt = Adam::new(learning_rate, weight_decay);
        opt.state.beta1 = beta1;
        opt.state.beta2 = beta2;
        opt.state.epsilon = epsilon;
        opt.state.step_count = step_count;
        for _ in 0..slots {
            let name = read_name(&mut r)?;
            let decay = read_array::<1>(&mut r, "decay flag")?[0] != 0;
            let m = read_f32s(&mut r, "first moment")?;
            let v = read_raw_f32s(&mut r, m.len(), "second moment")?;
            opt.push_slot(&name, decay, m, v);
        }
        optimizers.push((role, opt));
    }

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(Error::Data("trailing bytes after checkpoint payload".into())),
        Err(e) => return Err(Error::Io(e)),
    }

    Ok(ModelBundle {
        kind,
        identity_blob,
        epochs_done,
        encoder,
        decoder,
        discriminator,
        sphere,
        optimizers,
    })
}

fn assemble_encoder(params: &mut BTreeMap<String, Tensor>) -> Result<EncoderParams> {
    let mut trunk = Vec::new();
    let mut i = 0;
    while let Some(w) = params.remove(&format!("enc.trunk{i}.w")) {
        trunk.push(Linear {
            w,
            b: params.remove(&format!("enc.trunk{i}.b")),
        });
        i += 1;
    }
    if trunk.is_empty() {
        return Err(Error::Data("checkpoint has no encoder trunk".into()));
    }
    let head = |params: &mut BTreeMap<String, Tensor>, which: &str| -> Result<Linear> {
        Ok(Linear {
            w: params
                .remove(&format!("enc.{which}.w"))
                .ok_or_else(|| Error::Data(format!("checkpoint missing enc.{which}.w")))?,
            b: params.remove(&format!("enc.{which}.b")),
        })
    };
    let enc = EncoderParams {
        trunk,
        head_mean: head(params, "head_mean")?,
        head_logvar: head(params, "head_logvar")?,
    };
    validate_chain(
        &enc.trunk.iter().collect::<Vec<_>>(),
        "encoder trunk",
    )?;
    for (h, name) in [(&enc.head_mean, "head_mean"), (&enc.head_logvar, "head_logvar")] {
        if h.in_dim() != enc.trunk.last().unwrap().out_dim() {
            return Err(Error::Data(format!("encoder {name} width disagrees with trunk")));
        }
    }
    Ok(enc)
}

fn assemble_stack(params: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<Option<Vec<Linear>>> {
    let mut layers = Vec::new();
    let mut i = 0;
    while let Some(w) = params.remove(&format!("{prefix}{i}.w")) {
        layers.push(Linear {
            w,
            b: params.remove(&format!("{prefix}{i}.b")),
        });
        i += 1;
    }
    if layers.is_empty() {
        return Ok(None);
    }
    validate_chain(&layers.iter().collect::<Vec<_>>(), prefix)?;
    Ok(Some(layers))
}

fn validate_chain(layers: &[&Linear], what: &str) -> Result<()> {
    for pair in layers.windows(2) {
        if pair[0].out_dim() != pair[1].in_dim() {
            return Err(Error::Data(format!("{what}: layer widths do not chain")));
        }
    }
    Ok(())
}

fn write_name(w: &mut impl Write, name: &str) -> Result<()> {
    let bytes = name.as_bytes();
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_name(r: &mut impl Read) -> Result<String> {
    let len = u16::from_le_bytes(read_array(r, "name length")?) as usize;
    let mut b = vec![0u8; len];
    read_exact_or(r, &mut b, "name")?;
    String::from_utf8(b).map_err(|_| Error::Data("name is not UTF-8".into()))
}

/// Length-prefixed f32 vector.
fn write_f32s(w: &mut impl Write, data: &[f32]) -> Result<()> {
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    write_raw_f32s(w, data)
}

/// Raw f32 payload with the length known from context.
fn write_raw_f32s(w: &mut impl Write, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_f32s(r: &mut impl Read, what: &str) -> Result<Vec<f32>> {
    let len = u32::from_le_bytes(read_array(r, what)?) as usize;
    if len > 1 << 28 {
        return Err(Error::Data(format!("implausible length {len} for {what}")));
    }
    read_raw_f32s(r, len, what)
}

fn read_raw_f32s(r: &mut impl Read, len: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; len * 4];
    read_exact_or(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact_or(r, &mut buf, what)?;
    Ok(buf)
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Data(format!("truncated checkpoint: {what}")))
}
