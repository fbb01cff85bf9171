//! Checkpoint files: a plain-text manifest plus a little-endian f64 blob.
//!
//! ```text
//! kscu-checkpoint 1
//! dims vocab=64 d_cond=16 d_time=16 hidden=128
//! blob model.bin
//! tensor time_freqs 8 0
//! tensor token_table 64,16 64
//! ...
//! ```
//!
//! Each `tensor` line is `name shape byte_offset`; tensors are stored in
//! manifest order with no padding.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Denoiser, ModelDims};
use crate::{Error, Result};

const MAGIC: &str = "kscu-checkpoint 1";

fn err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), msg: msg.into() }
}

/// Blob path paired with a manifest path.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn tensors(model: &Denoiser) -> Vec<(&'static str, Vec<usize>, &[f64])> {
    let d = model.dims();
    let mut out = vec![("time_freqs", vec![model.time_freqs().len()], model.time_freqs())];
    for (name, shape, range) in model.layout().tensors(d) {
        out.push((name, shape, &model.params()[range]));
    }
    out
}

pub fn render_manifest(model: &Denoiser, blob_name: &str) -> String {
    let d = model.dims();
    let mut text = String::new();
    let _ = writeln!(text, "{MAGIC}");
    let _ = writeln!(text, "dims vocab={} d_cond={} d_time={} hidden={}", d.vocab, d.d_cond, d.d_time, d.hidden);
    let _ = writeln!(text, "blob {blob_name}");
    let mut offset = 0;
    for (name, shape, data) in tensors(model) {
        let shape: Vec<String> = shape.iter().map(ToString::to_string).collect();
        let _ = writeln!(text, "tensor {name} {} {offset}", shape.join(","));
        offset += data.len() * 8;
    }
    text
}

pub fn encode_blob(model: &Denoiser) -> Vec<u8> {
    tensors(model).into_iter().flat_map(|(_, _, data)| data.iter().flat_map(|v| v.to_le_bytes())).collect()
}

/// Writes `manifest` and its sibling `.bin` blob.
pub fn save(model: &Denoiser, manifest: &Path) -> Result<()> {
    let blob = blob_path(manifest);
    let blob_name = blob.file_name().and_then(|n| n.to_str()).ok_or_else(|| err(manifest, "bad file name"))?;
    fs::write(manifest, render_manifest(model, blob_name))?;
    fs::write(&blob, encode_blob(model))?;
    Ok(())
}

fn parse_dims(path: &Path, line: &str) -> Result<ModelDims> {
    let mut dims = ModelDims::default();
    let rest = line.strip_prefix("dims ").ok_or_else(|| err(path, "missing dims line"))?;
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| err(path, format!("bad dims entry `{kv}`")))?;
        let v: usize = v.parse().map_err(|_| err(path, format!("bad dims value `{kv}`")))?;
        match k {
            "vocab" => dims.vocab = v,
            "d_cond" => dims.d_cond = v,
            "d_time" => dims.d_time = v,
            "hidden" => dims.hidden = v,
            _ => return Err(err(path, format!("unknown dims key `{k}`"))),
        }
    }
    Ok(dims)
}

/// Rebuilds a model from manifest text and blob bytes.
pub fn decode(path: &Path, manifest: &str, blob: &[u8]) -> Result<Denoiser> {
    let mut lines = manifest.lines().filter(|l| !l.trim().is_empty());
    if lines.next() != Some(MAGIC) {
        return Err(err(path, "not a kscu checkpoint manifest"));
    }
    let dims = parse_dims(path, lines.next().unwrap_or_default())?;
    lines.next().filter(|l| l.starts_with("blob ")).ok_or_else(|| err(path, "missing blob line"))?;

    let expected = {
        let probe = Denoiser::zeros(dims);
        tensors(&probe).into_iter().map(|(n, s, _)| (n, s)).collect::<Vec<_>>()
    };
    let mut values = Vec::new();
    let mut offset = 0usize;
    for (name, shape) in &expected {
        let line = lines.next().ok_or_else(|| err(path, format!("missing tensor `{name}`")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let shape_txt: Vec<String> = shape.iter().map(ToString::to_string).collect();
        if fields.len() != 4 || fields[0] != "tensor" || fields[1] != *name || fields[2] != shape_txt.join(",") {
            return Err(err(
                path,
                format!("expected tensor `{name}` of shape {}, found `{line}`", shape_txt.join(",")),
            ));
        }
        let at: usize = fields[3].parse().map_err(|_| err(path, format!("bad offset in `{line}`")))?;
        if at != offset {
            return Err(err(path, format!("tensor `{name}` at offset {at}, expected {offset}")));
        }
        let n: usize = shape.iter().product();
        let bytes = blob.get(at..at + n * 8).ok_or_else(|| err(path, format!("blob too short for `{name}`")))?;
        values.extend(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))));
        offset += n * 8;
    }
    if let Some(extra) = lines.next() {
        return Err(err(path, format!("unexpected manifest line `{extra}`")));
    }
    if blob.len() != offset {
        return Err(err(path, format!("blob holds {} bytes, manifest describes {offset}", blob.len())));
    }
    let n_freq = dims.d_time / 2;
    let params = values.split_off(n_freq);
    Denoiser::from_parts(dims, values, params)
}

pub fn load(manifest: &Path) -> Result<Denoiser> {
    let text = fs::read_to_string(manifest).map_err(|e| err(manifest, e.to_string()))?;
    let blob_name =
        text.lines().find_map(|l| l.strip_prefix("blob ")).ok_or_else(|| err(manifest, "missing blob line"))?;
    let blob_file = manifest.parent().unwrap_or(Path::new(".")).join(blob_name.trim());
    let blob = fs::read(&blob_file).map_err(|e| err(&blob_file, e.to_string()))?;
    decode(manifest, &text, &blob)
}
