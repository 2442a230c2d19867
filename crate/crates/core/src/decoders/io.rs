//! Parameter files.
//!
//! Layout (little-endian): magic `UMRIW\0`, format version `u16`, the 32-byte
//! SHA-256 digest of the architecture (seed excluded), then named tensors
//! until end of file. Each tensor is a `u16` name length, the UTF-8 name, a
//! `u8` rank, `u32` extents and `f32` values in row-major order. The fixed
//! input `z` is stored under the name `input.z`.

use std::fs;
use std::path::Path;

use super::state::INPUT_NAME;
use super::{layer_specs, DecoderConfig, DecoderState};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tensor};

pub const PARAM_MAGIC: &[u8; 6] = b"UMRIW\0";
pub const PARAM_VERSION: u16 = 1;

fn push_tensor<T: Real>(buf: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(t.shape().len() as u8);
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

/// Serializes `state` to `path`.
pub fn save_params<T: Real>(state: &DecoderState<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAM_MAGIC);
    buf.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    buf.extend_from_slice(&state.config().architecture_digest());
    push_tensor(&mut buf, INPUT_NAME, state.z());
    for p in state.params().iter() {
        push_tensor(&mut buf, &p.name, &p.tensor);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated parameter file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_tensors(path: &Path, bytes: &[u8]) -> Result<([u8; 32], Vec<(String, Tensor<f32>)>)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(PARAM_MAGIC.len())? != PARAM_MAGIC {
        return Err(Error::format(path, "not a parameter file (bad magic)"));
    }
    let version = r.u16()?;
    if version != PARAM_VERSION {
        return Err(Error::format(path, format!("unsupported parameter file version {version}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let mut tensors = Vec::new();
    while !r.done() {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|&n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(path, "tensor extents overflow"))?;
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::format(path, e.to_string()))?;
        tensors.push((name, t));
    }
    Ok((digest, tensors))
}

/// What a parameter file's tensors reveal about the architecture that wrote it.
fn describe_saved(tensors: &[(String, Tensor<f32>)]) -> Vec<(&'static str, String)> {
    let find = |n: &str| tensors.iter().find(|(name, _)| name == n).map(|(_, t)| t.shape().to_vec());
    let mut out = Vec::new();
    if let Some(z) = find(INPUT_NAME) {
        out.push(("input_shape", format!("{z:?}")));
    }
    if let Some(w) = find("layer1.conv.weight") {
        out.push(("channels", w[0].to_string()));
        let arch = if w[2] == 3 { "ConvDecoder" } else { "DeepDecoder" };
        out.push(("arch", arch.to_string()));
    }
    let last = tensors
        .iter()
        .filter_map(|(n, _)| n.strip_prefix("layer")?.split('.').next()?.parse::<usize>().ok())
        .max();
    if let Some(n) = last {
        out.push(("n_layers", n.to_string()));
        if let Some(w) = find(&format!("layer{n}.conv.weight")) {
            out.push(("out_channels", w[0].to_string()));
        }
    }
    out
}

fn describe_config(config: &DecoderConfig) -> Vec<(&'static str, String)> {
    vec![
        ("input_shape", format!("{:?}", config.input_shape.to_vec())),
        ("channels", config.channels.to_string()),
        ("arch", format!("{:?}", config.arch)),
        ("n_layers", config.n_layers.to_string()),
        ("out_channels", config.out_channels.to_string()),
    ]
}

fn mismatch_report(config: &DecoderConfig, tensors: &[(String, Tensor<f32>)]) -> String {
    let want = describe_config(config);
    let diffs: Vec<String> = describe_saved(tensors)
        .into_iter()
        .filter_map(|(key, saved)| {
            let requested = &want.iter().find(|(k, _)| *k == key)?.1;
            (requested != &saved).then(|| format!("{key}: saved {saved}, requested {requested}"))
        })
        .collect();
    if diffs.is_empty() {
        "output_shape or size schedule differ from the saved decoder".to_string()
    } else {
        diffs.join("; ")
    }
}

/// Loads a state written by [`save_params`]. The file must have been written
/// for the same architecture as `config`; only the seed may differ, and the
/// returned state carries `config` verbatim.
pub fn load_params<T: Real>(config: &DecoderConfig, path: &Path) -> Result<DecoderState<T>> {
    config.validate()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (digest, tensors) = read_tensors(path, &bytes)?;
    if digest != config.architecture_digest() {
        return Err(Error::ConfigMismatch(format!(
            "{}: {}",
            path.display(),
            mismatch_report(config, &tensors)
        )));
    }
    let mut tensors = tensors.into_iter();
    let (name, z) = tensors
        .next()
        .ok_or_else(|| Error::format(path, "missing input tensor"))?;
    let [c0, h0, w0] = config.input_shape;
    if name != INPUT_NAME || z.shape() != [c0, h0, w0] {
        return Err(Error::format(path, "first tensor must be the decoder input"));
    }
    let specs = layer_specs(config);
    let mut params = ParamStore::new();
    for (name, t) in tensors {
        let layer = name
            .strip_prefix("layer")
            .and_then(|s| s.split('.').next())
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|l| specs.iter().any(|s| s.index == *l))
            .ok_or_else(|| Error::format(path, format!("unexpected tensor {name:?}")))?;
        params.insert(name, layer, t.cast::<T>())?;
    }
    let mut state = DecoderState::<T>::init(config)?;
    let z = z.cast::<T>();
    state
        .set_params(params)
        .map_err(|_| Error::format(path, "tensor layout does not match the architecture"))?;
    Ok(DecoderState::from_parts(config.clone(), z, state.params().clone()))
}
