//! Versioned binary checkpoint container. Layout, all little-endian:
//!
//! ```text
//! magic "WSRG" | u32 version=1
//! u32 config_len | config text (the canonical key=value form)
//! u32 tensor_count | tensors...
//! u32 adam_tensor_count | tensors... ("adam.m.<p>", "adam.v.<p>", "adam.step")
//! u64 iteration | 4 x u64 rng state
//! ```
//!
//! Each tensor: u32 name_len | name | u8 dtype | u8 rank | u64 x rank dims |
//! raw little-endian values. Save/load round-trips are bitwise.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndgrad::{Dtype, ParamModule, Parameter, Scalar, Tensor};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::SrModel;
use crate::rng::Rng;
use crate::train::AdamState;

pub const MAGIC: &[u8; 4] = b"WSRG";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: SrModel<f32>,
    pub adam: AdamState<f32>,
    pub iteration: u64,
    pub rng_state: [u64; 4],
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[T]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.tag());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in data {
        v.write_le(out);
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &SrModel<f32>,
    adam: &AdamState<f32>,
    iteration: u64,
    rng_state: [u64; 4],
    cfg: &RunConfig,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let config_text = cfg.to_text();
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());

    let mut names = Vec::new();
    model.for_each_param(&mut |p: &Parameter<f32>| names.push(p.name.clone()));
    out.extend_from_slice(&(names.len() as u32).to_le_bytes());
    model.for_each_param(&mut |p: &Parameter<f32>| {
        put_tensor(&mut out, &p.name, p.value.shape(), p.value.data());
    });

    // Adam moments in parameter order, then the step counter.
    let adam_count = 2 * names.len() + 1;
    out.extend_from_slice(&(adam_count as u32).to_le_bytes());
    for name in &names {
        let n = model_param_len(model, name);
        let zero = vec![0.0f32; n];
        let m = adam.m.get(name).map(|v| v.as_slice()).unwrap_or(&zero);
        put_tensor(&mut out, &format!("adam.m.{name}"), &[m.len()], m);
        let v = adam.v.get(name).map(|v| v.as_slice()).unwrap_or(&zero);
        put_tensor(&mut out, &format!("adam.v.{name}"), &[v.len()], v);
    }
    put_tensor::<f64>(&mut out, "adam.step", &[], &[adam.step as f64]);

    out.extend_from_slice(&iteration.to_le_bytes());
    for word in rng_state {
        out.extend_from_slice(&word.to_le_bytes());
    }

    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn model_param_len(model: &SrModel<f32>, name: &str) -> usize {
    let mut n = 0;
    model.for_each_param(&mut |p: &Parameter<f32>| {
        if p.name == name {
            n = p.numel();
        }
    });
    n
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
    context: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::checkpoint(
                &self.path,
                format!("unexpected end of file while reading {}", self.context),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Debug)]
enum AnyTensor {
    F32(Vec<usize>, Vec<f32>),
    F64(Vec<usize>, Vec<f64>),
}

fn read_tensor(r: &mut Reader) -> Result<(String, AnyTensor)> {
    r.context = "a tensor name".into();
    let name_len = r.u32()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| Error::checkpoint(&r.path, "tensor name is not valid UTF-8"))?;
    r.context = format!("tensor {name}");
    let dtype = Dtype::from_tag(r.take(1)?[0])
        .ok_or_else(|| Error::checkpoint(&r.path, format!("unknown dtype tag in tensor {name}")))?;
    let rank = r.take(1)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u64()? as usize);
    }
    let numel: usize = shape.iter().product();
    let raw = r.take(numel * dtype.size())?;
    let t = match dtype {
        Dtype::F32 => AnyTensor::F32(
            shape,
            raw.chunks_exact(4).map(f32::read_le).collect(),
        ),
        Dtype::F64 => AnyTensor::F64(
            shape,
            raw.chunks_exact(8).map(f64::read_le).collect(),
        ),
    };
    Ok((name, t))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0, path: path.to_path_buf(), context: "header".into() };

    if r.take(4)? != MAGIC {
        return Err(Error::checkpoint(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::checkpoint(
            path,
            format!("unknown version {version} (expected {VERSION})"),
        ));
    }
    r.context = "config text".into();
    let config_len = r.u32()? as usize;
    let config_text = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|_| Error::checkpoint(path, "config block is not valid UTF-8"))?;
    let config = RunConfig::parse(&config_text)?;

    let tensor_count = r.u32()? as usize;
    let mut tensors: HashMap<String, Tensor<f32>> = HashMap::new();
    for _ in 0..tensor_count {
        let (name, t) = read_tensor(&mut r)?;
        match t {
            AnyTensor::F32(shape, data) => {
                tensors.insert(name, Tensor::new(shape, data)?);
            }
            AnyTensor::F64(..) => {
                return Err(Error::checkpoint(
                    path,
                    format!("model tensor {name} has dtype f64; training checkpoints are f32"),
                ));
            }
        }
    }

    // Rebuild the model structure from the config, then fill values by name.
    let mut model: SrModel<f32> = SrModel::init(&config, &mut Rng::from_seed(config.seed))?;
    let mut missing = Vec::new();
    model.for_each_param_mut(&mut |p: &mut Parameter<f32>| {
        match tensors.remove(&p.name) {
            Some(t) if t.shape() == p.value.shape() => p.value = t,
            Some(t) => missing.push(format!(
                "{} has shape {:?}, expected {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )),
            None => missing.push(format!("{} is absent", p.name)),
        }
    });
    if !missing.is_empty() {
        return Err(Error::checkpoint(
            path,
            format!("parameters do not match the recorded config/flags: {}", missing.join("; ")),
        ));
    }
    if !tensors.is_empty() {
        let extra: Vec<_> = tensors.keys().cloned().collect();
        return Err(Error::checkpoint(
            path,
            format!("file carries tensors the config does not expect: {extra:?}"),
        ));
    }

    let adam_count = r.u32()? as usize;
    let mut adam = AdamState::new();
    for _ in 0..adam_count {
        let (name, t) = read_tensor(&mut r)?;
        if name == "adam.step" {
            let AnyTensor::F64(shape, data) = t else {
                return Err(Error::checkpoint(path, "adam.step must be f64"));
            };
            if !shape.is_empty() {
                return Err(Error::checkpoint(path, "adam.step must be a scalar"));
            }
            adam.step = data.first().copied().unwrap_or(0.0) as u64;
        } else if let Some(pname) = name.strip_prefix("adam.m.") {
            let AnyTensor::F32(_, data) = t else {
                return Err(Error::checkpoint(path, format!("{name} must be f32")));
            };
            adam.m.insert(pname.to_string(), data);
        } else if let Some(pname) = name.strip_prefix("adam.v.") {
            let AnyTensor::F32(_, data) = t else {
                return Err(Error::checkpoint(path, format!("{name} must be f32")));
            };
            adam.v.insert(pname.to_string(), data);
        } else {
            return Err(Error::checkpoint(path, format!("unexpected optimizer tensor {name}")));
        }
    }

    r.context = "iteration counter".into();
    let iteration = r.u64()?;
    r.context = "rng state".into();
    let rng_state = [r.u64()?, r.u64()?, r.u64()?, r.u64()?];

    Ok(Checkpoint { config, model, adam, iteration, rng_state })
}
