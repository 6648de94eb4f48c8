//! `checkpoint.bin`: little-endian binary container.
//!
//! ```text
//! "NSTKCKPT" u32 version
//! u64 len, config JSON
//! u64 epoch, f64 best validation difference, u32 restart, f64 initial lr
//! u32 count, then per parameter: u32 name len, name, u32 ndim, u64 dims…, f64 data…
//! u8 has_optimizer, then f64 lr beta1 beta2 eps clip, u64 step,
//!    first moments, second moments (data only, parameter shapes)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::config::ExperimentConfig;
use super::optim::Adam;
use crate::autodiff::{Array, ParamStore};
use crate::error::{Error, Result};
use crate::model::Model;

const MAGIC: &[u8; 8] = b"NSTKCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
    pub epoch: u64,
    pub best_valid: f64,
    pub restart: u32,
    pub initial_lr: f64,
}

impl Checkpoint {
    /// Rebuild the model structure around the stored parameters.
    pub fn model(&self) -> Result<Model> {
        Model::attach(self.config.model.clone(), self.config.language.alphabet_size(), &self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Checkpoint::read_from(&mut bytes.as_slice())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        let json = serde_json::to_vec(&self.config)?;
        w.write_u64::<LE>(json.len() as u64)?;
        w.write_all(&json)?;
        w.write_u64::<LE>(self.epoch)?;
        w.write_f64::<LE>(self.best_valid)?;
        w.write_u32::<LE>(self.restart)?;
        w.write_f64::<LE>(self.initial_lr)?;
        w.write_u32::<LE>(self.params.len() as u32)?;
        for (_, name, a) in self.params.iter() {
            w.write_u32::<LE>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LE>(a.ndim() as u32)?;
            for &d in a.shape() {
                w.write_u64::<LE>(d as u64)?;
            }
            write_data(w, a)?;
        }
        match &self.optimizer {
            None => w.write_u8(0)?,
            Some(o) => {
                w.write_u8(1)?;
                for x in [o.lr, o.beta1, o.beta2, o.eps, o.clip] {
                    w.write_f64::<LE>(x)?;
                }
                w.write_u64::<LE>(o.step)?;
                for a in o.m.iter().chain(&o.v) {
                    write_data(w, a)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.read_u64::<LE>()? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let config: ExperimentConfig = serde_json::from_slice(&json)?;
        let epoch = r.read_u64::<LE>()?;
        let best_valid = r.read_f64::<LE>()?;
        let restart = r.read_u32::<LE>()?;
        let initial_lr = r.read_f64::<LE>()?;
        let count = r.read_u32::<LE>()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = r.read_u32::<LE>()? as usize;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8"))?;
            let ndim = r.read_u32::<LE>()? as usize;
            let shape = (0..ndim)
                .map(|_| r.read_u64::<LE>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let a = read_data(r, &shape)?;
            params.add(name, a);
        }
        let optimizer = match r.read_u8()? {
            0 => None,
            1 => {
                let mut h = [0.0; 5];
                for x in &mut h {
                    *x = r.read_f64::<LE>()?;
                }
                let step = r.read_u64::<LE>()?;
                let shapes: Vec<Vec<usize>> = params.iter().map(|(_, _, a)| a.shape().to_vec()).collect();
                let m = shapes.iter().map(|s| read_data(r, s)).collect::<Result<Vec<_>>>()?;
                let v = shapes.iter().map(|s| read_data(r, s)).collect::<Result<Vec<_>>>()?;
                Some(Adam {
                    lr: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    eps: h[3],
                    clip: h[4],
                    step,
                    m,
                    v,
                })
            }
            _ => return Err(bad("bad optimizer flag")),
        };
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            config,
            params,
            optimizer,
            epoch,
            best_valid,
            restart,
            initial_lr,
        })
    }
}

fn write_data<W: Write>(w: &mut W, a: &Array) -> Result<()> {
    for &x in a.data() {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_data<R: Read>(r: &mut R, shape: &[usize]) -> Result<Array> {
    let n: usize = shape.iter().product();
    let mut data = vec![0.0; n];
    r.read_f64_into::<LE>(&mut data)?;
    Array::new(shape.to_vec(), data)
}
