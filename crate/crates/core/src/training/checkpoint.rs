//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "FPCK" | u16 version | u32 len, model spec text
//! | u32 count, generator records | u8 has_disc [| u32 count, discriminator records]
//! | u64 step | generator rng | discriminator rng
//! record: u16 len, name | u8 rank | u32 dims.. | f32 values..
//! rng:    32-byte seed | u64 stream | u128 word position
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compute::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Generator, ModelSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FPCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u16,
    pub spec: ModelSpec,
    pub generator: ParamStore<f32>,
    pub discriminator: Option<ParamStore<f32>>,
    pub step: u64,
    pub rng_g: RngState,
    pub rng_d: RngState,
}

impl PartialEq for Checkpoint {
    fn eq(&self, other: &Self) -> bool {
        let same_disc = match (&self.discriminator, &other.discriminator) {
            (Some(a), Some(b)) => a.same_values(b),
            (None, None) => true,
            _ => false,
        };
        self.version == other.version
            && self.spec == other.spec
            && self.generator.same_values(&other.generator)
            && same_disc
            && self.step == other.step
            && self.rng_g == other.rng_g
            && self.rng_d == other.rng_d
    }
}

impl Checkpoint {
    pub fn model(&self) -> Generator<f32> {
        Generator::new(self.spec.generator.clone(), self.generator.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let text = self.spec.to_canonical_text();
        out.extend_from_slice(&len_u32(text.len())?.to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        write_store(&mut out, &self.generator)?;
        match &self.discriminator {
            Some(d) => {
                out.push(1);
                write_store(&mut out, d)?;
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        for r in [&self.rng_g, &self.rng_d] {
            out.extend_from_slice(&r.seed);
            out.extend_from_slice(&r.stream.to_le_bytes());
            out.extend_from_slice(&r.word_pos.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("model spec is not UTF-8".into()))?;
        let spec = ModelSpec::from_canonical_text(text)?;
        let generator = read_store(&mut r)?;
        let discriminator = match r.take(1)?[0] {
            0 => None,
            1 => Some(read_store(&mut r)?),
            b => return Err(Error::Checkpoint(format!("bad discriminator flag {b}"))),
        };
        let step = u64::from_le_bytes(r.array()?);
        let mut rng = || -> Result<RngState> {
            Ok(RngState {
                seed: r.array()?,
                stream: u64::from_le_bytes(r.array()?),
                word_pos: u128::from_le_bytes(r.array()?),
            })
        };
        let (rng_g, rng_d) = (rng()?, rng()?);
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let mut generator = generator;
        generator.set_updates(step);
        let ckpt = Self {
            version,
            spec,
            generator,
            discriminator,
            step,
            rng_g,
            rng_d,
        };
        ckpt.check_params()?;
        Ok(ckpt)
    }

    /// Parameter names and shapes must match a fresh init of the spec.
    fn check_params(&self) -> Result<()> {
        let fresh = crate::model::init_generator::<f32>(&self.spec.generator, 0)?;
        same_layout(&fresh, &self.generator, "generator")?;
        if let (Some(d), Some(dspec)) = (&self.discriminator, &self.spec.discriminator) {
            let fresh = crate::model::init_discriminator::<f32>(dspec, &self.spec.scales, 0)?;
            same_layout(&fresh, d, "discriminator")?;
        }
        Ok(())
    }
}

fn same_layout(a: &ParamStore<f32>, b: &ParamStore<f32>, what: &str) -> Result<()> {
    let la: Vec<(&str, &[usize])> = a.iter().map(|(n, t)| (n, t.shape())).collect();
    let lb: Vec<(&str, &[usize])> = b.iter().map(|(n, t)| (n, t.shape())).collect();
    if la != lb {
        return Err(Error::Checkpoint(format!(
            "{what} parameters do not match the stored architecture"
        )));
    }
    Ok(())
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds the format limit")))
}

fn write_store(out: &mut Vec<u8>, store: &ParamStore<f32>) -> Result<()> {
    out.extend_from_slice(&len_u32(store.len())?.to_le_bytes());
    for (name, t) in store.iter() {
        let n = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("parameter name `{name}` too long")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::Checkpoint("tensor rank too large".into()))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&len_u32(d)?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

fn read_store(r: &mut Reader<'_>) -> Result<ParamStore<f32>> {
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .filter(|&n| n <= r.remaining() / 4)
            .ok_or_else(|| Error::Checkpoint("checkpoint truncated".into()))?;
        let data = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store
            .insert(name, Tensor::new(shape, data)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(store)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
