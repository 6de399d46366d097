//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"FPFM1"  u32 version
//! u32 len, utf-8 model kind
//! u32 n  u32 k  u32 net count
//! per net: u8 activation, u32 layer count + 1, u32 dims…, u64 param count, f64 params…
//! u32 len, utf-8 config snapshot (TOML)
//! u64 seed
//! ```

use std::path::Path;

use fpfm_core::baselines::{ConditionalModel, NetField};
use fpfm_core::basis::{BasisFunctions, BasisSet};
use fpfm_core::nn::{Activation, Mlp};

use crate::error::CliError;
use crate::method::ModelKind;

pub const MAGIC: &[u8; 5] = b"FPFM1";
pub const VERSION: u32 = 1;

/// Anything the training stage produces.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Basis(ModelKind, BasisSet),
    Unconditional(NetField),
    Conditional(ConditionalModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Basis(kind, _) => *kind,
            TrainedModel::Unconditional(_) => ModelKind::Unconditional,
            TrainedModel::Conditional(_) => ModelKind::Conditional,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub config: String,
    pub seed: u64,
}

impl Checkpoint {
    fn nets(&self) -> (usize, usize, Vec<&Mlp>) {
        match &self.model {
            TrainedModel::Basis(_, b) => {
                let mut nets = vec![&b.net];
                nets.extend(b.mean_field.as_ref());
                (b.n(), b.k(), nets)
            }
            TrainedModel::Unconditional(f) => (f.net.output_dim(), 0, vec![&f.net]),
            TrainedModel::Conditional(c) => (c.net.output_dim(), 0, vec![&c.net]),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, self.model.kind().name());
        let (n, k, nets) = self.nets();
        put_u32(&mut out, n);
        put_u32(&mut out, k);
        put_u32(&mut out, nets.len());
        for net in nets {
            out.push(net.activation().tag());
            put_u32(&mut out, net.dims().len());
            for &d in net.dims() {
                put_u32(&mut out, d);
            }
            out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
            for p in net.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        put_str(&mut out, &self.config);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(CliError::Checkpoint("not an FPFM checkpoint".into()));
        }
        let version = r.u32()?;
        if version > VERSION {
            return Err(CliError::Checkpoint(format!(
                "checkpoint version {version} is newer than the supported version {VERSION}"
            )));
        }
        if version == 0 {
            return Err(CliError::Checkpoint("checkpoint version 0 is invalid".into()));
        }
        let kind_name = r.string()?;
        let kind = ModelKind::parse(&kind_name)
            .ok_or_else(|| CliError::Checkpoint(format!("unknown model kind {kind_name:?}")))?;
        let n = r.u32()? as usize;
        let k = r.u32()? as usize;
        let count = r.u32()? as usize;
        if count == 0 || count > 2 {
            return Err(CliError::Checkpoint(format!("unexpected network count {count}")));
        }
        let mut nets = Vec::with_capacity(count);
        for _ in 0..count {
            let tag = r.take(1)?[0];
            let act = Activation::from_tag(tag)
                .ok_or_else(|| CliError::Checkpoint(format!("unknown activation tag {tag}")))?;
            let ndims = r.u32()? as usize;
            let dims = (0..ndims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let np = r.u64()? as usize;
            if np.checked_mul(8).map_or(true, |b| b > r.remaining()) {
                return Err(truncated());
            }
            let params = (0..np).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            nets.push(Mlp::from_params(&dims, act, params).map_err(|e| CliError::Checkpoint(format!("corrupt network: {e}")))?);
        }
        let config = r.string()?;
        let seed = r.u64()?;
        if r.remaining() != 0 {
            return Err(CliError::Checkpoint(format!("{} trailing bytes after checkpoint", r.remaining())));
        }
        let corrupt = |e: fpfm_core::Error| CliError::Checkpoint(format!("corrupt checkpoint: {e}"));
        let mut nets = nets.into_iter();
        let first = nets.next().expect("count >= 1");
        let model = match kind {
            ModelKind::StaticBasis | ModelKind::TemporalBasis | ModelKind::DynamicBasis => {
                TrainedModel::Basis(kind, BasisSet::from_parts(n, k, first, nets.next()).map_err(corrupt)?)
            }
            ModelKind::Unconditional => {
                TrainedModel::Unconditional(NetField::new(first, None, "unconditional").map_err(corrupt)?)
            }
            ModelKind::Conditional => TrainedModel::Conditional(ConditionalModel { net: first }),
        };
        Ok(Self { model, config, seed })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Checkpoint(m) => CliError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(u32::try_from(v).expect("fits in u32")).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn truncated() -> CliError {
    CliError::Checkpoint("truncated checkpoint".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if n > self.remaining() {
            return Err(truncated());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CliError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| CliError::Checkpoint("invalid utf-8 in checkpoint".into()))
    }
}
