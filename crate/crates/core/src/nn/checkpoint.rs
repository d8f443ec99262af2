//! Versioned binary checkpoints.
//!
//! Parameter file:
//!
//! ```text
//! magic    8 bytes   "RECTDN01"
//! version  u32 LE    1
//! table    u32 LE    byte length of the layout table, then the table
//! count    u64 LE    parameter count
//! values   count x f64 LE
//! crc32    u32 LE    over every preceding byte
//! ```
//!
//! Optimizer state uses the same framing with magic `"RECTAD01"`.

use std::path::Path;

use super::adam::AdamState;
use super::denoiser::{DenoiserParams, Layout};
use crate::files::write_atomic;
use crate::{Error, Result};

const PARAM_MAGIC: &[u8; 8] = b"RECTDN01";
const ADAM_MAGIC: &[u8; 8] = b"RECTAD01";
const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn seal(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn open<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<Reader<'a>> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != magic {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    Ok(r)
}

pub fn encode_params(params: &DenoiserParams) -> Vec<u8> {
    let table = params.layout().descriptor_bytes();
    let mut out = Vec::with_capacity(32 + table.len() + params.count() * 8);
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&table);
    out.extend_from_slice(&(params.count() as u64).to_le_bytes());
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    seal(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<DenoiserParams> {
    let mut r = open(bytes, PARAM_MAGIC)?;
    let table_len = r.u32()? as usize;
    let layout = Layout::from_descriptor_bytes(r.take(table_len)?)?;
    let count = r.u64()? as usize;
    if count != layout.param_count() {
        return Err(Error::Checkpoint(format!(
            "stored {count} parameters, layout needs {}",
            layout.param_count()
        )));
    }
    let values = r.f64s(count)?;
    if r.pos != r.buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    DenoiserParams::from_values(layout, values)
}

pub fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + state.m.len() * 16);
    out.extend_from_slice(ADAM_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    for v in [state.beta1, state.beta2, state.lr, state.eps_hat] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(state.m.len() as u64).to_le_bytes());
    for v in state.m.iter().chain(&state.v) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    seal(out)
}

pub fn decode_adam(bytes: &[u8]) -> Result<AdamState> {
    let mut r = open(bytes, ADAM_MAGIC)?;
    let step = r.u64()?;
    let h = r.f64s(4)?;
    let n = r.u64()? as usize;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    Ok(AdamState {
        m,
        v,
        step,
        beta1: h[0],
        beta2: h[1],
        lr: h[2],
        eps_hat: h[3],
    })
}

pub fn save_params(path: &Path, params: &DenoiserParams) -> Result<()> {
    write_atomic(path, &encode_params(params))
}

pub fn load_params(path: &Path) -> Result<DenoiserParams> {
    decode_params(&std::fs::read(path)?)
}

pub fn save_adam(path: &Path, state: &AdamState) -> Result<()> {
    write_atomic(path, &encode_adam(state))
}

pub fn load_adam(path: &Path) -> Result<AdamState> {
    decode_adam(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn params_round_trip_and_corruption() {
        let p = DenoiserParams::init(Layout::unet(2, [4, 6, 8], 8, true).unwrap(), 9);
        let bytes = encode_params(&p);
        let back = decode_params(&bytes).unwrap();
        assert_eq!(back.values(), p.values());
        assert_eq!(back.count(), p.count());
        assert_eq!(back.layout(), p.layout());

        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(decode_params(&bad).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_params(&bad).is_err());
    }

    proptest! {
        #[test]
        fn adam_round_trip(step in 0u64..10_000, vals in proptest::collection::vec(-1e3f64..1e3, 1..40), lr in 1e-6f64..1.0) {
            let mut s = AdamState::new(vals.len(), lr);
            s.step = step;
            s.m = vals.clone();
            s.v = vals.iter().map(|v| v * v).collect();
            prop_assert_eq!(decode_adam(&encode_adam(&s)).unwrap(), s);
        }
    }
}
