//! Binary checkpoint: `DRST0001`, channel plan, named f32 tensors, optimizer
//! state in the same framing, CRC32 trailer. All integers little-endian.

use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::nn::{AdaMaxState, ChannelPlan, NetParams, LAYER_NAMES};

const MAGIC: &[u8; 8] = b"DRST0001";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn tensor(&mut self, name: &str, dims: &[usize], data: &[f32]) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.u32(dims.len() as u32);
        dims.iter().for_each(|d| self.u32(*d as u32));
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        if self.pos + n > self.buf.len() {
            return Err("truncated file".into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> std::result::Result<(String, Vec<usize>, Vec<f32>), String> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let rank = self.u32()? as usize;
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let count: usize = dims.iter().product();
        let raw = self.take(count * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok((name, dims, data))
    }
}

pub fn encode(params: &NetParams<f32>, state: Option<&AdaMaxState<f32>>) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    let entries = params.plan.to_entries();
    w.u32(entries.len() as u32);
    entries.iter().for_each(|e| w.u32(*e));
    let tensors = params.tensors();
    w.u32(tensors.len() as u32);
    for (name, dims, data) in &tensors {
        w.tensor(name, dims, data);
    }
    match state {
        Some(s) => {
            w.0.extend_from_slice(&s.step.to_le_bytes());
            w.u32(2 * tensors.len() as u32);
            for (prefix, moments) in [("m", &s.m), ("u", &s.u)] {
                for ((name, dims, _), data) in tensors.iter().zip(moments) {
                    w.tensor(&format!("{prefix}.{name}"), dims, data);
                }
            }
        }
        None => {
            w.0.extend_from_slice(&0u64.to_le_bytes());
            w.u32(0);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(NetParams<f32>, Option<AdaMaxState<f32>>), String> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..8] != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { buf: body, pos: 8 };
    let n_entries = r.u32()? as usize;
    let entries = (0..n_entries).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
    let plan = ChannelPlan::from_entries(&entries).map_err(|e| e.to_string())?;
    let mut params = NetParams::<f32>::zeros(&plan);
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();

    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(format!("expected {} tensors, found {count}", expected.len()));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, dims) in &expected {
        let (n, d, data) = r.tensor()?;
        if &n != name || &d != dims {
            return Err(format!("tensor `{n}` {d:?} where `{name}` {dims:?} was expected"));
        }
        loaded.push(data);
    }
    for (dst, src) in params.tensors_mut().into_iter().zip(&loaded) {
        dst.copy_from_slice(src);
    }

    let step = r.u64()?;
    let n_state = r.u32()? as usize;
    let state = if n_state == 0 {
        None
    } else if n_state == 2 * expected.len() {
        let mut s = AdaMaxState::new(&params);
        s.step = step;
        for (prefix, moments) in [("m", &mut s.m), ("u", &mut s.u)] {
            for ((name, dims), slot) in expected.iter().zip(moments.iter_mut()) {
                let (n, d, data) = r.tensor()?;
                if n != format!("{prefix}.{name}") || &d != dims {
                    return Err(format!("optimizer tensor `{n}` out of place"));
                }
                *slot = data;
            }
        }
        Some(s)
    } else {
        return Err(format!("optimizer section has {n_state} tensors"));
    };
    if r.pos != body.len() {
        return Err("trailing bytes before checksum".into());
    }
    debug_assert_eq!(LAYER_NAMES.len() * 2, expected.len());
    Ok((params, state))
}

pub fn save_checkpoint(path: &Path, params: &NetParams<f32>, state: Option<&AdaMaxState<f32>>) -> Result<()> {
    let bytes = encode(params, state);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetParams<f32>, Option<AdaMaxState<f32>>)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes).map_err(|reason| Error::Data { path: path.to_path_buf(), reason })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_and_without_state() {
        let plan = ChannelPlan::tiny(4);
        let p = NetParams::<f32>::init(&plan, 7).unwrap();
        let mut s = AdaMaxState::new(&p);
        s.step = 12;
        s.m[3][0] = 0.5;
        s.u[5][1] = 2.0;
        let (p2, s2) = decode(&encode(&p, Some(&s))).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s2.unwrap(), s);
        let (p3, s3) = decode(&encode(&p, None)).unwrap();
        assert_eq!(p3, p);
        assert!(s3.is_none());
    }

    #[test]
    fn corruption_is_detected() {
        let p = NetParams::<f32>::init(&ChannelPlan::tiny(4), 7).unwrap();
        let mut bytes = encode(&p, None);
        assert_eq!(&bytes[..8], b"DRST0001");
        bytes[40] ^= 1;
        assert!(decode(&bytes).unwrap_err().contains("checksum"));
        assert!(decode(b"NOTACKPT0000").is_err());
    }
}
