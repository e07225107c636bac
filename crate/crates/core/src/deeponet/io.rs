//! Model files: magic `NOM1`, version `u32 = 1`, `m_enc u32`, `p u32`, branch layer
//! count `u32` and widths `u32[]`, trunk layer count and widths, then every weight
//! matrix (row-major, branch layers first), every bias vector in the same order, the
//! normalization mean and scale, and finally `b1, b2`. Little-endian throughout.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{DeepONet, Dense, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NOM1";
pub const VERSION: u32 = 1;
const MAX_WIDTH: usize = 1 << 20;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "model file truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
        Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }

    fn widths(&mut self, what: &str) -> Result<Vec<usize>> {
        let count = self.u32(what)?;
        if !(2..=64).contains(&count) {
            return Err(Error::Format(format!("{what}: implausible layer count {count}")));
        }
        let w = (0..count).map(|_| self.u32(what)).collect::<Result<Vec<_>>>()?;
        if w.iter().any(|&v| v == 0 || v > MAX_WIDTH) {
            return Err(Error::Format(format!("{what}: invalid widths {w:?}")));
        }
        Ok(w)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s<'a>(out: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f64>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl DeepONet {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(8 * self.parameter_count() + 256);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        put_u32(&mut out, self.m_enc)?;
        put_u32(&mut out, self.p)?;
        for net in [&self.branch, &self.trunk] {
            let w = net.widths();
            put_u32(&mut out, w.len())?;
            for v in w {
                put_u32(&mut out, v)?;
            }
        }
        let layers = || self.branch.layers.iter().chain(&self.trunk.layers);
        for l in layers() {
            // Standard layout, so iteration order is row-major.
            put_f64s(&mut out, l.w.iter());
        }
        for l in layers() {
            put_f64s(&mut out, l.b.iter());
        }
        put_f64s(&mut out, &self.mean);
        put_f64s(&mut out, &self.scale);
        put_f64s(&mut out, [&self.b1, &self.b2]);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"NOM1\"")));
        }
        let version = r.u32("version")?;
        if version != VERSION as usize {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let m_enc = r.u32("m_enc")?;
        let p = r.u32("p")?;
        if m_enc < 2 || p == 0 || m_enc > MAX_WIDTH || p > MAX_WIDTH {
            return Err(Error::Format(format!("invalid m_enc = {m_enc} or p = {p}")));
        }
        let bw = r.widths("branch widths")?;
        let tw = r.widths("trunk widths")?;
        let mut weights = Vec::new();
        for w in bw.windows(2).chain(tw.windows(2)) {
            let vals = r.f64s(w[0] * w[1], "weights")?;
            weights.push(Array2::from_shape_vec((w[1], w[0]), vals).unwrap());
        }
        let mut layers = Vec::new();
        for (w, mat) in bw.windows(2).chain(tw.windows(2)).zip(weights) {
            layers.push(Dense {
                w: mat,
                b: Array1::from(r.f64s(w[1], "biases")?),
            });
        }
        let trunk_layers = layers.split_off(bw.len() - 1);
        let f = 5 * m_enc + 1;
        let mean = r.f64s(f, "normalization mean")?;
        let scale = r.f64s(f, "normalization scale")?;
        let b = r.f64s(2, "output biases")?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "size mismatch: {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let fmt = |e: Error| Error::Format(format!("inconsistent model: {e}"));
        DeepONet::from_parts(
            m_enc,
            p,
            Mlp::from_layers(layers).map_err(fmt)?,
            Mlp::from_layers(trunk_layers).map_err(fmt)?,
            b[0],
            b[1],
            Some((mean, scale)),
        )
        .map_err(fmt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Architecture;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = DeepONet::new(&Architecture::small(4, 3, 5), 8).unwrap();
        m.set_normalization((0..21).map(|i| i as f64 * 0.1).collect(), vec![0.5; 21]).unwrap();
        m.parameters_mut().last_mut().unwrap()[0] = -0.25;
        let bytes = m.to_bytes().unwrap();
        let back = DeepONet::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(&bytes[..4], b"NOM1");
        // 4 magic + 3 u32 + (1 + 4) branch + (1 + 4) trunk widths.
        let header = 4 + 4 * 3 + 4 * 5 + 4 * 5;
        assert_eq!(bytes.len(), header + 8 * (m.parameter_count() + 2 * 21));
    }

    #[test]
    fn corrupt_models_rejected() {
        let bytes = DeepONet::new(&Architecture::small(3, 2, 4), 1).unwrap().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[3] = b'2';
        assert!(matches!(DeepONet::from_bytes(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(DeepONet::from_bytes(&bad), Err(Error::Format(m)) if m.contains("version")));
        for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(DeepONet::from_bytes(&bytes[..cut]), Err(Error::Format(m)) if m.contains("truncated")));
        }
        let mut long = bytes.clone();
        long.extend_from_slice(&[0; 8]);
        assert!(DeepONet::from_bytes(&long).is_err());
    }
}
