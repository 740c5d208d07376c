//! Binary field snapshots.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "KHM1"
//! n            u32      points per axis
//! field_count  u32      number of vector fields
//! time         f64
//! param_count  u32
//! params       param_count × (u16 key length, UTF-8 key, f64 value)
//! names        field_count × (u16 name length, UTF-8 name)
//! data         field_count × 3 components × n³ f64, x fastest
//! ```

use super::{Grid, VectorField};
use crate::error::{KhmError, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"KHM1";

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub time: f64,
    pub params: Vec<(String, f64)>,
    pub fields: Vec<(String, VectorField)>,
}

impl Snapshot {
    pub fn grid(&self) -> Option<&Grid> {
        self.fields.first().map(|(_, f)| &f.grid)
    }

    pub fn field(&self, name: &str) -> Option<&VectorField> {
        self.fields.iter().find(|(k, _)| k == name).map(|(_, f)| f)
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let n = match self.grid() {
            Some(g) => g.n(),
            None => return Err(KhmError::Format("snapshot has no fields".into())),
        };
        if self.fields.iter().any(|(_, f)| f.grid.n() != n) {
            return Err(KhmError::Format("fields live on different grids".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&(n as u32).to_le_bytes())?;
        w.write_all(&(self.fields.len() as u32).to_le_bytes())?;
        w.write_all(&self.time.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (k, v) in &self.params {
            write_str(w, k)?;
            w.write_all(&v.to_le_bytes())?;
        }
        for (name, _) in &self.fields {
            write_str(w, name)?;
        }
        let mut buf = Vec::with_capacity(8 * n * n * n);
        for (_, f) in &self.fields {
            for c in &f.comps {
                buf.clear();
                for v in c {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Snapshot> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(KhmError::Format(format!("bad magic {magic:?}")));
        }
        let n = read_u32(r)? as usize;
        let count = read_u32(r)? as usize;
        let time = read_f64(r)?;
        let np = read_u32(r)? as usize;
        let mut params = Vec::with_capacity(np);
        for _ in 0..np {
            let k = read_str(r)?;
            params.push((k, read_f64(r)?));
        }
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            names.push(read_str(r)?);
        }
        let grid = Grid::new(n).map_err(|e| KhmError::Format(e.to_string()))?;
        let len = grid.len();
        let mut bytes = vec![0u8; 8 * len];
        let mut fields = Vec::with_capacity(count);
        for name in names {
            let mut comps: [Vec<f64>; 3] = Default::default();
            for c in comps.iter_mut() {
                r.read_exact(&mut bytes)?;
                *c = bytes
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
            }
            fields.push((name, VectorField { grid: grid.clone(), comps }));
        }
        Ok(Snapshot { time, params, fields })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Snapshot> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Snapshot::read_from(&mut r)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    let b = s.as_bytes();
    let len = u16::try_from(b.len()).map_err(|_| KhmError::Format(format!("name too long: {s}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    let mut s = vec![0u8; u16::from_le_bytes(b) as usize];
    r.read_exact(&mut s)?;
    String::from_utf8(s).map_err(|e| KhmError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bytes() {
        let g = Grid::new(8).unwrap();
        let b = VectorField::from_fn(&g, |p| [p[0].sin(), p[1], -p[2]]);
        let s = Snapshot {
            time: 0.25,
            params: vec![("d_i".into(), 1.0), ("eta".into(), 0.0)],
            fields: vec![("b".into(), b.clone())],
        };
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[0..4], b"KHM1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 8);
        let header = 4 + 4 + 4 + 8 + 4 + (2 + 3 + 8) + (2 + 3 + 8) + (2 + 1);
        assert_eq!(bytes.len(), header + 3 * 512 * 8);
        // first datum is b_x at the origin
        assert_eq!(f64::from_le_bytes(bytes[header..header + 8].try_into().unwrap()), 0.0);
        let back = Snapshot::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.time, 0.25);
        assert_eq!(back.param("d_i"), Some(1.0));
        assert_eq!(back.field("b").unwrap().comps, b.comps);
    }

    #[test]
    fn bad_magic() {
        let bytes = b"KHM2\0\0\0\0".to_vec();
        assert!(Snapshot::read_from(&mut bytes.as_slice()).is_err());
    }
}
