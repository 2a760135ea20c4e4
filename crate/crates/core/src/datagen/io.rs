//! Binary dataset dump.
//!
//! All integers and floats are little-endian; floats are raw IEEE-754 bits so
//! a dump round-trips exactly.
//!
//! ```text
//! magic        8 bytes  "FEDSIMD1"
//! num_clients  u32
//! dim          u32
//! num_classes  u32
//! per client:
//!   has_feat   u8 (0 or 1)
//!   [feat_len  u32, feat_len x f64]   when has_feat = 1
//!   count      u64
//!   count x example
//! test count   u64
//! test count x example
//!
//! example: label u32, dim x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Example, FederatedDataset};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FEDSIMD1";

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stream>", e)
}

fn write_examples<W: Write>(w: &mut W, examples: &[Example]) -> std::io::Result<()> {
    w.write_all(&(examples.len() as u64).to_le_bytes())?;
    for e in examples {
        w.write_all(&(e.y as u32).to_le_bytes())?;
        for v in &e.x {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_dataset<W: Write>(w: &mut W, d: &FederatedDataset) -> Result<()> {
    d.validate()?;
    let mut inner = || -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(d.num_clients() as u32).to_le_bytes())?;
        w.write_all(&(d.dim as u32).to_le_bytes())?;
        w.write_all(&(d.num_classes as u32).to_le_bytes())?;
        for (k, examples) in d.clients.iter().enumerate() {
            match &d.client_features[k] {
                Some(f) => {
                    w.write_all(&[1])?;
                    w.write_all(&(f.len() as u32).to_le_bytes())?;
                    for v in f {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                None => w.write_all(&[0])?,
            }
            write_examples(w, examples)?;
        }
        write_examples(w, &d.test_set)
    };
    inner().map_err(io_err)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Parse(format!("truncated dataset dump: {e}")))?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn examples(&mut self, dim: usize) -> Result<Vec<Example>> {
        let n = self.u64()?;
        let mut out = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let y = self.u32()?;
            let x = (0..dim).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            out.push(Example { x, y });
        }
        Ok(out)
    }
}

pub fn read_dataset<R: Read>(r: R) -> Result<FederatedDataset> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::Parse("not a dataset dump (bad magic)".into()));
    }
    let num_clients = r.u32()?;
    let dim = r.u32()?;
    let num_classes = r.u32()?;
    let mut clients = Vec::with_capacity(num_clients);
    let mut client_features = Vec::with_capacity(num_clients);
    for _ in 0..num_clients {
        let features = match r.u8()? {
            0 => None,
            1 => {
                let len = r.u32()?;
                Some((0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?)
            }
            b => return Err(Error::Parse(format!("bad feature flag {b}"))),
        };
        client_features.push(features);
        clients.push(r.examples(dim)?);
    }
    let test_set = r.examples(dim)?;
    let d = FederatedDataset {
        num_classes,
        dim,
        clients,
        test_set,
        client_features,
    };
    d.validate()?;
    Ok(d)
}

pub fn save_dataset(path: &Path, d: &FederatedDataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_dataset(&mut w, d)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<FederatedDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f))
}
