//! Binary checkpoint of a masked ansatz.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NQSP" u32 version
//! u8 arch kind (0 ffnn: u32 inputs, u32 hidden | 1 cnn: u32 side, u32 channels, u32 filters, u32 kernel)
//! u8 lattice kind (0 square | 1 toric), u32 L, u8 boundary (0 open | 1 periodic)
//! u64 n_init, u64 ones
//! n_init × f64 parameters
//! ceil(n_init / 8) bytes mask, least significant bit first
//! u64 iteration
//! u32 len + config hash (ASCII hex)
//! u32 count + count × (u64 seed, u64 stream, u128 word_pos)
//! 32-byte SHA-256 of everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::ansatz::{Architecture, Mask, MaskedAnsatz, ParameterVector};
use crate::error::{NqsError, Result};
use crate::lattice::{Boundary, Lattice, SquareLattice, ToricLattice};
use crate::rng::StreamState;

pub const MAGIC: &[u8; 4] = b"NQSP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub lattice: Lattice,
    pub ansatz: MaskedAnsatz,
    /// Pruning iteration the state belongs to; 0 for `init` and `rewind`.
    pub iteration: u64,
    pub config_hash: String,
    /// Streams the next phase starts from.
    pub streams: Vec<StreamState>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + 9 * self.ansatz.n_params());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        let u32_ = |b: &mut Vec<u8>, v: usize| b.extend_from_slice(&(v as u32).to_le_bytes());
        match *self.ansatz.architecture() {
            Architecture::Ffnn { inputs, hidden } => {
                b.push(0);
                u32_(&mut b, inputs);
                u32_(&mut b, hidden);
            }
            Architecture::Cnn {
                side,
                channels,
                filters,
                kernel,
            } => {
                b.push(1);
                u32_(&mut b, side);
                u32_(&mut b, channels);
                u32_(&mut b, filters);
                u32_(&mut b, kernel);
            }
        }
        match &self.lattice {
            Lattice::Square(l) => {
                b.push(0);
                u32_(&mut b, l.side());
                b.push(match l.boundary() {
                    Boundary::Open => 0,
                    Boundary::Periodic => 1,
                });
            }
            Lattice::Toric(l) => {
                b.push(1);
                u32_(&mut b, l.side());
                b.push(1);
            }
        }
        b.extend_from_slice(&(self.ansatz.n_params() as u64).to_le_bytes());
        b.extend_from_slice(&(self.ansatz.mask().ones() as u64).to_le_bytes());
        for p in self.ansatz.params() {
            b.extend_from_slice(&p.to_le_bytes());
        }
        b.extend_from_slice(&self.ansatz.mask().to_packed());
        b.extend_from_slice(&self.iteration.to_le_bytes());
        u32_(&mut b, self.config_hash.len());
        b.extend_from_slice(self.config_hash.as_bytes());
        u32_(&mut b, self.streams.len());
        for s in &self.streams {
            b.extend_from_slice(&s.seed.to_le_bytes());
            b.extend_from_slice(&s.stream.to_le_bytes());
            b.extend_from_slice(&s.word_pos.to_le_bytes());
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let arch = match r.u8()? {
            0 => Architecture::Ffnn {
                inputs: r.u32()? as usize,
                hidden: r.u32()? as usize,
            },
            1 => Architecture::Cnn {
                side: r.u32()? as usize,
                channels: r.u32()? as usize,
                filters: r.u32()? as usize,
                kernel: r.u32()? as usize,
            },
            k => return Err(corrupt(&format!("unknown architecture kind {k}"))),
        };
        let kind = r.u8()?;
        let side = r.u32()? as usize;
        let boundary = r.u8()?;
        let lattice = match (kind, boundary) {
            (0, 0) => Lattice::Square(SquareLattice::new(side, Boundary::Open)?),
            (0, 1) => Lattice::Square(SquareLattice::new(side, Boundary::Periodic)?),
            (1, 1) => Lattice::Toric(ToricLattice::new(side)?),
            _ => return Err(corrupt(&format!("bad lattice descriptor ({kind}, {boundary})"))),
        };
        if arch.n_inputs() != lattice.n_sites() {
            return Err(corrupt("architecture does not match lattice"));
        }
        let n = r.u64()? as usize;
        let ones = r.u64()? as usize;
        if n != arch.n_params() {
            return Err(corrupt(&format!(
                "parameter count {n} does not match architecture ({})",
                arch.n_params()
            )));
        }
        let params = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mask = Mask::from_packed(r.take(n.div_ceil(8))?, n)?;
        if mask.ones() != ones {
            return Err(corrupt("mask population does not match header"));
        }
        let iteration = r.u64()?;
        let hash_len = r.u32()? as usize;
        let config_hash = String::from_utf8(r.take(hash_len)?.to_vec()).map_err(|_| corrupt("config hash is not UTF-8"))?;
        let count = r.u32()? as usize;
        let mut streams = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            streams.push(StreamState {
                seed: r.u64()?,
                stream: r.u64()?,
                word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
            });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        let ansatz = MaskedAnsatz::new(arch, ParameterVector(params), mask)
            .map_err(|e| corrupt(&format!("invalid state: {e}")))?;
        Ok(Checkpoint {
            lattice,
            ansatz,
            iteration,
            config_hash,
            streams,
        })
    }

    /// Writes through a temporary file and renames, so a reader never sees a
    /// partial checkpoint.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("nqsp.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.encode())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| NqsError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes).map_err(|e| match e {
            NqsError::Checkpoint(m) => NqsError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn corrupt(msg: &str) -> NqsError {
    NqsError::Checkpoint(msg.to_string())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
