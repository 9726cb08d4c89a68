//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RLNS" | u32 version | str kind | str config
//! | rng: [u8; 32] seed, u64 stream, u128 word position
//! | u32 n, n × (str name, u64 value)                    counters
//! | u32 n, n × (str name, u32 k, k × tensor)            sections
//! | u32 crc32 of everything before it
//! tensor = str name | u32 ndim | ndim × u64 dim | f64 payload
//! str    = u32 byte length | UTF-8 bytes
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RLNS";
pub const VERSION: u32 = 1;
const MAX_NDIM: usize = 8;

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
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

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// What the file holds, e.g. `vae1` or `mapping`.
    pub kind: String,
    /// The resolved training configuration as `key = value` lines.
    pub config: String,
    pub rng: RngState,
    pub counters: BTreeMap<String, u64>,
    pub sections: BTreeMap<String, ParamSet>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Result<&ParamSet> {
        self.sections.get(name).ok_or_else(|| Error::Checkpoint {
            field: "section",
            detail: format!("missing section `{name}` in {} checkpoint", self.kind),
        })
    }

    pub fn counter(&self, name: &str) -> Result<u64> {
        self.counters
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint {
                field: "counter",
                detail: format!("missing counter `{name}` in {} checkpoint", self.kind),
            })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Checkpoint {
                field: "kind",
                detail: format!("expected a {kind} checkpoint, found {}", self.kind),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.config);
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.counters.len() as u32).to_le_bytes());
        for (k, v) in &self.counters {
            put_str(&mut out, k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, ps) in &self.sections {
            put_str(&mut out, name);
            out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
            for (k, t) in ps.iter() {
                put_str(&mut out, k);
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint {
                field: "magic",
                detail: "not a checkpoint file".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let kind = r.string("kind")?;
        let config = r.string("config")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos =
            u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        let mut counters = BTreeMap::new();
        for _ in 0..r.u32("counter count")? {
            let name = r.string("counter name")?;
            counters.insert(name, r.u64("counter value")?);
        }
        let mut sections = BTreeMap::new();
        for _ in 0..r.u32("section count")? {
            let name = r.string("section name")?;
            let mut ps = ParamSet::new();
            for _ in 0..r.u32("tensor count")? {
                let tname = r.string("tensor name")?;
                let ndim = r.u32("tensor rank")? as usize;
                if ndim == 0 || ndim > MAX_NDIM {
                    return Err(Error::Checkpoint {
                        field: "tensor rank",
                        detail: format!("`{tname}` has rank {ndim}"),
                    });
                }
                let mut shape = Vec::with_capacity(ndim);
                let mut numel: usize = 1;
                for _ in 0..ndim {
                    let d = usize::try_from(r.u64("tensor dim")?)
                        .ok()
                        .filter(|&d| d > 0);
                    let d = d.ok_or_else(|| Error::Checkpoint {
                        field: "tensor dim",
                        detail: format!("`{tname}` has an invalid extent"),
                    })?;
                    numel = numel.checked_mul(d).ok_or_else(|| Error::Checkpoint {
                        field: "tensor dim",
                        detail: format!("`{tname}` is too large"),
                    })?;
                    shape.push(d);
                }
                let raw = r.take(numel.checked_mul(8).unwrap_or(usize::MAX), "tensor data")?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                ps.insert(tname, Tensor::new(shape, data)?);
            }
            sections.insert(name, ps);
        }
        let body_end = r.pos;
        let crc = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint {
                field: "trailer",
                detail: format!("{} unexpected trailing bytes", bytes.len() - r.pos),
            });
        }
        let actual = crc32fast::hash(&bytes[..body_end]);
        if crc != actual {
            return Err(Error::Checkpoint {
                field: "checksum",
                detail: format!("stored {crc:08x}, computed {actual:08x}"),
            });
        }
        Ok(Checkpoint {
            kind,
            config,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            counters,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint {
            field,
            detail: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, field)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, field)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, field: &'static str) -> Result<String> {
        let n = self.u32(field)? as usize;
        let raw = self.take(n, field)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint {
            field,
            detail: "invalid UTF-8".into(),
        })
    }
}
