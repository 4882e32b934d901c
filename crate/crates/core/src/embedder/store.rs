//! Precomputed embeddings and their binary interchange format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CSEB" | u32 version = 1 | u32 dim | u64 count
//! count × ( u8 namespace {0 = post, 1 = fact_check} | u64 id | dim × f32 )
//! ```
//!
//! The provenance tag is not part of the format; it travels in a sidecar
//! `<file>.provenance` text file next to the embeddings.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::vector::Vector;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSEB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Namespace {
    Post = 0,
    FactCheck = 1,
}

impl Namespace {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Post),
            1 => Some(Self::FactCheck),
            _ => None,
        }
    }
}

/// Where a store's vectors came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Baseline,
    File(PathBuf),
    Remote { endpoint: String, model: String },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Baseline => f.write_str("baseline"),
            Provenance::File(p) => write!(f, "file:{}", p.display()),
            Provenance::Remote { endpoint, model } => write!(f, "remote:{endpoint}#{model}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "baseline" {
            Ok(Provenance::Baseline)
        } else if let Some(p) = s.strip_prefix("file:") {
            Ok(Provenance::File(PathBuf::from(p)))
        } else if let Some(r) = s.strip_prefix("remote:") {
            let (endpoint, model) = r
                .split_once('#')
                .ok_or_else(|| Error::Config(format!("remote provenance `{s}` lacks a model")))?;
            Ok(Provenance::Remote {
                endpoint: endpoint.to_owned(),
                model: model.to_owned(),
            })
        } else {
            Err(Error::Config(format!("unknown provenance `{s}`")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    provenance: Provenance,
    vectors: BTreeMap<(Namespace, u64), Vector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, provenance: Provenance) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::Contract(format!("invalid embedding dimension {dim}")));
        }
        Ok(Self {
            dim,
            provenance,
            vectors: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, ns: Namespace, id: u64, v: Vector) -> Result<()> {
        if v.dim() != self.dim {
            return Err(Error::Contract(format!(
                "vector for {ns:?} {id} has dim {}, store dim is {}",
                v.dim(),
                self.dim
            )));
        }
        if self.vectors.insert((ns, id), v).is_some() {
            return Err(Error::DuplicateId {
                kind: match ns {
                    Namespace::Post => "post embedding",
                    Namespace::FactCheck => "fact_check embedding",
                },
                id,
            });
        }
        Ok(())
    }

    pub fn get(&self, ns: Namespace, id: u64) -> Option<&Vector> {
        self.vectors.get(&(ns, id))
    }

    pub fn contains(&self, ns: Namespace, id: u64) -> bool {
        self.vectors.contains_key(&(ns, id))
    }

    /// Normalized vector for a record id.
    pub fn embed(&self, ns: Namespace, id: u64) -> Result<Vector> {
        self.get(ns, id)
            .map(Vector::normalized)
            .ok_or_else(|| Error::Lookup(format!("no embedding for {ns:?} {id}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Namespace, u64, &Vector)> {
        self.vectors.iter().map(|(&(ns, id), v)| (ns, id, v))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.vectors.len() as u64).to_le_bytes())?;
        for (&(ns, id), v) in &self.vectors {
            out.write_all(&[ns as u8])?;
            out.write_all(&id.to_le_bytes())?;
            for c in v.as_slice() {
                out.write_all(&c.to_le_bytes())?;
            }
        }
        out.flush()
    }

    /// Decode a store. The caller supplies the provenance, since it is not
    /// part of the binary format.
    pub fn read_from<R: Read>(input: R, provenance: Provenance) -> Result<Self> {
        let mut r = OffsetReader { inner: input, offset: 0 };
        let mut magic = [0u8; 4];
        r.fill(&mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:?}"),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let dim = r.u32("dim")? as usize;
        if dim == 0 {
            return Err(Error::Format {
                offset: 8,
                message: "dimension is zero".into(),
            });
        }
        let count = r.u64("count")?;
        let mut store = EmbeddingStore::new(dim, provenance)?;
        let mut buf = vec![0u8; dim * 4];
        for _ in 0..count {
            let at = r.offset;
            let mut nsb = [0u8; 1];
            r.fill(&mut nsb, "namespace")?;
            let ns = Namespace::from_byte(nsb[0]).ok_or_else(|| Error::Format {
                offset: at,
                message: format!("invalid namespace byte {}", nsb[0]),
            })?;
            let id = r.u64("id")?;
            let vec_at = r.offset;
            r.fill(&mut buf, "vector")?;
            let comps: Vec<f32> = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let v = Vector::new(comps).map_err(|e| Error::Format {
                offset: vec_at,
                message: e.to_string(),
            })?;
            store.insert(ns, id, v).map_err(|e| Error::Format {
                offset: at,
                message: e.to_string(),
            })?;
        }
        let mut probe = [0u8; 1];
        match r.inner.read(&mut probe) {
            Ok(0) => Ok(store),
            Ok(_) => Err(Error::Format {
                offset: r.offset,
                message: "trailing bytes after last record".into(),
            }),
            Err(e) => Err(Error::io("<embeddings>", e)),
        }
    }

    /// Write the store and its provenance sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))?;
        let side = sidecar(path);
        std::fs::write(&side, format!("{}\n", self.provenance)).map_err(|e| Error::io(side, e))
    }

    /// Read a store. Without a sidecar, provenance is `file:<path>`.
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar(path);
        let provenance = match std::fs::read_to_string(&side) {
            Ok(s) => s.parse()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Provenance::File(path.to_owned()),
            Err(e) => return Err(Error::io(side, e)),
        };
        Self::read_from(BufReader::with_capacity(1 << 20, f), provenance)
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance");
    PathBuf::from(s)
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(Error::Format {
                        offset: self.offset + got as u64,
                        message: format!("truncated while reading {what}"),
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io("<embeddings>", e)),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}
