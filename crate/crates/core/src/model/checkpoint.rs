//! Versioned binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes  "TIDALCKP"
//! version          u32      currently 1
//! embedding_size   u32      d
//! stocks           u32      cross-section size seen in training (informational)
//! input_size       u32      feature width (360 for Alpha360)
//! seed             u64      seed used to initialize the parameters
//! flags            u32      bit 0: separate combiner weights
//! block_count      u32
//! block_count × {
//!     name_len     u16
//!     name         name_len bytes, UTF-8
//!     rows         u32
//!     cols         u32
//!     values       rows·cols f64, row-major
//! }
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{ModelParameters, Param};

pub const MAGIC: &[u8; 8] = b"TIDALCKP";
pub const FORMAT_VERSION: u32 = 1;
const FLAG_SEPARATE_HEADS: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub stocks: u32,
}

impl Checkpoint {
    pub fn new(params: ModelParameters, stocks: usize) -> Self {
        Self {
            params,
            stocks: stocks as u32,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let p = &self.params;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(p.embedding_size as u32)?;
        w.write_u32::<LittleEndian>(self.stocks)?;
        w.write_u32::<LittleEndian>(p.input_size as u32)?;
        w.write_u64::<LittleEndian>(p.seed)?;
        w.write_u32::<LittleEndian>(if p.separate_head_weights {
            FLAG_SEPARATE_HEADS
        } else {
            0
        })?;
        w.write_u32::<LittleEndian>(Param::ALL.len() as u32)?;
        for (param, block) in p.blocks() {
            let name = param.name().as_bytes();
            w.write_u16::<LittleEndian>(name.len() as u16)?;
            w.write_all(name)?;
            w.write_u32::<LittleEndian>(block.nrows() as u32)?;
            w.write_u32::<LittleEndian>(block.ncols() as u32)?;
            for v in block.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let d = r.read_u32::<LittleEndian>()? as usize;
        let stocks = r.read_u32::<LittleEndian>()?;
        let input = r.read_u32::<LittleEndian>()? as usize;
        let seed = r.read_u64::<LittleEndian>()?;
        let flags = r.read_u32::<LittleEndian>()?;
        let separate = flags & FLAG_SEPARATE_HEADS != 0;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut blocks: Vec<Option<Array2<f64>>> = vec![None; Param::ALL.len()];
        for _ in 0..count {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Malformed("non-UTF-8 block name".into()))?;
            let param = Param::from_name(&name)
                .ok_or_else(|| CheckpointError::Malformed(format!("unknown block {name:?}")))?;
            let rows = r.read_u32::<LittleEndian>()? as usize;
            let cols = r.read_u32::<LittleEndian>()? as usize;
            if (rows, cols) != param.shape(input, d, separate) {
                return Err(CheckpointError::Malformed(format!(
                    "block {name} has shape {rows}×{cols}"
                )));
            }
            let mut values = vec![0.0; rows * cols];
            r.read_f64_into::<LittleEndian>(&mut values)?;
            let block = Array2::from_shape_vec((rows, cols), values).expect("shape checked");
            if blocks[param as usize].replace(block).is_some() {
                return Err(CheckpointError::Malformed(format!(
                    "block {name} appears twice"
                )));
            }
        }
        let blocks: Vec<Array2<f64>> = blocks
            .into_iter()
            .zip(Param::ALL)
            .map(|(b, p)| {
                b.ok_or_else(|| CheckpointError::Malformed(format!("missing block {}", p.name())))
            })
            .collect::<Result<_, _>>()?;
        let params = ModelParameters::from_blocks(input, d, separate, seed, blocks)
            .map_err(CheckpointError::Malformed)?;
        Ok(Self { params, stocks })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(io::BufReader::new(fs::File::open(path)?))
    }
}
