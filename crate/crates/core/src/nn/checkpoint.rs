//! DIDC checkpoint container, little-endian throughout.
//!
//! ```text
//! "DIDC" | version u16
//! config text  (u32 length | UTF-8 key=value lines)
//! metadata     (u32 length | UTF-8)
//! tensor count u32
//!   per tensor: name (u16 length | bytes) | ndims u32 | dims u32.. | f32 data
//! adam step u64 | per tensor: first moment f32 data | second moment f32 data
//! rng: seed [u8; 32] | stream u64 | word position u128
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::{Adam, Model, ModelConfig, NnError, Tensor};

pub const DIDC_MAGIC: [u8; 4] = *b"DIDC";
pub const DIDC_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    pub rng: RngState,
    /// Producing run configuration.
    pub metadata: String,
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, NnError> {
        let mut buf = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(NnError::CorruptCheckpoint(format!("truncated in {what}")));
        }
        Ok(buf)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], NnError> {
        Ok(self.bytes(N, what)?.try_into().unwrap())
    }

    fn u16(&mut self, what: &str) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn text(&mut self, what: &str) -> Result<String, NnError> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.bytes(n, what)?).map_err(|_| NnError::CorruptCheckpoint(format!("{what} is not UTF-8")))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>, NnError> {
        let raw = self.bytes(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

fn put_floats<W: Write>(w: &mut W, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

impl Checkpoint {
    pub fn new(model: Model<f32>, metadata: impl Into<String>) -> Self {
        let adam = Adam::new(model.config.adam, &model);
        use rand::SeedableRng;
        let rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        Checkpoint {
            model,
            adam,
            rng: RngState::capture(&rng),
            metadata: metadata.into(),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        w.write_all(&DIDC_MAGIC)?;
        w.write_all(&DIDC_VERSION.to_le_bytes())?;
        for text in [self.model.config.to_text(), self.metadata.clone()] {
            w.write_all(&(text.len() as u32).to_le_bytes())?;
            w.write_all(text.as_bytes())?;
        }
        w.write_all(&(self.model.params.len() as u32).to_le_bytes())?;
        for t in &self.model.params {
            w.write_all(&(t.name.len() as u16).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
            for &d in &t.dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            put_floats(w, &t.data)?;
        }
        w.write_all(&self.adam.step.to_le_bytes())?;
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            put_floats(w, m)?;
            put_floats(w, v)?;
        }
        w.write_all(&self.rng.seed)?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, NnError> {
        let mut c = Cursor { inner: r };
        let magic: [u8; 4] = c.array("magic")?;
        if magic != DIDC_MAGIC {
            return Err(NnError::BadMagic(magic));
        }
        let version = c.u16("version")?;
        if version != DIDC_VERSION {
            return Err(NnError::VersionMismatch(version));
        }
        let config = ModelConfig::from_text(&c.text("config")?)?;
        let metadata = c.text("metadata")?;

        // The layout is fully determined by the config; verify the file agrees.
        let reference = Model::<f32>::new(config.clone())?;
        let count = c.u32("tensor count")? as usize;
        if count != reference.params.len() {
            return Err(NnError::CorruptCheckpoint(format!(
                "{count} tensors, config implies {}",
                reference.params.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for expected in &reference.params {
            let name_len = c.u16("tensor name")? as usize;
            let name = String::from_utf8(c.bytes(name_len, "tensor name")?)
                .map_err(|_| NnError::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
            let ndims = c.u32("tensor dims")? as usize;
            if ndims > 8 {
                return Err(NnError::CorruptCheckpoint(format!("{name}: {ndims} dims")));
            }
            let dims = (0..ndims)
                .map(|_| c.u32("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if name != expected.name || dims != expected.dims {
                return Err(NnError::CorruptCheckpoint(format!(
                    "tensor {name} {dims:?} where {} {:?} expected",
                    expected.name, expected.dims
                )));
            }
            let data = c.floats(expected.data.len(), &name)?;
            params.push(Tensor { name, dims, data });
        }
        let model = Model { config, params };
        let step = c.u64("adam step")?;
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for t in &model.params {
            m.push(c.floats(t.data.len(), "adam moments")?);
            v.push(c.floats(t.data.len(), "adam moments")?);
        }
        let adam = Adam {
            config: model.config.adam,
            m,
            v,
            step,
        };
        let seed: [u8; 32] = c.array("rng state")?;
        let stream = c.u64("rng state")?;
        let word_pos = u128::from_le_bytes(c.array("rng state")?);
        let mut extra = [0u8; 1];
        if c.inner.read(&mut extra)? != 0 {
            return Err(NnError::CorruptCheckpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            model,
            adam,
            rng: RngState { seed, stream, word_pos },
            metadata,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Checkpoint::read_from(BufReader::new(File::open(path)?))
    }
}
