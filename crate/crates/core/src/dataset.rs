//! On-disk container of preprocessed spectrograms: a self-describing
//! header (analysis geometry, item count), length-prefixed named items
//! stored as little-endian `f32`, and a trailing CRC32. Items reload
//! bit-exactly; any truncation or corruption fails the checksum before
//! anything is returned.

use crate::autodiff::Tensor;
use crate::dsp::StftConfig;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"AVCDSET1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("checksum mismatch; file is corrupt or truncated")]
    Corrupt,
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub name: String,
    /// Magnitudes, `bins x frames`.
    pub spec: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramDataset {
    pub stft: StftConfig,
    pub sample_rate: u32,
    pub items: Vec<DatasetItem>,
}

impl SpectrogramDataset {
    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn total_frames(&self) -> usize {
        self.items.iter().map(|i| i.spec.cols()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        put_u32(&mut buf, self.stft.window_length as u32);
        put_u32(&mut buf, self.stft.hop as u32);
        put_u32(&mut buf, self.sample_rate);
        put_u32(&mut buf, self.items.len() as u32);
        let bins = self.bins();
        for item in &self.items {
            if item.spec.rank() != 2 || item.spec.rows() != bins {
                return Err(DatasetError::Malformed(format!(
                    "item {:?} has shape {:?}, expected [{bins} x frames]",
                    item.name,
                    item.spec.shape()
                )));
            }
            let name = item.name.as_bytes();
            put_u32(&mut buf, name.len() as u32);
            buf.extend_from_slice(name);
            put_u32(&mut buf, item.spec.cols() as u32);
            for &v in item.spec.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        put_u32(&mut buf, crc);
        std::fs::write(path, &buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < MAGIC.len() + 4 {
            return Err(DatasetError::Corrupt);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(DatasetError::Corrupt);
        }

        let mut cur = Cursor { buf: body, pos: 0 };
        if cur.take(8)? != MAGIC.as_slice() {
            return Err(DatasetError::BadMagic);
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(DatasetError::Version(version));
        }
        let window_length = cur.u32()? as usize;
        let hop = cur.u32()? as usize;
        let sample_rate = cur.u32()?;
        let stft = StftConfig::new(window_length, hop)
            .map_err(|e| DatasetError::Malformed(e.to_string()))?;
        let bins = stft.bins();
        let count = cur.u32()? as usize;
        let mut items = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| DatasetError::Malformed("item name is not UTF-8".into()))?;
            let frames = cur.u32()? as usize;
            let mut data = Vec::with_capacity(bins * frames);
            let raw = cur.take(bins * frames * 4)?;
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
            }
            let spec = Tensor::from_vec(&[bins, frames], data)
                .map_err(|e| DatasetError::Malformed(e.to_string()))?;
            items.push(DatasetItem { name, spec });
        }
        if cur.pos != body.len() {
            return Err(DatasetError::Malformed("trailing bytes".into()));
        }
        Ok(SpectrogramDataset {
            stft,
            sample_rate,
            items,
        })
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.pos + n > self.buf.len() {
            return Err(DatasetError::Malformed("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_dataset() -> SpectrogramDataset {
        let stft = StftConfig::new(128, 32).unwrap();
        let mut rng = Rng::seed_from(7);
        let items = (0..3)
            .map(|i| DatasetItem {
                name: format!("utt{i}.wav"),
                spec: Tensor::from_fn(&[65, 10 + i], |_| rng.uniform(0.0, 4.0) as f32),
            })
            .collect();
        SpectrogramDataset {
            stft,
            sample_rate: 22050,
            items,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.ds");
        let ds = sample_dataset();
        ds.save(&path).unwrap();
        let back = SpectrogramDataset::load(&path).unwrap();
        assert_eq!(ds, back);

        // identical content writes identical bytes
        let path2 = dir.path().join("corpus2.ds");
        ds.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.ds");
        sample_dataset().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let truncated = dir.path().join("trunc.ds");
        std::fs::write(&truncated, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            SpectrogramDataset::load(&truncated),
            Err(DatasetError::Corrupt)
        ));

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        let corrupt = dir.path().join("bad.ds");
        std::fs::write(&corrupt, &flipped).unwrap();
        assert!(matches!(
            SpectrogramDataset::load(&corrupt),
            Err(DatasetError::Corrupt)
        ));

        let not_ds = dir.path().join("other.bin");
        let mut alien = b"SOMEFILE".to_vec();
        alien.extend_from_slice(&[0u8; 16]);
        let crc = crc32fast::hash(&alien);
        alien.extend_from_slice(&crc.to_le_bytes());
        std::fs::write(&not_ds, &alien).unwrap();
        assert!(matches!(
            SpectrogramDataset::load(&not_ds),
            Err(DatasetError::BadMagic)
        ));
    }
}
