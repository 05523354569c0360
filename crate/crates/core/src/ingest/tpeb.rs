//! Binary embedding dump format.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! header:   b"TPEB"  u32 version  u32 dim
//! sentence: u16 id_len  id (UTF-8)  u32 len
//!           len x u8 token kind (0 word-piece, 1 special)
//!           len x i32 word index (-1 for specials)
//!           len*dim x f32 vectors, row-major
//! ```
//!
//! Sentences follow the header back to back until end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Corpus, SentenceEmbedding, TokenKind};
use crate::error::{Error, Result};

pub const TPEB_MAGIC: &[u8; 4] = b"TPEB";
pub const TPEB_VERSION: u32 = 1;

/// Streaming reader yielding one sentence at a time.
pub struct TpebReader<R> {
    inner: R,
    offset: u64,
    dim: usize,
}

impl<R: Read> TpebReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut header = [0u8; 12];
        read_full(&mut inner, &mut header, 0, "file header")?;
        if &header[0..4] != TPEB_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}", &header[0..4]),
            });
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != TPEB_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::Format {
                offset: 8,
                message: "embedding dimension is zero".into(),
            });
        }
        Ok(TpebReader {
            inner,
            offset: 12,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn take(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        read_full(&mut self.inner, &mut buf, self.offset, what)?;
        self.offset += len as u64;
        Ok(buf)
    }

    /// Returns `None` at a clean end of file.
    pub fn next_sentence(&mut self) -> Result<Option<SentenceEmbedding>> {
        let start = self.offset;
        let mut id_len = [0u8; 2];
        let got = read_up_to(&mut self.inner, &mut id_len)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 2 {
            return Err(Error::Truncated {
                offset: start + got as u64,
                expected: 2 - got,
                what: "sentence id length".into(),
            });
        }
        self.offset += 2;
        let id_len = u16::from_le_bytes(id_len) as usize;
        let id_offset = self.offset;
        let id =
            String::from_utf8(self.take(id_len, "sentence id")?).map_err(|e| Error::Format {
                offset: id_offset,
                message: format!("sentence id is not UTF-8: {e}"),
            })?;
        let len = u32::from_le_bytes(self.take(4, "token count")?.try_into().unwrap()) as usize;
        if len == 0 {
            return Err(Error::Format {
                offset: self.offset - 4,
                message: format!("sentence {id:?} has zero tokens"),
            });
        }

        let kinds_offset = self.offset;
        let kinds = self
            .take(len, "token kinds")?
            .into_iter()
            .enumerate()
            .map(|(i, flag)| {
                TokenKind::from_flag(flag).ok_or_else(|| Error::Format {
                    offset: kinds_offset + i as u64,
                    message: format!("unknown token kind flag {flag}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let word_index: Vec<i32> = self
            .take(len * 4, "word indices")?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let row_bytes = self.dim * 4;
        let mut vectors = Vec::with_capacity(len * self.dim);
        for row in 0..len {
            let bytes = self.take(row_bytes, &format!("vector row {row} of sentence {id:?}"))?;
            vectors.extend(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            );
        }
        SentenceEmbedding::new(id, self.dim, vectors, kinds, word_index)
            .map(Some)
            .map_err(|e| Error::Format {
                offset: start,
                message: e.to_string(),
            })
    }

    pub fn read_corpus(mut self) -> Result<Corpus> {
        let mut corpus = Corpus::new(self.dim);
        while let Some(s) = self.next_sentence()? {
            corpus.sentences.push(s);
        }
        Ok(corpus)
    }
}

fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    let got = read_up_to(r, buf)?;
    if got < buf.len() {
        return Err(Error::Truncated {
            offset: offset + got as u64,
            expected: buf.len() - got,
            what: what.to_string(),
        });
    }
    Ok(())
}

pub struct TpebWriter<W: Write> {
    inner: W,
    dim: usize,
}

impl<W: Write> TpebWriter<W> {
    pub fn new(mut inner: W, dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidInput(format!("cannot write dimension {dim}")));
        }
        inner.write_all(TPEB_MAGIC)?;
        inner.write_all(&TPEB_VERSION.to_le_bytes())?;
        inner.write_all(&(dim as u32).to_le_bytes())?;
        Ok(TpebWriter { inner, dim })
    }

    pub fn write_sentence(&mut self, s: &SentenceEmbedding) -> Result<()> {
        if s.dim() != self.dim {
            return Err(Error::Shape(format!(
                "sentence {:?} has dimension {}, file has {}",
                s.id,
                s.dim(),
                self.dim
            )));
        }
        let id = s.id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| {
            Error::InvalidInput(format!("sentence id of {} bytes is too long", id.len()))
        })?;
        self.inner.write_all(&id_len.to_le_bytes())?;
        self.inner.write_all(id)?;
        self.inner.write_all(&(s.len() as u32).to_le_bytes())?;
        let flags: Vec<u8> = s.token_kinds.iter().map(|k| k.flag()).collect();
        self.inner.write_all(&flags)?;
        for w in &s.word_index {
            self.inner.write_all(&w.to_le_bytes())?;
        }
        for v in s.vectors() {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = File::open(path)?;
    TpebReader::new(BufReader::new(file))?.read_corpus()
}

pub fn write_embeddings(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let file = File::create(path)?;
    let mut w = TpebWriter::new(BufWriter::new(file), corpus.dim)?;
    for s in &corpus.sentences {
        w.write_sentence(s)?;
    }
    w.finish()?;
    Ok(())
}
