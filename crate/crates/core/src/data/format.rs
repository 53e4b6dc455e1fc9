//! On-disk dataset layout: a JSON manifest next to a record file.
//!
//! Record files come in two encodings with identical content.
//!
//! `jsonl`: one [`EmbeddingRecord`] object per line, fields `id`, `split`
//! (`"train"`/`"test"`), `label` (0 real, 1 fake), `text_embedding`,
//! `image_embedding`.
//!
//! `binary`, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "FNRE"
//! version  u32      1
//! d_in     u32
//! count    u64
//! count records of:
//!   id_len u32, id (UTF-8, id_len bytes)
//!   split  u8   0 train, 1 test
//!   label  u8   0 real, 1 fake
//!   text   d_in x f32
//!   image  d_in x f32
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_records, Dataset, DatasetMeta, EmbeddingRecord, Label, Split, SplitCounts};
use crate::error::{FnrError, Result};

pub const MANIFEST_FORMAT: &str = "fnr-embeddings";
pub const RECORDS_MAGIC: &[u8; 4] = b"FNRE";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Jsonl,
    Binary,
}

impl Encoding {
    fn extension(self) -> &'static str {
        match self {
            Encoding::Jsonl => "jsonl",
            Encoding::Binary => "bin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub d_in: usize,
    /// Relative to the manifest's directory.
    pub records_file: String,
    pub encoding: Encoding,
    pub counts: SplitCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dims: Option<[usize; 3]>,
}

/// Reads a manifest and its record file, validating every record.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| FnrError::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| FnrError::Data(format!("manifest {}: {e}", manifest_path.display())))?;
    if manifest.format != MANIFEST_FORMAT || manifest.version != FORMAT_VERSION {
        return Err(FnrError::Data(format!(
            "manifest {} is {:?} v{}, expected {MANIFEST_FORMAT:?} v{FORMAT_VERSION}",
            manifest_path.display(),
            manifest.format,
            manifest.version
        )));
    }
    let records_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.records_file);
    let records = match manifest.encoding {
        Encoding::Jsonl => read_jsonl(&records_path, manifest.d_in)?,
        Encoding::Binary => read_binary(&records_path, manifest.d_in)?,
    };
    validate_records(&records, manifest.d_in)?;
    let counts = SplitCounts::of(&records);
    if counts != manifest.counts {
        return Err(FnrError::Data(format!(
            "manifest counts {:?} do not match records {:?}",
            manifest.counts, counts
        )));
    }
    Ok(Dataset {
        meta: DatasetMeta {
            name: manifest.name,
            d_in: manifest.d_in,
            counts,
            text_max_len: manifest.text_max_len,
            image_dims: manifest.image_dims,
        },
        records,
    })
}

/// Writes `manifest.json` and the record file into `dir`; returns the
/// manifest path.
pub fn save_dataset(
    dir: impl AsRef<Path>,
    dataset: &Dataset,
    encoding: Encoding,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| FnrError::io(dir, e))?;
    let records_file = format!("records.{}", encoding.extension());
    let records_path = dir.join(&records_file);
    match encoding {
        Encoding::Jsonl => write_jsonl(&records_path, &dataset.records)?,
        Encoding::Binary => write_binary(&records_path, dataset.meta.d_in, &dataset.records)?,
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        version: FORMAT_VERSION,
        name: dataset.meta.name.clone(),
        d_in: dataset.meta.d_in,
        records_file,
        encoding,
        counts: SplitCounts::of(&dataset.records),
        text_max_len: dataset.meta.text_max_len,
        image_dims: dataset.meta.image_dims,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| FnrError::io(&manifest_path, e))?;
    Ok(manifest_path)
}

fn read_jsonl(path: &Path, d_in: usize) -> Result<Vec<EmbeddingRecord>> {
    let file = fs::File::open(path).map_err(|e| FnrError::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FnrError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|e| FnrError::Data(format!("{} line {}: {e}", path.display(), n + 1)))?;
        record
            .validate(d_in)
            .map_err(|e| FnrError::Data(format!("{} line {}: {e}", path.display(), n + 1)))?;
        records.push(record);
    }
    Ok(records)
}

fn write_jsonl(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| FnrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| FnrError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| FnrError::io(path, e))?;
    }
    w.flush().map_err(|e| FnrError::io(path, e))
}

fn write_binary(path: &Path, d_in: usize, records: &[EmbeddingRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| FnrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| FnrError::io(path, e);
    w.write_all(RECORDS_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(d_in as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(records.len() as u64).to_le_bytes())
        .map_err(io)?;
    for r in records {
        w.write_all(&(r.id.len() as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(r.id.as_bytes()).map_err(io)?;
        let split = match r.split {
            Split::Train => 0u8,
            Split::Test => 1u8,
        };
        w.write_all(&[split, u8::from(r.label)]).map_err(io)?;
        for x in r.text_embedding.iter().chain(&r.image_embedding) {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FnrError::Data(format!(
                "binary records truncated while reading {what}"
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

fn read_binary(path: &Path, d_in: usize) -> Result<Vec<EmbeddingRecord>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| FnrError::io(path, e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4, "magic")? != RECORDS_MAGIC {
        return Err(FnrError::Data(format!(
            "{} is not an FNRE record file",
            path.display()
        )));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(FnrError::Data(format!(
            "unsupported record file version {version}"
        )));
    }
    let file_d_in = c.u32("d_in")? as usize;
    if file_d_in != d_in {
        return Err(FnrError::Data(format!(
            "record file d_in {file_d_in} does not match manifest d_in {d_in}"
        )));
    }
    let count = c.u64("count")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for n in 0..count {
        let ctx = |e: FnrError| FnrError::Data(format!("{} record {n}: {e}", path.display()));
        let id_len = c.u32("id length").map_err(ctx)? as usize;
        let id = String::from_utf8(c.take(id_len, "id").map_err(ctx)?.to_vec())
            .map_err(|_| ctx(FnrError::Data("id is not UTF-8".into())))?;
        let tags = c.take(2, "split/label").map_err(ctx)?;
        let split = match tags[0] {
            0 => Split::Train,
            1 => Split::Test,
            other => return Err(ctx(FnrError::Data(format!("split byte {other}")))),
        };
        let label = Label::try_from(tags[1]).map_err(|e| ctx(FnrError::Data(e)))?;
        let text_embedding = c.f32s(d_in, "text embedding").map_err(ctx)?;
        let image_embedding = c.f32s(d_in, "image embedding").map_err(ctx)?;
        let record = EmbeddingRecord {
            id,
            split,
            label,
            text_embedding,
            image_embedding,
        };
        record.validate(d_in).map_err(ctx)?;
        records.push(record);
    }
    if c.pos != bytes.len() {
        return Err(FnrError::Data(format!(
            "{} has trailing bytes",
            path.display()
        )));
    }
    Ok(records)
}
