//! Parameter checkpoint directory: `checkpoint.txt` and `params.bin`.
//!
//! ```text
//! tembind-checkpoint 1
//! meta <n>
//! <key> <value>
//! params <n>
//! <name> <trainable 0|1> <rank> <dim...> <offset> <byte_len> <crc32>
//! ```
//!
//! `params.bin` holds little-endian `f64` values, one parameter after another
//! in store order. Meta values run to the end of their line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::io::{checksum, io_err, ManifestReader};
use crate::data::DataError;
use crate::tensor::{ParamStore, Tensor};

pub const MANIFEST: &str = "checkpoint.txt";
pub const BLOB: &str = "params.bin";
const MAGIC: &str = "tembind-checkpoint 1";

/// Parameters plus the string metadata needed to rebuild the modules that own them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn new(store: ParamStore) -> Self {
        Self { meta: BTreeMap::new(), store }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str, DataError> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| DataError::InvalidArgument(format!("checkpoint has no `{key}` entry")))
    }
}

fn bad_token(s: &str) -> bool {
    s.is_empty() || s.chars().any(char::is_whitespace)
}

pub fn write_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<(), DataError> {
    let mut text = format!("{MAGIC}\nmeta {}\n", ckpt.meta.len());
    for (k, v) in &ckpt.meta {
        if bad_token(k) || v.contains(['\n', '\r']) {
            return Err(DataError::InvalidArgument(format!("meta entry `{k}` cannot be stored on one line")));
        }
        text.push_str(&format!("{k} {v}\n"));
    }
    text.push_str(&format!("params {}\n", ckpt.store.len()));
    let mut blob = Vec::with_capacity(ckpt.store.num_scalars() * 8);
    for (id, name, t) in ckpt.store.iter() {
        if bad_token(name) {
            return Err(DataError::InvalidArgument(format!("parameter name `{name}` contains whitespace")));
        }
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        text.push_str(&format!(
            "{name} {} {} {}{}{offset} {} {:08x}\n",
            u8::from(ckpt.store.is_trainable(id)),
            t.shape().len(),
            dims.join(" "),
            if dims.is_empty() { "" } else { " " },
            blob.len() - offset,
            checksum(&blob[offset..]),
        ));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, bytes) in [(MANIFEST, text.as_bytes()), (BLOB, blob.as_slice())] {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint, DataError> {
    let mpath = dir.join(MANIFEST);
    let bpath = dir.join(BLOB);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let blob = fs::read(&bpath).map_err(io_err(&bpath))?;
    let blob_err =
        |offset: usize, reason: String| DataError::Blob { file: bpath.clone(), offset: offset as u64, reason };

    let mut rd = ManifestReader::new(mpath.clone(), &text);
    if rd.next_line()?.trim_end() != MAGIC {
        return Err(rd.err(format!("bad header, expected `{MAGIC}`")));
    }
    let n: usize = {
        let f = rd.keyed("meta", 1)?;
        rd.parse(f[0], "meta count")?
    };
    let mut meta = BTreeMap::new();
    for _ in 0..n {
        let line = rd.next_line()?;
        let (k, v) = line.split_once(' ').ok_or_else(|| rd.err("expected `<key> <value>`"))?;
        if bad_token(k) {
            return Err(rd.err(format!("invalid meta key `{k}`")));
        }
        if meta.insert(k.to_string(), v.to_string()).is_some() {
            return Err(rd.err(format!("duplicate meta key `{k}`")));
        }
    }
    let n: usize = {
        let f = rd.keyed("params", 1)?;
        rd.parse(f[0], "parameter count")?
    };
    let mut store = ParamStore::new();
    let mut expected = 0usize;
    for _ in 0..n {
        let f = rd.next_fields()?;
        if f.len() < 6 {
            return Err(rd.err(format!("expected at least 6 fields, found {}", f.len())));
        }
        let rank: usize = rd.parse(f[2], "rank")?;
        if f.len() != 6 + rank {
            return Err(rd.err(format!("rank {rank} needs {} fields, found {}", 6 + rank, f.len())));
        }
        let name = f[0];
        let trainable = match f[1] {
            "0" => false,
            "1" => true,
            s => return Err(rd.err(format!("invalid trainable flag `{s}`"))),
        };
        let shape = f[3..3 + rank].iter().map(|s| rd.parse::<usize>(s, "dimension")).collect::<Result<Vec<_>, _>>()?;
        let offset: usize = rd.parse(f[3 + rank], "offset")?;
        let byte_len: usize = rd.parse(f[4 + rank], "byte length")?;
        let crc =
            u32::from_str_radix(f[5 + rank], 16).map_err(|_| rd.err(format!("invalid checksum `{}`", f[5 + rank])))?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if numel.and_then(|n| n.checked_mul(8)) != Some(byte_len) {
            return Err(blob_err(
                offset,
                format!("parameter {name}: byte length {byte_len} does not match shape {shape:?}"),
            ));
        }
        if offset != expected {
            return Err(rd.err(format!("offset {offset} does not follow previous entry (expected {expected})")));
        }
        let bytes = blob.get(offset..offset + byte_len).ok_or_else(|| {
            blob_err(blob.len(), format!("truncated: parameter {name} needs bytes {offset}..{}", offset + byte_len))
        })?;
        if checksum(bytes) != crc {
            return Err(blob_err(offset, format!("checksum mismatch for parameter {name}")));
        }
        expected = offset + byte_len;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        let t = Tensor::new(&shape, data).map_err(|e| rd.err(e.to_string()))?;
        let id = store.add(name, t).map_err(|e| rd.err(e.to_string()))?;
        store.set_trainable(id, trainable);
    }
    rd.finish()?;
    if expected != blob.len() {
        return Err(blob_err(expected, format!("{} unreferenced trailing bytes", blob.len() - expected)));
    }
    Ok(Checkpoint { meta, store })
}
