//! Dataset directory: `manifest.txt`, `frames.bin`, `vocab.txt`.
//!
//! ```text
//! tembind-dataset 1
//! grid <height> <width>
//! materials <k>
//! material <class_id> <hardness> <texture_frequency> <relaxation_time> <r> <g> <b> <kw,kw,...>
//! trajectories <n>
//! <trajectory_id> <class_id> <length> <offset> <byte_len> <crc32> <contact> <slide> <withdraw>
//! ```
//!
//! `frames.bin` holds little-endian `f32` values. A trajectory's bytes are its
//! frames in order, each frame the visual grid followed by the tactile grid.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, FramePair, GridSpec, MaterialCatalog, MaterialClass, StageMarks, TrajectoryRecord};

pub const MANIFEST: &str = "manifest.txt";
pub const FRAMES: &str = "frames.bin";
pub const VOCAB: &str = "vocab.txt";
const MAGIC: &str = "tembind-dataset 1";

/// Trajectories together with the grid and material catalog they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub catalog: MaterialCatalog,
    pub records: Vec<TrajectoryRecord>,
}

pub(crate) fn checksum(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Line-oriented reader that reports the file and 1-based line on failure.
pub(crate) struct ManifestReader<'a> {
    file: PathBuf,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> ManifestReader<'a> {
    pub(crate) fn new(file: PathBuf, text: &'a str) -> Self {
        Self { file, lines: text.lines().enumerate(), line: 0 }
    }

    pub(crate) fn err(&self, reason: impl Into<String>) -> DataError {
        DataError::Manifest { file: self.file.clone(), line: self.line, reason: reason.into() }
    }

    pub(crate) fn next_fields(&mut self) -> Result<Vec<&'a str>, DataError> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l.split_whitespace().collect())
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of manifest"))
            }
        }
    }

    pub(crate) fn next_line(&mut self) -> Result<&'a str, DataError> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of manifest"))
            }
        }
    }

    /// Reads `<key> <value...>` and returns the values.
    pub(crate) fn keyed(&mut self, key: &str, count: usize) -> Result<Vec<&'a str>, DataError> {
        let f = self.next_fields()?;
        if f.first() != Some(&key) || f.len() != count + 1 {
            return Err(self.err(format!("expected `{key}` with {count} value(s)")));
        }
        Ok(f[1..].to_vec())
    }

    pub(crate) fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T, DataError> {
        s.parse().map_err(|_| self.err(format!("invalid {what} `{s}`")))
    }

    pub(crate) fn finish(mut self) -> Result<(), DataError> {
        match self.lines.find(|(_, l)| !l.trim().is_empty()) {
            Some((i, _)) => {
                self.line = i + 1;
                Err(self.err("trailing content"))
            }
            None => Ok(()),
        }
    }
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let grid = dataset.grid;
    let mut manifest = format!("{MAGIC}\ngrid {} {}\nmaterials {}\n", grid.height, grid.width, dataset.catalog.len());
    for m in dataset.catalog.classes() {
        manifest.push_str(&format!(
            "material {} {} {} {} {} {} {} {}\n",
            m.class_id,
            m.hardness,
            m.texture_frequency,
            m.relaxation_time,
            m.tint[0],
            m.tint[1],
            m.tint[2],
            m.keywords.join(",")
        ));
    }
    manifest.push_str(&format!("trajectories {}\n", dataset.records.len()));
    let mut blob = Vec::new();
    for r in &dataset.records {
        if dataset.catalog.get(r.material.class_id) != Some(&r.material) {
            return Err(DataError::InvalidArgument(format!(
                "trajectory {} material is not catalog class {}",
                r.trajectory_id, r.material.class_id
            )));
        }
        let offset = blob.len();
        for f in &r.frames {
            if f.visual.len() != grid.visual_len() || f.tactile.len() != grid.tactile_len() {
                return Err(DataError::InvalidArgument(format!(
                    "trajectory {} frame {} does not match grid {}x{}",
                    r.trajectory_id, f.time_index, grid.height, grid.width
                )));
            }
            for v in f.visual.iter().chain(&f.tactile) {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bytes = &blob[offset..];
        let m = r.stage_marks;
        manifest.push_str(&format!(
            "{} {} {} {} {} {:08x} {} {} {}\n",
            r.trajectory_id,
            r.material.class_id,
            r.len(),
            offset,
            bytes.len(),
            checksum(bytes),
            m.contact,
            m.slide,
            m.withdraw
        ));
    }
    let vocab: String = MaterialCatalog::vocabulary().iter().map(|w| format!("{w}\n")).collect();
    for (name, bytes) in [(MANIFEST, manifest.as_bytes()), (FRAMES, blob.as_slice()), (VOCAB, vocab.as_bytes())] {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let mpath = dir.join(MANIFEST);
    let bpath = dir.join(FRAMES);
    let vpath = dir.join(VOCAB);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let blob = fs::read(&bpath).map_err(io_err(&bpath))?;
    let vocab_text = fs::read_to_string(&vpath).map_err(io_err(&vpath))?;
    let vocab: Vec<&str> = vocab_text.lines().collect();

    let mut rd = ManifestReader::new(mpath.clone(), &text);
    if rd.next_line()?.trim() != MAGIC {
        return Err(rd.err(format!("bad header, expected `{MAGIC}`")));
    }
    let g = rd.keyed("grid", 2)?;
    let grid = GridSpec::new(rd.parse(g[0], "height")?, rd.parse(g[1], "width")?);
    if grid.height == 0 || grid.width == 0 {
        return Err(rd.err("grid dimensions must be positive"));
    }
    let f = rd.keyed("materials", 1)?;
    let k: usize = rd.parse(f[0], "material count")?;
    let mut classes = Vec::with_capacity(k);
    for _ in 0..k {
        let f = rd.keyed("material", 8)?;
        let keywords: Vec<String> = f[7].split(',').map(String::from).collect();
        if let Some(w) = keywords.iter().find(|w| !vocab.contains(&w.as_str())) {
            return Err(rd.err(format!("keyword `{w}` missing from {VOCAB}")));
        }
        classes.push(MaterialClass {
            class_id: rd.parse(f[0], "class id")?,
            hardness: rd.parse(f[1], "hardness")?,
            texture_frequency: rd.parse(f[2], "texture frequency")?,
            relaxation_time: rd.parse(f[3], "relaxation time")?,
            tint: [rd.parse(f[4], "tint")?, rd.parse(f[5], "tint")?, rd.parse(f[6], "tint")?],
            keywords,
        });
    }
    let catalog = MaterialCatalog::from_classes(classes).map_err(|e| rd.err(e.to_string()))?;
    let f = rd.keyed("trajectories", 1)?;
    let n: usize = rd.parse(f[0], "trajectory count")?;
    let frame_floats = grid.visual_len() + grid.tactile_len();
    let mut records = Vec::with_capacity(n);
    let mut expected_offset = 0usize;
    for _ in 0..n {
        let f = rd.next_fields()?;
        if f.len() != 9 {
            return Err(rd.err(format!("expected 9 fields, found {}", f.len())));
        }
        let trajectory_id: usize = rd.parse(f[0], "trajectory id")?;
        let class_id: usize = rd.parse(f[1], "class id")?;
        let length: usize = rd.parse(f[2], "length")?;
        let offset: usize = rd.parse(f[3], "offset")?;
        let byte_len: usize = rd.parse(f[4], "byte length")?;
        let crc = u32::from_str_radix(f[5], 16).map_err(|_| rd.err(format!("invalid checksum `{}`", f[5])))?;
        let marks = StageMarks {
            contact: rd.parse(f[6], "stage mark")?,
            slide: rd.parse(f[7], "stage mark")?,
            withdraw: rd.parse(f[8], "stage mark")?,
        };
        let material = catalog.get(class_id).cloned().ok_or_else(|| rd.err(format!("unknown class {class_id}")))?;
        if !marks.is_valid_for(length) {
            return Err(rd.err("stage marks out of order"));
        }
        if byte_len != length * frame_floats * 4 {
            return Err(DataError::Blob {
                file: bpath.clone(),
                offset: offset as u64,
                reason: format!(
                    "trajectory {trajectory_id}: byte length {byte_len} does not match {length} frames of {frame_floats} floats"
                ),
            });
        }
        if offset != expected_offset {
            return Err(rd.err(format!("offset {offset} does not follow previous entry (expected {expected_offset})")));
        }
        let bytes = blob.get(offset..offset + byte_len).ok_or_else(|| DataError::Blob {
            file: bpath.clone(),
            offset: blob.len() as u64,
            reason: format!("truncated: trajectory {trajectory_id} needs bytes {offset}..{}", offset + byte_len),
        })?;
        if checksum(bytes) != crc {
            return Err(DataError::Blob {
                file: bpath.clone(),
                offset: offset as u64,
                reason: format!("checksum mismatch for trajectory {trajectory_id}"),
            });
        }
        expected_offset = offset + byte_len;
        let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let frames = floats
            .chunks(frame_floats)
            .enumerate()
            .map(|(i, c)| FramePair {
                visual: c[..grid.visual_len()].to_vec(),
                tactile: c[grid.visual_len()..].to_vec(),
                time_index: i + 1,
            })
            .collect();
        records.push(TrajectoryRecord { trajectory_id, material, frames, stage_marks: marks });
    }
    rd.finish()?;
    if expected_offset != blob.len() {
        return Err(DataError::Blob {
            file: bpath,
            offset: expected_offset as u64,
            reason: format!("{} unreferenced trailing bytes", blob.len() - expected_offset),
        });
    }
    Ok(Dataset { grid, catalog, records })
}
