//! Corpus files: `objects.jsonl`, OMFV feature matrices and the corpus
//! manifest that ties them together.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use forge_core::features::{filter_by_confidence, normalize, omfv, validate_records};
use forge_core::{BBox, FeatureMatrix, ObjectRecord};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::fsutil;

pub const DEFAULT_MIN_DET_CONF: f32 = 0.8;

/// Wire form of one `objects.jsonl` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLine {
    pub id: u64,
    pub image: String,
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_label: String,
    pub det_conf: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_row: Option<usize>,
}

impl ObjectLine {
    pub fn from_record(r: &ObjectRecord, ordinal: usize) -> Self {
        Self {
            id: r.id,
            image: r.image.clone(),
            bbox: r.bbox,
            class_label: r.class_label.clone(),
            det_conf: r.det_conf,
            feature_row: (r.feature_row != ordinal).then_some(r.feature_row),
        }
    }
}

/// Streams records from a JSONL source in file order. Blank lines are
/// skipped; ids must be strictly increasing.
pub struct ObjectReader<R> {
    inner: R,
    source: PathBuf,
    line: usize,
    ordinal: usize,
    last_id: Option<u64>,
    buf: String,
    failed: bool,
}

impl ObjectReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| ForgeError::io(path, e))?;
        Ok(Self::new(BufReader::with_capacity(1 << 16, f), path))
    }
}

impl<R: BufRead> ObjectReader<R> {
    pub fn new(inner: R, source: impl AsRef<Path>) -> Self {
        Self {
            inner,
            source: source.as_ref().to_path_buf(),
            line: 0,
            ordinal: 0,
            last_id: None,
            buf: String::new(),
            failed: false,
        }
    }

    /// Records yielded so far.
    pub fn count(&self) -> usize {
        self.ordinal
    }

    fn err(&self, msg: impl std::fmt::Display) -> ForgeError {
        ForgeError::validation(format!("{}: line {}: {}", self.source.display(), self.line, msg))
    }

    fn parse_line(&mut self) -> Result<ObjectRecord> {
        let line: ObjectLine = serde_json::from_str(self.buf.trim_end()).map_err(|e| self.err(e))?;
        if let Some(last) = self.last_id {
            if line.id == last {
                return Err(self.err(format!("duplicate id {}", line.id)));
            }
            if line.id < last {
                return Err(self.err(format!("id {} follows {}; ids must increase", line.id, last)));
            }
        }
        if !(0.0..=1.0).contains(&line.det_conf) {
            return Err(self.err(format!("det_conf {} outside [0, 1]", line.det_conf)));
        }
        if line.bbox.w == 0 || line.bbox.h == 0 {
            return Err(self.err("empty bbox"));
        }
        self.last_id = Some(line.id);
        let feature_row = line.feature_row.unwrap_or(self.ordinal);
        self.ordinal += 1;
        Ok(ObjectRecord {
            id: line.id,
            image: line.image,
            bbox: line.bbox,
            class_label: line.class_label,
            det_conf: line.det_conf,
            feature_row,
        })
    }
}

impl<R: BufRead> Iterator for ObjectReader<R> {
    type Item = Result<ObjectRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            self.line += 1;
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) if self.buf.trim().is_empty() => continue,
                Ok(_) => {
                    let r = self.parse_line();
                    self.failed = r.is_err();
                    return Some(r);
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(ForgeError::io(&self.source, e)));
                }
            }
        }
    }
}

pub fn load_objects(path: &Path) -> Result<Vec<ObjectRecord>> {
    ObjectReader::open(path)?.collect()
}

pub fn write_objects(path: &Path, records: &[ObjectRecord]) -> Result<()> {
    fsutil::write_jsonl(path, records.iter().enumerate().map(|(i, r)| ObjectLine::from_record(r, i)))
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fsutil::read_bytes(path)?;
    omfv::decode(&bytes).map_err(|e| ForgeError::core_at(path, e))
}

pub fn write_features(path: &Path, m: &FeatureMatrix) -> Result<()> {
    fsutil::write_bytes(path, &omfv::encode(m))
}

/// Row-at-a-time OMFV reader for matrices too large to hold in memory.
pub struct FeatureReader<R> {
    inner: R,
    source: PathBuf,
    header: omfv::Header,
    next_row: u64,
    buf: Vec<u8>,
}

impl FeatureReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| ForgeError::io(path, e))?;
        let len = f.metadata().map_err(|e| ForgeError::io(path, e))?.len();
        let r = Self::new(BufReader::with_capacity(1 << 16, f), path)?;
        let want = omfv::HEADER_LEN as u64 + r.header.payload_len().unwrap_or(u64::MAX);
        if len < want {
            return Err(ForgeError::corrupt(
                path,
                format!("truncated payload: header declares {} bytes, file has {}", want, len),
            ));
        }
        Ok(r)
    }
}

impl<R: Read> FeatureReader<R> {
    pub fn new(mut inner: R, source: impl AsRef<Path>) -> Result<Self> {
        let source = source.as_ref().to_path_buf();
        let mut head = [0u8; omfv::HEADER_LEN];
        inner
            .read_exact(&mut head)
            .map_err(|_| ForgeError::corrupt(&source, "file shorter than the OMFV header"))?;
        let header = omfv::Header::parse(&head).map_err(|e| ForgeError::core_at(&source, e))?;
        Ok(Self {
            buf: vec![0; header.dim as usize * 4],
            inner,
            source,
            header,
            next_row: 0,
        })
    }

    pub fn header(&self) -> &omfv::Header {
        &self.header
    }

    pub fn next_row(&mut self) -> Option<Result<Vec<f32>>> {
        if self.next_row >= self.header.count {
            return None;
        }
        if let Err(e) = self.inner.read_exact(&mut self.buf) {
            self.next_row = self.header.count;
            let err = if e.kind() == std::io::ErrorKind::UnexpectedEof {
                ForgeError::corrupt(&self.source, "truncated payload")
            } else {
                ForgeError::io(&self.source, e)
            };
            return Some(Err(err));
        }
        self.next_row += 1;
        Some(Ok(omfv::decode_floats(&self.buf)))
    }
}

impl<R: Read> Iterator for FeatureReader<R> {
    type Item = Result<Vec<f32>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_row()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    /// Relative paths resolve against the manifest's directory.
    pub objects_path: PathBuf,
    pub features_path: PathBuf,
    pub dim: usize,
    pub count: usize,
    #[serde(default = "default_min_conf")]
    pub min_det_conf: f32,
}

fn default_min_conf() -> f32 {
    DEFAULT_MIN_DET_CONF
}

/// Records that passed the confidence filter and their normalized features.
/// `matrix.row(i)` belongs to `records[i]`, and `records[i].feature_row == i`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub manifest_path: PathBuf,
    pub root: PathBuf,
    pub records: Vec<ObjectRecord>,
    pub matrix: FeatureMatrix,
    /// Objects in the file before filtering.
    pub total_objects: usize,
}

impl Corpus {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: CorpusManifest = fsutil::read_json(manifest_path)?;
        if !(0.0..=1.0).contains(&manifest.min_det_conf) {
            return Err(ForgeError::validation(format!(
                "{}: min_det_conf {} outside [0, 1]",
                manifest_path.display(),
                manifest.min_det_conf
            )));
        }
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        let objects_path = root.join(&manifest.objects_path);
        let features_path = root.join(&manifest.features_path);

        let all = load_objects(&objects_path)?;
        if all.len() != manifest.count {
            return Err(ForgeError::validation(format!(
                "{} lists {} objects, manifest declares {}",
                objects_path.display(),
                all.len(),
                manifest.count
            )));
        }
        let raw = load_features(&features_path)?;
        if raw.dim() != manifest.dim || raw.len() != manifest.count {
            return Err(ForgeError::validation(format!(
                "{} holds {}x{} features, manifest declares {}x{}",
                features_path.display(),
                raw.len(),
                raw.dim(),
                manifest.count,
                manifest.dim
            )));
        }
        validate_records(&all, raw.len()).map_err(|e| ForgeError::core_at(&objects_path, e))?;
        let total_objects = all.len();
        let mut records = filter_by_confidence(all, manifest.min_det_conf);
        let rows: Vec<usize> = records.iter().map(|r| r.feature_row).collect();
        let matrix = normalize(&raw.gather(&rows)?).map_err(|e| ForgeError::core_at(&features_path, e))?;
        for (i, r) in records.iter_mut().enumerate() {
            r.feature_row = i;
        }
        log::info!(
            "loaded {} of {} objects (det_conf >= {}), dim {}",
            records.len(),
            total_objects,
            manifest.min_det_conf,
            matrix.dim()
        );
        Ok(Self {
            manifest,
            manifest_path: manifest_path.to_path_buf(),
            root,
            records,
            matrix,
            total_objects,
        })
    }

    pub fn objects_path(&self) -> PathBuf {
        self.root.join(&self.manifest.objects_path)
    }

    pub fn features_path(&self) -> PathBuf {
        self.root.join(&self.manifest.features_path)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(text: &str) -> Result<Vec<ObjectRecord>> {
        ObjectReader::new(Cursor::new(text.as_bytes()), "objects.jsonl").collect()
    }

    const LINE0: &str = r#"{"id": 0, "image": "a.png", "bbox": [1, 2, 3, 4], "class": "mug", "det_conf": 0.9}"#;

    #[test]
    fn three_valid_lines() {
        let text = [0, 1, 2]
            .iter()
            .map(|i| LINE0.replace("\"id\": 0", &format!("\"id\": {}", i)))
            .collect::<Vec<_>>()
            .join("\n");
        let recs = read(&text).unwrap();
        assert_eq!(recs.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(recs[2].feature_row, 2);
        assert_eq!(recs[0].bbox, BBox::new(1, 2, 3, 4));
        assert_eq!(recs[0].class_label, "mug");
    }

    #[test]
    fn missing_bbox_names_line() {
        let text = format!("{}\n{}", LINE0, r#"{"id": 1, "image": "a.png", "class": "mug", "det_conf": 0.9}"#);
        let err = read(&text).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("bbox"), "{}", err);
    }

    #[test]
    fn duplicate_and_decreasing_ids() {
        let dup = format!("{}\n{}", LINE0, LINE0);
        assert!(read(&dup).unwrap_err().to_string().contains("duplicate id 0"));
        let back = format!("{}\n{}", LINE0.replace("\"id\": 0", "\"id\": 5"), LINE0);
        assert!(read(&back).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn feature_row_override_and_round_trip() {
        let text = LINE0.replace("0.9}", "0.9, \"feature_row\": 7}");
        let recs = read(&text).unwrap();
        assert_eq!(recs[0].feature_row, 7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.jsonl");
        write_objects(&p, &recs).unwrap();
        assert_eq!(load_objects(&p).unwrap(), recs);
    }

    #[test]
    fn features_identity_and_byte_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let m = FeatureMatrix::from_rows(4, &[[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
        write_features(&p, &m).unwrap();
        let back = load_features(&p).unwrap();
        assert_eq!(back.row(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(back.row(1), &[0.0, 1.0, 0.0, 0.0]);
        let q = dir.path().join("g.bin");
        write_features(&q, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        let rows: Vec<_> = FeatureReader::open(&p).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(rows, vec![m.row(0).to_vec(), m.row(1).to_vec()]);
    }

    #[test]
    fn truncated_features_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let m = FeatureMatrix::from_rows(4, &[[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]).unwrap();
        let bytes = omfv::encode(&m);
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        let e = load_features(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(FeatureReader::open(&p).is_err());
        let mut r = FeatureReader::new(Cursor::new(&bytes[..bytes.len() - 4]), "mem").unwrap();
        assert!(r.next_row().unwrap().is_ok());
        assert!(r.next_row().unwrap().is_err());
        assert!(r.next_row().is_none());
        std::fs::write(&p, b"NOPE0000000000000000").unwrap();
        assert_eq!(load_features(&p).unwrap_err().exit_code(), 2);
    }
}
