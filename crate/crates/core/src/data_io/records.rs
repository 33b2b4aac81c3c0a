use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::features::SyntheticScene;
use crate::geometry::{ImageDims, PixelBox};

pub const FORMAT_VERSION: u32 = 1;
pub const ANNOTATIONS_FORMAT: &str = "situate.annotations";
pub const PRIORS_FORMAT: &str = "situate.priors";
pub const SCENES_FORMAT: &str = "situate.scenes";

/// The categories a query situation is made of, in model order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationSpec {
    pub name: String,
    pub categories: Vec<String>,
}

impl SituationSpec {
    pub fn new(name: impl Into<String>, categories: Vec<String>) -> Result<Self, DataError> {
        let spec = Self {
            name: name.into(),
            categories,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.categories.len() < 2 {
            return Err(DataError::Validation(format!(
                "situation {:?} needs at least 2 categories",
                self.name
            )));
        }
        let unique: BTreeSet<&String> = self.categories.iter().collect();
        if unique.len() != self.categories.len() {
            return Err(DataError::Validation(format!(
                "situation {:?} has duplicate category names",
                self.name
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let spec: SituationSpec =
            serde_json::from_str(&text).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub dims: ImageDims,
    pub boxes: Vec<LabeledBox>,
    pub is_positive: bool,
}

impl AnnotationRecord {
    pub fn box_for(&self, category: &str) -> Option<&PixelBox> {
        self.boxes.iter().find(|b| b.category == category).map(|b| &b.bbox)
    }

    /// Positive records need exactly one valid box per situation category.
    pub fn validate(&self, spec: &SituationSpec) -> Result<(), DataError> {
        if let Some(b) = self.boxes.iter().find(|b| !b.bbox.is_valid()) {
            return Err(DataError::Validation(format!(
                "image {:?}: invalid {:?} box",
                self.image_id, b.category
            )));
        }
        if !self.is_positive {
            return Ok(());
        }
        for c in &spec.categories {
            let n = self.boxes.iter().filter(|b| &b.category == c).count();
            if n != 1 {
                return Err(DataError::Validation(format!(
                    "positive image {:?} has {n} {c:?} boxes, expected exactly 1",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}

/// A detector box computed before a run, with the detector's confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorProposal {
    pub image_id: String,
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub detector_confidence: f64,
}

impl PriorProposal {
    fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.detector_confidence) {
            return Err(DataError::Validation(format!(
                "prior for {:?}/{:?} has confidence {} outside [0, 1]",
                self.image_id, self.category, self.detector_confidence
            )));
        }
        if !self.bbox.is_valid() {
            return Err(DataError::Validation(format!(
                "prior for {:?}/{:?} has an invalid box",
                self.image_id, self.category
            )));
        }
        Ok(())
    }
}

/// First line of every JSON-lines file.
#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn write_jsonl<T: Serialize>(path: &Path, format: &str, items: &[T]) -> Result<(), DataError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_jsonl_to(&mut w, format, items)?;
    w.flush()?;
    Ok(())
}

pub(crate) fn write_jsonl_to<W: Write, T: Serialize>(w: &mut W, format: &str, items: &[T]) -> Result<(), DataError> {
    let header = Header {
        format: format.to_string(),
        version: FORMAT_VERSION,
    };
    serde_json::to_writer(&mut *w, &header).map_err(|e| DataError::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut *w, item).map_err(|e| DataError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a headered JSON-lines file. A zero-byte file is an empty set.
fn read_jsonl<T: DeserializeOwned>(path: &Path, format: &str) -> Result<Vec<T>, DataError> {
    let f = std::fs::File::open(path)?;
    read_jsonl_from(BufReader::new(f), format, &path.display().to_string())
}

pub(crate) fn read_jsonl_from<R: BufRead, T: DeserializeOwned>(r: R, format: &str, origin: &str) -> Result<Vec<T>, DataError> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let Some((_, first)) = lines.next() else {
        return Ok(Vec::new());
    };
    let header: Header = serde_json::from_str(&first?)
        .map_err(|e| DataError::Format(format!("{origin}:1: missing or malformed header: {e}")))?;
    if header.format != format || header.version != FORMAT_VERSION {
        return Err(DataError::Format(format!(
            "{origin}: expected {format} v{FORMAT_VERSION}, found {} v{}",
            header.format, header.version
        )));
    }
    lines
        .map(|(i, line)| {
            serde_json::from_str(&line?).map_err(|e| DataError::Format(format!("{origin}:{}: {e}", i + 1)))
        })
        .collect()
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<(), DataError> {
    write_jsonl(path, ANNOTATIONS_FORMAT, records)
}

/// Loads and validates annotations against the situation.
pub fn load_annotations(path: &Path, spec: &SituationSpec) -> Result<Vec<AnnotationRecord>, DataError> {
    let records: Vec<AnnotationRecord> = read_jsonl(path, ANNOTATIONS_FORMAT)?;
    validate_annotations(&records, spec)?;
    Ok(records)
}

pub fn validate_annotations(records: &[AnnotationRecord], spec: &SituationSpec) -> Result<(), DataError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.image_id.as_str()) {
            return Err(DataError::Validation(format!("duplicate image_id {:?}", r.image_id)));
        }
        r.validate(spec)?;
    }
    Ok(())
}

pub fn save_priors(path: &Path, priors: &[PriorProposal]) -> Result<(), DataError> {
    write_jsonl(path, PRIORS_FORMAT, priors)
}

pub fn load_priors_flat(path: &Path) -> Result<Vec<PriorProposal>, DataError> {
    let priors: Vec<PriorProposal> = read_jsonl(path, PRIORS_FORMAT)?;
    for p in &priors {
        p.validate()?;
    }
    Ok(priors)
}

/// Priors grouped by image, file order preserved within each image.
pub fn load_priors(path: &Path) -> Result<BTreeMap<String, Vec<PriorProposal>>, DataError> {
    Ok(group_priors(load_priors_flat(path)?))
}

pub fn group_priors(priors: Vec<PriorProposal>) -> BTreeMap<String, Vec<PriorProposal>> {
    let mut out: BTreeMap<String, Vec<PriorProposal>> = BTreeMap::new();
    for p in priors {
        out.entry(p.image_id.clone()).or_default().push(p);
    }
    out
}

pub fn save_scenes(path: &Path, scenes: &[SyntheticScene]) -> Result<(), DataError> {
    write_jsonl(path, SCENES_FORMAT, scenes)
}

pub fn load_scenes(path: &Path) -> Result<Vec<SyntheticScene>, DataError> {
    read_jsonl(path, SCENES_FORMAT)
}
