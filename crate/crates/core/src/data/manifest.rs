use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

pub fn default_classes() -> Vec<String> {
    ["crack", "pothole", "damaged_marking", "guardrail"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Closed polygon in pixel coordinates, `(0,0)` at the top-left image corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolygonAnnotation {
    pub class_id: usize,
    pub polygon: Vec<[f64; 2]>,
}

fn default_orientation() -> u8 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    pub width: u32,
    pub height: u32,
    /// EXIF orientation tag, 1..=8.
    #[serde(default = "default_orientation")]
    pub orientation: u8,
    #[serde(default)]
    pub annotations: Vec<PolygonAnnotation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub images: Vec<ImageRecord>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            classes: default_classes(),
            images: Vec::new(),
        }
    }
}

impl DatasetManifest {
    pub fn with_images(&self, images: Vec<ImageRecord>) -> Self {
        Self {
            version: self.version,
            classes: self.classes.clone(),
            images,
        }
    }

    /// Checks every invariant, naming the first offending record.
    pub fn validate(&self) -> Result<()> {
        let invalid = |record: &str, message: String| Error::Validation {
            record: record.to_string(),
            message,
        };
        if self.version != MANIFEST_VERSION {
            return Err(invalid("<manifest>", format!("unsupported version {}", self.version)));
        }
        if self.classes.is_empty() || self.classes.len() > 255 {
            return Err(invalid("<manifest>", format!("{} classes (need 1..=255)", self.classes.len())));
        }
        let mut seen = HashSet::new();
        for rec in &self.images {
            if !seen.insert(rec.path.as_str()) {
                return Err(invalid(&rec.path, "duplicate path".into()));
            }
            if rec.width == 0 || rec.height == 0 {
                return Err(invalid(&rec.path, format!("empty image {}x{}", rec.width, rec.height)));
            }
            if !(1..=8).contains(&rec.orientation) {
                return Err(invalid(&rec.path, format!("orientation tag {}", rec.orientation)));
            }
            for (i, a) in rec.annotations.iter().enumerate() {
                if a.class_id >= self.classes.len() {
                    return Err(invalid(
                        &rec.path,
                        format!("annotation {i}: class_id {} with {} classes", a.class_id, self.classes.len()),
                    ));
                }
                if a.polygon.len() < 3 {
                    return Err(invalid(&rec.path, format!("annotation {i}: fewer than 3 vertices")));
                }
                if a.polygon.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invalid(&rec.path, format!("annotation {i}: non-finite vertex")));
                }
            }
        }
        Ok(())
    }

    /// Clamps every vertex into its image rectangle.
    pub fn clamp_vertices(&mut self) {
        for rec in &mut self.images {
            let (w, h) = (rec.width as f64, rec.height as f64);
            for a in &mut rec.annotations {
                for v in &mut a.polygon {
                    v[0] = v[0].clamp(0.0, w);
                    v[1] = v[1].clamp(0.0, h);
                }
            }
        }
    }

    pub fn num_annotations(&self) -> usize {
        self.images.iter().map(|r| r.annotations.len()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Reads, validates and vertex-clamps a manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    m.validate()?;
    m.clamp_vertices();
    Ok(m)
}

/// Annotation instances per class id.
pub fn class_histogram(manifest: &DatasetManifest) -> Vec<u64> {
    let mut counts = vec![0u64; manifest.classes.len()];
    for a in manifest.images.iter().flat_map(|r| &r.annotations) {
        counts[a.class_id] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(path: &str, classes: &[usize]) -> ImageRecord {
        ImageRecord {
            path: path.into(),
            width: 10,
            height: 8,
            orientation: 1,
            annotations: classes
                .iter()
                .map(|&class_id| PolygonAnnotation {
                    class_id,
                    polygon: vec![[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]],
                })
                .collect(),
        }
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"{"version":1,"classes":["crack","pothole","damaged_marking","guardrail"],"images":[]}"#)
            .unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.images.is_empty());
        assert_eq!(class_histogram(&m), vec![0; 4]);
    }

    #[test]
    fn bad_class_names_record() {
        let m = DatasetManifest::default().with_images(vec![record("a.png", &[0]), record("b.png", &[7])]);
        match m.validate().unwrap_err() {
            Error::Validation { record, message } => {
                assert_eq!(record, "b.png");
                assert!(message.contains("class_id 7"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(dir.path().join("none.json")), Err(Error::MissingFile(_))));
        let p = dir.path().join("bad.json");
        std::fs::write(&p, r#"{"version":1,"images":[]}"#).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Schema { .. })));
        let dup = DatasetManifest::default().with_images(vec![record("a.png", &[]), record("a.png", &[])]);
        assert!(matches!(dup.validate(), Err(Error::Validation { .. })));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = DatasetManifest::default().with_images(vec![record("a.png", &[0, 0, 0, 1]), record("b.png", &[])]);
        m.save(&p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
        let h = class_histogram(&m);
        assert_eq!(h, vec![3, 1, 0, 0]);
        assert_eq!(h.iter().sum::<u64>() as usize, m.num_annotations());
    }

    #[test]
    fn vertices_are_clamped_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let mut rec = record("a.png", &[0]);
        rec.annotations[0].polygon[1] = [40.0, -3.0];
        DatasetManifest::default().with_images(vec![rec]).save(&p).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.images[0].annotations[0].polygon[1], [10.0, 0.0]);
    }
}
