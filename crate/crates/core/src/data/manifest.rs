//! CSV manifests `path,age,gender,race` of real labelled photographs.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{DataError, Dataset};
use crate::attributes::{AgeBinning, AttributeLabel, AttributeSpace};

/// One validated manifest row; `path` is resolved against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub age: i64,
    pub label: AttributeLabel,
    pub line: u64,
}

#[derive(Deserialize)]
struct Row {
    path: String,
    age: i64,
    gender: usize,
    race: usize,
}

/// Parses and validates every row; the first bad row aborts with its line
/// number.
pub fn read_manifest(
    path: &Path,
    space: &AttributeSpace,
    binning: AgeBinning,
) -> Result<Vec<ManifestRecord>, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let malformed = |line: u64, detail: String| DataError::Malformed {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "age", "gender", "race"] {
        if headers.is_empty() {
            return Err(DataError::Empty(path.to_path_buf()));
        }
        let got = headers.iter().collect::<Vec<_>>().join(",");
        return Err(malformed(1, format!("header must be `path,age,gender,race`, got `{got}`")));
    }
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| malformed(line, e.to_string()))?;
        let age_group = binning.bin(row.age).map_err(|e| malformed(line, e.to_string()))?;
        let label = AttributeLabel::new(age_group, row.gender, row.race);
        space.validate(label).map_err(|e| malformed(line, e.to_string()))?;
        let image = base.join(&row.path);
        if !image.is_file() {
            return Err(malformed(line, format!("image {} not found", image.display())));
        }
        records.push(ManifestRecord {
            path: image,
            age: row.age,
            label,
            line,
        });
    }
    if records.is_empty() {
        return Err(DataError::Empty(path.to_path_buf()));
    }
    Ok(records)
}

/// Reads a manifest into a lazily decoded dataset and logs its class
/// histogram. Every label class of `space` must be populated.
pub fn load_manifest(
    path: &Path,
    space: &AttributeSpace,
    binning: AgeBinning,
    resolution: usize,
) -> crate::Result<Dataset> {
    let records = read_manifest(path, space, binning)?;
    let ds = Dataset::from_files(
        *space,
        resolution,
        records.into_iter().map(|r| (r.label, r.path)).collect(),
    );
    for (t, n) in ds.class_histogram().iter().enumerate() {
        let l = space.label_at(t)?;
        log::info!("class (age {}, gender {}, race {}): {n}", l.age, l.gender, l.race);
    }
    ds.require_all_classes()?;
    Ok(ds)
}
