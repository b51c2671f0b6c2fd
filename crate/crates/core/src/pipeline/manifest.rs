//! CSV manifests linking pipeline stages.
//!
//! Two schemas are used: the case manifest
//! (`case_id,image_path,mask_path,label,split`) produced by `gen-phantom`
//! and `preprocess`, and the slice manifest
//! (`case_id,slice_path,label,split`) produced by `extract`. Paths are
//! stored relative to the manifest's own directory so trees can be moved.
//! Stage commands accept either the CSV itself or the directory holding it
//! under its conventional name ([`CASE_MANIFEST_NAME`],
//! [`SLICE_MANIFEST_NAME`]).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{CaseRow, Split};

/// Conventional file name of a case manifest inside its dataset directory.
pub const CASE_MANIFEST_NAME: &str = "manifest.csv";

/// Conventional file name of a slice manifest inside its extract directory.
pub const SLICE_MANIFEST_NAME: &str = "slices_manifest.csv";

/// Accepts either a manifest CSV or the directory holding one under its
/// conventional name, and returns the file path to load.
pub fn resolve_manifest_arg(path: &Path, default_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    }
}

/// Loaded case manifest plus the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct CaseManifest {
    pub rows: Vec<CaseRow>,
    pub root: PathBuf,
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
}

fn reject_directory(path: &Path, default_name: &str) -> Result<()> {
    if path.is_dir() {
        return Err(Error::Manifest(format!(
            "{}: is a directory; pass the manifest file (e.g. {})",
            path.display(),
            path.join(default_name).display()
        )));
    }
    Ok(())
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>, path: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(Error::Manifest(format!("{}: empty case_id", path.display())));
        }
        if !seen.insert(id) {
            return Err(Error::Manifest(format!(
                "{}: duplicate case_id {id:?}",
                path.display()
            )));
        }
    }
    Ok(())
}

fn check_label(label: u8, case_id: &str, path: &Path) -> Result<()> {
    if label > 1 {
        return Err(Error::Manifest(format!(
            "{}: case {case_id:?} has label {label}, expected 0 or 1",
            path.display()
        )));
    }
    Ok(())
}

impl CaseManifest {
    pub fn load(path: &Path) -> Result<Self> {
        reject_directory(path, CASE_MANIFEST_NAME)?;
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
        let rows: Vec<CaseRow> = rdr
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if rows.is_empty() {
            return Err(Error::Manifest(format!("{}: no cases", path.display())));
        }
        check_unique(rows.iter().map(|r| r.case_id.as_str()), path)?;
        for row in &rows {
            check_label(row.label, &row.case_id, path)?;
        }
        Ok(CaseManifest {
            rows,
            root: manifest_root(path),
        })
    }

    pub fn save(rows: &[CaseRow], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn image_path(&self, row: &CaseRow) -> PathBuf {
        self.root.join(&row.image_path)
    }

    pub fn mask_path(&self, row: &CaseRow) -> PathBuf {
        self.root.join(&row.mask_path)
    }
}

/// One row of the slice manifest written by `extract`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub case_id: String,
    pub slice_path: String,
    pub label: u8,
    pub split: Split,
}

/// Loaded slice manifest plus its root directory.
#[derive(Debug, Clone)]
pub struct SliceManifest {
    pub rows: Vec<SliceRow>,
    pub root: PathBuf,
}

impl SliceManifest {
    pub fn load(path: &Path) -> Result<Self> {
        reject_directory(path, SLICE_MANIFEST_NAME)?;
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
        let rows: Vec<SliceRow> = rdr
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if rows.is_empty() {
            return Err(Error::Manifest(format!("{}: no cases", path.display())));
        }
        check_unique(rows.iter().map(|r| r.case_id.as_str()), path)?;
        for row in &rows {
            check_label(row.label, &row.case_id, path)?;
        }
        Ok(SliceManifest {
            rows,
            root: manifest_root(path),
        })
    }

    pub fn save(rows: &[SliceRow], path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn slice_path(&self, row: &SliceRow) -> PathBuf {
        self.root.join(&row.slice_path)
    }

    /// Rows of one split, sorted by case id for deterministic ordering.
    pub fn split_rows(&self, split: Split) -> Vec<&SliceRow> {
        let mut rows: Vec<&SliceRow> = self.rows.iter().filter(|r| r.split == split).collect();
        rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        rows
    }
}
