//! Write-once container files in a two-tier layout.
//!
//! New files are created OPEN in the cache tier at
//! `<cache_root>/<record>/<hint>_<id>.cdf1`. Datasets written to an open file
//! become readable once it is closed; closing finalizes the header, computes
//! the checksums, clears the write permission bits and marks the catalog row
//! CLOSED. [`FileStore::migrate_cache`] later renames closed files into
//! `<data_root>/<record>/`.

pub mod cdf1;

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::catalog::{Catalog, DataFileRef, FileId, FileStatus, Tier};
use crate::error::{Error, Result};

pub use cdf1::{Dataset, Dtype, Element, TableEntry};

#[derive(Debug, Clone)]
pub struct FileStore {
    catalog: Arc<Catalog>,
    cache_root: PathBuf,
    data_root: PathBuf,
}

/// Exclusive writer for one OPEN data file.
#[derive(Debug)]
pub struct FileWriter {
    catalog: Arc<Catalog>,
    file_ref: DataFileRef,
    path: PathBuf,
    file: Option<File>,
    entries: Vec<TableEntry>,
    payload: Vec<u8>,
}

/// Replaces anything but `[A-Za-z0-9_-]` so hints are safe path components.
fn sanitize_hint(hint: &str) -> String {
    let s: String = hint
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "data".into()
    } else {
        s
    }
}

fn fsync_dir(dir: &Path) -> Result<()> {
    File::open(dir)?.sync_all()?;
    Ok(())
}

fn make_read_only(path: &Path) -> Result<()> {
    let mut perms = fs::metadata(path)?.permissions();
    perms.set_mode(perms.mode() & !0o222);
    fs::set_permissions(path, perms)?;
    Ok(())
}

impl FileStore {
    pub fn new(
        catalog: Arc<Catalog>,
        cache_root: impl Into<PathBuf>,
        data_root: impl Into<PathBuf>,
    ) -> Result<Self> {
        let cache_root = cache_root.into();
        let data_root = data_root.into();
        fs::create_dir_all(&cache_root)?;
        fs::create_dir_all(&data_root)?;
        Ok(FileStore {
            catalog,
            cache_root,
            data_root,
        })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn tier_root(&self, tier: Tier) -> &Path {
        match tier {
            Tier::Cache => &self.cache_root,
            Tier::Permanent => &self.data_root,
        }
    }

    /// Where the file currently lives, per its catalog tier.
    pub fn path_of(&self, file: &DataFileRef) -> PathBuf {
        self.tier_root(file.tier).join(&file.relative_path)
    }

    /// Creates an OPEN cache-tier file for `record_number`.
    pub fn new_data_file(&self, record_number: i64, name_hint: &str) -> Result<FileWriter> {
        let hint = sanitize_hint(name_hint);
        let file_ref = self.catalog.register_data_file(record_number, |id| {
            format!("{record_number}/{hint}_{id}.cdf1")
        })?;
        let path = self.path_of(&file_ref);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)?;
        // An empty but well-formed container until close rewrites it.
        file.write_all(&cdf1::encode(&[], &[]).bytes)?;
        Ok(FileWriter {
            catalog: Arc::clone(&self.catalog),
            file_ref,
            path,
            file: Some(file),
            entries: Vec::new(),
            payload: Vec::new(),
        })
    }

    fn open_closed(&self, file_ref: &DataFileRef) -> Result<(BufReader<File>, Vec<TableEntry>)> {
        if file_ref.status != FileStatus::Closed {
            return Err(Error::FileOpen(file_ref.id.0));
        }
        let path = self.path_of(file_ref);
        let file =
            File::open(&path).map_err(|e| Error::Storage(format!("{}: {e}", path.display())))?;
        let mut reader = BufReader::new(file);
        let table = match cdf1::read_table(&mut reader) {
            Ok(t) => t,
            Err(Error::InvalidFormat(msg)) => {
                return Err(Error::ChecksumMismatch(format!(
                    "{}: {msg}",
                    path.display()
                )))
            }
            Err(e) => return Err(e),
        };
        if Some(crc32fast::hash(&table.raw)) != file_ref.table_checksum {
            return Err(Error::ChecksumMismatch(format!(
                "{}: dataset table",
                path.display()
            )));
        }
        Ok((reader, table.entries))
    }

    /// Dataset table of a closed file.
    pub fn list_datasets(&self, file_ref: &DataFileRef) -> Result<Vec<TableEntry>> {
        self.open_closed(file_ref).map(|(_, entries)| entries)
    }

    pub fn read_dataset(&self, file_ref: &DataFileRef, name: &str) -> Result<Dataset> {
        let (mut reader, entries) = self.open_closed(file_ref)?;
        let entry = entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::NotFound(format!("dataset {name:?} in file {}", file_ref.id)))?;
        let payload = cdf1::read_payload(&mut reader, entry)?;
        Ok(Dataset {
            name: entry.name.clone(),
            dtype: entry.dtype,
            shape: entry.shape.clone(),
            payload,
        })
    }

    /// Reads by file id, looking the descriptor up in the catalog.
    pub fn read(&self, file: FileId, name: &str) -> Result<Dataset> {
        let file_ref = self.catalog.get_data_file(file)?;
        self.read_dataset(&file_ref, name)
    }

    /// Moves every CLOSED cache file into the permanent tier; returns how many moved.
    pub fn migrate_cache(&self) -> Result<usize> {
        let mut moved = 0;
        for file in self.catalog.list_data_files()? {
            if file.tier != Tier::Cache || file.status != FileStatus::Closed {
                continue;
            }
            let from = self.tier_root(Tier::Cache).join(&file.relative_path);
            let to = self.tier_root(Tier::Permanent).join(&file.relative_path);
            if let Some(dir) = to.parent() {
                fs::create_dir_all(dir)?;
            }
            if from.exists() {
                // rename(2) keeps the file at exactly one of the two paths.
                fs::rename(&from, &to)
                    .map_err(|e| Error::Storage(format!("{}: {e}", from.display())))?;
                if let Some(dir) = to.parent() {
                    fsync_dir(dir)?;
                }
            } else if !to.exists() {
                return Err(Error::Storage(format!(
                    "data file {} missing from both tiers",
                    file.id
                )));
            }
            self.catalog.set_file_tier(file.id, Tier::Permanent)?;
            moved += 1;
        }
        Ok(moved)
    }
}

impl FileWriter {
    pub fn file_ref(&self) -> &DataFileRef {
        &self.file_ref
    }

    pub fn id(&self) -> FileId {
        self.file_ref.id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_dataset(&mut self, dataset: &Dataset) -> Result<()> {
        if self.file.is_none() {
            return Err(Error::FileClosed);
        }
        dataset.validate()?;
        if self.entries.iter().any(|e| e.name == dataset.name) {
            return Err(Error::DuplicateDataset(dataset.name.clone()));
        }
        self.entries.push(TableEntry {
            name: dataset.name.clone(),
            dtype: dataset.dtype,
            shape: dataset.shape.clone(),
            offset: self.payload.len() as u64,
            length: dataset.payload.len() as u64,
            crc: crc32fast::hash(&dataset.payload),
        });
        self.payload.extend_from_slice(&dataset.payload);
        Ok(())
    }

    /// Finalizes the container and marks it CLOSED and read-only.
    pub fn close(&mut self) -> Result<DataFileRef> {
        let Some(file) = self.file.take() else {
            return Err(Error::AlreadyClosed);
        };
        drop(file);
        let encoded = cdf1::encode(&self.entries, &self.payload);
        let tmp = self.path.with_extension("cdf1.tmp");
        {
            let mut out = OpenOptions::new()
                .write(true)
                .create(true)
                .truncate(true)
                .open(&tmp)?;
            out.write_all(&encoded.bytes)?;
            out.sync_all()?;
        }
        make_read_only(&tmp)?;
        fs::rename(&tmp, &self.path)?;
        if let Some(dir) = self.path.parent() {
            fsync_dir(dir)?;
        }
        self.payload = Vec::new();
        self.file_ref = self.catalog.mark_file_closed(
            self.file_ref.id,
            encoded.payload_crc,
            encoded.table_crc,
            encoded.bytes.len() as u64,
        )?;
        Ok(self.file_ref.clone())
    }
}
