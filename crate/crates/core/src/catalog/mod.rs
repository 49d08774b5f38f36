//! Metadata catalog.
//!
//! Records, generic signals, data signals, data-file descriptors, channel
//! mappings and post-processing state live in one embedded SQLite file.
//! Every write is a single `BEGIN IMMEDIATE` transaction, so operations are
//! atomic across threads and across processes sharing the file. Data-signal
//! rows are append-only; the schema rejects updates and deletes.

mod types;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension, Row, Transaction, TransactionBehavior};
use serde_json::json;

use crate::error::{Error, Result};
use crate::identifier::{ChannelKey, GenericLocator, Locator, SignalRef};
use crate::postproc::{RunStatus, TaskRunLog, TaskSpec};

pub use types::*;

const SCHEMA: &str = include_str!("schema.sql");

pub struct Catalog {
    conn: Mutex<Connection>,
    path: PathBuf,
}

impl std::fmt::Debug for Catalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Catalog").field("path", &self.path).finish()
    }
}

fn to_ns(t: DateTime<Utc>) -> i64 {
    t.timestamp_nanos_opt().unwrap_or(i64::MAX)
}

fn from_ns(ns: i64) -> DateTime<Utc> {
    DateTime::from_timestamp_nanos(ns)
}

fn bits(x: f64) -> i64 {
    x.to_bits() as i64
}

fn unbits(b: i64) -> f64 {
    f64::from_bits(b as u64)
}

fn decode<T: serde::de::DeserializeOwned>(text: &str) -> rusqlite::Result<T> {
    serde_json::from_str(text).map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
    })
}

fn parse_enum<T: std::str::FromStr<Err = String>>(text: &str) -> rusqlite::Result<T> {
    text.parse::<T>().map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, e.into())
    })
}

fn record_row(row: &Row) -> rusqlite::Result<Record> {
    Ok(Record {
        record_number: row.get(0)?,
        record_type: parse_enum(&row.get::<_, String>(1)?)?,
        created_at: from_ns(row.get(2)?),
        description: row.get(3)?,
    })
}

const GENERIC_COLS: &str = "id, name, data_source, alias, kind, units, description, axes";

fn generic_row(row: &Row) -> rusqlite::Result<GenericSignal> {
    Ok(GenericSignal {
        id: GenericId(row.get(0)?),
        name: row.get(1)?,
        data_source: row.get(2)?,
        alias: row.get(3)?,
        kind: parse_enum(&row.get::<_, String>(4)?)?,
        units: row.get(5)?,
        description: row.get(6)?,
        axes: decode(&row.get::<_, String>(7)?)?,
    })
}

const SIGNAL_COLS: &str = "generic_id, record_number, revision, offset_bits, coefficient_bits, \
     time_axis, axis_revisions, data_file, dataset_name, created_ns, note";

fn signal_row(row: &Row) -> rusqlite::Result<DataSignal> {
    Ok(DataSignal {
        generic_id: GenericId(row.get(0)?),
        record_number: row.get(1)?,
        revision: row.get(2)?,
        offset: unbits(row.get(3)?),
        coefficient: unbits(row.get(4)?),
        time_axis: decode(&row.get::<_, String>(5)?)?,
        axis_revisions: decode(&row.get::<_, String>(6)?)?,
        data_file: row.get::<_, Option<i64>>(7)?.map(FileId),
        dataset_name: row.get(8)?,
        created_at: from_ns(row.get(9)?),
        note: row.get(10)?,
    })
}

const FILE_COLS: &str =
    "id, record_number, relative_path, tier, status, checksum, table_checksum, size_bytes";

fn file_row(row: &Row) -> rusqlite::Result<DataFileRef> {
    let tier = match row.get::<_, String>(3)?.as_str() {
        "PERMANENT" => Tier::Permanent,
        _ => Tier::Cache,
    };
    let status = match row.get::<_, String>(4)?.as_str() {
        "CLOSED" => FileStatus::Closed,
        _ => FileStatus::Open,
    };
    Ok(DataFileRef {
        id: FileId(row.get(0)?),
        record_number: row.get(1)?,
        relative_path: row.get(2)?,
        tier,
        status,
        checksum: row.get::<_, Option<i64>>(5)?.map(|c| c as u32),
        table_checksum: row.get::<_, Option<i64>>(6)?.map(|c| c as u32),
        size_bytes: row.get::<_, i64>(7)? as u64,
    })
}

const MAPPING_COLS: &str =
    "schema, computer_id, board_id, channel_id, generic_id, config_text, valid_from_record";

fn mapping_row(row: &Row) -> rusqlite::Result<ChannelMapping> {
    let schema = match row.get::<_, String>(0)?.as_str() {
        "FS" => ChannelSchema::Fs,
        _ => ChannelSchema::Daq,
    };
    Ok(ChannelMapping {
        schema,
        key: ChannelKey::new(
            row.get::<_, String>(1)?,
            row.get::<_, String>(2)?,
            row.get::<_, String>(3)?,
        ),
        generic_id: GenericId(row.get(4)?),
        config_text: row.get(5)?,
        valid_from_record: row.get(6)?,
    })
}

const RUN_COLS: &str = "id, task_name, record_number, started_ns, ended_ns, status, reason, \
     input_revisions, output_revisions";

fn run_row(row: &Row) -> rusqlite::Result<TaskRunLog> {
    let status: String = row.get(5)?;
    Ok(TaskRunLog {
        id: row.get(0)?,
        task_name: row.get(1)?,
        record_number: row.get(2)?,
        started_at: from_ns(row.get(3)?),
        ended_at: from_ns(row.get(4)?),
        status: RunStatus::parse(&status).unwrap_or(RunStatus::Failed),
        reason: row.get(6)?,
        input_revisions: decode(&row.get::<_, String>(7)?)?,
        output_revisions: decode(&row.get::<_, String>(8)?)?,
    })
}

/// Counts `-1` as the latest of `latest`, `-2` as the one before, ...
fn relative(n: i64, latest: i64) -> Option<i64> {
    match n {
        0 => None,
        n if n > 0 => Some(n),
        n => {
            let k = n.checked_neg()?;
            let v = latest.checked_sub(k)?.checked_add(1)?;
            (v >= 1).then_some(v)
        }
    }
}

// Transaction-scoped helpers shared by several operations.

fn tx_generic(tx: &Connection, id: GenericId) -> Result<Option<GenericSignal>> {
    Ok(tx
        .query_row(
            &format!("SELECT {GENERIC_COLS} FROM generic_signals WHERE id = ?1"),
            [id.0],
            generic_row,
        )
        .optional()?)
}

fn tx_record_exists(tx: &Connection, n: i64) -> Result<bool> {
    Ok(tx
        .query_row(
            "SELECT 1 FROM records WHERE record_number = ?1",
            [n],
            |_| Ok(()),
        )
        .optional()?
        .is_some())
}

fn tx_signal_exists(tx: &Connection, g: GenericId, record: i64, revision: i64) -> Result<bool> {
    Ok(tx
        .query_row(
            "SELECT 1 FROM data_signals WHERE generic_id = ?1 AND record_number = ?2 AND revision = ?3",
            params![g.0, record, revision],
            |_| Ok(()),
        )
        .optional()?
        .is_some())
}

fn tx_file(tx: &Connection, id: FileId) -> Result<Option<DataFileRef>> {
    Ok(tx
        .query_row(
            &format!("SELECT {FILE_COLS} FROM data_files WHERE id = ?1"),
            [id.0],
            file_row,
        )
        .optional()?)
}

fn tx_max_allocated(tx: &Connection, g: GenericId, record: i64) -> Result<i64> {
    Ok(tx.query_row(
        "SELECT COALESCE(MAX(revision), 0) FROM revision_allocations \
         WHERE generic_id = ?1 AND record_number = ?2",
        params![g.0, record],
        |r| r.get(0),
    )?)
}

/// Checks everything about a data signal except its revision.
fn tx_validate_draft(tx: &Connection, d: &DataSignalDraft) -> Result<GenericSignal> {
    let generic = tx_generic(tx, d.generic_id)?
        .ok_or_else(|| Error::UnknownGeneric(d.generic_id.to_string()))?;
    if !tx_record_exists(tx, d.record_number)? {
        return Err(Error::UnknownRecord(d.record_number));
    }
    if !d.offset.is_finite() || !d.coefficient.is_finite() {
        return Err(Error::InvalidArgument(
            "offset and coefficient must be finite".into(),
        ));
    }
    if let TimeAxis::Linear { t0, dt } = d.time_axis {
        if !t0.is_finite() || !dt.is_finite() {
            return Err(Error::InvalidArgument(
                "time axis t0 and dt must be finite".into(),
            ));
        }
    }
    if d.axis_revisions.len() != generic.axes.len() {
        return Err(Error::DanglingAxis(format!(
            "generic {} has {} axes, {} axis revisions given",
            generic.id,
            generic.axes.len(),
            d.axis_revisions.len()
        )));
    }
    for (i, (want, got)) in generic.axes.iter().zip(&d.axis_revisions).enumerate() {
        if *want != got.generic_id {
            return Err(Error::DanglingAxis(format!(
                "axis {i} must be generic {want}, got {}",
                got.generic_id
            )));
        }
        if !tx_signal_exists(tx, got.generic_id, d.record_number, got.revision)? {
            return Err(Error::DanglingAxis(format!(
                "axis {i}: generic {} revision {} not stored for record {}",
                got.generic_id, got.revision, d.record_number
            )));
        }
    }
    if let TimeAxis::Axis {
        generic_id,
        revision,
    } = d.time_axis
    {
        if !tx_signal_exists(tx, generic_id, d.record_number, revision)? {
            return Err(Error::DanglingAxis(format!(
                "time axis generic {generic_id} revision {revision} not stored for record {}",
                d.record_number
            )));
        }
    }
    match (generic.kind, d.data_file) {
        (SignalKind::File, None) => {
            return Err(Error::KindMismatch(format!(
                "FILE signal {} needs a data file",
                generic.name
            )))
        }
        (SignalKind::Linear, Some(_)) => {
            return Err(Error::KindMismatch(format!(
                "LINEAR signal {} cannot reference a data file",
                generic.name
            )))
        }
        (SignalKind::File, Some(fid)) => {
            let file =
                tx_file(tx, fid)?.ok_or_else(|| Error::NotFound(format!("data file {fid}")))?;
            if file.status != FileStatus::Closed {
                return Err(Error::FileStillOpen(fid.0));
            }
            if file.record_number != d.record_number {
                return Err(Error::InvalidArgument(format!(
                    "data file {fid} belongs to record {}, not {}",
                    file.record_number, d.record_number
                )));
            }
            if d.dataset_name.is_none() {
                return Err(Error::InvalidArgument(
                    "FILE signal needs a dataset name".into(),
                ));
            }
        }
        (SignalKind::Linear, None) => {}
    }
    Ok(generic)
}

fn tx_insert_signal(tx: &Connection, ds: &DataSignal) -> Result<()> {
    tx.execute(
        &format!("INSERT INTO data_signals ({SIGNAL_COLS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)"),
        params![
            ds.generic_id.0,
            ds.record_number,
            ds.revision,
            bits(ds.offset),
            bits(ds.coefficient),
            serde_json::to_string(&ds.time_axis)?,
            serde_json::to_string(&ds.axis_revisions)?,
            ds.data_file.map(|f| f.0),
            ds.dataset_name,
            to_ns(ds.created_at),
            ds.note,
        ],
    )?;
    Ok(())
}

impl Catalog {
    /// Opens or creates the catalog file.
    pub fn open(path: impl AsRef<Path>) -> Result<Catalog> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let conn = Connection::open(&path)?;
        conn.busy_timeout(Duration::from_secs(60))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Catalog {
            conn: Mutex::new(conn),
            path,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn read<T>(&self, f: impl FnOnce(&Connection) -> Result<T>) -> Result<T> {
        let conn = self
            .conn
            .lock()
            .map_err(|_| Error::Storage("catalog lock poisoned".into()))?;
        f(&conn)
    }

    fn write<T>(&self, f: impl FnOnce(&Transaction) -> Result<T>) -> Result<T> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| Error::Storage("catalog lock poisoned".into()))?;
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    // ---- records ----

    pub fn create_record(&self, record_type: RecordType, description: &str) -> Result<Record> {
        self.write(|tx| {
            let next: i64 = tx.query_row("SELECT COALESCE(MAX(record_number), 0) + 1 FROM records", [], |r| r.get(0))?;
            let rec = Record {
                record_number: next,
                record_type,
                created_at: Utc::now(),
                description: description.to_string(),
            };
            tx.execute(
                "INSERT INTO records (record_number, record_type, created_ns, description) VALUES (?1, ?2, ?3, ?4)",
                params![rec.record_number, rec.record_type.as_str(), to_ns(rec.created_at), rec.description],
            )?;
            Ok(rec)
        })
    }

    pub fn get_record(&self, record_number: i64) -> Result<Record> {
        self.read(|c| {
            c.query_row(
                "SELECT record_number, record_type, created_ns, description FROM records WHERE record_number = ?1",
                [record_number],
                record_row,
            )
            .optional()?
            .ok_or_else(|| Error::NotFound(format!("record {record_number}")))
        })
    }

    pub fn latest_record_number(&self) -> Result<Option<i64>> {
        self.read(|c| Ok(c.query_row("SELECT MAX(record_number) FROM records", [], |r| r.get(0))?))
    }

    pub fn list_records(&self) -> Result<Vec<Record>> {
        self.read(|c| {
            let mut st = c.prepare(
                "SELECT record_number, record_type, created_ns, description FROM records ORDER BY record_number",
            )?;
            let rows = st.query_map([], record_row)?.collect::<rusqlite::Result<_>>()?;
            Ok(rows)
        })
    }

    /// Resolves a possibly relative record number to an existing one.
    pub fn resolve_record(&self, record_number: i64) -> Result<i64> {
        let latest = self.latest_record_number()?.unwrap_or(0);
        match relative(record_number, latest) {
            Some(n) if n <= latest => Ok(n),
            _ => Err(Error::NotFound(format!("record {record_number}"))),
        }
    }

    // ---- generic signals ----

    pub fn create_generic_signal(&self, spec: &NewGenericSignal) -> Result<GenericSignal> {
        if spec.name.is_empty() || spec.data_source.is_empty() {
            return Err(Error::InvalidArgument(
                "generic signal needs a name and a data source".into(),
            ));
        }
        self.write(|tx| {
            let taken: Option<i64> = tx
                .query_row(
                    "SELECT id FROM generic_signals WHERE name = ?1 AND data_source = ?2",
                    params![spec.name, spec.data_source],
                    |r| r.get(0),
                )
                .optional()?;
            if taken.is_some() {
                return Err(Error::DuplicateName {
                    name: spec.name.clone(),
                    data_source: spec.data_source.clone(),
                });
            }
            if let Some(alias) = &spec.alias {
                let taken: Option<i64> = tx
                    .query_row("SELECT id FROM generic_signals WHERE alias = ?1", [alias], |r| r.get(0))
                    .optional()?;
                if taken.is_some() {
                    return Err(Error::DuplicateAlias(alias.clone()));
                }
            }
            for axis in &spec.axes {
                if tx_generic(tx, *axis)?.is_none() {
                    return Err(Error::UnknownAxis(axis.0));
                }
            }
            tx.execute(
                "INSERT INTO generic_signals (name, data_source, alias, kind, units, description, axes) \
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![
                    spec.name,
                    spec.data_source,
                    spec.alias,
                    spec.kind.as_str(),
                    spec.units,
                    spec.description,
                    serde_json::to_string(&spec.axes)?,
                ],
            )?;
            Ok(GenericSignal {
                id: GenericId(tx.last_insert_rowid()),
                name: spec.name.clone(),
                data_source: spec.data_source.clone(),
                alias: spec.alias.clone(),
                kind: spec.kind,
                units: spec.units.clone(),
                description: spec.description.clone(),
                axes: spec.axes.clone(),
            })
        })
    }

    pub fn get_generic(&self, id: GenericId) -> Result<GenericSignal> {
        self.read(|c| tx_generic(c, id)?.ok_or_else(|| Error::UnknownGeneric(id.to_string())))
    }

    pub fn resolve_generic(&self, locator: &GenericLocator) -> Result<GenericSignal> {
        self.read(|c| {
            let found = match locator {
                GenericLocator::Id { id } => tx_generic(c, GenericId(*id))?,
                GenericLocator::Alias { alias } => c
                    .query_row(
                        &format!("SELECT {GENERIC_COLS} FROM generic_signals WHERE alias = ?1"),
                        [alias],
                        generic_row,
                    )
                    .optional()?,
                GenericLocator::NameSource { name, source } => c
                    .query_row(
                        &format!("SELECT {GENERIC_COLS} FROM generic_signals WHERE name = ?1 AND data_source = ?2"),
                        params![name, source],
                        generic_row,
                    )
                    .optional()?,
            };
            found.ok_or_else(|| Error::NotFound(format!("generic signal {locator}")))
        })
    }

    pub fn list_generic_signals(&self) -> Result<Vec<GenericSignal>> {
        self.read(|c| {
            let mut st = c.prepare(&format!(
                "SELECT {GENERIC_COLS} FROM generic_signals ORDER BY id"
            ))?;
            let rows = st
                .query_map([], generic_row)?
                .collect::<rusqlite::Result<_>>()?;
            Ok(rows)
        })
    }

    // ---- data signals ----

    /// Reserves the next revision for `(generic, record)`.
    pub fn allocate_revision(&self, generic_id: GenericId, record_number: i64) -> Result<i64> {
        self.write(|tx| {
            if tx_generic(tx, generic_id)?.is_none() {
                return Err(Error::UnknownGeneric(generic_id.to_string()));
            }
            if !tx_record_exists(tx, record_number)? {
                return Err(Error::UnknownRecord(record_number));
            }
            let next = tx_max_allocated(tx, generic_id, record_number)? + 1;
            tx.execute(
                "INSERT INTO revision_allocations (generic_id, record_number, revision) VALUES (?1, ?2, ?3)",
                params![generic_id.0, record_number, next],
            )?;
            Ok(next)
        })
    }

    /// Stores a data signal whose revision came from [`Catalog::allocate_revision`].
    pub fn insert_data_signal(&self, ds: &DataSignal) -> Result<DataSignal> {
        self.write(|tx| {
            let allocated = tx
                .query_row(
                    "SELECT 1 FROM revision_allocations WHERE generic_id = ?1 AND record_number = ?2 AND revision = ?3",
                    params![ds.generic_id.0, ds.record_number, ds.revision],
                    |_| Ok(()),
                )
                .optional()?
                .is_some();
            if !allocated || tx_signal_exists(tx, ds.generic_id, ds.record_number, ds.revision)? {
                return Err(Error::RevisionNotAllocated {
                    generic_id: ds.generic_id.0,
                    record_number: ds.record_number,
                    revision: ds.revision,
                });
            }
            tx_validate_draft(tx, &DataSignalDraft::from(ds))?;
            tx_insert_signal(tx, ds)?;
            Ok(ds.clone())
        })
    }

    /// Validates, allocates the next revision and stores the row in one transaction.
    pub fn append_revision(&self, draft: DataSignalDraft) -> Result<DataSignal> {
        self.write(|tx| {
            tx_validate_draft(tx, &draft)?;
            let next = tx_max_allocated(tx, draft.generic_id, draft.record_number)? + 1;
            tx.execute(
                "INSERT INTO revision_allocations (generic_id, record_number, revision) VALUES (?1, ?2, ?3)",
                params![draft.generic_id.0, draft.record_number, next],
            )?;
            let ds = draft.into_signal(next, Utc::now());
            tx_insert_signal(tx, &ds)?;
            Ok(ds)
        })
    }

    pub fn get_data_signal(
        &self,
        generic_id: GenericId,
        record_number: i64,
        revision: i64,
    ) -> Result<DataSignal> {
        self.read(|c| {
            c.query_row(
                &format!(
                    "SELECT {SIGNAL_COLS} FROM data_signals WHERE generic_id = ?1 AND record_number = ?2 AND revision = ?3"
                ),
                params![generic_id.0, record_number, revision],
                signal_row,
            )
            .optional()?
            .ok_or_else(|| {
                Error::NotFound(format!(
                    "data signal generic {generic_id} record {record_number} revision {revision}"
                ))
            })
        })
    }

    /// Highest stored revision of `(generic, record)`, if any.
    pub fn latest_revision(
        &self,
        generic_id: GenericId,
        record_number: i64,
    ) -> Result<Option<i64>> {
        self.read(|c| {
            Ok(c.query_row(
                "SELECT MAX(revision) FROM data_signals WHERE generic_id = ?1 AND record_number = ?2",
                params![generic_id.0, record_number],
                |r| r.get(0),
            )?)
        })
    }

    pub fn list_data_signals(&self, record_number: Option<i64>) -> Result<Vec<DataSignal>> {
        self.read(|c| {
            let mut st = c.prepare(&format!(
                "SELECT {SIGNAL_COLS} FROM data_signals WHERE ?1 IS NULL OR record_number = ?1 \
                 ORDER BY record_number, generic_id, revision"
            ))?;
            let rows = st
                .query_map([record_number], signal_row)?
                .collect::<rusqlite::Result<_>>()?;
            Ok(rows)
        })
    }

    /// Resolves a [`SignalRef`] to its generic signal and stored data signal.
    pub fn resolve(&self, r: &SignalRef) -> Result<(GenericSignal, DataSignal)> {
        let record = self.resolve_record(r.record_number)?;
        let generic = match &r.locator {
            Locator::Generic(loc) => self.resolve_generic(loc)?,
            Locator::Channel(key) => {
                let schema = ChannelSchema::of(r.schema).ok_or_else(|| {
                    Error::InvalidRef(crate::identifier::InvalidRef(
                        "CDB schema with channel key".into(),
                    ))
                })?;
                let m = self.resolve_channel(schema, key, record)?;
                self.get_generic(m.generic_id)?
            }
        };
        let latest = self.latest_revision(generic.id, record)?.unwrap_or(0);
        let revision = match relative(r.revision, latest) {
            Some(v) if v <= latest => v,
            _ => {
                return Err(Error::NotFound(format!(
                    "{} record {record} revision {}",
                    generic.name, r.revision
                )))
            }
        };
        let ds = self.get_data_signal(generic.id, record, revision)?;
        Ok((generic, ds))
    }

    pub fn find_data_signal(&self, r: &SignalRef) -> Result<DataSignal> {
        self.resolve(r).map(|(_, ds)| ds)
    }

    // ---- channel mappings ----

    pub fn set_channel_mapping(
        &self,
        schema: ChannelSchema,
        key: &ChannelKey,
        generic_id: GenericId,
        config_text: &str,
        valid_from_record: i64,
    ) -> Result<ChannelMapping> {
        key.validate().map_err(Error::InvalidArgument)?;
        self.write(|tx| {
            if tx_generic(tx, generic_id)?.is_none() {
                return Err(Error::UnknownGeneric(generic_id.to_string()));
            }
            let dup = tx
                .query_row(
                    "SELECT 1 FROM channel_mappings WHERE schema = ?1 AND computer_id = ?2 AND board_id = ?3 \
                     AND channel_id = ?4 AND valid_from_record = ?5",
                    params![schema.as_str(), key.computer_id, key.board_id, key.channel_id, valid_from_record],
                    |_| Ok(()),
                )
                .optional()?
                .is_some();
            if dup {
                return Err(Error::DuplicateValidFrom {
                    key: format!("{}:{key}", schema.as_str()),
                    valid_from_record,
                });
            }
            tx.execute(
                &format!("INSERT INTO channel_mappings ({MAPPING_COLS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)"),
                params![
                    schema.as_str(),
                    key.computer_id,
                    key.board_id,
                    key.channel_id,
                    generic_id.0,
                    config_text,
                    valid_from_record
                ],
            )?;
            Ok(ChannelMapping {
                schema,
                key: key.clone(),
                generic_id,
                config_text: config_text.to_string(),
                valid_from_record,
            })
        })
    }

    /// The mapping with the greatest `valid_from_record <= record_number`.
    pub fn resolve_channel(
        &self,
        schema: ChannelSchema,
        key: &ChannelKey,
        record_number: i64,
    ) -> Result<ChannelMapping> {
        self.read(|c| {
            c.query_row(
                &format!(
                    "SELECT {MAPPING_COLS} FROM channel_mappings WHERE schema = ?1 AND computer_id = ?2 \
                     AND board_id = ?3 AND channel_id = ?4 AND valid_from_record <= ?5 \
                     ORDER BY valid_from_record DESC LIMIT 1"
                ),
                params![schema.as_str(), key.computer_id, key.board_id, key.channel_id, record_number],
                mapping_row,
            )
            .optional()?
            .ok_or_else(|| Error::NoMapping(format!("{}:{key} at record {record_number}", schema.as_str())))
        })
    }

    pub fn list_channel_mappings(&self) -> Result<Vec<ChannelMapping>> {
        self.read(|c| {
            let mut st = c.prepare(&format!(
                "SELECT {MAPPING_COLS} FROM channel_mappings \
                 ORDER BY schema, computer_id, board_id, channel_id, valid_from_record"
            ))?;
            let rows = st
                .query_map([], mapping_row)?
                .collect::<rusqlite::Result<_>>()?;
            Ok(rows)
        })
    }

    // ---- data files ----

    /// Registers a new OPEN cache-tier file; `path_for` maps the fresh id to its relative path.
    pub fn register_data_file(
        &self,
        record_number: i64,
        path_for: impl FnOnce(FileId) -> String,
    ) -> Result<DataFileRef> {
        self.write(|tx| {
            if !tx_record_exists(tx, record_number)? {
                return Err(Error::UnknownRecord(record_number));
            }
            tx.execute(
                "INSERT INTO data_files (record_number, relative_path, tier, status, size_bytes) \
                 VALUES (?1, '', 'CACHE', 'OPEN', 0)",
                [record_number],
            )?;
            let id = FileId(tx.last_insert_rowid());
            let relative_path = path_for(id);
            tx.execute(
                "UPDATE data_files SET relative_path = ?1 WHERE id = ?2",
                params![relative_path, id.0],
            )?;
            Ok(DataFileRef {
                id,
                record_number,
                relative_path,
                tier: Tier::Cache,
                status: FileStatus::Open,
                checksum: None,
                table_checksum: None,
                size_bytes: 0,
            })
        })
    }

    pub fn get_data_file(&self, id: FileId) -> Result<DataFileRef> {
        self.read(|c| tx_file(c, id)?.ok_or_else(|| Error::NotFound(format!("data file {id}"))))
    }

    pub fn mark_file_closed(
        &self,
        id: FileId,
        checksum: u32,
        table_checksum: u32,
        size_bytes: u64,
    ) -> Result<DataFileRef> {
        self.write(|tx| {
            let file = tx_file(tx, id)?.ok_or_else(|| Error::NotFound(format!("data file {id}")))?;
            if file.status == FileStatus::Closed {
                return Err(Error::AlreadyClosed);
            }
            tx.execute(
                "UPDATE data_files SET status = 'CLOSED', checksum = ?1, table_checksum = ?2, size_bytes = ?3 \
                 WHERE id = ?4",
                params![checksum as i64, table_checksum as i64, size_bytes as i64, id.0],
            )?;
            Ok(DataFileRef {
                status: FileStatus::Closed,
                checksum: Some(checksum),
                table_checksum: Some(table_checksum),
                size_bytes,
                ..file
            })
        })
    }

    pub fn set_file_tier(&self, id: FileId, tier: Tier) -> Result<DataFileRef> {
        self.write(|tx| {
            let file =
                tx_file(tx, id)?.ok_or_else(|| Error::NotFound(format!("data file {id}")))?;
            if tier == Tier::Permanent && file.status != FileStatus::Closed {
                return Err(Error::FileOpen(id.0));
            }
            tx.execute(
                "UPDATE data_files SET tier = ?1 WHERE id = ?2",
                params![tier.as_str(), id.0],
            )?;
            Ok(DataFileRef { tier, ..file })
        })
    }

    pub fn list_data_files(&self) -> Result<Vec<DataFileRef>> {
        self.read(|c| {
            let mut st = c.prepare(&format!("SELECT {FILE_COLS} FROM data_files ORDER BY id"))?;
            let rows = st
                .query_map([], file_row)?
                .collect::<rusqlite::Result<_>>()?;
            Ok(rows)
        })
    }

    // ---- post-processing ----

    /// Inserts a task if `check` accepts it against the tasks already stored.
    /// Both happen inside one write transaction.
    pub fn insert_task(
        &self,
        spec: &TaskSpec,
        check: impl FnOnce(&[TaskSpec]) -> Result<()>,
    ) -> Result<Vec<TaskSpec>> {
        self.write(|tx| {
            let mut tasks = tx_tasks(tx)?;
            check(&tasks)?;
            tx.execute(
                "INSERT INTO tasks (name, spec) VALUES (?1, ?2)",
                params![spec.name, serde_json::to_string(spec)?],
            )?;
            tasks.push(spec.clone());
            Ok(tasks)
        })
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>> {
        self.read(tx_tasks)
    }

    pub fn append_task_run(&self, log: &TaskRunLog) -> Result<TaskRunLog> {
        self.write(|tx| {
            tx.execute(
                "INSERT INTO task_runs (task_name, record_number, started_ns, ended_ns, status, reason, \
                 input_revisions, output_revisions) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
                params![
                    log.task_name,
                    log.record_number,
                    to_ns(log.started_at),
                    to_ns(log.ended_at),
                    log.status.as_str(),
                    log.reason,
                    serde_json::to_string(&log.input_revisions)?,
                    serde_json::to_string(&log.output_revisions)?,
                ],
            )?;
            Ok(TaskRunLog {
                id: tx.last_insert_rowid(),
                ..log.clone()
            })
        })
    }

    pub fn task_runs(&self, record_number: Option<i64>) -> Result<Vec<TaskRunLog>> {
        self.read(|c| {
            let mut st = c.prepare(&format!(
                "SELECT {RUN_COLS} FROM task_runs WHERE ?1 IS NULL OR record_number = ?1 ORDER BY id"
            ))?;
            let rows = st.query_map([record_number], run_row)?.collect::<rusqlite::Result<_>>()?;
            Ok(rows)
        })
    }

    pub fn last_ok_run(&self, task_name: &str, record_number: i64) -> Result<Option<TaskRunLog>> {
        self.read(|c| {
            Ok(c.query_row(
                &format!(
                    "SELECT {RUN_COLS} FROM task_runs WHERE task_name = ?1 AND record_number = ?2 \
                     AND status = 'OK' ORDER BY id DESC LIMIT 1"
                ),
                params![task_name, record_number],
                run_row,
            )
            .optional()?)
        })
    }

    // ---- integrity ----

    /// Full referential-integrity check of the catalog.
    pub fn audit(&self) -> Result<Vec<AuditViolation>> {
        let records = self.list_records()?;
        let generics: BTreeMap<GenericId, GenericSignal> = self
            .list_generic_signals()?
            .into_iter()
            .map(|g| (g.id, g))
            .collect();
        let signals = self.list_data_signals(None)?;
        let files: BTreeMap<FileId, DataFileRef> = self
            .list_data_files()?
            .into_iter()
            .map(|f| (f.id, f))
            .collect();
        let mappings = self.list_channel_mappings()?;
        let allocations: Vec<(i64, i64, i64)> = self.read(|c| {
            let mut st =
                c.prepare("SELECT generic_id, record_number, revision FROM revision_allocations")?;
            let rows = st
                .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?
                .collect::<rusqlite::Result<_>>()?;
            Ok(rows)
        })?;

        let mut out = Vec::new();
        let mut violation = |rule: &str, detail: String| {
            out.push(AuditViolation {
                rule: rule.to_string(),
                detail,
            })
        };

        for (i, rec) in records.iter().enumerate() {
            if rec.record_number != i as i64 + 1 {
                violation(
                    "dense-records",
                    format!("record {} at position {}", rec.record_number, i + 1),
                );
            }
        }
        for g in generics.values() {
            for axis in &g.axes {
                if !generics.contains_key(axis) {
                    violation(
                        "generic-axis",
                        format!("generic {} axis {axis} missing", g.id),
                    );
                }
            }
        }

        let mut by_pair: BTreeMap<(GenericId, i64), BTreeSet<i64>> = BTreeMap::new();
        for s in &signals {
            by_pair
                .entry((s.generic_id, s.record_number))
                .or_default()
                .insert(s.revision);
        }
        for ((g, r), revs) in &by_pair {
            let max = *revs.iter().next_back().unwrap_or(&0);
            if revs.len() as i64 != max || revs.iter().next() != Some(&1) {
                violation(
                    "gapless-revisions",
                    format!("generic {g} record {r}: revisions {revs:?}"),
                );
            }
        }
        for (g, r, rev) in &allocations {
            let stored = by_pair
                .get(&(GenericId(*g), *r))
                .is_some_and(|s| s.contains(rev));
            if !stored {
                violation(
                    "allocation-unused",
                    format!("generic {g} record {r} revision {rev}"),
                );
            }
        }

        let exists =
            |g: GenericId, r: i64, rev: i64| by_pair.get(&(g, r)).is_some_and(|s| s.contains(&rev));
        for s in &signals {
            let tag = format!(
                "generic {} record {} revision {}",
                s.generic_id, s.record_number, s.revision
            );
            let Some(generic) = generics.get(&s.generic_id) else {
                violation("signal-generic", tag);
                continue;
            };
            if s.axis_revisions.len() != generic.axes.len() {
                violation("axis-count", tag.clone());
            }
            for a in &s.axis_revisions {
                if !exists(a.generic_id, s.record_number, a.revision) {
                    violation(
                        "axis-reference",
                        format!("{tag}: axis {} rev {}", a.generic_id, a.revision),
                    );
                }
            }
            if let TimeAxis::Axis {
                generic_id,
                revision,
            } = s.time_axis
            {
                if !exists(generic_id, s.record_number, revision) {
                    violation("time-axis-reference", tag.clone());
                }
            }
            match (generic.kind, s.data_file) {
                (SignalKind::File, Some(fid)) => match files.get(&fid) {
                    None => violation("data-file-reference", format!("{tag}: file {fid}")),
                    Some(f) if f.status != FileStatus::Closed => {
                        violation("data-file-closed", format!("{tag}: file {fid}"))
                    }
                    Some(_) => {}
                },
                (SignalKind::File, None) => violation("file-kind", tag),
                (SignalKind::Linear, Some(_)) => violation("linear-kind", tag),
                (SignalKind::Linear, None) => {}
            }
        }
        for f in files.values() {
            if f.tier == Tier::Permanent && f.status != FileStatus::Closed {
                violation("permanent-closed", format!("file {}", f.id));
            }
            if f.status == FileStatus::Closed
                && (f.checksum.is_none() || f.table_checksum.is_none())
            {
                violation("closed-checksum", format!("file {}", f.id));
            }
        }
        for m in &mappings {
            if !generics.contains_key(&m.generic_id) {
                violation(
                    "mapping-generic",
                    format!("{}:{} -> {}", m.schema.as_str(), m.key, m.generic_id),
                );
            }
        }
        Ok(out)
    }

    /// Whole catalog as one JSON document with stable ordering.
    pub fn export_json(&self) -> Result<serde_json::Value> {
        Ok(json!({
            "records": self.list_records()?,
            "generic_signals": self.list_generic_signals()?,
            "data_signals": self.list_data_signals(None)?,
            "data_files": self.list_data_files()?,
            "channel_mappings": self.list_channel_mappings()?,
            "tasks": self.tasks()?,
            "task_runs": self.task_runs(None)?,
        }))
    }
}

fn tx_tasks(c: &Connection) -> Result<Vec<TaskSpec>> {
    let mut st = c.prepare("SELECT spec FROM tasks ORDER BY seq")?;
    let rows = st
        .query_map([], |r| r.get::<_, String>(0))?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    rows.iter().map(|s| Ok(serde_json::from_str(s)?)).collect()
}
