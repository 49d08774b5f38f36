use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::identifier::{ChannelKey, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenericId(pub i64);

impl fmt::Display for GenericId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FileId(pub i64);

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordType {
    Experiment,
    Model,
    Void,
}

impl RecordType {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordType::Experiment => "EXPERIMENT",
            RecordType::Model => "MODEL",
            RecordType::Void => "VOID",
        }
    }
}

impl std::str::FromStr for RecordType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "EXPERIMENT" => Ok(RecordType::Experiment),
            "MODEL" => Ok(RecordType::Model),
            "VOID" => Ok(RecordType::Void),
            _ => Err(format!("unknown record type {s:?}")),
        }
    }
}

/// An experimental discharge, a simulation, or a void (test) record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub record_number: i64,
    pub record_type: RecordType,
    pub created_at: DateTime<Utc>,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SignalKind {
    /// Numbers live in a data file.
    File,
    /// Numbers are `offset + coefficient * i`.
    Linear,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::File => "FILE",
            SignalKind::Linear => "LINEAR",
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FILE" => Ok(SignalKind::File),
            "LINEAR" => Ok(SignalKind::Linear),
            _ => Err(format!("unknown signal kind {s:?}")),
        }
    }
}

/// Fields of a generic signal supplied by the caller; the catalog assigns the id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewGenericSignal {
    pub name: String,
    pub data_source: String,
    #[serde(default)]
    pub alias: Option<String>,
    pub kind: SignalKind,
    #[serde(default)]
    pub units: String,
    #[serde(default)]
    pub description: String,
    /// One generic-signal id per data dimension.
    #[serde(default)]
    pub axes: Vec<GenericId>,
}

impl NewGenericSignal {
    pub fn new(name: impl Into<String>, data_source: impl Into<String>, kind: SignalKind) -> Self {
        NewGenericSignal {
            name: name.into(),
            data_source: data_source.into(),
            alias: None,
            kind,
            units: String::new(),
            description: String::new(),
            axes: Vec::new(),
        }
    }

    pub fn alias(mut self, alias: impl Into<String>) -> Self {
        self.alias = Some(alias.into());
        self
    }

    pub fn units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn axes(mut self, axes: impl IntoIterator<Item = GenericId>) -> Self {
        self.axes = axes.into_iter().collect();
        self
    }
}

/// Type-level description of a storable quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericSignal {
    pub id: GenericId,
    pub name: String,
    pub data_source: String,
    pub alias: Option<String>,
    pub kind: SignalKind,
    pub units: String,
    pub description: String,
    pub axes: Vec<GenericId>,
}

/// A concrete data signal: generic signal plus revision (within a known record).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AxisRevision {
    pub generic_id: GenericId,
    pub revision: i64,
}

impl AxisRevision {
    pub fn new(generic_id: GenericId, revision: i64) -> Self {
        AxisRevision {
            generic_id,
            revision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeAxis {
    #[default]
    None,
    /// `t[i] = t0 + dt * i` along the leading dimension, seconds.
    Linear { t0: f64, dt: f64 },
    /// Time taken from another data signal of the same record.
    Axis {
        generic_id: GenericId,
        revision: i64,
    },
}

/// One stored realization of a generic signal. Rows are never mutated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSignal {
    pub generic_id: GenericId,
    pub record_number: i64,
    pub revision: i64,
    pub offset: f64,
    pub coefficient: f64,
    pub time_axis: TimeAxis,
    pub axis_revisions: Vec<AxisRevision>,
    pub data_file: Option<FileId>,
    pub dataset_name: Option<String>,
    pub created_at: DateTime<Utc>,
    pub note: String,
}

/// A data signal before its revision is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSignalDraft {
    pub generic_id: GenericId,
    pub record_number: i64,
    pub offset: f64,
    pub coefficient: f64,
    pub time_axis: TimeAxis,
    pub axis_revisions: Vec<AxisRevision>,
    pub data_file: Option<FileId>,
    pub dataset_name: Option<String>,
    pub note: String,
}

impl DataSignalDraft {
    pub fn into_signal(self, revision: i64, created_at: DateTime<Utc>) -> DataSignal {
        DataSignal {
            generic_id: self.generic_id,
            record_number: self.record_number,
            revision,
            offset: self.offset,
            coefficient: self.coefficient,
            time_axis: self.time_axis,
            axis_revisions: self.axis_revisions,
            data_file: self.data_file,
            dataset_name: self.dataset_name,
            created_at,
            note: self.note,
        }
    }
}

impl From<&DataSignal> for DataSignalDraft {
    fn from(ds: &DataSignal) -> Self {
        DataSignalDraft {
            generic_id: ds.generic_id,
            record_number: ds.record_number,
            offset: ds.offset,
            coefficient: ds.coefficient,
            time_axis: ds.time_axis,
            axis_revisions: ds.axis_revisions.clone(),
            data_file: ds.data_file,
            dataset_name: ds.dataset_name.clone(),
            note: ds.note.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Tier {
    Cache,
    Permanent,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Cache => "CACHE",
            Tier::Permanent => "PERMANENT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FileStatus {
    Open,
    Closed,
}

impl FileStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FileStatus::Open => "OPEN",
            FileStatus::Closed => "CLOSED",
        }
    }
}

/// Catalog descriptor of one container file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFileRef {
    pub id: FileId,
    pub record_number: i64,
    /// Path below the tier root; identical in both tiers.
    pub relative_path: String,
    pub tier: Tier,
    pub status: FileStatus,
    /// CRC32 of the payload region.
    pub checksum: Option<u32>,
    /// CRC32 of the header and dataset table.
    pub table_checksum: Option<u32>,
    pub size_bytes: u64,
}

/// Which channel namespace a mapping belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelSchema {
    #[serde(rename = "DAQ")]
    Daq,
    #[serde(rename = "FS")]
    Fs,
}

impl ChannelSchema {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelSchema::Daq => "DAQ",
            ChannelSchema::Fs => "FS",
        }
    }

    pub fn of(schema: Schema) -> Option<ChannelSchema> {
        match schema {
            Schema::Daq => Some(ChannelSchema::Daq),
            Schema::Fs => Some(ChannelSchema::Fs),
            Schema::Cdb => None,
        }
    }
}

/// What a given acquisition channel measures, from `valid_from_record` on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMapping {
    pub schema: ChannelSchema,
    pub key: ChannelKey,
    pub generic_id: GenericId,
    pub config_text: String,
    pub valid_from_record: i64,
}

/// A finding of [`Catalog::audit`](super::Catalog::audit).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub rule: String,
    pub detail: String,
}
