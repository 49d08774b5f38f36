//! Reading and storing signals.
//!
//! [`Store`] ties the catalog and the file store together. Reads resolve a
//! `str_id`, load numbers from the container file (FILE signals) or evaluate
//! the linear function (LINEAR signals), and apply the data signal's linear
//! transform `physical = raw * coefficient + offset` unless `[raw]` is asked
//! for. Every write appends a new revision.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{
    AuditViolation, AxisRevision, Catalog, DataSignal, DataSignalDraft, FileId, FileStatus,
    GenericId, GenericSignal, SignalKind, Tier, TimeAxis,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::filestore::{Dataset, Dtype, FileStore};
use crate::identifier::{parse_str_id, GenericLocator, SignalRef, UnitsTag};

/// A data signal with its numbers, time base and (one level of) axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub meta: DataSignal,
    pub generic: GenericSignal,
    pub units: UnitsTag,
    pub shape: Vec<u64>,
    pub values: Vec<f64>,
    pub time: Option<Vec<f64>>,
    pub axes: Vec<Signal>,
}

impl Signal {
    /// Fully explicit identifier of this revision.
    pub fn str_id(&self) -> String {
        signal_str_id(&self.generic, &self.meta, self.units)
    }
}

pub fn signal_str_id(generic: &GenericSignal, meta: &DataSignal, units: UnitsTag) -> String {
    let locator = match &generic.alias {
        Some(a) if GenericLocator::alias(a.as_str()).validate().is_ok() => {
            GenericLocator::alias(a.as_str())
        }
        _ => GenericLocator::id(generic.id.0),
    };
    SignalRef::generic(locator)
        .at(meta.record_number, meta.revision)
        .with_units(units)
        .to_string()
}

/// `raw * coefficient + offset`, element-wise.
pub fn apply_transform(raw: &[f64], coefficient: f64, offset: f64) -> Vec<f64> {
    raw.iter().map(|&r| r * coefficient + offset).collect()
}

/// `[offset + coefficient * i for i in 0..length]` of a LINEAR data signal.
pub fn materialize_linear(
    generic: &GenericSignal,
    meta: &DataSignal,
    length: u64,
) -> Result<Vec<f64>> {
    if generic.kind != SignalKind::Linear {
        return Err(Error::KindMismatch(format!(
            "{} is not a LINEAR signal",
            generic.name
        )));
    }
    Ok((0..length)
        .map(|i| meta.offset + meta.coefficient * i as f64)
        .collect())
}

/// Where a stored signal's numbers come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    File { file: FileId, dataset: String },
    Linear,
}

/// Arguments of [`Store::store_signal`].
#[derive(Debug, Clone, PartialEq)]
pub struct StoreRequest {
    pub generic: GenericLocator,
    pub record: i64,
    pub payload: Payload,
    pub offset: f64,
    pub coefficient: f64,
    pub time_axis: TimeAxis,
    pub axes: Vec<AxisRevision>,
    pub note: String,
}

impl StoreRequest {
    pub fn new(generic: GenericLocator, record: i64, payload: Payload) -> Self {
        StoreRequest {
            generic,
            record,
            payload,
            offset: 0.0,
            coefficient: 1.0,
            time_axis: TimeAxis::None,
            axes: Vec::new(),
            note: String::new(),
        }
    }

    pub fn transform(mut self, coefficient: f64, offset: f64) -> Self {
        self.coefficient = coefficient;
        self.offset = offset;
        self
    }

    pub fn time_axis(mut self, t: TimeAxis) -> Self {
        self.time_axis = t;
        self
    }

    pub fn axes(mut self, axes: Vec<AxisRevision>) -> Self {
        self.axes = axes;
        self
    }
}

/// How [`Store::put_signal`] obtains one axis of the main signal.
#[derive(Debug, Clone, PartialEq)]
pub enum AxisInput {
    /// New numbers, written into the same file as the main data.
    Values(Dataset),
    /// A new LINEAR axis signal.
    Linear { offset: f64, coefficient: f64 },
    /// An already stored revision of the axis signal in the same record.
    Existing(i64),
}

/// Arguments of [`Store::put_signal`].
#[derive(Debug, Clone, PartialEq)]
pub struct PutRequest {
    pub generic: GenericLocator,
    pub record: i64,
    pub values: Dataset,
    pub time_axis: TimeAxis,
    pub axes: Vec<AxisInput>,
    pub offset: f64,
    pub coefficient: f64,
    pub note: String,
}

impl PutRequest {
    pub fn new(generic: GenericLocator, record: i64, values: Dataset) -> Self {
        PutRequest {
            generic,
            record,
            values,
            time_axis: TimeAxis::None,
            axes: Vec::new(),
            offset: 0.0,
            coefficient: 1.0,
            note: String::new(),
        }
    }

    pub fn time_axis(mut self, t: TimeAxis) -> Self {
        self.time_axis = t;
        self
    }

    pub fn axes(mut self, axes: Vec<AxisInput>) -> Self {
        self.axes = axes;
        self
    }

    pub fn transform(mut self, coefficient: f64, offset: f64) -> Self {
        self.coefficient = coefficient;
        self.offset = offset;
        self
    }
}

/// Metadata changes for [`Store::update_signal`]; `None` keeps the source value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalUpdate {
    pub offset: Option<f64>,
    pub coefficient: Option<f64>,
    pub time_axis: Option<TimeAxis>,
    pub axis_revisions: Option<Vec<AxisRevision>>,
}

#[derive(Debug, Clone)]
pub struct Store {
    catalog: Arc<Catalog>,
    files: FileStore,
}

impl Store {
    pub fn open(config: &Config) -> Result<Store> {
        let catalog = Arc::new(Catalog::open(&config.catalog_path)?);
        let files = FileStore::new(Arc::clone(&catalog), &config.cache_root, &config.data_root)?;
        Ok(Store { catalog, files })
    }

    pub fn new(files: FileStore) -> Store {
        Store {
            catalog: Arc::clone(files.catalog()),
            files,
        }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn files(&self) -> &FileStore {
        &self.files
    }

    // ---- reading ----

    pub fn get_signal(&self, str_id: &str) -> Result<Signal> {
        self.get(&parse_str_id(str_id)?)
    }

    pub fn get(&self, r: &SignalRef) -> Result<Signal> {
        let (generic, meta) = self.catalog.resolve(r)?;
        self.load(generic, meta, r.units, None, true)
    }

    /// Like [`Store::get`], with the length LINEAR signals need.
    pub fn get_with_length(&self, r: &SignalRef, length: u64) -> Result<Signal> {
        let (generic, meta) = self.catalog.resolve(r)?;
        self.load(generic, meta, r.units, Some(length), true)
    }

    /// The stored dataset of a FILE signal, untransformed and in its own dtype.
    pub fn read_raw(&self, r: &SignalRef) -> Result<(DataSignal, Dataset)> {
        let (generic, meta) = self.catalog.resolve(r)?;
        let ds = self.raw_dataset(&generic, &meta)?;
        Ok((meta, ds))
    }

    fn raw_dataset(&self, generic: &GenericSignal, meta: &DataSignal) -> Result<Dataset> {
        match (&meta.data_file, &meta.dataset_name) {
            (Some(file), Some(name)) => self.files.read(*file, name),
            _ => Err(Error::KindMismatch(format!(
                "{} has no data file",
                generic.name
            ))),
        }
    }

    fn load(
        &self,
        generic: GenericSignal,
        meta: DataSignal,
        units: UnitsTag,
        length: Option<u64>,
        with_axes: bool,
    ) -> Result<Signal> {
        let (shape, raw) = match generic.kind {
            SignalKind::File => {
                let ds = self.raw_dataset(&generic, &meta)?;
                (ds.shape.clone(), ds.to_f64_vec())
            }
            SignalKind::Linear => {
                let n = length.ok_or_else(|| Error::LengthRequired(generic.name.clone()))?;
                (vec![n], (0..n).map(|i| i as f64).collect())
            }
        };
        let values = match units {
            UnitsTag::Default => apply_transform(&raw, meta.coefficient, meta.offset),
            UnitsTag::Raw => raw,
        };
        let leading = shape.first().copied().unwrap_or(1);
        let time = match meta.time_axis {
            TimeAxis::None => None,
            TimeAxis::Linear { t0, dt } => Some((0..leading).map(|i| t0 + dt * i as f64).collect()),
            TimeAxis::Axis {
                generic_id,
                revision,
            } => {
                let t = self.load_axis(generic_id, meta.record_number, revision, leading)?;
                Some(t.values)
            }
        };
        let mut axes = Vec::new();
        if with_axes {
            for (i, a) in meta.axis_revisions.iter().enumerate() {
                let len = shape.get(i).copied().unwrap_or(1);
                axes.push(self.load_axis(a.generic_id, meta.record_number, a.revision, len)?);
            }
        }
        Ok(Signal {
            meta,
            generic,
            units,
            shape,
            values,
            time,
            axes,
        })
    }

    fn load_axis(
        &self,
        generic_id: GenericId,
        record: i64,
        revision: i64,
        length: u64,
    ) -> Result<Signal> {
        let generic = self.catalog.get_generic(generic_id)?;
        let meta = self.catalog.get_data_signal(generic_id, record, revision)?;
        self.load(generic, meta, UnitsTag::Default, Some(length), false)
    }

    // ---- writing ----

    /// Stores one data signal over an already written (and closed) file, or a LINEAR one.
    pub fn store_signal(&self, req: StoreRequest) -> Result<DataSignal> {
        let generic = self.catalog.resolve_generic(&req.generic)?;
        let record = self.existing_record(req.record)?;
        let (data_file, dataset_name, shape) = match req.payload {
            Payload::File { file, dataset } => {
                let file_ref = self.catalog.get_data_file(file)?;
                if file_ref.status != FileStatus::Closed {
                    return Err(Error::FileStillOpen(file.0));
                }
                let entry = self
                    .files
                    .list_datasets(&file_ref)?
                    .into_iter()
                    .find(|e| e.name == dataset)
                    .ok_or_else(|| {
                        Error::NotFound(format!("dataset {dataset:?} in file {file}"))
                    })?;
                (Some(file), Some(dataset), Some(entry.shape))
            }
            Payload::Linear => (None, None, None),
        };
        let draft = DataSignalDraft {
            generic_id: generic.id,
            record_number: record,
            offset: req.offset,
            coefficient: req.coefficient,
            time_axis: req.time_axis,
            axis_revisions: req.axes,
            data_file,
            dataset_name,
            note: req.note,
        };
        if let Some(shape) = &shape {
            self.check_axis_lengths(&generic, &draft.axis_revisions, record, shape)?;
        }
        self.catalog.append_revision(draft)
    }

    fn existing_record(&self, record: i64) -> Result<i64> {
        self.catalog
            .resolve_record(record)
            .map_err(|_| Error::UnknownRecord(record))
    }

    /// FILE axes must be as long as the dimension they describe.
    fn check_axis_lengths(
        &self,
        generic: &GenericSignal,
        axes: &[AxisRevision],
        record: i64,
        shape: &[u64],
    ) -> Result<()> {
        if generic.axes.is_empty() {
            return Ok(());
        }
        if shape.len() != generic.axes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} has {} axes but data has {} dimensions",
                generic.name,
                generic.axes.len(),
                shape.len()
            )));
        }
        for (i, a) in axes.iter().enumerate() {
            let Ok(meta) = self
                .catalog
                .get_data_signal(a.generic_id, record, a.revision)
            else {
                continue; // reported as DanglingAxis by the catalog
            };
            if let (Some(file), Some(name)) = (meta.data_file, &meta.dataset_name) {
                let file_ref = self.catalog.get_data_file(file)?;
                let entry = self
                    .files
                    .list_datasets(&file_ref)?
                    .into_iter()
                    .find(|e| &e.name == name);
                if let Some(e) = entry {
                    let len: u64 = e.shape.iter().product();
                    if len != shape[i] {
                        return Err(Error::ShapeMismatch(format!(
                            "axis {i} has {len} points, dimension has {}",
                            shape[i]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Creates a file, writes the values and any new axes into it, closes it,
    /// stores the axis signals and then the main signal.
    pub fn put_signal(&self, req: PutRequest) -> Result<DataSignal> {
        let generic = self.catalog.resolve_generic(&req.generic)?;
        let record = self.existing_record(req.record)?;
        if generic.kind != SignalKind::File {
            return Err(Error::KindMismatch(format!(
                "put_signal needs a FILE signal, {} is LINEAR",
                generic.name
            )));
        }
        req.values.validate()?;
        if req.axes.len() != generic.axes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} has {} axes, {} given",
                generic.name,
                generic.axes.len(),
                req.axes.len()
            )));
        }
        if !generic.axes.is_empty() && req.values.shape.len() != generic.axes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} is {}-dimensional, values have shape {:?}",
                generic.name,
                generic.axes.len(),
                req.values.shape
            )));
        }
        let mut axis_generics = Vec::with_capacity(req.axes.len());
        for (i, (axis_id, input)) in generic.axes.iter().zip(&req.axes).enumerate() {
            let ag = self.catalog.get_generic(*axis_id)?;
            match input {
                AxisInput::Values(ds) => {
                    ds.validate()?;
                    if ag.kind != SignalKind::File {
                        return Err(Error::KindMismatch(format!(
                            "axis {i} ({}) is LINEAR",
                            ag.name
                        )));
                    }
                    if ds.len() as u64 != req.values.shape[i] {
                        return Err(Error::ShapeMismatch(format!(
                            "axis {i} has {} points, dimension has {}",
                            ds.len(),
                            req.values.shape[i]
                        )));
                    }
                }
                AxisInput::Linear { .. } => {
                    if ag.kind != SignalKind::Linear {
                        return Err(Error::KindMismatch(format!(
                            "axis {i} ({}) is a FILE signal",
                            ag.name
                        )));
                    }
                }
                AxisInput::Existing(rev) => {
                    self.catalog
                        .get_data_signal(ag.id, record, *rev)
                        .map_err(|_| {
                            Error::DanglingAxis(format!("axis {i} ({}) revision {rev}", ag.name))
                        })?;
                }
            }
            if !matches!(input, AxisInput::Existing(_)) && !ag.axes.is_empty() {
                return Err(Error::DanglingAxis(format!(
                    "axis {i} ({}) has axes of its own; store it first",
                    ag.name
                )));
            }
            axis_generics.push(ag);
        }

        let mut writer = self.files.new_data_file(record, &generic.name)?;
        let mut main = req.values.clone();
        main.name = "data".into();
        writer.write_dataset(&main)?;
        for (i, input) in req.axes.iter().enumerate() {
            if let AxisInput::Values(ds) = input {
                let mut ds = ds.clone();
                ds.name = format!("axis{i}");
                writer.write_dataset(&ds)?;
            }
        }
        let file = writer.close()?.id;

        let mut axis_revisions = Vec::with_capacity(req.axes.len());
        for (i, (ag, input)) in axis_generics.iter().zip(&req.axes).enumerate() {
            let locator = GenericLocator::id(ag.id.0);
            let revision = match input {
                AxisInput::Values(_) => {
                    let payload = Payload::File {
                        file,
                        dataset: format!("axis{i}"),
                    };
                    self.store_signal(StoreRequest::new(locator, record, payload))?
                        .revision
                }
                AxisInput::Linear {
                    offset,
                    coefficient,
                } => {
                    self.store_signal(
                        StoreRequest::new(locator, record, Payload::Linear)
                            .transform(*coefficient, *offset),
                    )?
                    .revision
                }
                AxisInput::Existing(rev) => *rev,
            };
            axis_revisions.push(AxisRevision::new(ag.id, revision));
        }

        let mut main_req = StoreRequest::new(
            GenericLocator::id(generic.id.0),
            record,
            Payload::File {
                file,
                dataset: "data".into(),
            },
        )
        .transform(req.coefficient, req.offset)
        .time_axis(req.time_axis)
        .axes(axis_revisions);
        main_req.note = req.note;
        self.store_signal(main_req)
    }

    /// New revision with changed metadata, sharing the source's data file.
    pub fn update_signal(&self, str_id: &str, update: SignalUpdate) -> Result<DataSignal> {
        let r = parse_str_id(str_id)?;
        let (generic, source) = self.catalog.resolve(&r)?;
        let mut draft = DataSignalDraft::from(&source);
        if let Some(o) = update.offset {
            draft.offset = o;
        }
        if let Some(c) = update.coefficient {
            draft.coefficient = c;
        }
        if let Some(t) = update.time_axis {
            draft.time_axis = t;
        }
        if let Some(axes) = update.axis_revisions {
            if let (Some(file), Some(name)) = (source.data_file, &source.dataset_name) {
                let shape = self.files.read(file, name)?.shape;
                self.check_axis_lengths(&generic, &axes, source.record_number, &shape)?;
            }
            draft.axis_revisions = axes;
        }
        self.catalog.append_revision(draft)
    }

    /// Catalog audit plus on-disk presence and read-only state of every closed file.
    pub fn audit(&self) -> Result<Vec<AuditViolation>> {
        let mut out = self.catalog.audit()?;
        for f in self.catalog.list_data_files()? {
            let here = self.files.path_of(&f);
            let other_tier = match f.tier {
                Tier::Cache => Tier::Permanent,
                Tier::Permanent => Tier::Cache,
            };
            let there = self.files.tier_root(other_tier).join(&f.relative_path);
            let mut push = |rule: &str, detail: String| {
                out.push(AuditViolation {
                    rule: rule.into(),
                    detail,
                })
            };
            match std::fs::metadata(&here) {
                Err(_) => push(
                    "file-present",
                    format!("file {} missing at {}", f.id, here.display()),
                ),
                Ok(md) => {
                    use std::os::unix::fs::PermissionsExt;
                    if f.status == FileStatus::Closed && md.permissions().mode() & 0o222 != 0 {
                        push("file-read-only", format!("file {} is writable", f.id));
                    }
                    if f.status == FileStatus::Closed && md.len() != f.size_bytes {
                        push(
                            "file-size",
                            format!(
                                "file {}: {} bytes on disk, {} in catalog",
                                f.id,
                                md.len(),
                                f.size_bytes
                            ),
                        );
                    }
                }
            }
            if there.exists() {
                push("single-tier", format!("file {} exists in both tiers", f.id));
            }
        }
        Ok(out)
    }
}

/// Builds an f64 dataset for `put_signal` from plain values.
pub fn f64_values(values: &[f64]) -> Dataset {
    Dataset::vector("data", values)
}

/// Values of a dataset re-encoded as `dtype` (used by the harness for integer channels).
pub fn encode_as(dtype: Dtype, shape: Vec<u64>, values: &[f64]) -> Result<Dataset> {
    use crate::filestore::Element;
    fn enc<T: Element>(shape: Vec<u64>, v: &[f64]) -> Result<Dataset> {
        let typed: Vec<T> = v.iter().map(|&x| T::from_f64(x)).collect();
        Dataset::from_slice("data", shape, &typed)
    }
    match dtype {
        Dtype::F32 => enc::<f32>(shape, values),
        Dtype::F64 => enc::<f64>(shape, values),
        Dtype::I8 => enc::<i8>(shape, values),
        Dtype::I16 => enc::<i16>(shape, values),
        Dtype::I32 => enc::<i32>(shape, values),
        Dtype::I64 => enc::<i64>(shape, values),
        Dtype::U8 => enc::<u8>(shape, values),
        Dtype::U16 => enc::<u16>(shape, values),
        Dtype::U32 => enc::<u32>(shape, values),
        Dtype::U64 => enc::<u64>(shape, values),
    }
}
