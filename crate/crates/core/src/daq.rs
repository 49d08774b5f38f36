//! Simulated data-acquisition shot.
//!
//! On a trigger every channel writes its own signal straight into the store
//! from its own thread, with no central collection step. Channels are named
//! by DAQ keys; missing generic signals and mappings can be provisioned on
//! first use.

use std::f64::consts::TAU;
use std::sync::Barrier;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ChannelSchema, GenericId, NewGenericSignal, SignalKind, TimeAxis};
use crate::error::{Error, Result};
use crate::filestore::Dtype;
use crate::identifier::{parse_str_id, ChannelKey, GenericLocator, Schema};
use crate::signal_api::{encode_as, PutRequest, Signal, Store};

pub const DEFAULT_KEY_TEMPLATE: &str = "SIM_1/0/{channel}";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    /// `x[i] = i`
    Ramp,
    /// One period per channel index plus one over the shot.
    Sine,
    /// Uniform in `[-1, 1)`, seeded per channel.
    Noise { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotConfig {
    pub n_channels: usize,
    pub samples_per_channel: usize,
    pub dtype: Dtype,
    /// DAQ key with `{channel}` replaced by the channel index.
    pub key_template: String,
    pub waveform: Waveform,
    pub t0: f64,
    pub dt: f64,
    /// Create missing generic signals and DAQ mappings.
    pub auto_provision: bool,
}

impl ShotConfig {
    pub fn new(n_channels: usize, samples_per_channel: usize) -> Self {
        ShotConfig {
            n_channels,
            samples_per_channel,
            dtype: Dtype::F64,
            key_template: DEFAULT_KEY_TEMPLATE.into(),
            waveform: Waveform::Ramp,
            t0: 0.0,
            dt: 1e-6,
            auto_provision: true,
        }
    }

    pub fn key(&self, channel: usize) -> Result<ChannelKey> {
        Ok(ChannelKey::parse(
            &self.key_template.replace("{channel}", &channel.to_string()),
        )?)
    }

    /// Samples of one channel, before conversion to the configured dtype.
    pub fn waveform_values(&self, channel: usize) -> Vec<f64> {
        let n = self.samples_per_channel;
        match self.waveform {
            Waveform::Ramp => (0..n).map(|i| i as f64).collect(),
            Waveform::Sine => {
                let cycles = (channel + 1) as f64;
                (0..n)
                    .map(|i| (TAU * cycles * i as f64 / n as f64).sin())
                    .collect()
            }
            Waveform::Noise { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(channel as u64));
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_channels == 0 {
            return Err(Error::InvalidArgument(
                "a shot needs at least one channel".into(),
            ));
        }
        if !(self.dt.is_finite() && self.t0.is_finite()) {
            return Err(Error::InvalidArgument("t0 and dt must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: usize,
    pub key: String,
    pub generic_id: GenericId,
    pub revision: Option<i64>,
    pub error: Option<String>,
}

impl ChannelReport {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub record_number: i64,
    pub channels: Vec<ChannelReport>,
    pub wall_time_s: f64,
    pub total_bytes: u64,
}

impl IngestReport {
    pub fn ok_count(&self) -> usize {
        self.channels.iter().filter(|c| c.is_ok()).count()
    }

    /// Payload bytes per second of wall time.
    pub fn throughput(&self) -> f64 {
        if self.wall_time_s > 0.0 {
            self.total_bytes as f64 / self.wall_time_s
        } else {
            0.0
        }
    }
}

/// Generic signal for `key`: the mapped one, or a new one if provisioning is on.
fn provision(store: &Store, key: &ChannelKey, record: i64, auto: bool) -> Result<GenericId> {
    let catalog = store.catalog();
    match catalog.resolve_channel(ChannelSchema::Daq, key, record) {
        Ok(m) => return Ok(m.generic_id),
        Err(Error::NoMapping(_)) if auto => {}
        Err(e) => return Err(e),
    }
    let alias = format!("{}_{}_{}", key.computer_id, key.board_id, key.channel_id);
    let generic = match catalog.resolve_generic(&GenericLocator::alias(&alias)) {
        Ok(g) => g,
        Err(Error::NotFound(_)) | Err(Error::UnknownGeneric(_)) => catalog.create_generic_signal(
            &NewGenericSignal::new(&alias, "DAQ", SignalKind::File)
                .alias(&alias)
                .description(format!("DAQ channel {key}")),
        )?,
        Err(e) => return Err(e),
    };
    catalog.set_channel_mapping(ChannelSchema::Daq, key, generic.id, "", record)?;
    Ok(generic.id)
}

/// Triggers all channels at once; each writes one new revision for `record_number`.
pub fn run_shot(store: &Store, config: &ShotConfig, record_number: i64) -> Result<IngestReport> {
    config.validate()?;
    let record = store.catalog().resolve_record(record_number)?;
    let mut channels = Vec::with_capacity(config.n_channels);
    for c in 0..config.n_channels {
        let key = config.key(c)?;
        let gid = provision(store, &key, record, config.auto_provision)?;
        channels.push((c, key, gid));
    }

    let barrier = Barrier::new(config.n_channels + 1);
    let mut started = Instant::now();
    let reports: Vec<ChannelReport> = std::thread::scope(|scope| {
        let handles: Vec<_> = channels
            .iter()
            .map(|(c, key, gid)| {
                let barrier = &barrier;
                scope.spawn(move || {
                    let values = config.waveform_values(*c);
                    let prepared = encode_as(config.dtype, vec![values.len() as u64], &values);
                    barrier.wait();
                    let res = prepared.and_then(|ds| {
                        let req = PutRequest::new(GenericLocator::id(gid.0), record, ds).time_axis(
                            TimeAxis::Linear {
                                t0: config.t0,
                                dt: config.dt,
                            },
                        );
                        store.put_signal(req)
                    });
                    ChannelReport {
                        channel: *c,
                        key: key.to_string(),
                        generic_id: *gid,
                        revision: res.as_ref().ok().map(|d| d.revision),
                        error: res.err().map(|e| format!("{}: {e}", e.code())),
                    }
                })
            })
            .collect();
        barrier.wait();
        started = Instant::now();
        handles
            .into_iter()
            .zip(&channels)
            .map(|(h, (c, key, gid))| {
                h.join().unwrap_or_else(|_| ChannelReport {
                    channel: *c,
                    key: key.to_string(),
                    generic_id: *gid,
                    revision: None,
                    error: Some("writer thread panicked".into()),
                })
            })
            .collect()
    });
    let wall = started.elapsed().max(Duration::from_nanos(1));
    let per_channel = (config.samples_per_channel * config.dtype.size()) as u64;
    let ok = reports.iter().filter(|r| r.is_ok()).count() as u64;
    Ok(IngestReport {
        record_number: record,
        channels: reports,
        wall_time_s: wall.as_secs_f64(),
        total_bytes: ok * per_channel,
    })
}

/// Reads a signal named by a `DAQ:` or `FS:` identifier.
pub fn resolve_and_read(store: &Store, channel_str_id: &str) -> Result<Signal> {
    let r = parse_str_id(channel_str_id)?;
    if !r.schema.is_channel() || r.schema == Schema::Cdb {
        return Err(Error::InvalidArgument(format!(
            "{channel_str_id:?} is not a channel identifier"
        )));
    }
    store.get(&r)
}
