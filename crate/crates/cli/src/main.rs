use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cdb_core::catalog::{
    ChannelSchema, GenericId, NewGenericSignal, RecordType, SignalKind, TimeAxis,
};
use cdb_core::daq::{run_shot, ShotConfig, Waveform, DEFAULT_KEY_TEMPLATE};
use cdb_core::filestore::{cdf1, Dataset, Dtype};
use cdb_core::identifier::{ChannelKey, GenericLocator, ParseError, UnitsTag};
use cdb_core::postproc::{CommandExecutor, PostProc, TaskManifest};
use cdb_core::signal_api::{encode_as, signal_str_id, PutRequest, Signal, SignalUpdate};
use cdb_core::wire::WireSignal;
use cdb_core::{parse_str_id, Config, Store};

#[derive(Parser)]
#[command(
    name = "cdb",
    version,
    about = "Revisioned signal store for pulsed experiments"
)]
struct Cli {
    /// JSON config file (default: $CDB_CONFIG, then ./cdb.json)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "CDB_CATALOG_PATH")]
    catalog_path: Option<PathBuf>,
    #[arg(long, global = true, env = "CDB_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[arg(long, global = true, env = "CDB_CACHE_ROOT")]
    cache_root: Option<PathBuf>,
    #[arg(long, global = true, env = "CDB_LISTEN_ADDR")]
    listen_addr: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create or inspect records
    #[command(subcommand)]
    Record(RecordCmd),
    /// Create or list generic signals
    #[command(subcommand)]
    Gs(GsCmd),
    /// Map a DAQ or FS channel to a generic signal from a record on
    Map {
        /// DAQ or FS
        schema: String,
        /// computer/board/channel
        key: String,
        gs_str_id: String,
        #[arg(long, default_value_t = 1)]
        valid_from: i64,
        #[arg(long, default_value = "")]
        config_text: String,
    },
    /// Read a signal
    Get {
        str_id: String,
        /// Write the values to a CDF1 container instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Length for LINEAR signals
        #[arg(long)]
        length: Option<u64>,
    },
    /// Store new values as the next revision
    Put(PutArgs),
    /// New revision with changed transform, sharing the data file
    Update {
        str_id: String,
        #[arg(long, allow_negative_numbers = true)]
        offset: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        coeff: Option<f64>,
    },
    /// Move closed files from the cache tier to the permanent tier
    MigrateCache,
    #[command(subcommand)]
    Task(TaskCmd),
    #[command(subcommand)]
    Postproc(PostprocCmd),
    /// Simulate a data-acquisition shot
    Shot(ShotArgs),
    /// Run the HTTP service
    Serve,
    /// Check catalog and file integrity
    Audit,
    /// Dump the catalog as JSON
    Export,
}

#[derive(Subcommand)]
enum RecordCmd {
    New {
        #[arg(long = "type", default_value = "EXPERIMENT")]
        record_type: RecordType,
        #[arg(long, default_value = "")]
        description: String,
    },
    Show {
        #[arg(allow_negative_numbers = true)]
        record: i64,
    },
    List,
}

#[derive(Subcommand)]
enum GsCmd {
    New {
        name: String,
        source: String,
        #[arg(long)]
        alias: Option<String>,
        #[arg(long, default_value = "FILE")]
        kind: SignalKind,
        #[arg(long, default_value = "")]
        units: String,
        #[arg(long, default_value = "")]
        description: String,
        /// Generic signal ids of the axes, one per dimension
        #[arg(long, value_delimiter = ',')]
        axes: Vec<i64>,
    },
    List,
}

#[derive(Args)]
struct PutArgs {
    gs_str_id: String,
    #[arg(allow_negative_numbers = true)]
    record: i64,
    /// .cdf1 container or JSON array of numbers
    #[arg(long)]
    values: PathBuf,
    /// Dataset to take from a .cdf1 file (default: the first)
    #[arg(long)]
    dataset: Option<String>,
    /// Storage dtype for JSON values
    #[arg(long, default_value = "f64")]
    dtype: Dtype,
    #[arg(long, allow_negative_numbers = true)]
    t0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    offset: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    coeff: f64,
    #[arg(long, default_value = "")]
    note: String,
}

#[derive(Subcommand)]
enum TaskCmd {
    /// Register a task from a JSON manifest
    Add {
        manifest: PathBuf,
    },
    List,
}

#[derive(Subcommand)]
enum PostprocCmd {
    /// Run all stale tasks for a record
    Run {
        #[arg(allow_negative_numbers = true)]
        record: i64,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        json: bool,
    },
    /// Tasks that would run
    Stale {
        #[arg(allow_negative_numbers = true)]
        record: i64,
    },
}

#[derive(Args)]
struct ShotArgs {
    #[arg(long)]
    channels: usize,
    #[arg(long)]
    samples: usize,
    /// Existing record (default: create a new EXPERIMENT record)
    #[arg(long, allow_negative_numbers = true)]
    record: Option<i64>,
    #[arg(long, default_value = "f64")]
    dtype: Dtype,
    /// ramp, sine or noise
    #[arg(long, default_value = "ramp")]
    waveform: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = DEFAULT_KEY_TEMPLATE)]
    key_template: String,
    /// Fail on unmapped channels instead of creating signals for them
    #[arg(long)]
    no_provision: bool,
    #[arg(long)]
    json: bool,
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("CDB_CONFIG").map(PathBuf::from))
        .or_else(|| Some(PathBuf::from("cdb.json")).filter(|p| p.exists()));
    let mut cfg = match path {
        Some(p) => Config::load(&p)?,
        None => Config::default(),
    };
    if let Some(p) = &cli.catalog_path {
        cfg.catalog_path = p.clone();
    }
    if let Some(p) = &cli.data_root {
        cfg.data_root = p.clone();
    }
    if let Some(p) = &cli.cache_root {
        cfg.cache_root = p.clone();
    }
    if let Some(a) = &cli.listen_addr {
        cfg.listen_addr = a.clone();
    }
    Ok(cfg)
}

fn open(cfg: &Config) -> anyhow::Result<Store> {
    if let Some(dir) = cfg.catalog_path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(Store::open(cfg)?)
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_values(args: &PutArgs) -> anyhow::Result<Dataset> {
    let bytes = std::fs::read(&args.values)
        .with_context(|| format!("reading {}", args.values.display()))?;
    if args.values.extension().is_some_and(|e| e == "cdf1") {
        let datasets = cdf1::decode_all(&bytes)?;
        let found = match &args.dataset {
            Some(name) => datasets.into_iter().find(|d| &d.name == name),
            None => datasets.into_iter().next(),
        };
        return found.with_context(|| format!("no such dataset in {}", args.values.display()));
    }
    let values: Vec<f64> = serde_json::from_slice(&bytes).with_context(|| {
        format!(
            "{}: expected a JSON array of numbers",
            args.values.display()
        )
    })?;
    Ok(encode_as(args.dtype, vec![values.len() as u64], &values)?)
}

fn write_signal_file(path: &Path, sig: &Signal, raw: Option<Dataset>) -> anyhow::Result<()> {
    let mut data = match raw {
        Some(ds) => ds,
        None => Dataset::from_slice("data", sig.shape.clone(), &sig.values)?,
    };
    data.name = "data".into();
    let mut datasets = vec![data];
    if let Some(t) = &sig.time {
        datasets.push(Dataset::vector("time", t));
    }
    std::fs::write(path, cdf1::encode_datasets(&datasets))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn executor(cfg: &Config) -> CommandExecutor {
    let mut exec = CommandExecutor::new();
    for (k, v) in cfg.env_vars() {
        exec = exec.env(k, v);
    }
    if let Ok(me) = std::env::current_exe() {
        exec = exec.env("CDB_BIN", me.display().to_string());
    }
    exec
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::Serve => {
            open(&cfg)?;
            eprintln!("serving on {}", cfg.listen_addr);
            cdb_service::run_forever(cfg)?;
        }
        Cmd::Record(c) => {
            let store = open(&cfg)?;
            let cat = store.catalog();
            match c {
                RecordCmd::New {
                    record_type,
                    description,
                } => {
                    let rec = cat.create_record(record_type, &description)?;
                    println!("{}", rec.record_number);
                }
                RecordCmd::Show { record } => {
                    print_json(&cat.get_record(cat.resolve_record(record)?)?)?
                }
                RecordCmd::List => print_json(&cat.list_records()?)?,
            }
        }
        Cmd::Gs(c) => {
            let store = open(&cfg)?;
            match c {
                GsCmd::New {
                    name,
                    source,
                    alias,
                    kind,
                    units,
                    description,
                    axes,
                } => {
                    let mut spec = NewGenericSignal::new(name, source, kind)
                        .units(units)
                        .description(description)
                        .axes(axes.into_iter().map(GenericId));
                    spec.alias = alias;
                    let g = store.catalog().create_generic_signal(&spec)?;
                    println!("{}", g.id);
                }
                GsCmd::List => print_json(&store.catalog().list_generic_signals()?)?,
            }
        }
        Cmd::Map {
            schema,
            key,
            gs_str_id,
            valid_from,
            config_text,
        } => {
            let schema = match schema.as_str() {
                "DAQ" => ChannelSchema::Daq,
                "FS" => ChannelSchema::Fs,
                other => bail!("unknown channel schema {other:?}, expected DAQ or FS"),
            };
            let store = open(&cfg)?;
            let cat = store.catalog();
            let g = cat.resolve_generic(&GenericLocator::parse(&gs_str_id)?)?;
            cat.set_channel_mapping(
                schema,
                &ChannelKey::parse(&key)?,
                g.id,
                &config_text,
                valid_from,
            )?;
        }
        Cmd::Get {
            str_id,
            out,
            json,
            length,
        } => {
            let store = open(&cfg)?;
            let r = parse_str_id(&str_id)?;
            let sig = match length {
                Some(n) => store.get_with_length(&r, n)?,
                None => store.get(&r)?,
            };
            if let Some(path) = out {
                let raw = (r.units == UnitsTag::Raw && sig.generic.kind == SignalKind::File)
                    .then(|| store.read_raw(&r).map(|(_, ds)| ds))
                    .transpose()?;
                write_signal_file(&path, &sig, raw)?;
                println!("{}", sig.str_id());
            } else if json {
                print_json(&WireSignal::from_signal(&sig, None, &|_| String::new()))?;
            } else {
                for v in &sig.values {
                    println!("{v}");
                }
            }
        }
        Cmd::Put(args) => {
            let store = open(&cfg)?;
            let values = read_values(&args)?;
            let time = match (args.t0, args.dt) {
                (Some(t0), Some(dt)) => TimeAxis::Linear { t0, dt },
                (None, None) => TimeAxis::None,
                _ => bail!("--t0 and --dt go together"),
            };
            let mut req =
                PutRequest::new(GenericLocator::parse(&args.gs_str_id)?, args.record, values)
                    .time_axis(time)
                    .transform(args.coeff, args.offset);
            req.note = args.note;
            let ds = store.put_signal(req)?;
            let g = store.catalog().get_generic(ds.generic_id)?;
            println!("{}", signal_str_id(&g, &ds, UnitsTag::Default));
        }
        Cmd::Update {
            str_id,
            offset,
            coeff,
        } => {
            let store = open(&cfg)?;
            let update = SignalUpdate {
                offset,
                coefficient: coeff,
                ..Default::default()
            };
            let ds = store.update_signal(&str_id, update)?;
            let g = store.catalog().get_generic(ds.generic_id)?;
            println!("{}", signal_str_id(&g, &ds, UnitsTag::Default));
        }
        Cmd::MigrateCache => {
            let store = open(&cfg)?;
            println!("{}", store.files().migrate_cache()?);
        }
        Cmd::Task(c) => {
            let store = open(&cfg)?;
            let pp = PostProc::new(Arc::clone(store.files().catalog()));
            match c {
                TaskCmd::Add { manifest } => {
                    let text = std::fs::read_to_string(&manifest)
                        .with_context(|| format!("reading {}", manifest.display()))?;
                    let m = TaskManifest::from_json(&text)?;
                    pp.add_manifest(&m)?;
                    println!("{}", m.name);
                }
                TaskCmd::List => print_json(&pp.graph()?.tasks())?,
            }
        }
        Cmd::Postproc(c) => {
            let store = open(&cfg)?;
            let pp = PostProc::new(Arc::clone(store.files().catalog()));
            match c {
                PostprocCmd::Run {
                    record,
                    parallelism,
                    json,
                } => {
                    let logs = pp.run(record, parallelism, &executor(&cfg))?;
                    if json {
                        print_json(&logs)?;
                    } else {
                        for l in &logs {
                            match &l.reason {
                                Some(r) => println!("{}\t{}\t{r}", l.task_name, l.status.as_str()),
                                None => println!("{}\t{}", l.task_name, l.status.as_str()),
                            }
                        }
                    }
                    if logs.iter().any(|l| l.status.is_failure()) {
                        return Ok(ExitCode::from(1));
                    }
                }
                PostprocCmd::Stale { record } => {
                    for name in pp.check_freshness(record)? {
                        println!("{name}");
                    }
                }
            }
        }
        Cmd::Shot(a) => {
            let store = open(&cfg)?;
            let waveform = match a.waveform.as_str() {
                "ramp" => Waveform::Ramp,
                "sine" => Waveform::Sine,
                "noise" => Waveform::Noise { seed: a.seed },
                other => bail!("unknown waveform {other:?}, expected ramp, sine or noise"),
            };
            let record = match a.record {
                Some(r) => r,
                None => {
                    store
                        .catalog()
                        .create_record(RecordType::Experiment, "simulated shot")?
                        .record_number
                }
            };
            let mut shot = ShotConfig::new(a.channels, a.samples);
            shot.dtype = a.dtype;
            shot.waveform = waveform;
            shot.key_template = a.key_template;
            shot.auto_provision = !a.no_provision;
            let report = run_shot(&store, &shot, record)?;
            if a.json {
                print_json(&report)?;
            } else {
                for c in report.channels.iter().filter(|c| !c.is_ok()) {
                    eprintln!("{}: {}", c.key, c.error.as_deref().unwrap_or(""));
                }
                println!(
                    "record {}: {}/{} channels OK, {} bytes in {:.3} s ({:.1} MB/s)",
                    report.record_number,
                    report.ok_count(),
                    report.channels.len(),
                    report.total_bytes,
                    report.wall_time_s,
                    report.throughput() / 1e6
                );
            }
            if report.ok_count() != report.channels.len() {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Audit => {
            let store = open(&cfg)?;
            let violations = store.audit()?;
            for v in &violations {
                println!("{}\t{}", v.rule, v.detail);
            }
            if !violations.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Export => {
            let store = open(&cfg)?;
            print_json(&store.catalog().export_json()?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // Exit quietly when stdout is a closed pipe, e.g. `cdb export | head`.
    // SAFETY: called before any other thread exists.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if let Some(err) = e.downcast_ref::<cdb_core::Error>() {
                eprintln!("{}: {err}", err.code());
            } else if let Some(pe) = e.downcast_ref::<ParseError>() {
                let err = cdb_core::Error::Parse(pe.clone());
                eprintln!("{}: {err}", err.code());
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}
