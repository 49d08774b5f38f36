//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test -p cdb-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::CommandExt;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use cdb_core::catalog::{GenericId, NewGenericSignal, RecordType, SignalKind, Tier, TimeAxis};
use cdb_core::filestore::{Dataset, Dtype};
use cdb_core::identifier::{ChannelKey, GenericLocator, Locator, Schema, UnitsTag};
use cdb_core::postproc::{FnExecutor, PostProc, RunStatus, TaskGraph, TaskOutcome, TaskSpec};
use cdb_core::signal_api::{
    encode_as, f64_values, Payload, PutRequest, SignalUpdate, StoreRequest,
};
use cdb_core::{format_str_id, parse_str_id, Config, Error, SignalRef, Store};

type Check = fn() -> Result<String>;

fn main() {
    let checks: [(&str, Check); 8] = [
        ("identifier suite", identifier_suite),
        ("revision immutability", revision_immutability),
        ("transform identity", transform_identity),
        ("cdf1 round trip and corruption", cdf1_round_trip),
        ("concurrent ingestion", concurrent_ingestion),
        ("dag validation oracle", dag_oracle),
        ("scheduler ordering and freshness", scheduler),
        ("migration transparency", migration),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(check));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(Ok(detail)) => println!("PASS {name} ({detail}; {secs:.2} s)"),
            Ok(Err(e)) => {
                failed += 1;
                println!("FAIL {name}: {e:#}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn store() -> Result<(tempfile::TempDir, Store)> {
    let dir = tempfile::tempdir()?;
    let store = Store::open(&Config::under(dir.path()))?;
    Ok((dir, store))
}

fn within(start: Instant, limit: Duration) -> Result<()> {
    ensure!(
        start.elapsed() < limit,
        "took {:?}, limit {limit:?}",
        start.elapsed()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

fn identifier_suite() -> Result<String> {
    let start = Instant::now();
    let r = parse_str_id("I_plasma:4073:-1[default]")?;
    ensure!(
        r.schema == Schema::Cdb && r.locator == Locator::Generic(GenericLocator::alias("I_plasma"))
    );
    ensure!((r.record_number, r.revision, r.units) == (4073, -1, UnitsTag::Default));
    let r = parse_str_id("DAQ:ATCA_1/9/13:-1")?;
    ensure!(
        r.schema == Schema::Daq
            && r.locator == Locator::Channel(ChannelKey::new("ATCA_1", "9", "13"))
    );
    ensure!((r.record_number, r.revision, r.units) == (-1, -1, UnitsTag::Default));
    let r = parse_str_id("FS:PCIE_ATCA_ADC_01/BOARD_9/CHANNEL_013:4073")?;
    ensure!(r.schema == Schema::Fs);
    ensure!(
        r.locator
            == Locator::Channel(ChannelKey::new(
                "PCIE_ATCA_ADC_01",
                "BOARD_9",
                "CHANNEL_013"
            ))
    );
    ensure!((r.record_number, r.revision, r.units) == (4073, -1, UnitsTag::Default));

    // Strings are assembled here from their parts, independently of the
    // library formatter, then parsed; the parse is also re-formatted and
    // parsed again.
    use proptest::prelude::*;
    use proptest::test_runner::{Config as PConfig, TestRunner};
    let token = "[A-Za-z0-9_\\-]{1,10}";
    let word = "[A-Za-z_][A-Za-z0-9_]{0,10}";
    let target = prop_oneof![
        word.prop_map(|a| (Schema::Cdb, GenericLocator::alias(a)))
            .prop_map(|(s, g)| (s, Locator::Generic(g))),
        (word, word).prop_map(|(n, s)| (
            Schema::Cdb,
            Locator::Generic(GenericLocator::name_source(n, s))
        )),
        (0i64..i64::MAX).prop_map(|id| (Schema::Cdb, Locator::Generic(GenericLocator::id(id)))),
        (any::<bool>(), token, token, token).prop_map(|(daq, a, b, c)| {
            let s = if daq { Schema::Daq } else { Schema::Fs };
            (s, Locator::Channel(ChannelKey::new(a, b, c)))
        }),
    ];
    let strategy = (
        target,
        any::<i64>(),
        any::<i64>(),
        0u8..3,
        0u8..3,
        any::<bool>(),
    );
    let mut runner = TestRunner::new(PConfig {
        cases: 10_000,
        failure_persistence: None,
        ..PConfig::default()
    });
    runner
        .run(
            &strategy,
            |((schema, locator), rec, rev, depth, units, prefix)| {
                let mut text = String::new();
                let loc = match &locator {
                    Locator::Generic(GenericLocator::Alias { alias }) => {
                        let keyword = ["CDB", "DAQ", "FS"].contains(&alias.as_str());
                        if prefix || keyword {
                            text.push_str("CDB:");
                        }
                        alias.clone()
                    }
                    Locator::Generic(GenericLocator::NameSource { name, source }) => {
                        format!("{name}.{source}")
                    }
                    Locator::Generic(GenericLocator::Id { id }) => id.to_string(),
                    Locator::Channel(k) => {
                        text.push_str(if schema == Schema::Daq { "DAQ:" } else { "FS:" });
                        format!("{}/{}/{}", k.computer_id, k.board_id, k.channel_id)
                    }
                };
                text.push_str(&loc);
                let (want_rec, want_rev) = match depth {
                    0 => (-1, -1),
                    1 => (rec, -1),
                    _ => (rec, rev),
                };
                if depth >= 1 {
                    text.push_str(&format!(":{rec}"));
                }
                if depth >= 2 {
                    text.push_str(&format!(":{rev}"));
                }
                let want_units = match units {
                    0 => UnitsTag::Default,
                    1 => {
                        text.push_str("[default]");
                        UnitsTag::Default
                    }
                    _ => {
                        text.push_str("[raw]");
                        UnitsTag::Raw
                    }
                };
                let want = SignalRef {
                    schema,
                    locator,
                    record_number: want_rec,
                    revision: want_rev,
                    units: want_units,
                };
                let got =
                    parse_str_id(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
                prop_assert_eq!(&got, &want, "{}", text);
                let again = format_str_id(&got).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(parse_str_id(&again).ok(), Some(want));
                Ok(())
            },
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    within(start, Duration::from_secs(5))?;
    Ok("3 examples, 10000 random round trips".into())
}

// ---------------------------------------------------------------------------

/// Every column of one row, type-tagged, as bytes.
fn row_bytes(
    db: &rusqlite::Connection,
    sql: &str,
    params: impl rusqlite::Params,
) -> Result<Vec<u8>> {
    use rusqlite::types::ValueRef;
    let mut stmt = db.prepare(sql)?;
    let n = stmt.column_count();
    let mut rows = stmt.query(params)?;
    let row = rows.next()?.context("row missing")?;
    let mut out = Vec::new();
    for i in 0..n {
        match row.get_ref(i)? {
            ValueRef::Null => out.push(0),
            ValueRef::Integer(v) => {
                out.push(1);
                out.extend(v.to_le_bytes());
            }
            ValueRef::Real(v) => {
                out.push(2);
                out.extend(v.to_bits().to_le_bytes());
            }
            ValueRef::Text(t) | ValueRef::Blob(t) => {
                out.push(3);
                out.extend((t.len() as u64).to_le_bytes());
                out.extend(t);
            }
        }
    }
    ensure!(rows.next()?.is_none(), "more than one row");
    Ok(out)
}

fn revision_immutability() -> Result<String> {
    let start = Instant::now();
    let (dir, store) = store()?;
    let cat = store.catalog();
    cat.create_record(RecordType::Experiment, "")?;
    let g = cat
        .create_generic_signal(&NewGenericSignal::new("ip", "mag", SignalKind::File).alias("ip"))?;
    let v1 = vec![1.0, -2.5, 3.75, f64::MIN_POSITIVE];
    let v2 = vec![10.0, 20.0];
    let first = store.put_signal(
        PutRequest::new(GenericLocator::alias("ip"), 1, f64_values(&v1)).transform(2.0, 0.5),
    )?;
    let file1 = cat.get_data_file(first.data_file.context("no file")?)?;
    let path1 = store.files().path_of(&file1);
    let db = rusqlite::Connection::open(dir.path().join("catalog.sqlite"))?;
    let signal_row =
        "SELECT * FROM data_signals WHERE generic_id = ?1 AND record_number = 1 AND revision = 1";
    let file_row = "SELECT * FROM data_files WHERE id = ?1";
    let hash_before = Sha256::digest(fs::read(&path1)?);
    let row_before = row_bytes(&db, signal_row, [g.id.0])?;
    let file_before = row_bytes(&db, file_row, [file1.id.0])?;

    let second = store.put_signal(PutRequest::new(
        GenericLocator::alias("ip"),
        1,
        f64_values(&v2),
    ))?;
    let third = store.update_signal(
        "ip:1:2",
        SignalUpdate {
            coefficient: Some(-1.0),
            ..Default::default()
        },
    )?;
    ensure!((second.revision, third.revision) == (2, 3));
    ensure!(
        third.data_file == second.data_file,
        "update must share the data file"
    );

    ensure!(
        Sha256::digest(fs::read(&path1)?) == hash_before,
        "first revision file changed"
    );
    ensure!(
        row_bytes(&db, signal_row, [g.id.0])? == row_before,
        "first revision row changed"
    );
    ensure!(
        row_bytes(&db, file_row, [file1.id.0])? == file_before,
        "first revision file row changed"
    );

    let expect = |v: &[f64], c: f64, o: f64| -> Vec<u64> {
        v.iter().map(|x| (x * c + o).to_bits()).collect()
    };
    let bits = |id: &str| -> Result<Vec<u64>> {
        Ok(store
            .get_signal(id)?
            .values
            .iter()
            .map(|x| x.to_bits())
            .collect())
    };
    ensure!(bits("ip:1:1")? == expect(&v1, 2.0, 0.5));
    ensure!(bits("ip:1:1[raw]")? == expect(&v1, 1.0, 0.0));
    ensure!(bits("ip:1:2")? == expect(&v2, 1.0, 0.0));
    ensure!(bits("ip:1:3")? == expect(&v2, -1.0, 0.0));
    ensure!(bits("ip:1:-1")? == bits("ip:1:3")?);
    ensure!(store.audit()?.is_empty());
    within(start, Duration::from_secs(5))?;
    Ok("file SHA-256 and catalog rows unchanged across put and update".into())
}

// ---------------------------------------------------------------------------

fn finite(rng: &mut StdRng) -> f64 {
    loop {
        // Mix arbitrary bit patterns with ordinary magnitudes.
        let x = if rng.random_bool(0.5) {
            f64::from_bits(rng.random())
        } else {
            rng.random_range(-1e6..1e6)
        };
        if x.is_finite() {
            return x;
        }
    }
}

fn transform_identity() -> Result<String> {
    let (_dir, store) = store()?;
    let cat = store.catalog();
    cat.create_record(RecordType::Experiment, "")?;
    cat.create_generic_signal(&NewGenericSignal::new("x", "t", SignalKind::File).alias("x"))?;
    let mut rng = StdRng::seed_from_u64(11);
    for i in 0..1000 {
        let (raw, c, o) = (finite(&mut rng), finite(&mut rng), finite(&mut rng));
        let ds = store.put_signal(
            PutRequest::new(GenericLocator::alias("x"), 1, f64_values(&[raw])).transform(c, o),
        )?;
        let id = format!("x:1:{}", ds.revision);
        let phys = store.get_signal(&id)?.values;
        let got_raw = store.get_signal(&format!("{id}[raw]"))?.values;
        ensure!(
            got_raw.len() == 1 && got_raw[0].to_bits() == raw.to_bits(),
            "case {i}: raw changed"
        );
        let expect = got_raw[0] * c + o;
        ensure!(
            phys.len() == 1 && phys[0].to_bits() == expect.to_bits(),
            "case {i}: {raw:e}*{c:e}+{o:e} gave {:e}, want {expect:e}",
            phys[0]
        );
    }
    Ok("1000 triples bit-exact".into())
}

// ---------------------------------------------------------------------------

fn random_dataset(rng: &mut StdRng, i: usize) -> Result<Dataset> {
    let dtype = Dtype::ALL[i % Dtype::ALL.len()];
    let ndim = rng.random_range(0..=3);
    let shape: Vec<u64> = (0..ndim).map(|_| rng.random_range(0..=6)).collect();
    let n: u64 = shape.iter().product();
    let mut payload = vec![0u8; n as usize * dtype.size()];
    rng.fill(payload.as_mut_slice());
    Ok(Dataset::new(format!("d{i}"), dtype, shape, payload)?)
}

fn cdf1_round_trip() -> Result<String> {
    let (_dir, store) = store()?;
    store.catalog().create_record(RecordType::Experiment, "")?;
    let files = store.files();
    let mut rng = StdRng::seed_from_u64(5);
    let mut seen_ndim = BTreeSet::new();
    for i in 0..500 {
        let ds = random_dataset(&mut rng, i)?;
        seen_ndim.insert(ds.shape.len());
        let mut w = files.new_data_file(1, "rt")?;
        w.write_dataset(&ds)?;
        let file = w.close()?;
        let back = files.read(file.id, &ds.name)?;
        ensure!(
            back == ds,
            "dataset {i} ({:?} {:?}) differs after reading",
            ds.dtype,
            ds.shape
        );

        let path = files.path_of(&file);
        let original = fs::read(&path)?;
        let bit = rng.random_range(0..original.len() * 8);
        let mut bad = original.clone();
        bad[bit / 8] ^= 1 << (bit % 8);
        fs::set_permissions(&path, fs::Permissions::from_mode(0o644))?;
        fs::write(&path, &bad)?;
        match files.read(file.id, &ds.name) {
            Err(Error::ChecksumMismatch(_)) => {}
            other => bail!("dataset {i}: flipping bit {bit} gave {other:?}"),
        }
        fs::write(&path, &original)?;
        ensure!(files.read(file.id, &ds.name)? == ds);
    }
    ensure!(seen_ndim.len() == 4, "ndim coverage {seen_ndim:?}");
    Ok("500 datasets, 10 dtypes, ndim 0-3, 500 single-bit flips detected".into())
}

// ---------------------------------------------------------------------------

fn concurrent_ingestion() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let root = dir.path();
    let cdb = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_cdb"))
            .args(args)
            .env_remove("CDB_CONFIG")
            .env("CDB_CATALOG_PATH", root.join("catalog.sqlite"))
            .env("CDB_DATA_ROOT", root.join("data"))
            .env("CDB_CACHE_ROOT", root.join("cache"))
            .output()
    };
    let start = Instant::now();
    let out = cdb(&["shot", "--channels", "128", "--samples", "262144", "--json"])?;
    let wall = start.elapsed();
    ensure!(
        out.status.success(),
        "shot failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    ensure!(wall < Duration::from_secs(60), "shot took {wall:?}");
    let report: serde_json::Value = serde_json::from_slice(&out.stdout)?;
    let channels = report["channels"].as_array().context("no channels")?;
    let ok = channels
        .iter()
        .filter(|c| c["error"].is_null() && c["revision"] == 1)
        .count();
    ensure!(ok == 128, "{ok} of {} channels OK", channels.len());
    ensure!(report["total_bytes"] == 128u64 * 262_144 * 8);

    let audit = cdb(&["audit"])?;
    ensure!(
        audit.status.success() && audit.stdout.is_empty(),
        "audit: {}",
        String::from_utf8_lossy(&audit.stdout)
    );

    let store = Store::open(&Config {
        catalog_path: root.join("catalog.sqlite"),
        data_root: root.join("data"),
        cache_root: root.join("cache"),
        ..Config::default()
    })?;
    let mut revs: BTreeMap<GenericId, Vec<i64>> = BTreeMap::new();
    for ds in store.catalog().list_data_signals(Some(1))? {
        revs.entry(ds.generic_id).or_default().push(ds.revision);
    }
    ensure!(revs.len() == 128, "{} signals", revs.len());
    for (g, mut r) in revs {
        r.sort();
        ensure!(
            r == (1..=r.len() as i64).collect::<Vec<_>>(),
            "gap in revisions of {g:?}: {r:?}"
        );
    }
    let ramp = store.get_signal("DAQ:SIM_1/0/127:1")?;
    ensure!(ramp.values.len() == 262_144 && ramp.values[262_143] == 262_143.0);
    Ok(format!(
        "128 channels, 256 MiB, shot {:.2} s",
        wall.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

#[derive(Debug, PartialEq)]
enum Verdict {
    Accepted,
    DuplicateTask,
    Invalid,
    DuplicateProducer,
    Cycle,
}

/// Decides an addition by exhaustive reachability over the task graph.
fn oracle(existing: &[TaskSpec], new: &TaskSpec) -> Verdict {
    if existing.iter().any(|t| t.name == new.name) {
        return Verdict::DuplicateTask;
    }
    if new.outputs.is_empty() {
        return Verdict::Invalid;
    }
    if !new.inputs.is_disjoint(&new.outputs) {
        return Verdict::Cycle;
    }
    if existing
        .iter()
        .any(|t| !t.outputs.is_disjoint(&new.outputs))
    {
        return Verdict::DuplicateProducer;
    }
    let all: Vec<&TaskSpec> = existing.iter().chain([new]).collect();
    let n = all.len();
    let mut reach = vec![vec![false; n]; n];
    for a in 0..n {
        for b in 0..n {
            reach[a][b] = !all[a].outputs.is_disjoint(&all[b].inputs);
        }
    }
    for _ in 0..n {
        for a in 0..n {
            for b in 0..n {
                if !reach[a][b] {
                    reach[a][b] = (0..n).any(|m| reach[a][m] && reach[m][b]);
                }
            }
        }
    }
    if (0..n).any(|i| reach[i][i]) {
        Verdict::Cycle
    } else {
        Verdict::Accepted
    }
}

fn verdict(r: cdb_core::Result<()>) -> Result<Verdict> {
    Ok(match r {
        Ok(()) => Verdict::Accepted,
        Err(Error::DuplicateTask(_)) => Verdict::DuplicateTask,
        Err(Error::InvalidTask(_)) => Verdict::Invalid,
        Err(Error::DuplicateProducer { .. }) => Verdict::DuplicateProducer,
        Err(Error::CycleDetected(cycle)) => {
            ensure!(!cycle.is_empty());
            Verdict::Cycle
        }
        Err(e) => bail!("unexpected error {e}"),
    })
}

fn dag_oracle() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(3);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for case in 0..1000 {
        let mut graph = TaskGraph::new();
        let mut accepted: Vec<TaskSpec> = Vec::new();
        let n_tasks = rng.random_range(1..=8);
        let n_signals = rng.random_range(2..=8);
        for _ in 0..n_tasks {
            let mut pick = |max: usize| -> BTreeSet<GenericId> {
                let k = rng.random_range(0..=max);
                (0..k)
                    .map(|_| GenericId(rng.random_range(0..n_signals)))
                    .collect()
            };
            let inputs = pick(3);
            let mut outputs = pick(2);
            let name = format!("t{}", rng.random_range(0..10));
            if outputs.is_empty() && rng.random_bool(0.8) {
                outputs.insert(GenericId(rng.random_range(0..n_signals)));
            }
            let spec = TaskSpec::new(name, inputs, outputs);
            let want = oracle(&accepted, &spec);
            let got = verdict(graph.add_task(spec.clone()))?;
            ensure!(
                got == want,
                "case {case}: {spec:?} after {accepted:?}: got {got:?}, want {want:?}"
            );
            *counts.entry(format!("{want:?}")).or_default() += 1;
            if want == Verdict::Accepted {
                accepted.push(spec);
            }
        }
        ensure!(graph.tasks() == accepted.as_slice());
    }
    ensure!(counts.len() == 5, "verdict coverage {counts:?}");
    Ok(format!("1000 graphs, verdicts {counts:?}"))
}

// ---------------------------------------------------------------------------

fn scheduler() -> Result<String> {
    let (_dir, store) = store()?;
    let store = Arc::new(store);
    let cat = store.catalog();
    cat.create_record(RecordType::Experiment, "")?;
    let s: Vec<GenericId> = (0..7)
        .map(|i| {
            cat.create_generic_signal(&NewGenericSignal::new(
                format!("s{i}"),
                "pp",
                SignalKind::Linear,
            ))
            .map(|g| g.id)
        })
        .collect::<cdb_core::Result<_>>()?;
    // s0 -> A -> s1 -> {B -> s2, C -> s3} -> D -> s4 -> E -> s5; s0 -> F -> s6
    let tasks = [
        ("A", vec![0], 1),
        ("B", vec![1], 2),
        ("C", vec![1], 3),
        ("D", vec![2, 3], 4),
        ("E", vec![4], 5),
        ("F", vec![0], 6),
    ];
    let edges = [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D"), ("D", "E")];
    let pp = PostProc::new(Arc::clone(store.files().catalog()))
        .with_poll_interval(Duration::from_millis(2));
    for (name, ins, out) in &tasks {
        pp.add_task(TaskSpec::new(*name, ins.iter().map(|&i| s[i]), [s[*out]]))?;
    }
    let put = |g: GenericId| {
        store.store_signal(StoreRequest::new(
            GenericLocator::id(g.0),
            1,
            Payload::Linear,
        ))
    };
    let writer = {
        let store = Arc::clone(&store);
        FnExecutor(move |task: &TaskSpec, record: i64| {
            std::thread::sleep(Duration::from_millis(2));
            for o in &task.outputs {
                if let Err(e) = store.store_signal(StoreRequest::new(
                    GenericLocator::id(o.0),
                    record,
                    Payload::Linear,
                )) {
                    return TaskOutcome::failed(e.to_string());
                }
            }
            TaskOutcome::ok()
        })
    };

    for run in 0..50 {
        put(s[0])?;
        let logs = pp.run(1, 4, &writer)?;
        let by: BTreeMap<&str, _> = logs.iter().map(|l| (l.task_name.as_str(), l)).collect();
        ensure!(
            by.len() == 6 && logs.iter().all(|l| l.status == RunStatus::Ok),
            "run {run}: {logs:?}"
        );
        for (p, c) in edges {
            ensure!(
                by[p].ended_at <= by[c].started_at,
                "run {run}: {p} ended after {c} started"
            );
        }
    }
    let logs = pp.run(1, 4, &writer)?;
    ensure!(
        logs.len() == 6 && logs.iter().all(|l| l.status == RunStatus::SkippedFresh),
        "rerun: {logs:?}"
    );

    // Brute-force closure over the table above.
    let closure = |sig: usize| -> BTreeSet<String> {
        let mut dirty = BTreeSet::from([sig]);
        let mut out = BTreeSet::new();
        loop {
            let before = out.len();
            for (name, ins, o) in &tasks {
                if ins.iter().any(|i| dirty.contains(i)) {
                    out.insert(name.to_string());
                    dirty.insert(*o);
                }
            }
            if out.len() == before {
                return out;
            }
        }
    };
    for (sig, &id) in s.iter().enumerate().take(6) {
        put(id)?;
        let stale = pp.check_freshness(1)?;
        ensure!(
            stale == closure(sig),
            "new revision of s{sig}: stale {stale:?}, want {:?}",
            closure(sig)
        );
        pp.run(1, 4, &writer)?;
        ensure!(pp.check_freshness(1)?.is_empty());
    }
    Ok("50 runs ordered, rerun all SKIPPED_FRESH, closures exact".into())
}

// ---------------------------------------------------------------------------

/// Tries to append to `path` as an unprivileged user. Root ignores permission
/// bits, so as root the attempt runs in a child that drops to `nobody`.
fn write_denied(path: &Path) -> Result<bool> {
    // SAFETY: geteuid has no preconditions.
    if unsafe { libc::geteuid() } != 0 {
        return Ok(fs::OpenOptions::new().append(true).open(path).is_err());
    }
    let mut dir = path.parent();
    while let Some(d) = dir {
        let mode = fs::metadata(d)?.permissions().mode();
        if mode & 0o001 == 0 {
            fs::set_permissions(d, fs::Permissions::from_mode(mode | 0o001))?;
        }
        dir = d.parent();
    }
    // Sanity: the unprivileged user can write somewhere at all.
    let probe = path.with_extension("probe");
    fs::write(&probe, b"")?;
    fs::set_permissions(&probe, fs::Permissions::from_mode(0o666))?;
    let append = |p: &Path| {
        Command::new("sh")
            .arg("-c")
            .arg("printf x >> \"$1\"")
            .arg("sh")
            .arg(p)
            .uid(65534)
            .gid(65534)
            .stderr(Stdio::null())
            .status()
    };
    let control = append(&probe)?.success();
    fs::remove_file(&probe)?;
    ensure!(
        control,
        "unprivileged probe could not write a world-writable file"
    );
    Ok(!append(path)?.success())
}

fn migration() -> Result<String> {
    let (_dir, store) = store()?;
    let cat = store.catalog();
    cat.create_record(RecordType::Experiment, "")?;
    cat.create_generic_signal(&NewGenericSignal::new("a", "m", SignalKind::File).alias("a"))?;
    cat.create_generic_signal(&NewGenericSignal::new("b", "m", SignalKind::File).alias("b"))?;
    let mut rng = StdRng::seed_from_u64(9);
    let values: Vec<f64> = (0..1000).map(|_| finite(&mut rng)).collect();
    store.put_signal(
        PutRequest::new(GenericLocator::alias("a"), 1, f64_values(&values))
            .time_axis(TimeAxis::Linear { t0: -0.1, dt: 1e-6 })
            .transform(3.0, -1.0),
    )?;
    let ints: Vec<f64> = (0..64).map(|i| f64::from(i * 100 - 3000)).collect();
    store.put_signal(PutRequest::new(
        GenericLocator::alias("b"),
        1,
        encode_as(Dtype::I16, vec![8, 8], &ints)?,
    ))?;
    store.update_signal(
        "a:1:1",
        SignalUpdate {
            offset: Some(2.0),
            ..Default::default()
        },
    )?;

    let ids = ["a:1:1", "a:1:2", "a:1:1[raw]", "b:1", "b:1[raw]"];
    let before: Vec<_> = ids
        .iter()
        .map(|id| store.get_signal(id))
        .collect::<cdb_core::Result<_>>()?;
    let moved = store.files().migrate_cache()?;
    ensure!(moved == 2, "migrated {moved} files");
    let after: Vec<_> = ids
        .iter()
        .map(|id| store.get_signal(id))
        .collect::<cdb_core::Result<_>>()?;
    ensure!(before == after, "reads differ after migration");

    for f in cat.list_data_files()? {
        ensure!(f.tier == Tier::Permanent);
        let path = store.files().path_of(&f);
        ensure!(path.starts_with(store.files().tier_root(Tier::Permanent)));
        ensure!(!store
            .files()
            .tier_root(Tier::Cache)
            .join(&f.relative_path)
            .exists());
        let mode = fs::metadata(&path)?.permissions().mode();
        ensure!(mode & 0o222 == 0, "{} has mode {mode:o}", path.display());
        ensure!(write_denied(&path)?, "{} accepted a write", path.display());
    }
    ensure!(store.files().migrate_cache()? == 0);
    ensure!(store.audit()?.is_empty());
    Ok("5 reads identical, 2 permanent files reject unprivileged writes".into())
}
