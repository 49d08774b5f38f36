use cdb_core::catalog::RecordType;
use cdb_core::daq::{resolve_and_read, run_shot, ShotConfig, Waveform};
use cdb_core::filestore::Dtype;
use cdb_core::{Config, Error, Store};

fn store() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(&Config::under(dir.path())).unwrap();
    store
        .catalog()
        .create_record(RecordType::Experiment, "")
        .unwrap();
    (dir, store)
}

#[test]
fn shot_writes_every_channel_once() {
    let (_d, store) = store();
    let cfg = ShotConfig::new(64, 1024);
    let report = run_shot(&store, &cfg, 1).unwrap();
    assert_eq!(report.ok_count(), 64);
    assert_eq!(report.total_bytes, 64 * 1024 * 8);
    assert!(report.throughput() > 0.0);
    let cat = store.catalog();
    assert_eq!(cat.list_data_signals(Some(1)).unwrap().len(), 64);
    assert_eq!(cat.list_data_files().unwrap().len(), 64);
    assert!(store.audit().unwrap().is_empty());

    let again = run_shot(&store, &cfg, -1).unwrap();
    assert!(again.channels.iter().all(|c| c.revision == Some(2)));
    assert_eq!(cat.list_generic_signals().unwrap().len(), 64);
}

#[test]
fn ramp_and_daq_lookup() {
    let (_d, store) = store();
    let cfg = ShotConfig::new(2, 16);
    run_shot(&store, &cfg, 1).unwrap();
    let by_daq = resolve_and_read(&store, "DAQ:SIM_1/0/0:-1").unwrap();
    assert_eq!(by_daq.values, (0..16).map(f64::from).collect::<Vec<_>>());
    assert_eq!(by_daq.time.as_ref().unwrap()[1], cfg.dt);
    let by_alias = store.get_signal("SIM_1_0_0:1:-1").unwrap();
    assert_eq!(by_daq, by_alias);
    assert!(matches!(
        resolve_and_read(&store, "DAQ:SIM_1/0/9:-1"),
        Err(Error::NoMapping(_))
    ));
    assert!(matches!(
        resolve_and_read(&store, "SIM_1_0_0:1"),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn waveforms_are_deterministic() {
    let mut cfg = ShotConfig::new(3, 64);
    cfg.waveform = Waveform::Noise { seed: 7 };
    assert_eq!(cfg.waveform_values(1), cfg.waveform_values(1));
    assert_ne!(cfg.waveform_values(1), cfg.waveform_values(2));
    assert!(cfg
        .waveform_values(0)
        .iter()
        .all(|x| (-1.0..1.0).contains(x)));
    cfg.waveform = Waveform::Sine;
    let s = cfg.waveform_values(0);
    assert_eq!(s[0], 0.0);
    assert!((s[16] - 1.0).abs() < 1e-12);
}

#[test]
fn integer_channels_and_provisioning_switch() {
    let (_d, store) = store();
    let mut cfg = ShotConfig::new(4, 8);
    cfg.dtype = Dtype::I16;
    cfg.key_template = "ADC/{channel}/x".into();
    let report = run_shot(&store, &cfg, 1).unwrap();
    assert_eq!(report.total_bytes, 4 * 8 * 2);
    let (_, raw) = store.read_raw(&"DAQ:ADC/3/x:1".parse().unwrap()).unwrap();
    assert_eq!(raw.dtype, Dtype::I16);

    cfg.key_template = "OTHER/{channel}/x".into();
    cfg.auto_provision = false;
    assert!(matches!(
        run_shot(&store, &cfg, 1),
        Err(Error::NoMapping(_))
    ));
    cfg.n_channels = 0;
    assert!(matches!(
        run_shot(&store, &cfg, 1),
        Err(Error::InvalidArgument(_))
    ));
}
