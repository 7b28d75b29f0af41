//! Replays the checked-in fuzz seeds through the same entry points the fuzz
//! targets drive, so the seeds stay meaningful on a stable toolchain.

use std::fs;
use std::path::{Path, PathBuf};

use dpfl::config::parse_config;
use dpfl::data::{read_sidecar, read_tabular, TabularSchema};
use dpfl::mechanism::LedgerReport;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn name(p: &Path) -> &str {
    p.file_name().unwrap().to_str().unwrap()
}

#[test]
fn config_seeds() {
    for (p, bytes) in seeds("parse_config") {
        let text = std::str::from_utf8(&bytes).unwrap();
        let parsed = parse_config(text);
        match name(&p) {
            "seed_incomplete.toml" => assert!(parsed.is_err()),
            n => assert!(parsed.is_ok(), "{n}: {:?}", parsed.err()),
        }
    }
}

#[test]
fn tabular_seeds() {
    let schema = TabularSchema {
        client_column: "client".into(),
        target_column: "y".into(),
        feature_columns: vec!["x1".into(), "x2".into()],
        group_column: Some("g".into()),
        scale_features: false,
    };
    for (p, bytes) in seeds("read_tabular") {
        let got = read_tabular(bytes.as_slice(), &schema);
        match name(&p) {
            "seed_bad_values.csv" => assert!(got.is_err()),
            "seed_basic.csv" => {
                let c = got.unwrap();
                assert_eq!(c.len(), 2);
                assert_eq!(c[0].targets, vec![1.5, 0.5]);
                assert_eq!(c[1].sensitive, Some(false));
            }
            n => assert!(got.is_ok(), "{n}"),
        }
    }
}

#[test]
fn sidecar_seeds() {
    for (p, bytes) in seeds("read_sidecar") {
        let s = read_sidecar(std::str::from_utf8(&bytes).unwrap());
        assert!(s.is_ok(), "{}: {:?}", name(&p), s.err());
    }
}

#[test]
fn ledger_seeds_round_trip() {
    for (p, bytes) in seeds("ledger_report") {
        let r = LedgerReport::from_json(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", name(&p)));
        assert_eq!(LedgerReport::from_json(&r.to_json()).unwrap(), r);
    }
}
