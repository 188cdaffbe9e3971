//! Replays the checked-in fuzz seeds through the decoders with the same
//! invariants the fuzz targets assert, so the seeds stay meaningful on
//! stable toolchains without libFuzzer.

use std::fs;
use std::path::PathBuf;

use nutf::harness::read_observations;
use nutf::ingest::{read_category_map, read_updates, read_venues, CategoryMap, VenueIndex};
use nutf::io::{read_omega, write_omega, OmegaMeta};
use nutf::snapshot::{self, DecodeLimits, Snapshot};
use nutf::ProblemDims;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn dims_prefix(data: &[u8]) -> Option<(ProblemDims, &[u8])> {
    let [n, t, c, rest @ ..] = data else {
        return None;
    };
    let dim = |b: &u8| usize::from(*b % 64) + 1;
    Some((ProblemDims::new(dim(n), dim(t), dim(c)).unwrap(), rest))
}

#[test]
fn snapshot_seeds() {
    let limits = DecodeLimits { max_users: 1 << 12, max_cols: 1 << 16 };
    let mut accepted = 0;
    for (name, data) in seeds("snapshot_decode") {
        if let Ok(snap) = snapshot::decode_with_limits(&data, &limits) {
            let bytes = match &snap {
                Snapshot::X(x) => snapshot::encode_x(x),
                Snapshot::Model(m) => snapshot::encode_model(m),
            };
            assert_eq!(bytes, data, "{name}");
            accepted += 1;
        }
    }
    assert!(accepted >= 3);
}

#[test]
fn omega_seeds() {
    let mut accepted = 0;
    for (name, data) in seeds("omega_jsonl") {
        let (dims, rest) = dims_prefix(&data).unwrap();
        if let Ok(omega) = read_omega(rest, dims) {
            let mut out = Vec::new();
            write_omega(&omega, &mut out).unwrap();
            assert_eq!(read_omega(out.as_slice(), dims).unwrap(), omega, "{name}");
            accepted += 1;
        }
    }
    assert!(accepted >= 1);
}

#[test]
fn meta_seeds() {
    for (name, data) in seeds("omega_meta") {
        let meta = OmegaMeta::from_json(std::str::from_utf8(&data).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(OmegaMeta::from_json(&meta.to_json()).unwrap(), meta, "{name}");
    }
}

#[test]
fn validation_seeds() {
    for (name, data) in seeds("validation_jsonl") {
        let (dims, rest) = dims_prefix(&data).unwrap();
        let obs = read_observations(rest, Some(&dims)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!obs.is_empty());
    }
}

#[test]
fn csv_seeds() {
    let mut ok = 0;
    for (_, data) in seeds("updates_csv") {
        ok += usize::from(read_updates(data.as_slice()).is_ok());
    }
    for (_, data) in seeds("venues_csv") {
        if let Ok(v) = read_venues(data.as_slice(), 50.0) {
            VenueIndex::new(v).unwrap();
            ok += 1;
        }
    }
    for (_, data) in seeds("category_map_csv") {
        if let Ok(pairs) = read_category_map(data.as_slice()) {
            ok += usize::from(CategoryMap::from_pairs(pairs, Some("other")).is_ok());
        }
    }
    // fixture updates, both venue files, the consistent category map
    assert_eq!(ok, 4);
}
