use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use jumpctl_core::insurance::{sign_policy, ClaimModel, SurplusModel};
use jumpctl_core::io::{read_dump, write_csv, write_dump};
use jumpctl_core::*;

fn bundle() -> PathBundle {
    let m = SurplusModel::baseline().with_claims(ClaimModel::CompoundPoisson);
    simulate_bundle(&m.system().unwrap(), &sign_policy(2.0).unwrap(), &m.sim_config(1.0, 0.05, 6, 12), 0.4).unwrap()
}

#[test]
fn dump_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.bin");
    let b = bundle();
    write_dump(&b, BufWriter::new(File::create(&path).unwrap())).unwrap();
    let back = read_dump(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(back.config, b.config);
    assert_eq!(back.config_hash(), b.config_hash());
    for (p, q) in b.paths.iter().zip(&back.paths) {
        assert_eq!(p.states(), q.states());
        assert_eq!(p.times(), q.times());
        assert_eq!(p.brownian(), q.brownian());
        assert_eq!(p.jumps(), q.jumps());
    }
}

#[test]
fn flipped_hash_byte_is_rejected() {
    let mut bytes = Vec::new();
    write_dump(&bundle(), &mut bytes).unwrap();
    bytes[8] ^= 0xff;
    assert!(matches!(read_dump(bytes.as_slice()), Err(DumpError::HashMismatch)));
    assert!(matches!(read_dump(&b"NOTADUMP"[..]), Err(DumpError::BadMagic)));
}

#[test]
fn csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str| {
        let path = dir.path().join(name);
        let mut f = BufWriter::new(File::create(&path).unwrap());
        write_csv(&bundle(), &mut f).unwrap();
        f.flush().unwrap();
        std::fs::read(path).unwrap()
    };
    let (a, b) = (write("a.csv"), write("b.csv"));
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("path_id,t,x,a,dB,jump_z\n"));
}
