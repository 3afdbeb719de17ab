use std::collections::BTreeMap;

use doblix::agent::AgentConfig;
use doblix::engine::{Db, Options, Source};
use doblix::sstable::IndexKind;
use doblix::{BuildConfig, ErrorKind, Record};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(dir: &std::path::Path) -> Options {
    let mut o = Options::new(dir);
    o.memtable_bytes = 64 << 10;
    o.base_level_bytes = 512 << 10;
    o.target_file_bytes = 128 << 10;
    o.agent = None;
    o
}

fn key(i: u64) -> Vec<u8> {
    format!("user{:012}", i).into_bytes()
}

fn run_oracle(seed: u64, ops: usize, opts: Options) {
    let db = Db::open(opts).unwrap();
    let mut oracle = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ops {
        let k = key(rng.random_range(0..5_000));
        match rng.random_range(0..10) {
            0..=4 => {
                let v = rng.random::<u64>().to_le_bytes().repeat(rng.random_range(1..6));
                db.put(&k, &v).unwrap();
                oracle.insert(k, v);
            }
            5 => {
                db.delete(&k).unwrap();
                oracle.remove(&k);
            }
            6 => {
                let hi = key(rng.random_range(0..5_000));
                let got = db.scan(&k, &hi).unwrap();
                let want: Vec<_> = if k <= hi {
                    oracle.range(k.clone()..=hi).map(|(a, b)| (a.clone(), b.clone())).collect()
                } else {
                    Vec::new()
                };
                assert_eq!(got, want);
            }
            _ => match oracle.get(&k) {
                Some(v) => assert_eq!(&db.get(&k).unwrap(), v),
                None => assert_eq!(db.get(&k).unwrap_err().kind(), ErrorKind::KeyNotFound),
            },
        }
    }
    db.flush().unwrap();
    for (k, v) in &oracle {
        assert_eq!(&db.get(k).unwrap(), v);
    }
}

#[test]
fn matches_oracle_inline() {
    let dir = tempfile::tempdir().unwrap();
    run_oracle(1, 60_000, small(dir.path()));
}

#[test]
fn matches_oracle_background_with_agent() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = small(dir.path());
    o.background = true;
    o.agent = Some(AgentConfig {
        episode_every: 2,
        ..AgentConfig::default()
    });
    run_oracle(2, 60_000, o);
}

#[test]
fn matches_oracle_fixed_binary() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = small(dir.path());
    o.index_kind = IndexKind::FixedBinary;
    run_oracle(3, 30_000, o);
}

#[test]
fn reopen_recovers_tables_and_log() {
    let dir = tempfile::tempdir().unwrap();
    {
        let db = Db::open(small(dir.path())).unwrap();
        for i in 0..20_000 {
            db.put(&key(i), &i.to_le_bytes()).unwrap();
        }
        for i in (0..20_000).step_by(3) {
            db.delete(&key(i)).unwrap();
        }
        // The tail stays in the memtable and the log only.
    }
    let db = Db::open(small(dir.path())).unwrap();
    for i in 0..20_000 {
        let got = db.get(&key(i));
        if i % 3 == 0 {
            assert_eq!(got.unwrap_err().kind(), ErrorKind::KeyNotFound);
        } else {
            assert_eq!(got.unwrap(), i.to_le_bytes());
        }
    }
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"MANIFEST".to_string()));
    assert!(names.contains(&"wal.log".to_string()));
    assert!(names.iter().any(|n| n.ends_with(".sst")));
}

#[test]
fn orphan_tables_are_removed() {
    let dir = tempfile::tempdir().unwrap();
    {
        let db = Db::open(small(dir.path())).unwrap();
        db.put(b"a", b"1").unwrap();
        db.flush().unwrap();
    }
    std::fs::write(dir.path().join("999999.sst"), b"junk").unwrap();
    let db = Db::open(small(dir.path())).unwrap();
    assert!(!dir.path().join("999999.sst").exists());
    assert_eq!(db.get(b"a").unwrap(), b"1");
}

#[test]
fn newer_level_zero_tombstone_shadows_older_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = small(dir.path());
    o.l0_trigger = 10;
    let db = Db::open(o).unwrap();
    db.put(b"k", b"old").unwrap();
    db.flush().unwrap();
    db.delete(b"k").unwrap();
    db.flush().unwrap();
    assert_eq!(db.version().levels[0].len(), 2);
    let (v, m) = db.get_with_metrics(b"k").unwrap();
    assert_eq!(v, None);
    assert_eq!(m.source, Source::Level(0));
    assert_eq!(m.tables_probed, 1);
    assert!(db.scan(b"a", b"z").unwrap().is_empty());
}

#[test]
fn deeper_levels_are_sorted_and_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(small(dir.path())).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..80_000 {
        db.put(&key(rng.random_range(0..50_000)), &[7u8; 24]).unwrap();
    }
    db.flush().unwrap();
    let v = db.version();
    assert!(v.levels[0].len() < 4);
    let mut deep_tables = 0;
    for level in &v.levels[1..] {
        deep_tables += level.len();
        for w in level.windows(2) {
            assert!(w[0].max_key() < w[1].min_key());
        }
    }
    assert!(deep_tables > 0);
    assert!(db.stats().compactions > 0);
}

#[test]
fn every_created_table_is_forwarded() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = small(dir.path());
    o.agent = Some(AgentConfig {
        episode_every: 3,
        ..AgentConfig::default()
    });
    let db = Db::open(o).unwrap();
    for i in 0..40_000 {
        db.put(&key(i), &[1u8; 16]).unwrap();
        if i % 7 == 0 {
            let _ = db.get(&key(i / 2));
        }
    }
    db.flush().unwrap();
    let s = db.stats();
    assert!(s.tables_created >= 6);
    assert_eq!(s.stats_forwarded, s.tables_created);
    assert_eq!(s.episodes, s.tables_created / 3);
    assert_eq!(db.decisions().len() as u64, s.episodes);
    assert!(dir.path().join("agent.json").exists());
}

#[test]
fn bulk_load_requires_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = small(dir.path());
    o.build_config = BuildConfig::pla(32, 4096);
    let db = Db::open(o).unwrap();
    let recs: Vec<Record> = (0..30_000).map(|i| Record::new(key(i), i.to_be_bytes().to_vec())).collect();
    db.bulk_load(&recs).unwrap();
    let v = db.version();
    assert!(v.levels[0].is_empty());
    for i in (0..30_000).step_by(997) {
        let (val, m) = db.get_with_metrics(&key(i)).unwrap();
        assert_eq!(val.unwrap(), i.to_be_bytes());
        assert_eq!(m.blocks_read, 1);
    }
    assert_eq!(db.bulk_load(&recs).unwrap_err().kind(), ErrorKind::ConfigInvalid);
}

#[test]
fn invalid_inputs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(small(dir.path())).unwrap();
    assert_eq!(db.put(b"", b"x").unwrap_err().kind(), ErrorKind::ConfigInvalid);
    let mut o = small(dir.path());
    o.level_ratio = 1;
    assert_eq!(Db::open(o).err().unwrap().kind(), ErrorKind::ConfigInvalid);
}
