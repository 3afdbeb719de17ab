use std::collections::BTreeMap;

use doblix::model::partition_ranges;
use doblix::sstable::{inspect, write_sstable, IndexKind, Lookup, ProbeStats, SSTableHandle};
use doblix::{BuildConfig, ErrorKind, Record};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform_records(n: usize, seed: u64) -> Vec<Record> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys: Vec<u64> = (0..n).map(|_| rng.random_range(0..10_000_000_000_000_000)).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.iter()
        .map(|k| Record::new(k.to_be_bytes().to_vec(), format!("v{k}").into_bytes()))
        .collect()
}

#[test]
fn fixed_blocks_follow_partition_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    let recs = uniform_records(1000, 1);
    let sizes: Vec<u64> = recs.iter().map(|r| r.encoded_size() as u64).collect();
    let expected = partition_ranges(&sizes, 4096).len();
    for (kind, cfg) in [
        (IndexKind::FixedBinary, BuildConfig::pla(64, 4096)),
        (IndexKind::Learned, BuildConfig::pra(4096)),
    ] {
        let t = write_sstable(&dir.path().join("t.sst"), &recs, &cfg, kind).unwrap();
        assert_eq!(t.block_count(), expected);
        assert!(t.blocks().iter().all(|b| b.payload_bytes <= 4096));
        assert_eq!(t.record_count(), recs.len() as u64);
    }
}

#[test]
fn empty_table_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = write_sstable(&dir.path().join("e.sst"), &[], &BuildConfig::default(), IndexKind::Learned).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::ConfigInvalid);
    let unsorted = vec![Record::new(b"b".to_vec(), vec![]), Record::new(b"a".to_vec(), vec![])];
    let err = write_sstable(&dir.path().join("u.sst"), &unsorted, &BuildConfig::default(), IndexKind::Learned).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::ConfigInvalid);
}

#[test]
fn unbounded_error_gives_identical_data_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let recs = uniform_records(3000, 2);
    let a = write_sstable(
        &dir.path().join("a.sst"),
        &recs,
        &BuildConfig::pla(u32::MAX, 4096),
        IndexKind::Learned,
    )
    .unwrap();
    let b = write_sstable(
        &dir.path().join("b.sst"),
        &recs,
        &BuildConfig::pla(64, 4096),
        IndexKind::FixedBinary,
    )
    .unwrap();
    let da = std::fs::read(a.path()).unwrap();
    let db = std::fs::read(b.path()).unwrap();
    let (la, lb) = (a.footer().block_map_offset as usize, b.footer().block_map_offset as usize);
    assert_eq!(la, lb);
    assert_eq!(da[..la], db[..lb]);
}

#[test]
fn gets_read_one_block_and_match_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let recs = uniform_records(20_000, 3);
    let oracle: BTreeMap<Vec<u8>, Vec<u8>> = recs.iter().map(|r| (r.key.clone(), r.value.clone())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (i, (kind, cfg)) in [
        (IndexKind::Learned, BuildConfig::pla(32, 4096)),
        (IndexKind::Learned, BuildConfig::pla(256, 32768)),
        (IndexKind::Learned, BuildConfig::pra(8192)),
        (IndexKind::FixedBinary, BuildConfig::pla(64, 4096)),
    ]
    .into_iter()
    .enumerate()
    {
        let t = write_sstable(&dir.path().join(format!("{i}.sst")), &recs, &cfg, kind).unwrap();
        for r in &recs {
            let mut s = ProbeStats::default();
            assert_eq!(t.probe(&r.key, &mut s).unwrap(), Lookup::Value(r.value.clone()));
            assert_eq!(s.blocks_read, 1);
        }
        // Keys between stored keys still cost exactly one block.
        for w in recs.windows(2).step_by(97) {
            let lo = u64::from_be_bytes(w[0].key[..8].try_into().unwrap());
            let hi = u64::from_be_bytes(w[1].key[..8].try_into().unwrap());
            if hi - lo > 1 {
                let mut s = ProbeStats::default();
                assert_eq!(t.probe(&(lo + 1).to_be_bytes(), &mut s).unwrap(), Lookup::Absent);
                assert_eq!(s.blocks_read, 1);
            }
        }
        for _ in 0..5000 {
            let k: u64 = rng.random_range(0..10_000_000_000_000_000);
            let key = k.to_be_bytes();
            match oracle.get(key.as_slice()) {
                Some(v) => assert_eq!(&t.get(&key).unwrap(), v),
                None => assert_eq!(t.get(&key).unwrap_err().kind(), ErrorKind::KeyNotFound),
            }
        }
    }
}

#[test]
fn range_scans_match_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = uniform_records(5000, 5);
    for r in recs.iter_mut().step_by(7) {
        *r = Record::tombstone(r.key.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for kind in [IndexKind::Learned, IndexKind::FixedBinary] {
        let t = write_sstable(&dir.path().join("r.sst"), &recs, &BuildConfig::pla(16, 2048), kind).unwrap();
        let all: Vec<Record> = t.iter().collect::<Result<_, _>>().unwrap();
        assert_eq!(all, recs);
        let (min, max) = t.key_range();
        assert_eq!(t.range_scan(min, max).unwrap(), recs);
        assert_eq!(t.range_scan(&recs[10].key, &recs[10].key).unwrap(), vec![recs[10].clone()]);
        for _ in 0..200 {
            let i = rng.random_range(0..recs.len());
            let j = (i + 100).min(recs.len() - 1);
            assert_eq!(t.range_scan(&recs[i].key, &recs[j].key).unwrap(), recs[i..=j].to_vec());
            // Bounds that fall between stored keys.
            let mut from = recs[i].key.clone();
            from.push(0);
            let got = t.range_scan(&from, &recs[j].key).unwrap();
            assert_eq!(got, recs[i + 1..=j.max(i)].to_vec());
        }
        assert!(t.range_scan(&[0xff; 9], &[0xff; 10]).unwrap().is_empty());
        assert!(t.range_scan(&recs[5].key, &recs[4].key).unwrap().is_empty());
    }
}

#[test]
fn string_keys_with_shared_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut keys: Vec<Vec<u8>> = (0..4000)
        .map(|_| {
            let mut k = b"tenant-0042/objects/".to_vec();
            let n = rng.random_range(1..30);
            k.extend((0..n).map(|_| rng.random_range(b'a'..=b'd')));
            k
        })
        .collect();
    keys.sort();
    keys.dedup();
    let recs: Vec<Record> = keys.iter().map(|k| Record::new(k.clone(), k.clone())).collect();
    for cfg in [BuildConfig::pla(8, 1024), BuildConfig::pra(1024)] {
        let t = write_sstable(&dir.path().join("s.sst"), &recs, &cfg, IndexKind::Learned).unwrap();
        for r in &recs {
            let mut s = ProbeStats::default();
            assert_eq!(t.probe(&r.key, &mut s).unwrap(), Lookup::Value(r.value.clone()));
            assert_eq!(s.blocks_read, 1);
        }
        let mut s = ProbeStats::default();
        assert_eq!(t.probe(b"tenant-0042/objects/zzz", &mut s).unwrap(), Lookup::Absent);
    }
}

#[test]
fn corruption_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let recs = uniform_records(2000, 9);
    let path = dir.path().join("c.sst");
    let t = write_sstable(&path, &recs, &BuildConfig::default(), IndexKind::Learned).unwrap();
    let model_offset = t.footer().model_offset as usize;
    drop(t);
    let good = std::fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[20] ^= 0x40;
    std::fs::write(&path, &bad).unwrap();
    let t = SSTableHandle::open(&path).unwrap();
    let errs = recs.iter().filter_map(|r| t.get(&r.key).err()).collect::<Vec<_>>();
    assert!(!errs.is_empty());
    assert!(errs.iter().all(|e| e.kind() == ErrorKind::CorruptSSTable));

    let mut bad = good.clone();
    bad[model_offset + 1] ^= 1;
    std::fs::write(&path, &bad).unwrap();
    assert_eq!(SSTableHandle::open(&path).unwrap_err().kind(), ErrorKind::ModelDeserializeFailure);

    for cut in [0, 10, good.len() / 2, good.len() - 1] {
        std::fs::write(&path, &good[..cut]).unwrap();
        assert!(SSTableHandle::open(&path).is_err());
    }
}

#[test]
fn inspect_reports_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = uniform_records(500, 10);
    recs[100].value = vec![7; 9000];
    let path = dir.path().join("i.sst");
    let t = write_sstable(&path, &recs, &BuildConfig::pla(32, 4096), IndexKind::Learned).unwrap();
    let v = inspect(&path).unwrap();
    assert_eq!(v["record_count"], 500);
    assert_eq!(v["blocks"].as_array().unwrap().len(), t.block_count());
    assert_eq!(v["stats"]["index_bytes"], t.stats().index_bytes);
    assert_eq!(t.stats().index_bytes, t.footer().stats_offset - t.footer().model_offset);
    let over: Vec<_> = v["blocks"].as_array().unwrap().iter().filter(|b| b["oversize"] == true).collect();
    assert_eq!(over.len(), 1);
    assert_eq!(over[0]["record_count"], 1);
    assert!(v["model"]["segments"].as_array().is_some());
}
