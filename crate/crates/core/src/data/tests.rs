use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::format::{decode, encode};
use super::*;
use crate::par::Execution;

fn small(seed: u64) -> GenConfig {
    GenConfig {
        num_users: 60,
        num_items: 400,
        clusters: 8,
        d_m: 8,
        l_max_u: 8,
        l_max_l: 40,
        l_bc: 6,
        candidates_per_request: 5,
        min_history: 4,
        seed,
        ..GenConfig::default()
    }
}

#[test]
fn generation_is_deterministic_and_schedule_independent() {
    let cfg = small(3);
    let a = Dataset::generate(&cfg).unwrap();
    let b = Dataset::generate(&cfg).unwrap();
    assert_eq!(encode(&a), encode(&b));
    let seq = generate_requests_with(&cfg, &a.catalog, Execution::Sequential).unwrap();
    assert_eq!(seq, a.requests);
    let streamed: Vec<Request> = request_stream(&cfg, &a.catalog).unwrap().collect();
    assert_eq!(streamed, a.requests);
    let other = Dataset::generate(&small(4)).unwrap();
    assert_ne!(encode(&a), encode(&other));
}

#[test]
fn samples_respect_id_and_ordering_invariants() {
    let cfg = small(5);
    let ds = Dataset::generate(&cfg).unwrap();
    for r in &ds.requests {
        assert_eq!(r.short_seq.len(), cfg.l_max_u as usize);
        assert_eq!(r.lifelong_seq.len(), cfg.l_max_l as usize);
        for &i in r.short_seq.iter().chain(&r.lifelong_seq) {
            assert!(i == PAD || i < cfg.num_items);
        }
        // pads only trail, and the short sequence is the most recent suffix
        let hist: Vec<u32> = r.valid_lifelong().collect();
        assert!(r.lifelong_seq[hist.len()..].iter().all(|&i| i == PAD));
        let short: Vec<u32> = r.short_seq.iter().copied().filter(|&i| i != PAD).collect();
        assert_eq!(&hist[hist.len() - short.len()..], &short[..]);
        for s in r.samples() {
            assert_eq!(s.non_behavioral.len(), FIELD_NAMES.len());
            assert_eq!(s.lifelong_seq, r.lifelong_seq);
            assert!(s.label <= 1);
        }
    }
}

#[test]
fn constant_probability_ctr() {
    let cfg = GenConfig {
        num_users: 2000,
        candidates_per_request: 10,
        w_int: 0.0,
        w_prof: 0.0,
        bias: -1.0,
        ..small(11)
    };
    let ds = Dataset::generate(&cfg).unwrap();
    let n = ds.impressions() as f64;
    let clicks: f64 = ds
        .requests
        .iter()
        .flat_map(|r| &r.candidates)
        .map(|c| c.label as f64)
        .sum();
    let p = 1.0 / (1.0 + 1f64.exp());
    let se = (p * (1.0 - p) / n).sqrt();
    assert!((clicks / n - p).abs() < 3.0 * se, "ctr {} vs {p}", clicks / n);
}

#[test]
fn similarity_ceiling() {
    let cfg = GenConfig { w_prof: 0.0, ..small(2) };
    let catalog = generate_catalog(&cfg).unwrap();
    let labels = LabelModel::new(&cfg);
    let c = 17;
    let history = vec![c; 12];
    assert!((interaction_signal(&catalog, &history, c) - 1.0).abs() < 1e-6);
    let top = labels.probability(&catalog, 0, &history, c);
    for other in 0..cfg.num_items {
        assert!(labels.probability(&catalog, 0, &history, other) <= top + 1e-12);
    }
    assert_eq!(interaction_signal(&catalog, &[PAD, PAD], c), 0.0);
}

#[test]
fn empty_and_single_request_round_trip() {
    let cfg = small(1);
    let catalog = generate_catalog(&cfg).unwrap();
    let empty = Dataset {
        config: cfg.clone(),
        catalog: catalog.clone(),
        requests: vec![],
    };
    assert_eq!(decode(&encode(&empty)).unwrap(), empty);

    let one = Dataset {
        config: cfg,
        catalog,
        requests: vec![Request {
            user_id: 9,
            user_fields: vec![1, 2],
            short_seq: vec![3, PAD],
            lifelong_seq: vec![5, 3, PAD, PAD],
            candidates: vec![Candidate {
                item_id: 7,
                fields: vec![7, 0],
                label: 1,
            }],
        }],
    };
    let bytes = encode(&one);
    assert_eq!(decode(&bytes).unwrap(), one);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.estd");
    write_dataset(&path, &one).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(read_dataset(&path).unwrap(), one);
}

fn format_offset(bytes: &[u8]) -> u64 {
    match decode(bytes) {
        Err(DataError::Format { offset, .. }) => offset,
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn format_errors_name_offsets() {
    let ds = Dataset::generate(&small(8)).unwrap();
    let bytes = encode(&ds);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(format_offset(&bad), 0);

    let mut bad = bytes.clone();
    bad[4] = 2;
    assert_eq!(format_offset(&bad), 4);

    // truncation inside the header
    assert_eq!(format_offset(&bytes[..10]), 8);
    let cut = bytes.len() - 3;
    assert!(format_offset(&bytes[..cut]) <= cut as u64);

    let mut long = bytes.clone();
    long.push(0);
    assert_eq!(format_offset(&long), bytes.len() as u64);

    let msg = decode(&bytes[..10]).unwrap_err().to_string();
    assert!(msg.contains("byte 8"), "{msg}");
}

#[test]
fn huge_request_counts_are_rejected_without_overflow() {
    let cfg = small(1);
    let catalog = generate_catalog(&cfg).unwrap();
    let mut ds = Dataset {
        config: cfg,
        catalog,
        requests: vec![],
    };
    // the lone request starts where the empty dataset's bytes end
    let start = encode(&ds).len();
    ds.requests.push(Request {
        user_id: 1,
        user_fields: vec![0, 0],
        short_seq: vec![PAD],
        lifelong_seq: vec![PAD],
        candidates: vec![],
    });
    let mut bytes = encode(&ds);
    // n_cand and n_cand_fields follow user_id and three u32 lengths
    bytes[start + 20..start + 28].fill(0xff);
    assert_eq!(format_offset(&bytes), start as u64 + 8);
}

#[test]
fn csv_export_lists_every_impression() {
    let ds = Dataset::generate(&small(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    ds.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("user_id,candidate_id,label,p_true"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), ds.impressions());
    let p: f64 = rows[0].rsplit(',').next().unwrap().parse().unwrap();
    assert!(p > 0.0 && p < 1.0);
}

#[test]
fn split_holds_out_the_tail() {
    let ds = Dataset::generate(&small(7)).unwrap();
    let (train, valid) = ds.split(0.1);
    assert_eq!(valid.len(), 6);
    assert_eq!(train.len() + valid.len(), ds.requests.len());
    assert_eq!(valid[0].user_id, 54);
}

/// Arbitrary dataset with random config, content bits and request layout.
pub(crate) fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let clusters = rng.gen_range(1..4u32);
    let num_items = rng.gen_range(clusters..clusters + 6);
    let d_m = rng.gen_range(1..4u32);
    let l_max_l = rng.gen_range(0..6u32);
    let config = GenConfig {
        num_users: rng.gen(),
        num_items,
        clusters,
        d_m,
        l_max_u: rng.gen_range(0..4),
        l_max_l,
        l_bc: rng.gen_range(0..=l_max_l),
        candidates_per_request: rng.gen(),
        interests_per_user: rng.gen_range(1..=clusters),
        profile_segments: rng.gen_range(1..5),
        activity_levels: rng.gen_range(1..5),
        min_history: rng.gen_range(0..=l_max_l),
        item_noise: rng.gen_range(0.0..2.0),
        popularity_skew: rng.gen(),
        in_interest_rate: rng.gen(),
        label_temperature: rng.gen_range(0.1..3.0),
        w_int: rng.gen_range(-5.0..5.0),
        w_prof: rng.gen_range(-5.0..5.0),
        bias: rng.gen_range(-5.0..5.0),
        seed: rng.gen(),
    };
    let n = (num_items * d_m) as usize;
    let mut catalog = generate_catalog(&config).unwrap();
    // arbitrary bit patterns, NaNs included, must survive untouched
    catalog.content = (0..n).map(|_| f32::from_bits(rng.gen())).collect();
    let id = |rng: &mut ChaCha8Rng| {
        if rng.gen_bool(0.3) {
            PAD
        } else {
            rng.gen_range(0..num_items)
        }
    };
    let requests = (0..rng.gen_range(0..5))
        .map(|_| {
            let n_fields = rng.gen_range(0..3);
            Request {
                user_id: rng.gen(),
                user_fields: (0..rng.gen_range(0..3)).map(|_| rng.gen()).collect(),
                short_seq: (0..rng.gen_range(0..5)).map(|_| id(rng)).collect(),
                lifelong_seq: (0..rng.gen_range(0..8)).map(|_| id(rng)).collect(),
                candidates: (0..rng.gen_range(0..4))
                    .map(|_| Candidate {
                        item_id: rng.gen_range(0..num_items) as u64,
                        fields: (0..n_fields).map(|_| rng.gen()).collect(),
                        label: rng.gen_range(0..2),
                    })
                    .collect(),
            }
        })
        .collect();
    Dataset {
        config,
        catalog,
        requests,
    }
}

proptest! {
    #[test]
    fn random_datasets_round_trip_bit_exactly(seed in any::<u64>()) {
        let ds = random_dataset(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = encode(&ds);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(encode(&back), bytes);
        prop_assert_eq!(back.requests, ds.requests);
    }

    #[test]
    fn corrupted_bytes_never_panic(seed in any::<u64>(), flips in prop::collection::vec((any::<usize>(), any::<u8>()), 1..4), cut in any::<usize>()) {
        let ds = random_dataset(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut bytes = encode(&ds);
        for (at, v) in flips {
            let i = at % bytes.len();
            bytes[i] = v;
        }
        let keep = cut % (bytes.len() + 1);
        if let Err(DataError::Format { offset, .. }) = decode(&bytes[..keep]) {
            prop_assert!(offset <= keep as u64);
        }
    }
}
