use dataportrait::sketch::{hash_indices, plan_parameters, BloomFilter, FilterParams};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_string(rng: &mut StdRng, len: usize) -> String {
    (0..len).map(|_| rng.gen_range(' '..='~')).collect()
}

fn small_params() -> impl Strategy<Value = FilterParams> {
    (8u64..4096, 1u32..12, any::<u64>()).prop_map(|(m, k, seed)| FilterParams::new(m, k, 4, 4, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_false_negatives(params in small_params(), elems in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 0..200)) {
        let mut f = BloomFilter::new(params).unwrap();
        for e in &elems {
            f.insert(e);
        }
        for e in &elems {
            prop_assert!(f.contains(e));
        }
        prop_assert!(f.count_ones() <= (f.inserted() * f.params().k_hashes as u64).min(f.m_bits()));
    }

    #[test]
    fn membership_is_monotone(params in small_params(), first in proptest::collection::vec(any::<u32>(), 1..100), later in proptest::collection::vec(any::<u32>(), 1..100), probes in proptest::collection::vec(any::<u32>(), 1..100)) {
        let mut f = BloomFilter::new(params).unwrap();
        for e in &first {
            f.insert(&e.to_le_bytes());
        }
        let before: Vec<bool> = probes.iter().map(|p| f.contains(&p.to_le_bytes())).collect();
        for e in &later {
            f.insert(&e.to_le_bytes());
        }
        for (p, was) in probes.iter().zip(before) {
            if was {
                prop_assert!(f.contains(&p.to_le_bytes()));
            }
        }
    }

    #[test]
    fn merge_is_union(params in small_params(), a_items in proptest::collection::vec(any::<u16>(), 0..80), b_items in proptest::collection::vec(any::<u16>(), 0..80), probes in proptest::collection::vec(any::<u16>(), 0..200)) {
        let mut a = BloomFilter::new(params.clone()).unwrap();
        let mut b = BloomFilter::new(params).unwrap();
        a_items.iter().for_each(|e| a.insert(&e.to_le_bytes()));
        b_items.iter().for_each(|e| b.insert(&e.to_le_bytes()));
        let ab = BloomFilter::merge(&a, &b).unwrap();
        prop_assert_eq!(&ab, &BloomFilter::merge(&b, &a).unwrap());
        prop_assert_eq!(ab.inserted(), a.inserted() + b.inserted());
        // a non-member can borrow probe bits from both sides, so only one direction is exact
        for p in probes.iter().chain(&a_items).chain(&b_items) {
            let e = p.to_le_bytes();
            if a.contains(&e) || b.contains(&e) {
                prop_assert!(ab.contains(&e));
            }
        }
    }

    #[test]
    fn merge_matches_union_when_lightly_loaded(seed in any::<u64>(), a_items in proptest::collection::vec(any::<u16>(), 0..40), b_items in proptest::collection::vec(any::<u16>(), 0..40), probes in proptest::collection::vec(any::<u16>(), 0..200)) {
        let params = FilterParams::new(1 << 20, 7, 4, 4, seed).unwrap();
        let mut a = BloomFilter::new(params.clone()).unwrap();
        let mut b = BloomFilter::new(params).unwrap();
        a_items.iter().for_each(|e| a.insert(&e.to_le_bytes()));
        b_items.iter().for_each(|e| b.insert(&e.to_le_bytes()));
        let ab = BloomFilter::merge(&a, &b).unwrap();
        for p in probes.iter().chain(&a_items).chain(&b_items) {
            let e = p.to_le_bytes();
            prop_assert_eq!(ab.contains(&e), a.contains(&e) || b.contains(&e));
        }
    }

    #[test]
    fn serialization_round_trips(params in small_params(), items in proptest::collection::vec(any::<u64>(), 0..300), saturate in any::<bool>()) {
        let mut f = BloomFilter::new(params).unwrap();
        items.iter().for_each(|e| f.insert(&e.to_le_bytes()));
        if saturate {
            f.fill_all();
        }
        let bytes = f.to_bytes();
        prop_assert_eq!(bytes.len(), f.encoded_len());
        let g = BloomFilter::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&g, &f);
        prop_assert_eq!(g.to_bytes(), bytes);
    }

    #[test]
    fn indices_in_range(params in small_params(), e in proptest::collection::vec(any::<u8>(), 0..64)) {
        let idx = hash_indices(&e, &params);
        prop_assert_eq!(idx.len(), params.k_hashes as usize);
        prop_assert!(idx.iter().all(|&j| j < params.m_bits));
    }
}

/// A filter planned for `n` elements with `n` random 50-char tiles inserted.
fn design_capacity(n: u64, fpr: f64, seed: u64) -> BloomFilter {
    let params = plan_parameters(n, fpr).unwrap().with_seed(seed);
    let mut f = BloomFilter::new(params).unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..n {
        f.insert(random_string(&mut rng, 50).as_bytes());
    }
    f
}

#[test]
fn design_capacity_fill_is_half() {
    let f = design_capacity(1_000_000, 1e-3, 1);
    let sat = f.saturation();
    assert!((sat - 0.5).abs() <= 0.02, "saturation {sat}");
    let est = f.estimated_fpr();
    let expected = sat.powi(f.params().k_hashes as i32);
    assert_eq!(est, expected);
    assert!((est - 0.5f64.powi(10)).abs() < 0.5f64.powi(10) * 0.5, "estimated fpr {est}");
}

#[test]
fn false_positive_rate_is_calibrated() {
    let target = 1e-3;
    let f = design_capacity(200_000, target, 2);
    let mut rng = StdRng::seed_from_u64(99);
    let trials = 200_000;
    let hits = (0..trials).filter(|_| f.contains(random_string(&mut rng, 50).as_bytes())).count();
    let rate = hits as f64 / trials as f64;
    assert!(rate >= target / 5.0 && rate <= 2.0 * target, "empirical fpr {rate}");
}

#[test]
fn full_index_collisions_track_fill() {
    // probability that all k probes of a non-member land on set bits
    let f = design_capacity(100_000, 1e-2, 3);
    let mut rng = StdRng::seed_from_u64(4);
    let trials = 100_000;
    let hits = (0..trials)
        .filter(|_| hash_indices(random_string(&mut rng, 50).as_bytes(), f.params()).iter().all(|&j| f.bit(j)))
        .count();
    let rate = hits as f64 / trials as f64;
    assert!(rate > 1e-2 / 5.0 && rate < 2e-2, "rate {rate}");
}
