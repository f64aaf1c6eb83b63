use matsim::oracle::{BeladyEngine, NextAccessIndex};
use matsim::sim::{Access, Cache, CacheConfig, EvictionEngine};
use matsim::trace::{generate_zipf, SizeDist, SyntheticSpec};
use matsim::{Key, Request};
use proptest::prelude::*;

fn requests(keys: &[Key]) -> Vec<Request> {
    keys.iter().enumerate().map(|(t, &k)| Request::new(t as u64, k, 1)).collect()
}

fn misses_of<E: EvictionEngine>(reqs: &[Request], cap: u64, engine: &mut E) -> usize {
    let mut cache = Cache::new(CacheConfig::new(cap));
    reqs.iter().filter(|r| cache.process(r, engine) == Access::Miss).count()
}

/// Fewest misses over every choice of victim at every forced eviction.
fn brute_force(keys: &[Key], cap: usize) -> usize {
    fn go(keys: &[Key], cap: usize, resident: &mut Vec<Key>) -> usize {
        let Some((&k, rest)) = keys.split_first() else { return 0 };
        if resident.contains(&k) {
            return go(rest, cap, resident);
        }
        if resident.len() < cap {
            resident.push(k);
            let m = 1 + go(rest, cap, resident);
            resident.pop();
            return m;
        }
        let mut best = usize::MAX;
        for i in 0..resident.len() {
            let out = std::mem::replace(&mut resident[i], k);
            best = best.min(1 + go(rest, cap, resident));
            resident[i] = out;
        }
        best
    }
    go(keys, cap, &mut Vec::new())
}

fn belady_misses(keys: &[Key], cap: u64) -> usize {
    let reqs = requests(keys);
    misses_of(&reqs, cap, &mut BeladyEngine::for_trace(&reqs))
}

#[test]
fn abcab_needs_four_misses() {
    let keys = [1, 2, 3, 1, 2];
    assert_eq!(brute_force(&keys, 2), 4);
    assert_eq!(belady_misses(&keys, 2), 4);
}

#[test]
fn every_short_trace_over_four_keys() {
    for len in 1..=7u32 {
        for code in 0..4u64.pow(len) {
            let keys: Vec<Key> = (0..len).map(|i| (code / 4u64.pow(i)) % 4).collect();
            for cap in 1..=3 {
                assert_eq!(belady_misses(&keys, cap as u64), brute_force(&keys, cap), "{keys:?} cap {cap}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(600))]

    #[test]
    fn belady_is_optimal(keys in prop::collection::vec(0u64..6, 1..=12), cap in 1usize..=3) {
        prop_assert_eq!(belady_misses(&keys, cap as u64), brute_force(&keys, cap));
    }

    #[test]
    fn belady_never_loses_to_lru(keys in prop::collection::vec(0u64..10, 1..200), cap in 1u64..8) {
        let reqs = requests(&keys);
        let mut lru = matsim::heuristics::HeuristicEngine::new(matsim::heuristics::HeuristicKind::Lru, cap).unwrap();
        prop_assert!(belady_misses(&keys, cap) <= misses_of(&reqs, cap, &mut lru));
    }
}

#[test]
fn next_access_index_matches_forward_scan() {
    let spec =
        SyntheticSpec { universe: 300, alpha: 0.9, requests: 10_000, size_dist: SizeDist::Fixed { bytes: 1 }, seed: 3 };
    let reqs = generate_zipf(&spec).unwrap();
    let index = NextAccessIndex::build(&reqs);
    assert_eq!(index.len(), reqs.len());
    for (i, r) in reqs.iter().enumerate() {
        let scanned = reqs[i + 1..].iter().find(|x| x.key == r.key).map(|x| x.time);
        assert_eq!(index.next(i as u64), scanned, "position {i}");
    }
}
