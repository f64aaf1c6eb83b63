use std::sync::Arc;

use matsim::heuristics::{HeuristicEngine, HeuristicKind};
use matsim::mat::{adjust_threshold, estimate_tta, MatConfig, MatEngine};
use matsim::oracle::{BeladyEngine, NextAccessIndex, SampledEngine, SamplerConfig};
use matsim::sim::{simulate, CacheConfig, EvictionEngine, EvictionEvent};
use matsim::trace::{generate_zipf, SizeDist, SyntheticSpec};
use matsim::{Key, Request};
use proptest::prelude::*;

const KINDS: [HeuristicKind; 5] = [
    HeuristicKind::Lru,
    HeuristicKind::Fifo,
    HeuristicKind::Lfuda,
    HeuristicKind::LruK { k_hist: 2 },
    HeuristicKind::TwoQ { a1in_frac: 0.25, a1out_frac: 0.5 },
];

fn zipf(n: u64, alpha: f64, req: u64, seed: u64) -> Vec<Request> {
    let spec = SyntheticSpec { universe: n, alpha, requests: req, size_dist: SizeDist::Fixed { bytes: 1 }, seed };
    generate_zipf(&spec).unwrap()
}

fn heuristic_log(kind: HeuristicKind, cap: u64, reqs: &[Request]) -> Vec<EvictionEvent> {
    let mut e = HeuristicEngine::new(kind, cap).unwrap();
    simulate(CacheConfig::new(cap), reqs, &mut e, true).1.unwrap()
}

fn mat_log(kind: HeuristicKind, cap: u64, reqs: &[Request], config: MatConfig) -> (Vec<EvictionEvent>, MatEngine) {
    let mut e = MatEngine::new(kind, cap, config).unwrap();
    let log = simulate(CacheConfig::new(cap), reqs, &mut e, true).1.unwrap();
    (log, e)
}

#[test]
fn full_stall_is_the_bare_heuristic_for_every_policy() {
    let reqs = zipf(2000, 0.9, 40_000, 4);
    let config = MatConfig { stall_prob: 1.0, train_batch: 256, ..MatConfig::default() };
    for kind in KINDS {
        let (log, e) = mat_log(kind, 200, &reqs, config);
        assert_eq!(log, heuristic_log(kind, 200, &reqs), "{kind}");
        assert!(e.model().is_some(), "{kind}: training continues during stalls");
    }
}

#[test]
fn cold_model_is_the_bare_heuristic() {
    let reqs = zipf(1000, 1.0, 20_000, 8);
    let config = MatConfig { train_batch: 1 << 30, ..MatConfig::default() };
    for kind in KINDS {
        let (log, e) = mat_log(kind, 100, &reqs, config);
        assert_eq!(log, heuristic_log(kind, 100, &reqs), "{kind}");
        assert_eq!(e.counters().predictions, 0);
        assert_eq!(e.counters().fallback_evictions, log.len() as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// With a live model, every eviction examines between 1 and L candidates
    /// and the cache never holds more than its capacity.
    #[test]
    fn predictions_per_eviction_are_bounded(seed in 0u64..1000, which in 0usize..5, cap_l in 2usize..12) {
        let reqs = zipf(400, 0.9, 6000, seed);
        let config = MatConfig { train_batch: 200, cap_l, seed, ..MatConfig::default() };
        let (log, e) = mat_log(KINDS[which], 50, &reqs, config);
        let c = e.counters();
        let ml = log.len() as u64 - c.fallback_evictions;
        prop_assert!(c.retrains > 0);
        prop_assert!(c.predictions >= ml && c.predictions <= ml * cap_l as u64);
        let hist = e.r_histogram();
        prop_assert_eq!(hist.iter().sum::<u64>(), ml);
        prop_assert!(hist.iter().enumerate().all(|(r, &n)| n == 0 || (1..=cap_l).contains(&r)));
    }

    #[test]
    fn same_seed_same_evictions(seed in 0u64..1000) {
        let reqs = zipf(300, 1.0, 4000, seed);
        let config = MatConfig { train_batch: 128, stall_prob: 0.3, seed, ..MatConfig::default() };
        let a = mat_log(HeuristicKind::Lru, 40, &reqs, config).0;
        prop_assert_eq!(a, mat_log(HeuristicKind::Lru, 40, &reqs, config).0);
    }

    /// Piecewise update: shrink when more than k predictions were used, grow
    /// when fewer, hold at exactly k.
    #[test]
    fn threshold_update_is_piecewise(t in 1e-6f64..1e9, r in 1usize..=10, k in 1usize..=10, delta in 1e-6f64..0.5) {
        let expected = if r > k { t * (1.0 - delta) } else if r < k { t * (1.0 + delta) } else { t };
        prop_assert_eq!(adjust_threshold(t, r, k, delta), expected);
    }

    #[test]
    fn tta_is_absolute_difference(d in 0u32..=10_000, age in 0u32..=10_000) {
        let expected = (d as i64 - age as i64).unsigned_abs() as f64;
        prop_assert_eq!(estimate_tta(d as f64, age as f64), expected);
    }
}

fn unit(keys: &[Key]) -> Vec<Request> {
    keys.iter().enumerate().map(|(t, &k)| Request::new(t as u64, k, 1)).collect()
}

proptest! {
    /// Sampling every resident with true next-access times is MIN.
    #[test]
    fn exhaustive_oracle_sampling_is_belady(keys in prop::collection::vec(0u64..12, 1..200), cap in 1u64..8) {
        let reqs = unit(&keys);
        let config = SamplerConfig { sample_n: 64, ..SamplerConfig::default() };
        let mut sampled = SampledEngine::with_oracle(config, Arc::new(NextAccessIndex::build(&reqs)));
        let mut min = BeladyEngine::for_trace(&reqs);
        let a = simulate(CacheConfig::new(cap), &reqs, &mut sampled, true).1.unwrap();
        let b = simulate(CacheConfig::new(cap), &reqs, &mut min, true).1.unwrap();
        prop_assert_eq!(a, b);
    }
}
