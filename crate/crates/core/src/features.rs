//! Per-object access metadata and the fixed-width feature vector built from it.
//!
//! Each object keeps up to 32 inter-access intervals ("deltas", newest first),
//! ten exponentially decayed counters (EDCs) with half-lives `2^(i + offset)`
//! requests, and two static features (size and class). EDCs decay lazily: an
//! access applies the closed-form decay for the whole gap since the previous
//! access, which equals halving once per half-life elapsed.

use std::collections::VecDeque;

use thiserror::Error;

use crate::{Key, Tick};

pub const DELTA_SLOTS: usize = 32;
pub const EDC_COUNT: usize = 10;
/// age + deltas + EDCs + size + static class
pub const FEATURE_COUNT: usize = 1 + DELTA_SLOTS + EDC_COUNT + 2;
/// Marker for absent deltas; the model routes it down each split's default branch.
pub const MISSING: f32 = f32::NAN;
pub const DEFAULT_EDC_OFFSET: u32 = 5;
/// Upper bound on [`ObjectMeta::to_packed_bytes`] output.
pub const PACKED_META_BUDGET: usize = 192;

const AGE_IDX: usize = 0;
const DELTA_IDX: usize = 1;
const EDC_IDX: usize = DELTA_IDX + DELTA_SLOTS;
const SIZE_IDX: usize = EDC_IDX + EDC_COUNT;
const CLASS_IDX: usize = SIZE_IDX + 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("time went backwards for key {key}: last access {last}, now {now}")]
    TimeWentBackwards { key: Key, last: Tick, now: Tick },
    #[error("key {0} has no recorded access")]
    NeverAccessed(Key),
    #[error("packed metadata is truncated or malformed")]
    BadPacking,
}

/// Half-life schedule of the decayed counters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdcSchedule {
    half_lives: [f64; EDC_COUNT],
}

impl EdcSchedule {
    pub fn with_offset(offset: u32) -> Self {
        let mut half_lives = [0.0; EDC_COUNT];
        for (i, h) in half_lives.iter_mut().enumerate() {
            *h = 2f64.powi(i as i32 + offset as i32);
        }
        Self { half_lives }
    }

    pub fn half_life(&self, i: usize) -> f64 {
        self.half_lives[i]
    }

    /// Supremum of counter `i` when accesses are at least one tick apart.
    pub fn upper_bound(&self, i: usize) -> f64 {
        1.0 / (1.0 - 2f64.powf(-1.0 / self.half_lives[i]))
    }

    /// Decay factor for a gap of `ticks`.
    pub fn decay(&self, i: usize, ticks: f64) -> f64 {
        2f64.powf(-ticks / self.half_lives[i])
    }
}

impl Default for EdcSchedule {
    fn default() -> Self {
        Self::with_offset(DEFAULT_EDC_OFFSET)
    }
}

/// A model output remembered between batched prediction and use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredCache {
    /// Predicted distance between the last access and the next one.
    pub distance: f64,
    pub issued_at: Tick,
    pub model_version: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMeta {
    pub key: Key,
    pub size: u64,
    pub last_access: Option<Tick>,
    /// Newest first, each ≥ 1.
    pub deltas: VecDeque<u64>,
    pub edcs: [f64; EDC_COUNT],
    pub static_class: u8,
    pub tagged: bool,
    pub pred_cache: Option<PredCache>,
}

impl ObjectMeta {
    pub fn new(key: Key, size: u64) -> Self {
        Self {
            key,
            size,
            last_access: None,
            deltas: VecDeque::with_capacity(DELTA_SLOTS),
            edcs: [0.0; EDC_COUNT],
            static_class: 0,
            tagged: false,
            pred_cache: None,
        }
    }

    /// Records an access at `now`.
    pub fn on_access(&mut self, now: Tick, schedule: &EdcSchedule) -> Result<(), FeatureError> {
        match self.last_access {
            None => self.edcs = [1.0; EDC_COUNT],
            Some(last) => {
                if now < last {
                    return Err(FeatureError::TimeWentBackwards { key: self.key, last, now });
                }
                let gap = now - last;
                if gap > 0 {
                    if self.deltas.len() == DELTA_SLOTS {
                        self.deltas.pop_back();
                    }
                    self.deltas.push_front(gap);
                }
                for (i, edc) in self.edcs.iter_mut().enumerate() {
                    *edc = *edc * schedule.decay(i, gap as f64) + 1.0;
                }
            }
        }
        self.last_access = Some(now);
        self.pred_cache = None;
        Ok(())
    }

    pub fn age(&self, now: Tick) -> Result<Tick, FeatureError> {
        let last = self.last_access.ok_or(FeatureError::NeverAccessed(self.key))?;
        now.checked_sub(last).ok_or(FeatureError::TimeWentBackwards { key: self.key, last, now })
    }

    pub fn build_features(&self, now: Tick) -> Result<FeatureVector, FeatureError> {
        let age = self.age(now)?;
        let mut v = [MISSING; FEATURE_COUNT];
        v[AGE_IDX] = age as f32;
        for (slot, &d) in v[DELTA_IDX..EDC_IDX].iter_mut().zip(&self.deltas) {
            *slot = d as f32;
        }
        for (slot, &e) in v[EDC_IDX..SIZE_IDX].iter_mut().zip(&self.edcs) {
            *slot = e as f32;
        }
        v[SIZE_IDX] = self.size as f32;
        v[CLASS_IDX] = self.static_class as f32;
        Ok(FeatureVector(v))
    }

    /// Compact little-endian encoding: a 19-byte header, one u32 per recorded
    /// delta and one f32 per EDC. Objects with shorter histories pack smaller.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PACKED_META_BUDGET);
        out.extend_from_slice(&self.key.to_le_bytes());
        out.extend_from_slice(&saturate_u32(self.size).to_le_bytes());
        out.extend_from_slice(&saturate_u32(self.last_access.unwrap_or(0)).to_le_bytes());
        out.push(self.deltas.len() as u8);
        out.push(self.static_class);
        out.push(u8::from(self.tagged) | (u8::from(self.last_access.is_some()) << 1));
        for &d in &self.deltas {
            out.extend_from_slice(&saturate_u32(d).to_le_bytes());
        }
        for &e in &self.edcs {
            out.extend_from_slice(&(e as f32).to_le_bytes());
        }
        out
    }

    pub fn from_packed_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8], FeatureError> {
            if cur.len() < n {
                return Err(FeatureError::BadPacking);
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        let key = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let size = u32::from_le_bytes(take(4)?.try_into().unwrap()) as u64;
        let last = u32::from_le_bytes(take(4)?.try_into().unwrap()) as u64;
        let n_deltas = take(1)?[0] as usize;
        let static_class = take(1)?[0];
        let flags = take(1)?[0];
        if n_deltas > DELTA_SLOTS {
            return Err(FeatureError::BadPacking);
        }
        let mut deltas = VecDeque::with_capacity(DELTA_SLOTS);
        for _ in 0..n_deltas {
            deltas.push_back(u32::from_le_bytes(take(4)?.try_into().unwrap()) as u64);
        }
        let mut edcs = [0.0; EDC_COUNT];
        for e in &mut edcs {
            *e = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
        }
        if !cur.is_empty() {
            return Err(FeatureError::BadPacking);
        }
        Ok(Self {
            key,
            size,
            last_access: (flags & 2 != 0).then_some(last),
            deltas,
            edcs,
            static_class,
            tagged: flags & 1 != 0,
            pred_cache: None,
        })
    }
}

fn saturate_u32(v: u64) -> u32 {
    v.min(u32::MAX as u64) as u32
}

/// Model input: `[age, delta_1..delta_32, edc_0..edc_9, size, static_class]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f32; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn age(&self) -> f32 {
        self.0[AGE_IDX]
    }

    pub fn deltas(&self) -> &[f32] {
        &self.0[DELTA_IDX..EDC_IDX]
    }

    pub fn edcs(&self) -> &[f32] {
        &self.0[EDC_IDX..SIZE_IDX]
    }
}

/// Ordered feature names; used as the CSV header of training dumps.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_COUNT);
    names.push("age".to_string());
    names.extend((1..=DELTA_SLOTS).map(|i| format!("delta_{i}")));
    names.extend((0..EDC_COUNT).map(|i| format!("edc_{i}")));
    names.push("size".to_string());
    names.push("static_class".to_string());
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_access_initialises() {
        let mut m = ObjectMeta::new(1, 10);
        m.on_access(5, &EdcSchedule::default()).unwrap();
        assert!(m.deltas.is_empty());
        assert_eq!(m.edcs, [1.0; EDC_COUNT]);
        assert_eq!(m.last_access, Some(5));
    }

    #[test]
    fn one_halving_period() {
        // Offset 1 makes counter 0's half-life 2 ticks.
        let s = EdcSchedule::with_offset(1);
        assert_eq!(s.half_life(0), 2.0);
        let mut m = ObjectMeta::new(1, 10);
        m.on_access(0, &s).unwrap();
        m.on_access(2, &s).unwrap();
        assert!((m.edcs[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn deltas_newest_first() {
        let s = EdcSchedule::default();
        let mut m = ObjectMeta::new(1, 10);
        for t in [10, 14, 20] {
            m.on_access(t, &s).unwrap();
        }
        assert_eq!(m.deltas, VecDeque::from([6, 4]));
    }

    #[test]
    fn backwards_time_rejected() {
        let s = EdcSchedule::default();
        let mut m = ObjectMeta::new(3, 10);
        m.on_access(10, &s).unwrap();
        assert_eq!(m.on_access(9, &s), Err(FeatureError::TimeWentBackwards { key: 3, last: 10, now: 9 }));
    }

    #[test]
    fn delta_ring_keeps_32() {
        let s = EdcSchedule::default();
        let mut m = ObjectMeta::new(1, 1);
        for t in 0..100u64 {
            m.on_access(t * t, &s).unwrap();
        }
        assert_eq!(m.deltas.len(), DELTA_SLOTS);
        assert_eq!(m.deltas[0], 99 * 99 - 98 * 98);
    }

    #[test]
    fn features_pad_with_missing() {
        let mut m = ObjectMeta::new(1, 77);
        m.last_access = Some(20);
        m.deltas = VecDeque::from([6, 4]);
        let v = m.build_features(25).unwrap();
        assert_eq!(v.age(), 5.0);
        assert_eq!(&v.deltas()[..2], &[6.0, 4.0]);
        assert!(v.deltas()[2..].iter().all(|d| d.is_nan()));
        assert_eq!(v.as_slice().len(), FEATURE_COUNT);
        assert_eq!(v.0[SIZE_IDX], 77.0);
        assert_eq!(m.build_features(20).unwrap().age(), 0.0);
    }

    #[test]
    fn never_accessed_has_no_features() {
        assert_eq!(ObjectMeta::new(4, 1).build_features(0), Err(FeatureError::NeverAccessed(4)));
    }

    #[test]
    fn names_match_width() {
        let names = feature_names();
        assert_eq!(names.len(), FEATURE_COUNT);
        assert_eq!(names[0], "age");
        assert_eq!(names[1], "delta_1");
        assert_eq!(names[FEATURE_COUNT - 1], "static_class");
    }

    #[test]
    fn packing_round_trip() {
        let s = EdcSchedule::default();
        let mut m = ObjectMeta::new(0xDEAD_BEEF, 4096);
        for t in [3, 9, 40, 41] {
            m.on_access(t, &s).unwrap();
        }
        m.tagged = true;
        let bytes = m.to_packed_bytes();
        assert_eq!(bytes.len(), 19 + 3 * 4 + EDC_COUNT * 4);
        let back = ObjectMeta::from_packed_bytes(&bytes).unwrap();
        assert_eq!(back.deltas, m.deltas);
        assert_eq!(back.last_access, Some(41));
        assert!(back.tagged);
        for (a, b) in back.edcs.iter().zip(&m.edcs) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(ObjectMeta::from_packed_bytes(&bytes[..10]), Err(FeatureError::BadPacking));
    }
}
