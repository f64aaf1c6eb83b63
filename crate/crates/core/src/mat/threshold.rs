use serde::{Deserialize, Serialize};

/// Smallest and largest thresholds the controller will hold.
const T_FLOOR: f64 = f64::MIN_POSITIVE;
const T_CEIL: f64 = f64::MAX;

/// The TTA threshold steering predictions per eviction toward `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub t: f64,
}

impl ThresholdState {
    pub fn new(t0: f64) -> Self {
        Self { t: t0.clamp(T_FLOOR, T_CEIL) }
    }

    pub fn update(&mut self, r: usize, k: usize, delta: f64) {
        self.t = adjust_threshold(self.t, r, k, delta);
    }
}

/// One controller step: shrink `t` when more than `k` predictions were needed,
/// grow it when fewer were. Clamped so it stays positive and finite.
pub fn adjust_threshold(t: f64, r: usize, k: usize, delta: f64) -> f64 {
    let next = match r.cmp(&k) {
        std::cmp::Ordering::Greater => t * (1.0 - delta),
        std::cmp::Ordering::Less => t * (1.0 + delta),
        std::cmp::Ordering::Equal => t,
    };
    next.clamp(T_FLOOR, T_CEIL)
}

/// Time-to-next-access from a predicted inter-access distance and the time
/// already elapsed since the last access. Overdue objects get the overshoot.
pub fn estimate_tta(predicted_distance: f64, age: f64) -> f64 {
    (predicted_distance - age).abs()
}
