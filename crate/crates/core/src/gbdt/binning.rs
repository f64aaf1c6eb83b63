use rayon::prelude::*;

/// Bin index reserved for missing (NaN) values.
pub const MISSING_BIN: u8 = u8::MAX;

/// Sorted split candidates of one feature. A value `v` falls in bin `j`,
/// the first index with `v <= cuts[j]`, or in bin `cuts.len()` past the last cut.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCuts {
    pub cuts: Vec<f32>,
}

impl FeatureCuts {
    /// Midpoints between adjacent distinct values when there are few of them,
    /// otherwise quantile boundaries; at most `n_bins - 1` cuts.
    pub fn fit(column: impl Iterator<Item = f32>, n_bins: usize) -> Self {
        let mut values: Vec<f32> = column.filter(|v| !v.is_nan()).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = values.clone();
        distinct.dedup();
        let mut cuts = Vec::new();
        if distinct.len() <= n_bins {
            for w in distinct.windows(2) {
                cuts.push(midpoint(w[0], w[1]));
            }
        } else {
            let len = values.len();
            for q in 1..n_bins {
                let lo = values[q * len / n_bins - 1];
                let above = values.partition_point(|&x| x <= lo);
                if above < len {
                    let cut = midpoint(lo, values[above]);
                    if cuts.last().is_none_or(|&c: &f32| c < cut) {
                        cuts.push(cut);
                    }
                }
            }
        }
        Self { cuts }
    }

    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn bin(&self, v: f32) -> u8 {
        if v.is_nan() {
            MISSING_BIN
        } else {
            self.cuts.partition_point(|&c| c < v) as u8
        }
    }

    /// Raw-value threshold equivalent to "bin <= b".
    pub fn threshold(&self, b: usize) -> f32 {
        self.cuts[b]
    }
}

fn midpoint(lo: f32, hi: f32) -> f32 {
    let mid = ((lo as f64 + hi as f64) / 2.0) as f32;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

/// Column-major binned copy of a dataset.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub cuts: Vec<FeatureCuts>,
    pub columns: Vec<Vec<u8>>,
}

impl BinnedMatrix {
    pub fn build(values: &[f32], n_rows: usize, n_features: usize, n_bins: usize) -> Self {
        let (cuts, columns) = (0..n_features)
            .into_par_iter()
            .map(|f| {
                let column = (0..n_rows).map(|r| values[r * n_features + f]);
                let cuts = FeatureCuts::fit(column.clone(), n_bins);
                let binned = column.map(|v| cuts.bin(v)).collect::<Vec<_>>();
                (cuts, binned)
            })
            .unzip();
        Self { cuts, columns }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_distinct_values_split_at_midpoints() {
        let c = FeatureCuts::fit([1.0, 3.0, 3.0, 5.0].into_iter(), 64);
        assert_eq!(c.cuts, vec![2.0, 4.0]);
        assert_eq!(c.bin(1.0), 0);
        assert_eq!(c.bin(2.0), 0);
        assert_eq!(c.bin(2.5), 1);
        assert_eq!(c.bin(9.0), 2);
        assert_eq!(c.bin(f32::NAN), MISSING_BIN);
    }

    #[test]
    fn quantile_cuts_are_bounded_and_sorted() {
        let c = FeatureCuts::fit((0..10_000).map(|i| (i % 997) as f32), 16);
        assert!(c.cuts.len() <= 15);
        assert!(c.cuts.windows(2).all(|w| w[0] < w[1]));
        for v in [0.0f32, 10.0, 500.0, 996.0] {
            let b = c.bin(v) as usize;
            if b < c.cuts.len() {
                assert!(v <= c.threshold(b));
            }
            if b > 0 {
                assert!(v > c.threshold(b - 1));
            }
        }
    }

    #[test]
    fn all_missing_column_has_one_bin() {
        let c = FeatureCuts::fit([f32::NAN, f32::NAN].into_iter(), 8);
        assert!(c.cuts.is_empty());
        assert_eq!(c.n_bins(), 1);
    }
}
