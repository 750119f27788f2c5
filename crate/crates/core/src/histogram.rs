// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::Serialize;

/// Fixed-width buckets over `[lo, hi]`; the last bucket is closed so `hi`
/// itself is counted. Values below `lo` go to `underflow`, above `hi` to
/// `overflow`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, buckets: usize) -> Self {
        assert!(hi > lo && buckets > 0, "empty histogram range");
        Self {
            lo,
            hi,
            counts: vec![0; buckets],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn from_values(lo: f64, hi: f64, buckets: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::new(lo, hi, buckets);
        values.into_iter().for_each(|v| h.add(v));
        h
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn add(&mut self, x: f64) {
        if x < self.lo || x.is_nan() {
            self.underflow += 1;
        } else if x > self.hi {
            self.overflow += 1;
        } else {
            let i = ((x - self.lo) / self.width()) as usize;
            let last = self.counts.len() - 1;
            self.counts[i.min(last)] += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }

    /// `(lower edge, upper edge, count)` per bucket.
    pub fn buckets(&self) -> Vec<(f64, f64, usize)> {
        let w = self.width();
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w, c))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges() {
        let h = Histogram::from_values(0.0, 1.0, 20, [0.0, 0.05, 0.999, 1.0, -0.1, 1.5]);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 2);
        assert_eq!((h.underflow, h.overflow), (1, 1));
        assert_eq!(h.total(), 6);
    }
}
