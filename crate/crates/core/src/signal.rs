//! Exponential smoothing, windowed aggregation and column normalization of
//! feature streams.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_WINDOW: usize = 10;

/// Per-student smoothing state.
///
/// The first vector fed to [`SmootherState::smooth`] seeds the state and is
/// returned unchanged. Every smoothed vector is pushed into a ring buffer of
/// at most `window` entries, which [`SmootherState::aggregate_window`] averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherState {
    alpha: f64,
    window: usize,
    last_smoothed: Option<Vec<f64>>,
    buffer: VecDeque<Vec<f64>>,
}

impl SmootherState {
    pub fn new(alpha: f64, window: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::ParameterDomain(alloc::format!("alpha = {alpha} not in [0, 1]")));
        }
        if window == 0 {
            return Err(Error::ParameterDomain("window must be at least 1".into()));
        }
        Ok(Self {
            alpha,
            window,
            last_smoothed: None,
            buffer: VecDeque::with_capacity(window),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn last_smoothed(&self) -> Option<&[f64]> {
        self.last_smoothed.as_deref()
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Dimension the state expects, once seeded.
    pub fn dim(&self) -> Option<usize> {
        self.last_smoothed.as_ref().map(Vec::len)
    }

    /// Returns `alpha * raw + (1 - alpha) * prev` and records it.
    pub fn smooth(&mut self, raw: &[f64]) -> Result<Vec<f64>> {
        let next = match &self.last_smoothed {
            None => raw.to_vec(),
            Some(prev) => {
                if prev.len() != raw.len() {
                    return Err(Error::Shape {
                        expected: prev.len(),
                        actual: raw.len(),
                    });
                }
                let a = self.alpha;
                raw.iter()
                    .zip(prev)
                    .map(|(&x, &p)| a * x + (1.0 - a) * p)
                    .collect()
            }
        };
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(next.clone());
        self.last_smoothed = Some(next.clone());
        Ok(next)
    }

    /// Per-channel mean over the buffered smoothed vectors.
    pub fn aggregate_window(&self) -> Result<Vec<f64>> {
        let first = self.buffer.front().ok_or(Error::NoSignal)?;
        let mut acc = vec![0.0; first.len()];
        for row in &self.buffer {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.buffer.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }
}

/// Column-wise z-score with population standard deviation. Zero-variance
/// columns become all zeros. Rows must share a length.
pub fn normalize(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = rows.first() else {
        return Ok(Vec::new());
    };
    let cols = first.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::Shape {
            expected: cols,
            actual: bad.len(),
        });
    }
    let n = rows.len() as f64;
    let mut out = rows.to_vec();
    for c in 0..cols {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean) * (r[c] - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        for (o, r) in out.iter_mut().zip(rows) {
            o[c] = if std > 0.0 { (r[c] - mean) / std } else { 0.0 };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seeded(alpha: f64, window: usize, prev: f64) -> SmootherState {
        let mut s = SmootherState::new(alpha, window).unwrap();
        s.smooth(&[prev]).unwrap();
        s
    }

    #[test]
    fn alpha_one_passes_raw_through() {
        assert_eq!(seeded(1.0, 3, 0.2).smooth(&[0.6]).unwrap(), vec![0.6]);
    }

    #[test]
    fn alpha_zero_freezes() {
        assert_eq!(seeded(0.0, 3, 0.2).smooth(&[0.6]).unwrap(), vec![0.2]);
    }

    #[test]
    fn alpha_half_is_midpoint() {
        let out = seeded(0.5, 3, 0.2).smooth(&[0.6]).unwrap();
        assert!((out[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn first_event_seeds_state() {
        let mut s = SmootherState::new(0.3, 2).unwrap();
        assert_eq!(s.smooth(&[7.0, -1.0]).unwrap(), vec![7.0, -1.0]);
        assert_eq!(s.last_smoothed(), Some(&[7.0, -1.0][..]));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut s = seeded(0.5, 3, 0.2);
        assert_eq!(
            s.smooth(&[1.0, 2.0]),
            Err(Error::Shape { expected: 1, actual: 2 })
        );
    }

    #[test]
    fn bad_hyperparameters_rejected() {
        assert!(SmootherState::new(1.5, 3).is_err());
        assert!(SmootherState::new(-0.1, 3).is_err());
        assert!(SmootherState::new(0.5, 0).is_err());
    }

    fn filled(window: usize, values: &[f64]) -> SmootherState {
        // alpha = 1 so the buffer holds the raw values
        let mut s = SmootherState::new(1.0, window).unwrap();
        for &v in values {
            s.smooth(&[v]).unwrap();
        }
        s
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(filled(3, &[2.0, 2.0, 2.0]).aggregate_window().unwrap(), vec![2.0]);
        assert_eq!(filled(1, &[1.0, 2.0, 3.0]).aggregate_window().unwrap(), vec![3.0]);
        let mean: f64 = [1.0, 2.0, 3.0].iter().sum::<f64>() / 3.0;
        assert_eq!(filled(3, &[1.0, 2.0, 3.0]).aggregate_window().unwrap(), vec![mean]);
    }

    #[test]
    fn aggregate_partial_window_uses_available_points() {
        let s = filled(10, &[1.0, 3.0]);
        assert_eq!(s.buffered(), 2);
        assert_eq!(s.aggregate_window().unwrap(), vec![2.0]);
    }

    #[test]
    fn aggregate_empty_is_error() {
        let s = SmootherState::new(0.3, 4).unwrap();
        assert_eq!(s.aggregate_window(), Err(Error::NoSignal));
    }

    #[test]
    fn normalize_examples() {
        let col = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
        assert_eq!(normalize(&col(&[5.0, 5.0, 5.0])).unwrap(), col(&[0.0, 0.0, 0.0]));
        assert_eq!(normalize(&col(&[0.0, 2.0])).unwrap(), col(&[-1.0, 1.0]));
        let out = normalize(&col(&[1.0, 2.0, 3.0])).unwrap();
        // population std of (1,2,3) is sqrt(2/3)
        let z = 1.0 / (2.0f64 / 3.0).sqrt();
        let expect = [-z, 0.0, z];
        for (o, e) in out.iter().zip(expect) {
            assert!((o[0] - e).abs() < 1e-12);
        }
        assert!((z - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn normalize_rejects_ragged_rows() {
        assert!(normalize(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn smoothing_is_order_sensitive() {
        let run = |alpha: f64, xs: &[f64]| {
            let mut s = SmootherState::new(alpha, 4).unwrap();
            let mut last = 0.0;
            for &x in xs {
                last = s.smooth(&[x]).unwrap()[0];
            }
            last
        };
        assert_ne!(run(0.5, &[0.0, 1.0, 4.0]), run(0.5, &[4.0, 1.0, 0.0]));
        // alpha in {0, 1}: output depends only on first or last, so equal
        // for permutations that keep those fixed.
        assert_eq!(run(1.0, &[0.0, 1.0, 4.0]), run(1.0, &[1.0, 0.0, 4.0]));
        assert_eq!(run(0.0, &[0.0, 1.0, 4.0]), run(0.0, &[0.0, 4.0, 1.0]));
        assert_eq!(run(0.5, &[2.0, 2.0, 2.0]), 2.0);
    }

    proptest! {
        #[test]
        fn smoothed_stays_within_input_hull(
            alpha in 0.0f64..=1.0,
            xs in prop::collection::vec(-1e3f64..1e3, 1..50),
        ) {
            let mut s = SmootherState::new(alpha, 5).unwrap();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &x in &xs {
                lo = lo.min(x);
                hi = hi.max(x);
                let y = s.smooth(&[x]).unwrap()[0];
                let slack = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
                prop_assert!(y >= lo - slack && y <= hi + slack);
            }
        }

        #[test]
        fn aggregate_of_constant_stream_is_constant(
            c in -1e3f64..1e3,
            window in 1usize..20,
            len in 1usize..40,
            alpha in 0.0f64..=1.0,
        ) {
            let mut s = SmootherState::new(alpha, window).unwrap();
            for _ in 0..len {
                s.smooth(&[c]).unwrap();
            }
            let agg = s.aggregate_window().unwrap()[0];
            prop_assert!((agg - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }

        #[test]
        fn normalize_is_idempotent(
            rows in prop::collection::vec(prop::collection::vec(-100f64..100.0, 3), 2..30),
        ) {
            let once = normalize(&rows).unwrap();
            let twice = normalize(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
