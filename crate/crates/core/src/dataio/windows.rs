use rand::seq::SliceRandom;
use rand::Rng;

use super::{SeriesDataset, Split};
use crate::error::{Error, Result};
use crate::ndmath::Array2;

/// A batch of windows flattened channel-major: row `b * C + c` holds channel
/// `c` of window `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `B·C x T` lookback values.
    pub inputs: Array2,
    /// `B·C x H` target values.
    pub targets: Array2,
    /// Cycle index of the last observed step of each window.
    pub tau: Vec<usize>,
    /// Row index of the first target step of each window.
    pub starts: Vec<usize>,
    pub channels: usize,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// `C x T` input of window `b`.
    pub fn input(&self, b: usize) -> Array2 {
        self.inputs.slice_rows(b * self.channels, (b + 1) * self.channels)
    }

    /// `C x H` target of window `b`.
    pub fn target(&self, b: usize) -> Array2 {
        self.targets.slice_rows(b * self.channels, (b + 1) * self.channels)
    }

    pub(crate) fn assemble(ds: &SeriesDataset, starts: &[usize], lookback: usize, horizon: usize) -> Self {
        let c = ds.channels();
        let vals = ds.values();
        let mut inputs = Vec::with_capacity(starts.len() * c * lookback);
        let mut targets = Vec::with_capacity(starts.len() * c * horizon);
        for &t0 in starts {
            for ch in 0..c {
                inputs.extend((t0 - lookback..t0).map(|r| vals.get(r, ch)));
            }
            for ch in 0..c {
                targets.extend((t0..t0 + horizon).map(|r| vals.get(r, ch)));
            }
        }
        WindowBatch {
            inputs: Array2::new(starts.len() * c, lookback, inputs),
            targets: Array2::new(starts.len() * c, horizon, targets),
            tau: starts.iter().map(|&t0| ds.tau(t0 - 1)).collect(),
            starts: starts.to_vec(),
            channels: c,
        }
    }
}

/// First-target-row of every valid window in `split`, in chronological order.
///
/// Train windows lie entirely inside the train rows. Validation and test
/// windows keep their targets inside the split but may read lookback context
/// from the rows before it.
pub fn window_starts(ds: &SeriesDataset, split: Split, lookback: usize, horizon: usize) -> Result<Vec<usize>> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::config("lookback and horizon must be at least 1"));
    }
    let range = ds.split_range(split);
    let first = match split {
        Split::Train => range.start + lookback,
        Split::Val | Split::Test => range.start.max(lookback),
    };
    let need = match split {
        Split::Train => lookback + horizon,
        Split::Val | Split::Test => horizon + first - range.start,
    };
    if range.len() < need {
        return Err(Error::TooShort { split: split.name(), have: range.len(), need });
    }
    Ok((first..=range.end - horizon).collect())
}

/// Iterator over the batches of one epoch.
#[derive(Debug)]
pub struct WindowStream<'a> {
    ds: &'a SeriesDataset,
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    lookback: usize,
    horizon: usize,
}

impl WindowStream<'_> {
    pub fn num_windows(&self) -> usize {
        self.order.len()
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }
}

impl Iterator for WindowStream<'_> {
    type Item = WindowBatch;

    fn next(&mut self) -> Option<WindowBatch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let b = WindowBatch::assemble(self.ds, &self.order[self.pos..end], self.lookback, self.horizon);
        self.pos = end;
        Some(b)
    }
}

/// Enumerates every window of `split` once, optionally in shuffled order.
pub fn make_windows<'a, R: Rng + ?Sized>(
    ds: &'a SeriesDataset,
    split: Split,
    lookback: usize,
    horizon: usize,
    batch: usize,
    shuffle: bool,
    rng: &mut R,
) -> Result<WindowStream<'a>> {
    if batch == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let mut order = window_starts(ds, split, lookback, horizon)?;
    if shuffle {
        order.shuffle(rng);
    }
    Ok(WindowStream { ds, order, pos: 0, batch, lookback, horizon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::SplitRule;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize, c: usize, train_end: usize, val_end: usize, l: usize) -> SeriesDataset {
        let values = Array2::from_fn(n, c, |r, ch| (r * 100 + ch) as f64);
        let cols = (0..c).map(|i| format!("c{i}")).collect();
        SeriesDataset::with_bounds("ramp", cols, values, l, train_end, val_end).unwrap()
    }

    #[test]
    fn boundary_window_counts() {
        let (t, h) = (8, 4);
        let ds = ramp(40, 2, t + h, 30, 5);
        assert_eq!(window_starts(&ds, Split::Train, t, h).unwrap().len(), 1);
        let ds = ramp(40, 2, t + h + 4, 30, 5);
        let starts = window_starts(&ds, Split::Train, t, h).unwrap();
        assert_eq!(starts, vec![8, 9, 10, 11, 12]);
    }

    #[test]
    fn too_short_reports_minimum() {
        let ds = ramp(40, 1, 10, 30, 5);
        match window_starts(&ds, Split::Train, 8, 4) {
            Err(Error::TooShort { need, have, .. }) => assert_eq!((need, have), (12, 10)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tau_of_last_observed_step() {
        let values = Array2::from_fn(400, 1, |r, _| r as f64);
        let ds = SeriesDataset::with_bounds("x", vec!["x".into()], values, 288, 350, 375).unwrap();
        let b = WindowBatch::assemble(&ds, &[301], 96, 4);
        assert_eq!(b.inputs.get(0, 95), 300.0);
        assert_eq!(b.tau, vec![12]);
    }

    #[test]
    fn window_contents_and_layout() {
        let ds = ramp(40, 2, 20, 30, 5);
        let b = WindowBatch::assemble(&ds, &[10, 15], 3, 2);
        assert_eq!(b.len(), 2);
        assert_eq!(b.input(0).row(0), &[700.0, 800.0, 900.0]);
        assert_eq!(b.input(0).row(1), &[701.0, 801.0, 901.0]);
        assert_eq!(b.target(1).row(1), &[1501.0, 1601.0]);
        assert_eq!(b.tau, vec![9 % 5, 14 % 5]);
    }

    #[test]
    fn eval_splits_borrow_context_but_not_targets() {
        let (t, h) = (6, 3);
        let ds = ramp(60, 1, 30, 45, 4);
        for split in [Split::Val, Split::Test] {
            let range = ds.split_range(split);
            let starts = window_starts(&ds, split, t, h).unwrap();
            assert_eq!(starts.len(), range.len() - h + 1);
            assert!(starts.iter().all(|&s| s >= range.start && s + h <= range.end));
        }
    }

    #[test]
    fn ett_hourly_window_counts() {
        let values = Array2::zeros(17420, 1);
        let ds = SeriesDataset::new("etth", vec!["x".into()], values, 24, SplitRule::EttHourly).unwrap();
        assert_eq!(ds.steps(), 14400);
        // lookback-only counts as in the benchmark tables
        let lookback_windows = |r: std::ops::Range<usize>, borrow: usize| r.len() + borrow - 96 + 1;
        assert_eq!(lookback_windows(ds.split_range(Split::Train), 0), 8545);
        assert_eq!(lookback_windows(ds.split_range(Split::Val), 96), 2881);
        assert_eq!(lookback_windows(ds.split_range(Split::Test), 96), 2881);
        assert_eq!(window_starts(&ds, Split::Train, 96, 96).unwrap().len(), 8449);
        assert_eq!(window_starts(&ds, Split::Val, 96, 96).unwrap().len(), 2785);
        assert_eq!(window_starts(&ds, Split::Test, 96, 96).unwrap().len(), 2785);
    }

    proptest! {
        #[test]
        fn no_target_leaks_past_split_end(t in 1usize..10, h in 1usize..10, extra in 0usize..30) {
            let n = 3 * (t + h) + extra + 10;
            let ds = ramp(n, 1, t + h + extra, t + h + extra + (n - t - h - extra) / 2, 7);
            for split in [Split::Train, Split::Val, Split::Test] {
                let range = ds.split_range(split);
                if let Ok(starts) = window_starts(&ds, split, t, h) {
                    for s in starts {
                        prop_assert!(s >= t);
                        prop_assert!(s + h <= range.end && s >= range.start);
                        if split == Split::Train {
                            prop_assert!(s - t >= range.start);
                        }
                    }
                }
            }
        }

        #[test]
        fn tau_invariant_under_whole_cycle_shift(k in 0usize..50, l in 1usize..30) {
            let ds = ramp(80, 2, 40, 60, l);
            let shifted = ds.with_step_offset(k * l);
            let a = WindowBatch::assemble(&ds, &[20, 33, 39], 10, 1);
            let b = WindowBatch::assemble(&shifted, &[20, 33, 39], 10, 1);
            prop_assert_eq!(a.tau, b.tau);
        }

        #[test]
        fn shuffle_preserves_window_multiset(seed in 0u64..1000, batch in 1usize..9) {
            let ds = ramp(80, 2, 40, 60, 6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut plain: Vec<usize> = make_windows(&ds, Split::Train, 5, 3, batch, false, &mut rng)
                .unwrap().flat_map(|b| b.starts).collect();
            let mut shuffled: Vec<usize> = make_windows(&ds, Split::Train, 5, 3, batch, true, &mut rng)
                .unwrap().flat_map(|b| b.starts).collect();
            let expected: Vec<usize> = (5..=37).collect();
            prop_assert_eq!(&plain, &expected);
            plain.sort();
            shuffled.sort();
            prop_assert_eq!(plain, shuffled);
        }
    }
}
