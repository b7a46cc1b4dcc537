//! Sliding temporal windows over time-ordered records.

use crate::error::{Error, Result};

/// Fixed-length windows at a fixed stride over a record sequence. A window
/// starting at `s` covers rows `s..s + t` and carries the label of its last
/// row, the most recent event at classification time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSet {
    pub t: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
    pub labels: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Row range of window `i`.
    pub fn window(&self, i: usize) -> std::ops::Range<usize> {
        self.starts[i]..self.starts[i] + self.t
    }
}

/// Cuts windows of length `t` every `stride` rows. Requires timestamps in
/// nondecreasing order and one label per row. Sequences shorter than `t`
/// yield an empty set; callers decide whether that deserves a warning.
pub fn make_windows(
    timestamps: &[f64],
    labels: &[usize],
    t: usize,
    stride: usize,
) -> Result<WindowSet> {
    if t == 0 || stride == 0 {
        return Err(Error::Config(
            "window length and stride must both be positive".into(),
        ));
    }
    if timestamps.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} timestamps but {} labels",
            timestamps.len(),
            labels.len()
        )));
    }
    if let Some(i) = timestamps.windows(2).position(|w| w[0] > w[1]) {
        return Err(Error::Data(format!(
            "records are not time-sorted at row {}",
            i + 1
        )));
    }
    let n = timestamps.len();
    if n < t {
        return Ok(WindowSet {
            t,
            stride,
            starts: Vec::new(),
            labels: Vec::new(),
        });
    }
    let count = (n - t) / stride + 1;
    let starts: Vec<usize> = (0..count).map(|i| i * stride).collect();
    let window_labels = starts.iter().map(|&s| labels[s + t - 1]).collect();
    Ok(WindowSet {
        t,
        stride,
        starts,
        labels: window_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_count_and_labels_match_definition() {
        // n=12, t=5, stride=3 -> floor((12-5)/3)+1 = 3 windows.
        let ts: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..12).collect();
        let ws = make_windows(&ts, &labels, 5, 3).unwrap();
        assert_eq!(ws.starts, vec![0, 3, 6]);
        assert_eq!(ws.labels, vec![4, 7, 10]);
        assert_eq!(ws.window(1), 3..8);
    }

    #[test]
    fn short_sequence_yields_empty_set() {
        let ts = vec![1.0, 2.0];
        let labels = vec![0, 0];
        let ws = make_windows(&ts, &labels, 5, 1).unwrap();
        assert!(ws.is_empty());
    }

    #[test]
    fn exact_length_sequence_yields_one_window() {
        let ts: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let labels = vec![0, 0, 0, 0, 7];
        let ws = make_windows(&ts, &labels, 5, 3).unwrap();
        assert_eq!(ws.starts, vec![0]);
        assert_eq!(ws.labels, vec![7]);
    }

    #[test]
    fn unsorted_timestamps_are_rejected() {
        let ts = vec![1.0, 3.0, 2.0, 4.0, 5.0];
        let labels = vec![0; 5];
        let err = make_windows(&ts, &labels, 2, 1).unwrap_err();
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn zero_parameters_are_rejected() {
        let ts = vec![1.0, 2.0];
        let labels = vec![0, 0];
        assert!(make_windows(&ts, &labels, 0, 1).is_err());
        assert!(make_windows(&ts, &labels, 2, 0).is_err());
    }

    #[test]
    fn equal_timestamps_are_allowed() {
        let ts = vec![1.0, 1.0, 1.0, 2.0, 2.0];
        let labels = vec![0; 5];
        assert_eq!(make_windows(&ts, &labels, 2, 2).unwrap().len(), 2);
    }

    proptest! {
        /// Starts form the arithmetic progression 0, stride, 2*stride, ...
        /// and every window fits inside the sequence.
        #[test]
        fn starts_are_an_arithmetic_progression(
            n in 0usize..200,
            t in 1usize..60,
            stride in 1usize..20,
        ) {
            let ts: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let labels = vec![0usize; n];
            let ws = make_windows(&ts, &labels, t, stride).unwrap();
            if n < t {
                prop_assert!(ws.is_empty());
            } else {
                prop_assert_eq!(ws.len(), (n - t) / stride + 1);
                for (i, &s) in ws.starts.iter().enumerate() {
                    prop_assert_eq!(s, i * stride);
                    prop_assert!(s + t <= n);
                }
                // The next window would not fit.
                let last = *ws.starts.last().unwrap();
                prop_assert!(last + stride + t > n);
            }
        }
    }
}
