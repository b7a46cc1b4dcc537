//! Column statistics: moments, rank correlation, discretization, and the
//! mutual-information estimator driving feature selection.

use crate::error::{Error, Result};

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median with the even-length average convention.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Plug-in sample skewness g1 = m3 / m2^(3/2) with biased central moments.
/// Defined as 0 for constant or near-constant columns.
pub fn sample_skewness(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    for &x in xs {
        let d = x - m;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n as f64;
    m3 /= n as f64;
    if m2 <= 0.0 {
        return 0.0;
    }
    m3 / m2.powf(1.5)
}

/// Which correlation coefficient to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    Pearson,
    Spearman,
}

/// Sample Pearson correlation; defined as 0 when either column is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Data(format!(
            "correlation: column lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Data("correlation: need at least 2 rows".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// 1-based ranks with ties receiving the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation = Pearson of average-tied ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Data(format!(
            "correlation: column lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Dispatch on [`CorrelationKind`].
pub fn correlation(x: &[f64], y: &[f64], kind: CorrelationKind) -> Result<f64> {
    match kind {
        CorrelationKind::Pearson => pearson(x, y),
        CorrelationKind::Spearman => spearman(x, y),
    }
}

/// Assigns each value to one of at most `max_bins` equal-frequency bins.
/// Equal values always share a bin, so heavily tied columns may produce
/// fewer bins. Returned ids are small but not necessarily contiguous.
pub fn equal_frequency_bins(xs: &[f64], max_bins: usize) -> Vec<usize> {
    assert!(max_bins >= 1, "need at least one bin");
    let n = xs.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mut edges: Vec<f64> = (1..max_bins)
        .map(|b| sorted[b * n / max_bins])
        .collect();
    edges.dedup();
    xs.iter()
        .map(|&v| edges.iter().take_while(|&&e| v >= e).count())
        .collect()
}

/// Plug-in mutual information (nats) between a feature column and class
/// labels. Continuous features are discretized into at most `bins`
/// equal-frequency bins first.
pub fn mutual_information(feature: &[f64], labels: &[usize], bins: usize) -> f64 {
    assert_eq!(
        feature.len(),
        labels.len(),
        "feature and label columns must align"
    );
    let n = feature.len();
    if n == 0 {
        return 0.0;
    }
    let xbins = equal_frequency_bins(feature, bins);
    let nx = xbins.iter().max().map_or(0, |m| m + 1);
    let ny = labels.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; nx * ny];
    let mut px = vec![0usize; nx];
    let mut py = vec![0usize; ny];
    for (&b, &l) in xbins.iter().zip(labels) {
        joint[b * ny + l] += 1;
        px[b] += 1;
        py[l] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for b in 0..nx {
        for l in 0..ny {
            let c = joint[b * ny + l];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / nf;
            let pxpy = (px[b] as f64 / nf) * (py[l] as f64 / nf);
            mi += pxy * (pxy / pxpy).ln();
        }
    }
    // The estimator is nonnegative; guard against rounding at the boundary.
    mi.max(0.0)
}
