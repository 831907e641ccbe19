//! Small numerical helpers shared across modules.

/// Cap on the number of median-of-means blocks.
pub const MAX_BLOCKS: usize = 64;

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Numerically stable logistic function. `sigmoid(x) + sigmoid(-x) == 1`
/// holds exactly: both branches share the same small tail value.
pub fn sigmoid(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let tail = e / (1.0 + e);
    if x >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `ceil(sqrt(n))` blocks, capped at [`MAX_BLOCKS`].
pub fn default_blocks(n: usize) -> usize {
    let mut b = (n as f64).sqrt().ceil() as usize;
    while b * b < n {
        b += 1;
    }
    b.clamp(1, MAX_BLOCKS)
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_of_sorted(&v)
}

/// Median of the means of `n_blocks` contiguous, near-equal blocks.
/// With one block this is the arithmetic mean.
pub fn median_of_means(values: &[f64], n_blocks: usize) -> f64 {
    assert!(!values.is_empty(), "median of means of an empty sample");
    let n = values.len();
    let blocks = n_blocks.clamp(1, n);
    if blocks == 1 {
        return mean(values);
    }
    let mut means = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let lo = b * n / blocks;
        let hi = (b + 1) * n / blocks;
        means.push(mean(&values[lo..hi]));
    }
    means.sort_by(f64::total_cmp);
    median_of_sorted(&means)
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Coefficient of determination of `predicted` against `observed`.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let mo = mean(observed);
    let ss_tot: f64 = observed.iter().map(|y| (y - mo) * (y - mo)).sum();
    let ss_res: f64 = observed.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    1.0 - ss_res / ss_tot
}
