//! Rank statistics for trend tests on short sweeps.

/// Average ranks (1-based), ties sharing the mean rank.
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

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "samples must pair up");
    pearson(&ranks(x), &ranks(y))
}

/// One-sided p-value for a negative rank correlation: the fraction of
/// orderings of `y` whose ρ is at most the observed one. Exact by
/// enumeration, so keep `n ≤ 9`.
pub fn spearman_p_negative(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    assert!(n <= 9, "exact enumeration limited to 9 points");
    let observed = spearman(x, y);
    let rx = ranks(x);
    let ry = ranks(y);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0u64;
    let mut at_most = 0u64;
    loop {
        let permuted: Vec<f64> = perm.iter().map(|&k| ry[k]).collect();
        total += 1;
        if pearson(&rx, &permuted) <= observed + 1e-12 {
            at_most += 1;
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    at_most as f64 / total as f64
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
