//! Independent reference computations for the statistics module.

use std::f64::consts::PI;

/// Two-sided signed-rank p by enumerating all `2^n` sign assignments of the
/// nonzero differences. Works on doubled midranks so every sum is an integer.
/// Returns `(2·W+, p)`.
pub fn wilcoxon_sign_flip(differences: &[f64]) -> (u64, f64) {
    let d: Vec<f64> = differences.iter().copied().filter(|&x| x != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return (0, 1.0);
    }
    let mut doubled = vec![0u64; n];
    for i in 0..n {
        // 2·midrank = (#smaller·2) + (#equal) + 1
        let smaller = d.iter().filter(|x| x.abs() < d[i].abs()).count() as u64;
        let equal = d.iter().filter(|x| x.abs() == d[i].abs()).count() as u64;
        doubled[i] = 2 * smaller + equal + 1;
    }
    let total: u64 = doubled.iter().sum();
    let w_plus: u64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| doubled[i]).sum();
    let observed = w_plus.min(total - w_plus);
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let wp: u64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| doubled[i]).sum();
        if wp.min(total - wp) <= observed {
            extreme += 1;
        }
    }
    (w_plus, extreme as f64 / (1u64 << n) as f64)
}

/// Holm's procedure evaluated from its definition: the hypothesis with the
/// i-th smallest p is rejected iff every j ≤ i satisfies `p(j) ≤ α/(m−j+1)`.
pub fn holm_direct(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    (0..m)
        .map(|k| {
            // Position of k in ascending order, ties broken by index.
            let rank = (0..m).filter(|&j| p[j] < p[k] || (p[j] == p[k] && j < k)).count();
            let mut sorted: Vec<f64> = p.to_vec();
            sorted.sort_by(f64::total_cmp);
            (0..=rank).all(|j| sorted[j] <= alpha / (m - j) as f64)
        })
        .collect()
}

fn neumaier_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

/// `P(|T| ≤ t)` for integer degrees of freedom by the finite trigonometric
/// series for the Student t distribution.
pub fn student_t_central(t: f64, dof: u32) -> f64 {
    let theta = (t.abs() / (dof as f64).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    if dof % 2 == 1 {
        let mut term = c;
        let mut series = vec![term];
        let mut k = 1;
        while 2 * k + 3 <= dof {
            term *= c2 * (2 * k) as f64 / (2 * k + 1) as f64;
            series.push(term);
            k += 1;
        }
        let inner = if dof == 1 {
            0.0
        } else {
            s * neumaier_sum(series.into_iter())
        };
        2.0 / PI * (theta + inner)
    } else {
        let mut term = 1.0;
        let mut series = vec![term];
        let mut k = 1;
        while 2 * k < dof {
            term *= c2 * (2 * k - 1) as f64 / (2 * k) as f64;
            series.push(term);
            k += 1;
        }
        s * neumaier_sum(series.into_iter())
    }
}

/// `(t, two-sided p)` with compensated sums.
pub fn paired_t_closed_form(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = neumaier_sum(d.iter().copied()) / n;
    let var = neumaier_sum(d.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0);
    let t = mean / (var / n).sqrt();
    (t, 1.0 - student_t_central(t, d.len() as u32 - 1))
}
