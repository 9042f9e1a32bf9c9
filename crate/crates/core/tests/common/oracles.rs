//! Independent reference computations used to check the library.
//!
//! Nothing here calls into the routine it checks.

#![allow(dead_code)]

/// Brute-force CPMG simulation by summing isochromats.
///
/// Each isochromat carries an explicit magnetization vector. Per half echo
/// spacing it precesses by its own dephasing angle and relaxes; refocusing
/// pulses rotate about x, the axis the 90° excitation left it on.
pub fn isochromat_echoes(
    n_echoes: usize,
    delta_te: f64,
    alpha_deg: f64,
    t2: f64,
    t1: f64,
    n_iso: usize,
) -> Vec<f64> {
    let tau = delta_te / 2.0;
    let e2 = (-tau / t2).exp();
    let e1 = (-tau / t1).exp();
    let a = alpha_deg.to_radians();
    let rot_x = [
        [1.0, 0.0, 0.0],
        [0.0, a.cos(), -a.sin()],
        [0.0, a.sin(), a.cos()],
    ];
    let mut spins: Vec<([f64; 3], [[f64; 3]; 3])> = (0..n_iso)
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / n_iso as f64;
            let (s, c) = theta.sin_cos();
            let precess = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
            ([1.0, 0.0, 0.0], precess)
        })
        .collect();
    let mat = |m: &[[f64; 3]; 3], v: &[f64; 3]| {
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    };
    let free = |v: [f64; 3], p: &[[f64; 3]; 3]| {
        let v = mat(p, &v);
        [v[0] * e2, v[1] * e2, v[2] * e1 + (1.0 - e1)]
    };
    let mut out = Vec::with_capacity(n_echoes);
    for _ in 0..n_echoes {
        let (mut sx, mut sy) = (0.0, 0.0);
        for (m, p) in spins.iter_mut() {
            let v = free(*m, p);
            let v = mat(&rot_x, &v);
            let v = free(v, p);
            *m = v;
            sx += v[0];
            sy += v[1];
        }
        let n = n_iso as f64;
        out.push(((sx / n).powi(2) + (sy / n).powi(2)).sqrt());
    }
    out
}

/// Minimum transport cost between two histograms on sorted support `x`,
/// found by enumerating every monotone (staircase) transport plan.
///
/// A staircase path from cell (0,0) to (n-1,n-1) fixes a plan uniquely from
/// the marginals; infeasible (negative) plans are discarded.
pub fn transport_by_enumeration(p: &[f64], q: &[f64], x: &[f64]) -> f64 {
    let n = p.len();
    let mut best = f64::INFINITY;
    // Paths are sequences of 2(n-1) moves with exactly n-1 "down" moves.
    let moves = 2 * (n - 1);
    for mask in 0u32..(1u32 << moves) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mut supply = p.to_vec();
        let mut demand = q.to_vec();
        let (mut i, mut j) = (0usize, 0usize);
        let mut cost = 0.0;
        let mut feasible = true;
        for step in 0..=moves {
            let amount = if step == moves {
                supply[i]
            } else if mask >> step & 1 == 1 {
                supply[i]
            } else {
                demand[j]
            };
            if amount < -1e-15 {
                feasible = false;
                break;
            }
            supply[i] -= amount;
            demand[j] -= amount;
            cost += amount * (x[i] - x[j]).abs();
            if step < moves {
                if mask >> step & 1 == 1 {
                    i += 1;
                } else {
                    j += 1;
                }
            }
        }
        if feasible && supply.iter().chain(&demand).all(|r| r.abs() < 1e-12) {
            best = best.min(cost);
        }
    }
    best
}

/// Exhaustive NNLS: try every support pattern, solve the unconstrained
/// least-squares problem on it, keep the best feasible objective.
pub fn nnls_by_enumeration(a: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let m = y.len();
    let n = a[0].len();
    let mut best = (vec![0.0; n], y.iter().map(|v| v * v).sum::<f64>());
    for mask in 1u32..(1u32 << n) {
        let cols: Vec<usize> = (0..n).filter(|j| mask >> j & 1 == 1).collect();
        let k = cols.len();
        // Normal equations with Gaussian elimination (tiny, well-posed instances)
        let mut ata = vec![vec![0.0; k]; k];
        let mut aty = vec![0.0; k];
        for (r, &cj) in cols.iter().enumerate() {
            for (s, &ck) in cols.iter().enumerate() {
                ata[r][s] = (0..m).map(|i| a[i][cj] * a[i][ck]).sum();
            }
            aty[r] = (0..m).map(|i| a[i][cj] * y[i]).sum();
        }
        let Some(z) = gauss_solve(ata, aty) else { continue };
        if z.iter().any(|&v| v < 0.0) {
            continue;
        }
        let mut x = vec![0.0; n];
        for (&c, &v) in cols.iter().zip(&z) {
            x[c] = v;
        }
        let obj: f64 = (0..m)
            .map(|i| {
                let r: f64 = (0..n).map(|j| a[i][j] * x[j]).sum::<f64>() - y[i];
                r * r
            })
            .sum();
        if obj < best.1 {
            best = (x, obj);
        }
    }
    best
}

pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if a[i][k].abs() > a[piv][k].abs() {
                piv = i;
            }
        }
        if a[piv][k].abs() < 1e-14 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}

/// AUC by counting every cross pair: P(a < b) + ½ P(a = b).
pub fn auc_by_pairs(a: &[f64], b: &[f64]) -> f64 {
    let mut score = 0.0;
    for &x in a {
        for &y in b {
            if x < y {
                score += 1.0;
            } else if x == y {
                score += 0.5;
            }
        }
    }
    score / (a.len() * b.len()) as f64
}

/// KS statistic by scanning every pooled breakpoint.
pub fn ks_d_by_scan(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&t| (ecdf(a, t) - ecdf(b, t)).abs())
        .fold(0.0, f64::max)
}

/// Exact permutation p-value of the KS statistic: enumerate every way of
/// splitting the pooled sample into groups of the original sizes.
pub fn ks_p_by_permutation(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let na = a.len();
    let observed = ks_d_by_scan(a, b);
    let mut total = 0u64;
    let mut extreme = 0u64;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let (ga, gb): (Vec<f64>, Vec<f64>) = {
            let mut ga = Vec::with_capacity(na);
            let mut gb = Vec::with_capacity(n - na);
            for (i, &v) in pooled.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    ga.push(v);
                } else {
                    gb.push(v);
                }
            }
            (ga, gb)
        };
        total += 1;
        if ks_d_by_scan(&ga, &gb) >= observed - 1e-12 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Shared-histogram Hellinger distance, written from the formula.
pub fn hellinger_by_formula(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return 0.0;
    }
    let hist = |s: &[f64]| {
        let mut h = vec![0.0; bins];
        for &v in s {
            let mut k = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
            if k >= bins {
                k = bins - 1;
            }
            h[k] += 1.0 / s.len() as f64;
        }
        h
    };
    let (p, q) = (hist(a), hist(b));
    let bc: f64 = p.iter().zip(&q).map(|(x, y)| (x * y).sqrt()).sum();
    (1.0 - bc).max(0.0).sqrt()
}

/// Mono-exponential fit by brute-force grid search over (T2, M0), refined twice
/// around the best cell.
pub fn monoexp_grid_search(te: &[f64], s: &[f64], t2_range: (f64, f64), m0_range: (f64, f64)) -> (f64, f64) {
    let obj = |t2: f64, m0: f64| -> f64 {
        te.iter()
            .zip(s)
            .map(|(&t, &y)| (m0 * (-t / t2).exp() - y).powi(2))
            .sum()
    };
    let (mut t_lo, mut t_hi) = t2_range;
    let (mut m_lo, mut m_hi) = m0_range;
    let steps = 100;
    let mut best = (t_lo, m_lo, f64::INFINITY);
    for _round in 0..3 {
        for i in 0..=steps {
            let t2 = t_lo + (t_hi - t_lo) * i as f64 / steps as f64;
            for k in 0..=steps {
                let m0 = m_lo + (m_hi - m_lo) * k as f64 / steps as f64;
                let v = obj(t2, m0);
                if v < best.2 {
                    best = (t2, m0, v);
                }
            }
        }
        let dt = 2.0 * (t_hi - t_lo) / steps as f64;
        let dm = 2.0 * (m_hi - m_lo) / steps as f64;
        t_lo = (best.0 - dt).max(1e-6);
        t_hi = best.0 + dt;
        m_lo = (best.1 - dm).max(1e-9);
        m_hi = best.1 + dm;
    }
    (best.0, best.1)
}
