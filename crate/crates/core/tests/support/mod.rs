//! Independent oracles shared by the integration and acceptance tests.
//! Each is written the slow, obvious way and shares no code with the crate.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of the dense `D x D` covariance `(1/M) sum (x - mean)(x - mean)^T`,
/// eigenvalues descending with their unit eigenvectors.
pub fn dense_pca(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = samples.len();
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for j in 0..d {
            mean[j] += s[j] / m as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        let v = DVector::from_iterator(d, s.iter().zip(&mean).map(|(a, b)| a - b));
        cov += &v * v.transpose() / m as f64;
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

pub fn rbf(gamma: f64) -> impl Fn(&[f64], &[f64]) -> f64 {
    move |a, b| (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp()
}

pub fn dual_objective(alpha: &[f64], y: &[f64], k: &DMatrix<f64>) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Maximum of the C-SVM dual by enumerating every assignment of each alpha
/// to {0, C, free}; the free block solves its stationarity equations
/// together with `sum alpha y = 0`.
pub fn brute_force_dual(x: &[Vec<f64>], y: &[f64], kernel: &dyn Fn(&[f64], &[f64]) -> f64, c: f64) -> f64 {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| kernel(&x[i], &x[j]));
    let mut best = f64::NEG_INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut rest = code;
        for s in state.iter_mut() {
            *s = (rest % 3) as u8;
            rest /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            let f = free.len();
            let mut a = DMatrix::<f64>::zeros(f + 1, f + 1);
            let mut rhs = DVector::<f64>::zeros(f + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = y[i] * y[j] * k[(i, j)];
                }
                a[(r, f)] = y[i];
                a[(f, r)] = y[i];
                let bound: f64 = (0..n).filter(|j| state[*j] != 2).map(|j| y[i] * y[j] * k[(i, j)] * alpha[j]).sum();
                rhs[r] = 1.0 - bound;
            }
            rhs[f] = -(0..n).filter(|j| state[*j] != 2).map(|j| y[j] * alpha[j]).sum::<f64>();
            let Some(sol) = a.lu().solve(&rhs) else { continue };
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
            if free.iter().any(|&i| alpha[i] < -1e-12 || alpha[i] > c + 1e-12) {
                continue;
            }
        }
        let eq: f64 = alpha.iter().zip(y).map(|(a, b)| a * b).sum();
        if eq.abs() > 1e-9 {
            continue;
        }
        best = best.max(dual_objective(&alpha, y, &k));
    }
    best
}

/// `P(s+ > s-) + P(s+ = s-) / 2` over all positive/negative pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// CLAHE written out per pixel: clip each tile histogram at
/// `max(1, floor(clip * tile pixels))`, spread the excess evenly (remainder
/// to the top bin), equalize, then blend the tiles whose centers surround
/// the pixel center, clamping at the outer centers.
pub fn reference_clahe(px: &[f64], w: usize, h: usize, tx: usize, ty: usize, clip: f64) -> Vec<f64> {
    let bin = |v: f64| ((v * 255.0 + 0.5).floor() as usize).min(255);
    let occupied = |vals: &[f64]| {
        let mut seen = [false; 256];
        vals.iter().for_each(|&v| seen[bin(v)] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if occupied(px) <= 1 {
        return px.to_vec();
    }
    let x_edges: Vec<usize> = (0..=tx).map(|i| i * w / tx).collect();
    let y_edges: Vec<usize> = (0..=ty).map(|i| i * h / ty).collect();
    let mut maps = vec![vec![[0.0f64; 256]; tx]; ty];
    for j in 0..ty {
        for i in 0..tx {
            let mut vals = Vec::new();
            for y in y_edges[j]..y_edges[j + 1] {
                for x in x_edges[i]..x_edges[i + 1] {
                    vals.push(px[y * w + x]);
                }
            }
            let identity: [f64; 256] = std::array::from_fn(|b| b as f64 / 255.0);
            if occupied(&vals) <= 1 {
                maps[j][i] = identity;
                continue;
            }
            let n = vals.len() as u64;
            let limit = ((clip * n as f64).floor() as u64).max(1);
            let mut hist = [0u64; 256];
            vals.iter().for_each(|&v| hist[bin(v)] += 1);
            let mut excess = 0;
            for c in hist.iter_mut() {
                if *c > limit {
                    excess += *c - limit;
                    *c = limit;
                }
            }
            for c in hist.iter_mut() {
                *c += excess / 256;
            }
            hist[255] += excess % 256;
            let first = *hist.iter().find(|&&c| c > 0).unwrap();
            if first == n {
                maps[j][i] = identity;
                continue;
            }
            let mut cdf = 0;
            for b in 0..256 {
                cdf += hist[b];
                let level = (255.0 * (cdf as f64 - first as f64) / (n - first) as f64).round();
                maps[j][i][b] = level.clamp(0.0, 255.0) / 255.0;
            }
        }
    }
    let xc: Vec<f64> = (0..tx).map(|i| (x_edges[i] + x_edges[i + 1]) as f64 / 2.0).collect();
    let yc: Vec<f64> = (0..ty).map(|j| (y_edges[j] + y_edges[j + 1]) as f64 / 2.0).collect();
    let neighbors = |u: f64, c: &[f64]| -> (usize, usize, f64) {
        if u <= c[0] {
            return (0, 0, 0.0);
        }
        if u >= c[c.len() - 1] {
            return (c.len() - 1, c.len() - 1, 0.0);
        }
        let mut i = 0;
        while c[i + 1] < u {
            i += 1;
        }
        if c[i + 1] == u {
            return (i + 1, i + 1, 0.0);
        }
        (i, i + 1, (u - c[i]) / (c[i + 1] - c[i]))
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (j0, j1, fy) = neighbors(y as f64 + 0.5, &yc);
        for x in 0..w {
            let (i0, i1, fx) = neighbors(x as f64 + 0.5, &xc);
            let b = bin(px[y * w + x]);
            let top = maps[j0][i0][b] * (1.0 - fx) + maps[j0][i1][b] * fx;
            let bottom = maps[j1][i0][b] * (1.0 - fx) + maps[j1][i1][b] * fx;
            out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    out
}
