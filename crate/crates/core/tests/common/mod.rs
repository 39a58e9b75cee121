//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod criteria;

use num_complex::Complex64;
use qwalk::model::CouplingParams;

pub type C = Complex64;

/// Dense real-space Hamiltonian on an `l × l` torus, basis index
/// `2 * (iy * l + ix) + spin` with spin 0 = up.
pub fn real_space_hamiltonian(p: &CouplingParams, l: usize) -> Vec<C> {
    let n = 2 * l * l;
    let mut h = vec![C::default(); n * n];
    let z = C::new(0.0, 0.0);
    let one = C::new(1.0, 0.0);
    let i = C::new(0.0, 1.0);
    let sx = [[z, one], [one, z]];
    let sy = [[z, -i], [i, z]];
    let sz = [[one, z], [z, -one]];
    // (Hψ)(x) = Σ_d M_d ψ(x + d) for h(k)·σ = Σ_d e^{ik·d} M_d
    let s3 = 0.75 * p.t3;
    let terms: Vec<((i64, i64), [[C; 2]; 2], C)> = vec![
        ((1, 0), sx, C::from(p.t1x)),
        ((-1, 0), sx, C::from(p.t1x)),
        ((0, 1), sy, C::from(p.t1y)),
        ((0, -1), sy, C::from(p.t1y)),
        ((0, 0), sz, C::from(p.m)),
        ((1, 1), sz, C::from(p.t2)),
        ((-1, -1), sz, C::from(p.t2)),
        ((1, 0), sz, C::new(0.0, -s3)),
        ((-1, 0), sz, C::new(0.0, s3)),
        ((0, 1), sz, C::new(0.0, -s3)),
        ((0, -1), sz, C::new(0.0, s3)),
        ((2, 0), sz, C::from(0.5 * p.eta)),
        ((-2, 0), sz, C::from(0.5 * p.eta)),
    ];
    let li = l as i64;
    for y in 0..li {
        for x in 0..li {
            let row_site = (y * li + x) as usize;
            for ((dx, dy), s, c) in &terms {
                let col_site = ((y + dy).rem_euclid(li) * li + (x + dx).rem_euclid(li)) as usize;
                for a in 0..2 {
                    for b in 0..2 {
                        h[(2 * row_site + a) * n + 2 * col_site + b] += *c * s[a][b];
                    }
                }
            }
        }
    }
    h
}

fn matvec(h: &[C], v: &[C]) -> Vec<C> {
    let n = v.len();
    (0..n)
        .map(|r| h[r * n..(r + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn max_abs_row_sum(h: &[C], n: usize) -> f64 {
    (0..n)
        .map(|r| h[r * n..(r + 1) * n].iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(-i H t) v` by Taylor series over steps with `‖H dt‖ ≤ 1/2`.
pub fn propagate(h: &[C], v: &[C], t: f64) -> Vec<C> {
    let n = v.len();
    let norm = max_abs_row_sum(h, n);
    let steps = ((norm * t.abs()) / 0.5).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut psi = v.to_vec();
    for _ in 0..steps {
        let mut term = psi.clone();
        let mut acc = psi.clone();
        for k in 1..80 {
            let hv = matvec(h, &term);
            let f = C::new(0.0, -dt / k as f64);
            term = hv.into_iter().map(|x| x * f).collect();
            let size = term.iter().map(|x| x.norm()).fold(0.0, f64::max);
            for (a, b) in acc.iter_mut().zip(&term) {
                *a += b;
            }
            if size < 1e-18 {
                break;
            }
        }
        psi = acc;
    }
    psi
}

/// Position probabilities of the walker started spin-up on the centre site,
/// in the same centred flat order as the library.
pub fn brute_force_position_profile(p: &CouplingParams, l: usize, t: f64) -> Vec<f64> {
    let h = real_space_hamiltonian(p, l);
    let n = 2 * l * l;
    let c = (l - 1) / 2;
    let mut v = vec![C::default(); n];
    v[2 * (c * l + c)] = C::new(1.0, 0.0);
    let psi = propagate(&h, &v, t);
    // torus site (x, y) = centred index directly, since both use 0..l with centre c
    (0..l * l)
        .map(|s| psi[2 * s].norm_sqr() + psi[2 * s + 1].norm_sqr())
        .collect()
}

/// `exp(-i t M)` for a 2×2 matrix by scaled Taylor series and squaring.
pub fn expm2(m: [[C; 2]; 2], t: f64) -> [[C; 2]; 2] {
    let norm = m.iter().flatten().map(|c| c.norm()).sum::<f64>() * t.abs();
    let squarings = norm.log2().ceil().max(0.0) as i32 + 1;
    let s = t / 2f64.powi(squarings);
    let a = [
        [m[0][0] * C::new(0.0, -s), m[0][1] * C::new(0.0, -s)],
        [m[1][0] * C::new(0.0, -s), m[1][1] * C::new(0.0, -s)],
    ];
    let mul = |x: [[C; 2]; 2], y: [[C; 2]; 2]| {
        let mut r = [[C::default(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
            }
        }
        r
    };
    let id = [[C::new(1.0, 0.0), C::default()], [C::default(), C::new(1.0, 0.0)]];
    let mut term = id;
    let mut acc = id;
    for k in 1..30 {
        term = mul(term, a);
        let f = 1.0 / k as f64;
        term = [[term[0][0] * f, term[0][1] * f], [term[1][0] * f, term[1][1] * f]];
        for i in 0..2 {
            for j in 0..2 {
                acc[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        acc = mul(acc, acc);
    }
    acc
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Sample covariance (divisor n − 1) of row-major `n × d` data.
pub fn covariance(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        for a in 0..d {
            let xa = data[i * d + a] - mean[a];
            for b in 0..d {
                cov[a * d + b] += xa * (data[i * d + b] - mean[b]);
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    cov
}

/// Central finite difference of `f` with respect to each entry of `x`.
pub fn numeric_gradient(x: &mut [f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(x);
            x[i] = orig - eps;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
