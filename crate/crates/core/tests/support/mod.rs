//! Reference implementations shared by several test targets. They favour
//! the plainest possible formulation over speed.
#![allow(dead_code)]

/// `out[i*fa + r][j*fb + c][..] = a[i][j] * f[r][c][..]` by four nested loops
/// over the block and in-block indices.
pub fn kron_oracle(a: &[f64], p: usize, q: usize, f: &[f64], fa: usize, fb: usize, rest: usize) -> Vec<f64> {
    let cols = q * fb;
    let mut out = vec![0.0; p * fa * cols * rest];
    for i in 0..p {
        for j in 0..q {
            for r in 0..fa {
                for c in 0..fb {
                    for e in 0..rest {
                        out[((i * fa + r) * cols + j * fb + c) * rest + e] = a[i * q + j] * f[(r * fb + c) * rest + e];
                    }
                }
            }
        }
    }
    out
}

/// Determinant by cofactor expansion along the first row.
pub fn det(m: &[f64], n: usize) -> f64 {
    if n == 1 {
        return m[0];
    }
    (0..n)
        .map(|c| {
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[c] * det(&minor(m, n, 0, c), n - 1)
        })
        .sum()
}

fn minor(m: &[f64], n: usize, row: usize, col: usize) -> Vec<f64> {
    (0..n)
        .filter(|&r| r != row)
        .flat_map(|r| (0..n).filter(move |&c| c != col).map(move |c| m[r * n + c]))
        .collect()
}

/// Coefficients `c[0..=n]` of `det(lambda I - M) = sum c[k] lambda^k`,
/// by the Faddeev-LeVerrier recursion.
pub fn char_poly(m: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    let mut mk = vec![0.0; n * n];
    for k in 1..=n {
        // M_k = M * M_{k-1} + c_{n-k+1} I, c_{n-k} = -tr(M * M_k) / k
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                next[i * n + j] = (0..n).map(|t| m[i * n + t] * mk[t * n + j]).sum::<f64>();
            }
            next[i * n + i] += c[n - k + 1];
        }
        mk = next;
        let tr: f64 = (0..n).map(|i| (0..n).map(|t| m[i * n + t] * mk[t * n + i]).sum::<f64>()).sum();
        c[n - k] = -tr / k as f64;
    }
    c
}

fn eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, &v)| k as f64 * v).collect()
}

/// Real roots of a polynomial known to have only real, simple roots, in
/// ascending order. Roots of the derivative bracket the roots, so each
/// bracket is bisected to machine precision.
pub fn real_roots(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    if deg == 1 {
        return vec![-c[0] / c[1]];
    }
    let mut edges = vec![lo];
    edges.extend(real_roots(&derivative(c), lo, hi));
    edges.push(hi);
    let mut roots = Vec::new();
    for w in edges.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (fa, fb) = (eval(c, a), eval(c, b));
        if fa == 0.0 {
            roots.push(a);
            continue;
        }
        if fa.signum() == fb.signum() {
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid == a || mid == b {
                break;
            }
            if eval(c, mid).signum() == fa.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        roots.push(0.5 * (a + b));
    }
    roots
}

/// Eigenvalues (descending) of a symmetric matrix from its characteristic
/// polynomial, with unit eigenvectors from a column of `adj(M - lambda I)`.
/// Each eigenvector is signed so its largest-magnitude entry is positive.
pub fn eigen_oracle(m: &[f64], n: usize) -> Vec<(f64, Vec<f64>)> {
    let bound = (0..n).map(|i| (0..n).map(|j| m[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
    let mut roots = real_roots(&char_poly(m, n), -bound, bound);
    roots.reverse();
    roots
        .into_iter()
        .map(|lambda| {
            let shifted: Vec<f64> =
                (0..n * n).map(|i| if i / n == i % n { m[i] - lambda } else { m[i] }).collect();
            // adj(B)[i][j] = (-1)^(i+j) det(minor(B, j, i)); take the column with the largest norm
            let column = |j: usize| -> Vec<f64> {
                (0..n).map(|i| if (i + j) % 2 == 0 { 1.0 } else { -1.0 } * det(&minor(&shifted, n, j, i), n - 1)).collect()
            };
            let mut v = (0..n)
                .map(column)
                .max_by(|a, b| norm(a).total_cmp(&norm(b)))
                .unwrap();
            let len = norm(&v);
            v.iter_mut().for_each(|x| *x /= len);
            let big = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (lambda, v)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pearson correlation written directly from its defining sums.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Sample covariance of a row-major `[rows, cols]` matrix.
pub fn covariance(data: &[f64], cols: usize) -> Vec<f64> {
    let rows = data.len() / cols;
    let mean: Vec<f64> = (0..cols).map(|c| (0..rows).map(|r| data[r * cols + c]).sum::<f64>() / rows as f64).collect();
    let mut out = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            out[i * cols + j] = (0..rows)
                .map(|r| (data[r * cols + i] - mean[i]) * (data[r * cols + j] - mean[j]))
                .sum::<f64>()
                / (rows - 1) as f64;
        }
    }
    out
}
