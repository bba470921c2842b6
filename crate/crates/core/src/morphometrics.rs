//! Inter-landmark distances, named traits, trait correlation, and PCA.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSet, NUM_LANDMARKS};

pub const NUM_DISTANCES: usize = NUM_LANDMARKS * (NUM_LANDMARKS - 1) / 2;

/// 1-based landmark pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn distance_pairs() -> impl Iterator<Item = (usize, usize)> {
    (1..=NUM_LANDMARKS).flat_map(|i| (i + 1..=NUM_LANDMARKS).map(move |j| (i, j)))
}

/// Column labels `d_i_j` in [`distance_pairs`] order.
pub fn distance_labels() -> Vec<String> {
    distance_pairs().map(|(i, j)| format!("d_{i}_{j}")).collect()
}

/// Position of the 1-based pair `(i, j)`, `i < j`, in the distance vector.
pub fn pair_index(i: usize, j: usize) -> usize {
    debug_assert!(1 <= i && i < j && j <= NUM_LANDMARKS);
    let (i0, j0) = (i - 1, j - 1);
    i0 * NUM_LANDMARKS - i0 * (i0 + 1) / 2 + (j0 - i0 - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceMatrix(pub [f64; NUM_DISTANCES]);

impl DistanceMatrix {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[pair_index(i, j)]
    }
}

pub fn distance_matrix(lm: &LandmarkSet) -> DistanceMatrix {
    let mut out = [0.0; NUM_DISTANCES];
    for (slot, (i, j)) in out.iter_mut().zip(distance_pairs()) {
        *slot = lm.number(i).dist(lm.number(j));
    }
    DistanceMatrix(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraitVector {
    pub total_length: f64,
    pub body_length: f64,
    pub first_ash: f64,
    pub third_ash: f64,
    pub last_ash: f64,
}

impl TraitVector {
    pub const NAMES: [&'static str; 5] = ["total_length", "body_length", "first_ASH", "third_ASH", "last_ASH"];
    /// Landmark pairs defining each trait, in [`Self::NAMES`] order.
    pub const PAIRS: [(usize, usize); 5] = [(1, 3), (1, 2), (7, 8), (9, 10), (11, 12)];

    pub fn to_array(self) -> [f64; 5] {
        [self.total_length, self.body_length, self.first_ash, self.third_ash, self.last_ash]
    }
}

/// The five named traits in millimetres.
pub fn extract_traits(lm: &LandmarkSet, mm_per_px: f64) -> Result<TraitVector> {
    if !(mm_per_px > 0.0) || !mm_per_px.is_finite() {
        return Err(Error::Input(format!("mm_per_px must be positive, got {mm_per_px}")));
    }
    let d = distance_matrix(lm);
    let v = TraitVector::PAIRS.map(|(i, j)| d.get(i, j) * mm_per_px);
    Ok(TraitVector { total_length: v[0], body_length: v[1], first_ash: v[2], third_ash: v[3], last_ash: v[4] })
}

/// Pearson correlation of two series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input(format!("need two equal series of length >= 2, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation with a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 5x5 Pearson matrix over traits, row-major.
pub fn correlation_matrix(traits: &[TraitVector]) -> Result<[[f64; 5]; 5]> {
    if traits.len() < 3 {
        return Err(Error::Input(format!("correlation needs >= 3 specimens, got {}", traits.len())));
    }
    let cols: Vec<Vec<f64>> = (0..5).map(|c| traits.iter().map(|t| t.to_array()[c]).collect()).collect();
    let mut r = [[0.0; 5]; 5];
    for i in 0..5 {
        r[i][i] = 1.0;
        for j in i + 1..5 {
            let v = pearson(&cols[i], &cols[j]).map_err(|e| match e {
                Error::UndefinedMetric(_) => Error::UndefinedMetric(format!(
                    "correlation of {} with {} is undefined (constant trait)",
                    TraitVector::NAMES[i],
                    TraitVector::NAMES[j]
                )),
                e => e,
            })?;
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    Ok(r)
}

/// Eigen-decomposition of a symmetric `n x n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the matching
/// unit eigenvectors as columns of a row-major matrix. Each eigenvector is
/// signed so its largest-magnitude entry is positive.
pub fn symmetric_eigen(m: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if m.len() != n * n || n == 0 {
        return Err(Error::Input(format!("expected a {n}x{n} matrix, got {} values", m.len())));
    }
    let mut a = m.to_vec();
    let mut v = vec![0.0; n * n];
    (0..n).for_each(|i| v[i * n + i] = 1.0);
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let mut sweeps = 0;
    while off(&a) >= 1e-12 * scale.max(1.0) {
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::Contract("Jacobi eigen-solver did not converge in 100 sweeps".into()));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        let mut big = 0.0f64;
        let mut sign = 1.0;
        for r in 0..n {
            let x = v[r * n + src];
            if x.abs() > big.abs() + 1e-15 {
                big = x;
                sign = x.signum();
            }
        }
        for r in 0..n {
            vectors[r * n + col] = sign * v[r * n + src];
        }
    }
    Ok((values, vectors))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaResult {
    pub n_features: usize,
    pub n_components: usize,
    pub mean: Vec<f64>,
    /// Row-major `[n_features, n_components]`, orthonormal columns.
    pub loadings: Vec<f64>,
    pub std_dev: Vec<f64>,
    pub proportion: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Row-major `[n_specimens, n_components]`.
    pub scores: Vec<f64>,
}

impl PcaResult {
    pub fn loading(&self, feature: usize, component: usize) -> f64 {
        self.loadings[feature * self.n_components + component]
    }

    /// Projects one feature row onto the retained components.
    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_features {
            return Err(Error::Input(format!("expected {} features, got {}", self.n_features, row.len())));
        }
        Ok((0..self.n_components)
            .map(|c| (0..self.n_features).map(|f| (row[f] - self.mean[f]) * self.loading(f, c)).sum())
            .collect())
    }
}

/// Covariance PCA of a row-major `[specimens, features]` matrix.
///
/// Proportions are taken over the full spectrum, so they sum to 1 when
/// `n_components` equals the feature count.
pub fn pca(data: &[f64], n_features: usize, n_components: usize) -> Result<PcaResult> {
    if n_features == 0 || data.len() % n_features != 0 {
        return Err(Error::Input(format!("{} values do not form rows of {n_features}", data.len())));
    }
    let rows = data.len() / n_features;
    if rows < 2 {
        return Err(Error::Input(format!("PCA needs >= 2 specimens, got {rows}")));
    }
    let max_components = n_features.min(rows - 1);
    if n_components == 0 || n_components > max_components {
        return Err(Error::Input(format!("n_components must be in 1..={max_components}, got {n_components}")));
    }
    let mean: Vec<f64> = (0..n_features)
        .map(|f| (0..rows).map(|r| data[r * n_features + f]).sum::<f64>() / rows as f64)
        .collect();
    let centered: Vec<f64> = data.iter().enumerate().map(|(i, x)| x - mean[i % n_features]).collect();
    let mut cov = vec![0.0; n_features * n_features];
    for i in 0..n_features {
        for j in i..n_features {
            let s: f64 = (0..rows).map(|r| centered[r * n_features + i] * centered[r * n_features + j]).sum();
            let c = s / (rows - 1) as f64;
            cov[i * n_features + j] = c;
            cov[j * n_features + i] = c;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, n_features)?;
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Input("PCA input has zero variance".into()));
    }
    let proportion: Vec<f64> = values[..n_components].iter().map(|v| v / total).collect();
    let cumulative: Vec<f64> = proportion
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let loadings: Vec<f64> = (0..n_features)
        .flat_map(|f| (0..n_components).map(move |c| (f, c)))
        .map(|(f, c)| vectors[f * n_features + c])
        .collect();
    let mut scores = vec![0.0; rows * n_components];
    for r in 0..rows {
        for c in 0..n_components {
            scores[r * n_components + c] =
                (0..n_features).map(|f| centered[r * n_features + f] * loadings[f * n_components + c]).sum();
        }
    }
    Ok(PcaResult {
        n_features,
        n_components,
        mean,
        loadings,
        std_dev: values[..n_components].iter().map(|v| v.sqrt()).collect(),
        proportion,
        cumulative,
        scores,
    })
}
