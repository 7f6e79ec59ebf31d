//! Principal component projection by power iteration with deflation.
//!
//! Works on whichever of the Gram matrix (`n x n`) or the scatter matrix
//! (`d x d`) is smaller, so projecting a few hundred 512-wide embeddings
//! stays cheap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const TOLERANCE: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 10_000;

/// Eigenvalues below this fraction of the total variance count as zero.
const RANK_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Row `i` holds the `k` coordinates of input vector `i`.
    pub coords: Vec<Vec<f64>>,
    /// Unit principal directions in data space, sign-canonicalized.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component (unnormalized sum of squares).
    pub eigenvalues: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Leading eigenpairs of a symmetric positive semi-definite matrix.
fn top_eigenpairs(mut m: Vec<Vec<f64>>, k: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let size = m.len();
    let trace: f64 = (0..size).map(|i| m[i][i]).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut found: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        let mut lambda = 0.0;
        for _ in 0..MAX_ITERATIONS {
            let mut w = mat_vec(&m, &v);
            for (_, u) in &found {
                let p = dot(&w, u);
                w.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            lambda = norm(&w);
            if !(lambda > RANK_EPS * trace) {
                break;
            }
            w.iter_mut().for_each(|x| *x /= lambda);
            let delta = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            v = w;
            if delta < TOLERANCE {
                break;
            }
        }
        if !(lambda > RANK_EPS * trace) {
            return Err(Error::Rank {
                requested: k,
                achievable: found.len(),
            });
        }
        // Rayleigh quotient is more accurate than the last norm.
        let lambda = dot(&v, &mat_vec(&m, &v));
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x -= lambda * v[i] * v[j];
            }
        }
        found.push((lambda, v));
    }
    Ok(found)
}

/// Projects `vectors` onto their top `k` principal directions.
pub fn fit(vectors: &[Vec<f64>], k: usize) -> Result<Projection> {
    let n = vectors.len();
    if n < k + 1 {
        return Err(Error::Rank {
            requested: k,
            achievable: n.saturating_sub(1),
        });
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Config("vectors differ in length".into()));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64)
        .collect();
    let x: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();

    let directions: Vec<(f64, Vec<f64>)> = if n <= d {
        let gram: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| dot(a, b)).collect()).collect();
        top_eigenpairs(gram, k)?
            .into_iter()
            .map(|(lambda, u)| {
                let mut v: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i][j] * u[i]).sum()).collect();
                let nv = norm(&v);
                v.iter_mut().for_each(|c| *c /= nv);
                (lambda, v)
            })
            .collect()
    } else {
        let scatter: Vec<Vec<f64>> = (0..d)
            .map(|a| (0..d).map(|b| x.iter().map(|r| r[a] * r[b]).sum()).collect())
            .collect();
        top_eigenpairs(scatter, k)?
    };

    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for (lambda, mut v) in directions {
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, c)| if c.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        components.push(v);
        eigenvalues.push(lambda);
    }
    let coords = x
        .iter()
        .map(|row| components.iter().map(|c| dot(row, c)).collect())
        .collect();
    Ok(Projection {
        coords,
        components,
        eigenvalues,
    })
}

/// Labelled convenience wrapper around [`fit`].
pub fn pca_project<L: Clone>(items: &[(L, Vec<f64>)], k: usize) -> Result<Vec<(L, Vec<f64>)>> {
    let vectors: Vec<Vec<f64>> = items.iter().map(|(_, v)| v.clone()).collect();
    let proj = fit(&vectors, k)?;
    Ok(items
        .iter()
        .map(|(l, _)| l.clone())
        .zip(proj.coords)
        .collect())
}
