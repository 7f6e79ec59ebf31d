use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spbwe::pca::fit;

/// Top-k eigenpairs of the centred Gram matrix, by a dense eigensolver.
fn gram_oracle(vectors: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = vectors.len();
    let d = vectors[0].len();
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let eig = SymmetricEigen::new(&x * x.transpose());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values = idx[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    // Principal coordinates are sqrt(lambda) * u, up to sign.
    let coords = (0..n)
        .map(|r| idx[..k].iter().map(|&i| eig.eigenvalues[i].sqrt() * eig.eigenvectors[(r, i)]).collect())
        .collect();
    (values, coords)
}

#[test]
fn three_points_in_five_dims_match_the_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let v: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let proj = fit(&v, 2).unwrap();
        let (values, coords) = gram_oracle(&v, 2);
        for c in 0..2 {
            assert!((proj.eigenvalues[c] - values[c]).abs() < 1e-8 * values[0].max(1.0));
            let sign = if proj.coords.iter().zip(&coords).map(|(a, b)| a[c] * b[c]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for i in 0..3 {
                assert!((proj.coords[i][c] - sign * coords[i][c]).abs() < 1e-6, "{:?} vs {:?}", proj.coords, coords);
            }
        }
    }
}

#[test]
fn scatter_branch_agrees_with_the_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v: Vec<Vec<f64>> = (0..12).map(|i| (0..4).map(|j| rng.gen_range(-1.0..1.0) * (j + 1) as f64 + i as f64 * 0.1).collect()).collect();
    let proj = fit(&v, 2).unwrap();
    let (values, _) = gram_oracle(&v, 2);
    for c in 0..2 {
        assert!((proj.eigenvalues[c] - values[c]).abs() < 1e-7 * values[0]);
    }
}
