#![allow(dead_code)]

use lsiep::manifold::{qf, ManifoldPoint, TangentVector};
use lsiep::ProblemData;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn random_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

pub fn random_sym<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let b = random_matrix(rng, n, n);
    (&b + b.transpose()) * 0.5
}

pub fn random_orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    qf(&random_matrix(rng, n, n)).unwrap()
}

pub fn random_point<R: Rng>(rng: &mut R, l: usize, n: usize, n_free: usize) -> ManifoldPoint {
    ManifoldPoint::new(
        random_vector(rng, l),
        random_orthogonal(rng, n),
        random_vector(rng, n_free),
    )
    .unwrap()
}

pub fn random_tangent<R: Rng>(rng: &mut R, l: usize, n: usize, n_free: usize) -> TangentVector {
    let b = random_matrix(rng, n, n);
    TangentVector::from_skew(
        random_vector(rng, l),
        &((&b - b.transpose()) * 0.5),
        random_vector(rng, n_free),
    )
    .unwrap()
}

pub fn random_problem<R: Rng>(rng: &mut R, n: usize, l: usize, m: usize) -> ProblemData {
    let basis = (0..=l).map(|_| random_sym(rng, n)).collect();
    let mut t: Vec<f64> = random_vector(rng, m).iter().copied().collect();
    t.sort_by(f64::total_cmp);
    ProblemData::new(basis, DVector::from_vec(t)).unwrap()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
