//! Instance generators for the three experiment families and the
//! eigendecomposition-based starting point.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::manifold::ManifoldPoint;
use crate::model::{add_scaled, a_of_c, ProblemData};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Example1,
    SturmLiouville,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    pub n: usize,
    pub l: usize,
    pub m: usize,
    pub seed: u64,
    /// Decimal places kept when chopping the random start; `None` picks 2
    /// below `n = 100` and 3 from there on.
    pub chop_decimals: Option<u32>,
}

impl InstanceSpec {
    pub fn example1() -> Self {
        InstanceSpec {
            kind: InstanceKind::Example1,
            n: 5,
            l: 5,
            m: 5,
            seed: 0,
            chop_decimals: None,
        }
    }

    pub fn sturm_liouville(n: usize, l: usize) -> Self {
        InstanceSpec {
            kind: InstanceKind::SturmLiouville,
            n,
            l,
            m: n,
            seed: 0,
            chop_decimals: None,
        }
    }

    pub fn random(n: usize, l: usize, m: usize, seed: u64) -> Self {
        InstanceSpec {
            kind: InstanceKind::Random,
            n,
            l,
            m,
            seed,
            chop_decimals: None,
        }
    }

    /// Checks the dimension constraints of each family.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            InstanceKind::Example1 if (self.n, self.l, self.m) != (5, 5, 5) => Err(
                Error::InvalidConfig("example1 has fixed dimensions (n, l, m) = (5, 5, 5)".into()),
            ),
            InstanceKind::SturmLiouville if self.m != self.n => Err(Error::InvalidConfig(
                "sturm_liouville prescribes the full spectrum, so m must equal n".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn generate(&self) -> Result<GeneratedInstance> {
        self.validate()?;
        match self.kind {
            InstanceKind::Example1 => make_example1(),
            InstanceKind::SturmLiouville => make_sturm_liouville(self.n, self.l),
            InstanceKind::Random => {
                let chop = self.chop_decimals.unwrap_or(default_chop_decimals(self.n));
                make_random_with_chop(self.n, self.l, self.m, self.seed, chop)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub problem: ProblemData,
    /// Parameters that generated the targets, when known.
    pub c_true: Option<DVector<f64>>,
    pub c0: DVector<f64>,
    pub x0: ManifoldPoint,
}

impl GeneratedInstance {
    /// `||c - c_true||_inf / ||c_true||_inf`, when the truth is known.
    pub fn relative_error(&self, c: &DVector<f64>) -> Option<f64> {
        self.c_true.as_ref().map(|t| {
            let num = (c - t).amax();
            let den = t.amax();
            if den == 0.0 {
                num
            } else {
                num / den
            }
        })
    }
}

/// Ascending symmetric eigendecomposition with eigenvectors ordered to match.
pub fn sorted_symmetric_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("eigensolver input is not finite".into()));
    }
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericFailure("symmetric eigensolver did not converge".into()))?;
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = eig.eigenvectors.select_columns(&order);
    Ok((values, vectors))
}

/// Starting point from `A(c0) = Q0 diag(eigs) Q0^T`: `Lambda0` is the
/// trailing `n - m` eigenvalues.
pub fn initial_point(p: &ProblemData, c0: &DVector<f64>) -> Result<ManifoldPoint> {
    let a = a_of_c(p, c0)?;
    let (values, q) = sorted_symmetric_eigen(a.as_matrix())?;
    let lambda = values.rows(p.m(), p.n() - p.m()).into_owned();
    ManifoldPoint::new(c0.clone(), q, lambda)
}

/// `n x n` tridiagonal matrix with `-1` off the diagonal, four scaled unit
/// bases and target spectrum `{1, 1, 2, 3, 4}`.
pub fn make_example1() -> Result<GeneratedInstance> {
    let n = 5;
    let a0 = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { -1.0 } else { 0.0 });
    let mut basis = vec![a0];
    for k in 0..n {
        let mut a = DMatrix::zeros(n, n);
        a[(k, k)] = 4.0;
        basis.push(a);
    }
    let targets = DVector::from_vec(vec![1.0, 1.0, 2.0, 3.0, 4.0]);
    let problem = ProblemData::new(basis, targets)?;
    let c0 = DVector::from_vec(vec![0.6316, 0.2378, 0.9092, 0.9866, 0.5007]);
    let x0 = initial_point(&problem, &c0)?;
    Ok(GeneratedInstance {
        problem,
        c_true: None,
        c0,
        x0,
    })
}

/// Symmetric Toeplitz matrix with first column `e_{k+1}`: ones where `|i - j| = k`.
pub fn toeplitz_unit(n: usize, k: usize) -> DMatrix<f64> {
    let mut first_col = vec![0.0; n];
    if k < n {
        first_col[k] = 1.0;
    }
    DMatrix::from_fn(n, n, |i, j| first_col[i.abs_diff(j)])
}

/// Hankel matrix `hankel(c, r)`: `H_ij = c[i + j]` while `i + j < n`, else
/// `r[i + j - n + 1]` (0-based; `r[0]` is shadowed by `c[n-1]`).
pub fn hankel(c: &[f64], r: &[f64]) -> DMatrix<f64> {
    let n = c.len();
    DMatrix::from_fn(n, r.len(), |i, j| {
        let s = i + j;
        if s < n {
            c[s]
        } else {
            r[s - n + 1]
        }
    })
}

/// The `k`-th Hankel basis matrix (1-based `k` in `1..2n`): `hankel(e_k, 0)`
/// for `k <= n`, `hankel(0, e_{k-n+1})` beyond.
pub fn hankel_unit(n: usize, k: usize) -> DMatrix<f64> {
    let mut c = vec![0.0; n];
    let mut r = vec![0.0; n];
    if (1..=n).contains(&k) {
        c[k - 1] = 1.0;
    } else if k > n && k < 2 * n {
        r[k - n] = 1.0;
    }
    hankel(&c, &r)
}

/// Fourier coefficients `192 / (pi^4 k^4)`, `k = 1..=l`.
pub fn sturm_liouville_coefficients(l: usize) -> DVector<f64> {
    let scale = 192.0 / std::f64::consts::PI.powi(4);
    DVector::from_fn(l, |k, _| scale / ((k + 1) as f64).powi(4))
}

/// Basis `A_0 = diag(1, 4, ..., n^2)`, `A_k = T_{2k} - H_{2k-1}`.
pub fn sturm_liouville_basis(n: usize, l: usize) -> Vec<DMatrix<f64>> {
    let a0 = DMatrix::from_fn(n, n, |i, j| if i == j { ((i + 1) * (i + 1)) as f64 } else { 0.0 });
    let mut basis = vec![a0];
    for k in 1..=l {
        // T_{2k} is only defined up to 2k <= n - 1; past that it is zero anyway
        let mut a = -hankel_unit(n, 2 * k - 1);
        if 2 * k < n {
            a += toeplitz_unit(n, 2 * k);
        }
        basis.push(a);
    }
    basis
}

/// Discretized inverse Sturm-Liouville instance with the full spectrum of
/// `A(c_true)` prescribed and the start built from `c0 = 0`.
pub fn make_sturm_liouville(n: usize, l: usize) -> Result<GeneratedInstance> {
    if n < 2 || l < 1 {
        return Err(Error::InvalidConfig(format!(
            "sturm_liouville needs n >= 2 and l >= 1, got n = {n}, l = {l}"
        )));
    }
    let basis = sturm_liouville_basis(n, l);
    let c_true = sturm_liouville_coefficients(l);
    let mut a = basis[0].clone();
    for (c, b) in c_true.iter().zip(&basis[1..]) {
        add_scaled(&mut a, *c, b);
    }
    let (targets, _) = sorted_symmetric_eigen(&a)?;
    let problem = ProblemData::new(basis, targets)?;
    let c0 = DVector::zeros(l);
    let x0 = initial_point(&problem, &c0)?;
    Ok(GeneratedInstance {
        problem,
        c_true: Some(c_true),
        c0,
        x0,
    })
}

pub fn default_chop_decimals(n: usize) -> u32 {
    if n < 100 {
        2
    } else {
        3
    }
}

/// Truncates `v` toward zero, keeping `decimals` places.
pub fn chop(v: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    // the small nudge absorbs representation error such as 0.29 * 100 = 28.999...
    let scaled = v * scale;
    let nudged = scaled + scaled.signum() * 1e-9;
    nudged.trunc() / scale
}

/// Random instance with the `m` smallest eigenvalues of `A(c_true)` as targets.
pub fn make_random(n: usize, l: usize, m: usize, seed: u64) -> Result<GeneratedInstance> {
    make_random_with_chop(n, l, m, seed, default_chop_decimals(n))
}

pub fn make_random_with_chop(
    n: usize,
    l: usize,
    m: usize,
    seed: u64,
    chop_decimals: u32,
) -> Result<GeneratedInstance> {
    if n == 0 || m > n {
        return Err(Error::InvalidConfig(format!(
            "random instance needs 1 <= n and m <= n, got n = {n}, m = {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c_true = DVector::from_fn(l, |_, _| rng.sample::<f64, _>(StandardNormal));
    let basis: Vec<DMatrix<f64>> = (0..=l)
        .map(|_| {
            let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            (&b + b.transpose()) * 0.5
        })
        .collect();
    let mut a = basis[0].clone();
    for (c, b) in c_true.iter().zip(&basis[1..]) {
        add_scaled(&mut a, *c, b);
    }
    let (eigs, _) = sorted_symmetric_eigen(&a)?;
    let targets = eigs.rows(0, m).into_owned();
    let problem = ProblemData::new(basis, targets)?;
    let c0 = c_true.map(|v| chop(v, chop_decimals));
    let x0 = initial_point(&problem, &c0)?;
    Ok(GeneratedInstance {
        problem,
        c_true: Some(c_true),
        c0,
        x0,
    })
}
