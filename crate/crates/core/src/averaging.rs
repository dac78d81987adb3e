//! The switch-timing averaging map.
//!
//! With one device pinned at phase 0 and the wrapped copy of that switch at
//! phase `T`, each of the remaining devices moves its enforced switch to the
//! midpoint of its neighbours once per period. Stacking the `N` timings plus
//! the wrapped copy gives an `(N+1)`-vector that evolves as `x̃ ← Γ x̃` with
//!
//! ```text
//!     ⎡ 1   0   0   …   0   0 ⎤
//!     ⎢ ½   0   ½   …   0   0 ⎥
//! Γ = ⎢ 0   ½   0   ½   …   0 ⎥
//!     ⎢         ⋱   ⋱   ⋱     ⎥
//!     ⎢ 0   …   0   ½   0   ½ ⎥
//!     ⎣ 0   0   …   0   0   1 ⎦
//! ```
//!
//! `Γ` has the eigenvalue 1 twice (eigenvectors `γ` and `1 − γ`, with
//! `γ_j = 1 − j/N`) and the interior eigenvalues `cos(jπ/N)`, `j = 1..N−1`.
//! Everything here is small and dense; no eigensolver is needed.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{invalid, Result};

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, x.len(), "dimension mismatch");
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest `|Σ_j m_ij − 1|` over rows.
    pub fn row_sum_residual(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.n, other.n, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// The `(N+1)×(N+1)` averaging matrix for `N` devices.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingMatrix {
    devices: usize,
    gamma: Matrix,
}

impl AveragingMatrix {
    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn matrix(&self) -> &Matrix {
        &self.gamma
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.gamma.mul_vec(x)
    }
}

fn check_devices(n: usize) -> Result<()> {
    if n < 2 {
        return Err(invalid(alloc::format!("need at least 2 devices, got {n}")));
    }
    Ok(())
}

pub fn build_gamma(n: usize) -> Result<AveragingMatrix> {
    check_devices(n)?;
    let mut gamma = Matrix::zeros(n + 1);
    gamma[(0, 0)] = 1.0;
    gamma[(n, n)] = 1.0;
    for i in 1..n {
        gamma[(i, i - 1)] = 0.5;
        gamma[(i, i + 1)] = 0.5;
    }
    Ok(AveragingMatrix { devices: n, gamma })
}

/// `γ_j = 1 − j/N` for `j = 0..=N`.
pub fn gamma_eigvec(n: usize) -> Result<Vec<f64>> {
    check_devices(n)?;
    Ok((0..=n).map(|j| 1.0 - j as f64 / n as f64).collect())
}

/// `Γ^k` by repeated squaring.
pub fn gamma_power(n: usize, k: u64) -> Result<Matrix> {
    let gamma = build_gamma(n)?;
    let mut result = Matrix::identity(n + 1);
    let mut base = gamma.gamma;
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = result.mul(&base);
        }
        e >>= 1;
        if e > 0 {
            base = base.mul(&base);
        }
    }
    Ok(result)
}

/// Same as [`gamma_power`]; named for its use in checking the `k → ∞` limit.
pub fn gamma_power_limit(n: usize, k: u64) -> Result<Matrix> {
    gamma_power(n, k)
}

/// The limit `[γ 0 … 0 1−γ]` of `Γ^k`.
pub fn limit_matrix(n: usize) -> Result<Matrix> {
    let g = gamma_eigvec(n)?;
    let mut m = Matrix::zeros(n + 1);
    for (i, gi) in g.iter().enumerate() {
        m[(i, 0)] = *gi;
        m[(i, n)] = 1.0 - gi;
    }
    Ok(m)
}

/// Switch timings of `N` devices within one period.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingVector {
    pub x: Vec<f64>,
    pub period: f64,
}

impl TimingVector {
    pub fn extended(&self) -> ExtendedTimingVector {
        let mut x = self.x.clone();
        x.push(self.x.first().copied().unwrap_or(0.0) + self.period);
        ExtendedTimingVector {
            x,
            period: self.period,
        }
    }

    /// Largest distance to `other`, measured on the circle of length `period`.
    pub fn circular_distance(&self, other: &TimingVector) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .map(|(a, b)| {
                let d = (a - b).abs() % self.period;
                d.min(self.period - d)
            })
            .fold(0.0, f64::max)
    }
}

/// Timings with the wrapped copy of the first switch appended.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTimingVector {
    pub x: Vec<f64>,
    pub period: f64,
}

impl ExtendedTimingVector {
    /// Anchored start: `0`, the given interior timings, then `T`.
    pub fn anchored(interior: &[f64], period: f64) -> Self {
        let mut x = Vec::with_capacity(interior.len() + 2);
        x.push(0.0);
        x.extend_from_slice(interior);
        x.push(period);
        Self { x, period }
    }

    pub fn devices(&self) -> usize {
        self.x.len() - 1
    }

    /// Drop the wrapped entry and reduce modulo the period.
    pub fn truncated(&self) -> TimingVector {
        let n = self.devices();
        TimingVector {
            x: self.x[..n].iter().map(|v| wrap(*v, self.period)).collect(),
            period: self.period,
        }
    }

    pub fn sup_distance(&self, other: &ExtendedTimingVector) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn wrap(v: f64, period: f64) -> f64 {
    let r = v % period;
    let r = if r < 0.0 { r + period } else { r };
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Evenly spaced timings `[0, T/N, …, T(N−1)/N]`.
pub fn fixed_point(n: usize, period: f64) -> Result<TimingVector> {
    check_devices(n)?;
    if !(period > 0.0) {
        return Err(invalid(alloc::format!("period must be positive, got {period}")));
    }
    Ok(TimingVector {
        x: (0..n).map(|j| period * j as f64 / n as f64).collect(),
        period,
    })
}

/// One application of the averaging map, computed entrywise.
pub fn step_map(x: &ExtendedTimingVector) -> ExtendedTimingVector {
    let n = x.x.len();
    let mut out = x.x.clone();
    for i in 1..n - 1 {
        out[i] = 0.5 * (x.x[i - 1] + x.x[i + 1]);
    }
    ExtendedTimingVector {
        x: out,
        period: x.period,
    }
}

pub fn iterate_map(x0: &ExtendedTimingVector, steps: usize) -> ExtendedTimingVector {
    let mut x = x0.clone();
    for _ in 0..steps {
        x = step_map(&x);
    }
    x
}

/// Outcome of [`converge`].
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub limit: ExtendedTimingVector,
    pub iterations: usize,
    pub converged: bool,
    /// `‖x_k − x*‖∞` for every iterate, starting at `k = 0`.
    pub distances: Vec<f64>,
}

/// Default iteration cap.
pub const MAX_ITERATIONS: usize = 1_000_000;

/// Iterate until successive iterates differ by less than `1e−13·T` or the cap
/// is reached.
pub fn converge(x0: &ExtendedTimingVector, max_iters: usize) -> Result<Convergence> {
    let n = x0.devices();
    let target = fixed_point(n, x0.period)?.extended();
    let tol = 1e-13 * x0.period;
    let mut x = x0.clone();
    let mut distances = vec![x.sup_distance(&target)];
    for k in 1..=max_iters {
        let next = step_map(&x);
        let diff = next.sup_distance(&x);
        x = next;
        distances.push(x.sup_distance(&target));
        if diff < tol {
            return Ok(Convergence {
                limit: x,
                iterations: k,
                converged: true,
                distances,
            });
        }
    }
    Ok(Convergence {
        limit: x,
        iterations: max_iters,
        converged: false,
        distances,
    })
}

/// Spectral radius of `Γ` restricted to vectors with zero end entries,
/// estimated by power iteration with a two-step Rayleigh ratio.
///
/// That subspace is invariant and complementary to `span{γ, 1−γ}`; the
/// estimate therefore bounds every eigenvalue other than the unit pair.
pub fn interior_spectral_radius(n: usize, iterations: usize) -> Result<f64> {
    let gamma = build_gamma(n)?;
    // A start with a component along every interior eigenvector.
    let mut x: Vec<f64> = (0..=n)
        .map(|i| if i == 0 || i == n { 0.0 } else { 1.0 + libm::sqrt(i as f64) * 1e-3 })
        .collect();
    let mut rho2 = 0.0;
    for _ in 0..iterations {
        let y = gamma.apply(&x);
        let z = gamma.apply(&y);
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let xz: f64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
        rho2 = xz / xx;
        let norm = libm::sqrt(z.iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 {
            return Ok(0.0);
        }
        x = z.into_iter().map(|v| v / norm).collect();
    }
    Ok(libm::sqrt(rho2.abs()))
}
