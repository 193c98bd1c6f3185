//! Soft harmonic label propagation.
//!
//! The regularized fit `(l - y)^T C (l - y) + l^T (L + gamma_g I) l` with
//! `C = c_l I` has the stationary condition
//!
//! ```text
//! (L / c_l + (1 + gamma_g / c_l) I) l = y
//! ```
//!
//! which is symmetric positive definite for any `c_l > 0`. The backbone form
//! scales the fit and the sink by node multiplicities; it is solved after
//! left-multiplying by `V`, which keeps the system symmetric.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::graph::Laplacian;
use crate::label::Label;
use crate::matrix::CsrMatrix;

/// Largest system the dense oracle accepts.
pub const DENSE_ORACLE_MAX_N: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Label-fit weight.
    pub c_l: f64,
    /// Diagonal regularizer (weight of every edge to the zero-labeled sink).
    pub gamma_g: f64,
    /// Relative residual tolerance `||A l - b|| / ||b||`.
    pub tol: f64,
    /// Iteration cap; `None` means ten times the system size.
    pub max_iter: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c_l: 1.0,
            gamma_g: 1.0,
            tol: 1e-10,
            max_iter: None,
        }
    }
}

impl SolverConfig {
    pub fn with_gamma(self, gamma_g: f64) -> Self {
        Self { gamma_g, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_l > 0.0 && self.c_l.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "c_l must be positive and finite, got {}",
                self.c_l
            )));
        }
        if !(self.gamma_g >= 0.0 && self.gamma_g.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma_g must be non-negative, got {}",
                self.gamma_g
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == Some(0) {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        Ok(())
    }

    /// Upper bound on `|l_i|` for unit targets: `c_l / (c_l + gamma_g)`.
    pub fn shrinkage_bound(&self) -> f64 {
        self.c_l / (self.c_l + self.gamma_g)
    }

    fn iteration_cap(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(10 * n.max(1))
    }
}

/// Pseudo-targets: one `+1` or `-1` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector(Vec<f64>);

impl TargetVector {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if let Some(bad) = y.iter().find(|v| **v != 1.0 && **v != -1.0) {
            return Err(Error::InvalidParameter(format!(
                "targets must be exactly +1 or -1, got {bad}"
            )));
        }
        Ok(Self(y))
    }

    pub fn from_labels(labels: &[Label]) -> Self {
        Self(labels.iter().map(|l| l.sign()).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels {
    pub ell: Vec<f64>,
    /// Achieved relative residual of the solved system.
    pub residual: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradient from a zero start.
///
/// Stops on the true relative residual; when the recurrence claims
/// convergence but the recomputed residual disagrees, the iteration restarts
/// from the current iterate.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SoftLabels> {
    let n = a.n();
    check_len(n, b.len())?;
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(SoftLabels {
            ell: x,
            residual: 0.0,
            iterations: 0,
        });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| {
            if d > 0.0 {
                Ok(1.0 / d)
            } else {
                Err(Error::NotPositiveDefinite)
            }
        })
        .collect::<Result<_>>()?;

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut best = 1.0;

    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let mut rel = norm(&r) / b_norm;
        if rel <= tol {
            a.mul_vec_into(&x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            rel = norm(&r) / b_norm;
            best = f64::min(best, rel);
            if rel <= tol {
                return Ok(SoftLabels {
                    ell: x,
                    residual: rel,
                    iterations: it,
                });
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        best = f64::min(best, rel);
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: best,
    })
}

/// System matrix `L / c_l + diag(shift)`.
fn regularized_system(l: &Laplacian, cfg: &SolverConfig, shift: &[f64]) -> Result<CsrMatrix> {
    l.matrix().scaled_plus_diagonal(1.0 / cfg.c_l, shift)
}

/// Solves `(L / c_l + (1 + gamma_g / c_l) I) l = y`.
pub fn soft_harmonic(l: &Laplacian, y: &TargetVector, cfg: &SolverConfig) -> Result<SoftLabels> {
    cfg.validate()?;
    let n = l.n();
    check_len(n, y.len())?;
    let shift = vec![1.0 + cfg.gamma_g / cfg.c_l; n];
    let a = regularized_system(l, cfg, &shift)?;
    conjugate_gradient(&a, y.as_slice(), cfg.tol, cfg.iteration_cap(n))
}

/// Solves the multiplicity-adjusted system
/// `(V^-1 L^V / c_l + (1 + gamma_g / c_l) I) l = y` in its symmetric form
/// `(L^V / c_l + (1 + gamma_g / c_l) V) l = V y`.
///
/// `lv` must be the Laplacian of `V W V`. The reported residual refers to the
/// symmetric form.
pub fn soft_harmonic_backbone(
    lv: &Laplacian,
    multiplicities: &[usize],
    y: &TargetVector,
    cfg: &SolverConfig,
) -> Result<SoftLabels> {
    cfg.validate()?;
    let n = lv.n();
    check_len(n, multiplicities.len())?;
    check_len(n, y.len())?;
    if let Some(i) = multiplicities.iter().position(|&v| v == 0) {
        return Err(Error::InvalidParameter(format!(
            "multiplicity of node {i} must be positive"
        )));
    }
    let v: Vec<f64> = multiplicities.iter().map(|&m| m as f64).collect();
    let fit = 1.0 + cfg.gamma_g / cfg.c_l;
    let shift: Vec<f64> = v.iter().map(|vi| fit * vi).collect();
    let a = regularized_system(lv, cfg, &shift)?;
    let b: Vec<f64> = y.as_slice().iter().zip(&v).map(|(y, v)| y * v).collect();
    conjugate_gradient(&a, &b, cfg.tol, cfg.iteration_cap(n))
}

/// Direct Cholesky solve of a small symmetric positive-definite system.
pub fn dense_solve_oracle(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.ncols(),
        });
    }
    if n > DENSE_ORACLE_MAX_N {
        return Err(Error::InvalidParameter(format!(
            "dense oracle limited to n <= {DENSE_ORACLE_MAX_N}, got {n}"
        )));
    }
    check_len(n, b.len())?;
    if a != &a.transpose() {
        return Err(Error::InvalidParameter(
            "dense oracle needs a symmetric matrix".into(),
        ));
    }
    let chol = a.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let x = chol.solve(&nalgebra::DVector::from_row_slice(b));
    Ok(x.iter().copied().collect())
}

/// Dense form of the soft harmonic system matrix, for checking small problems.
pub fn dense_system(l: &Laplacian, cfg: &SolverConfig) -> DMatrix<f64> {
    let n = l.n();
    l.matrix().to_dense() / cfg.c_l + DMatrix::identity(n, n) * (1.0 + cfg.gamma_g / cfg.c_l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn_graph, FeatureWeights, GraphSource};
    use crate::matrix::FeatureMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lap(n: usize, edges: &[(usize, usize, f64)]) -> Laplacian {
        let w = CsrMatrix::from_triplets(
            n,
            edges.iter().flat_map(|&(i, j, v)| [(i, j, v), (j, i, v)]),
        )
        .unwrap();
        Laplacian::from_weights(&w, GraphSource::Custom)
    }

    fn random_graph(n: usize, seed: u64) -> (Laplacian, TargetVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = FeatureMatrix::new(n, 2, data).unwrap();
        let g = build_knn_graph(&x, &FeatureWeights::uniform(2), 0.5, 5.min(n - 1)).unwrap();
        let y = (0..n)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        (g.laplacian(), TargetVector::new(y).unwrap())
    }

    #[test]
    fn isolated_scalar_node() {
        let l = lap(1, &[]);
        let y = TargetVector::new(vec![1.0]).unwrap();
        let s = soft_harmonic(&l, &y, &SolverConfig::default()).unwrap();
        assert_eq!(s.ell, vec![0.5]);
    }

    #[test]
    fn two_node_hand_solution() {
        let l = lap(2, &[(0, 1, 1.0)]);
        let y = TargetVector::new(vec![1.0, -1.0]).unwrap();
        let cfg = SolverConfig::default().with_gamma(0.0);
        let s = soft_harmonic(&l, &y, &cfg).unwrap();
        assert!((s.ell[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.ell[1] + 1.0 / 3.0).abs() < 1e-12);
        assert!(s.residual <= cfg.tol);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(TargetVector::new(vec![1.0, 0.0]).is_err());
        let l = lap(2, &[(0, 1, 1.0)]);
        let y = TargetVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            soft_harmonic(&l, &y, &SolverConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let y2 = TargetVector::new(vec![1.0, -1.0]).unwrap();
        let bad = SolverConfig {
            c_l: 0.0,
            ..SolverConfig::default()
        };
        assert!(soft_harmonic(&l, &y2, &bad).is_err());
        assert!(soft_harmonic_backbone(&l, &[1, 0], &y2, &SolverConfig::default()).is_err());
    }

    #[test]
    fn non_convergence_reports_best_residual() {
        let (l, y) = random_graph(60, 1);
        let cfg = SolverConfig {
            gamma_g: 0.0,
            tol: 1e-14,
            max_iter: Some(2),
            ..SolverConfig::default()
        };
        match soft_harmonic(&l, &y, &cfg) {
            Err(Error::NotConverged {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0 && residual < 1.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn dense_oracle_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(
            dense_solve_oracle(&id, &[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        let a = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let x = dense_solve_oracle(&a, &[1.0, -1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-15 && (x[1] + 1.0 / 3.0).abs() < 1e-15);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            dense_solve_oracle(&indefinite, &[1.0, 1.0]),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn iterative_matches_dense_on_connected_graph() {
        let (l, y) = random_graph(100, 42);
        let cfg = SolverConfig::default();
        let s = soft_harmonic(&l, &y, &cfg).unwrap();
        let d = dense_solve_oracle(&dense_system(&l, &cfg), y.as_slice()).unwrap();
        let err = s
            .ell
            .iter()
            .zip(&d)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn backbone_single_centroid() {
        let l = lap(1, &[]);
        let y = TargetVector::new(vec![1.0]).unwrap();
        let s = soft_harmonic_backbone(&l, &[5], &y, &SolverConfig::default()).unwrap();
        assert!((s.ell[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn backbone_with_unit_multiplicities_is_standard() {
        let (l, y) = random_graph(40, 9);
        let cfg = SolverConfig::default();
        let a = soft_harmonic(&l, &y, &cfg).unwrap();
        let b = soft_harmonic_backbone(&l, &vec![1; 40], &y, &cfg).unwrap();
        assert_eq!(a, b);
    }

    /// Replace every centroid by `v_i` copies; copies of different centroids
    /// keep the original pairwise weight, copies of the same centroid are not
    /// connected.
    fn expanded_solution(w: &CsrMatrix, v: &[usize], y: &[f64], cfg: &SolverConfig) -> Vec<f64> {
        let mut owner = Vec::new();
        for (i, &m) in v.iter().enumerate() {
            owner.extend(std::iter::repeat_n(i, m));
        }
        let n = owner.len();
        let mut trip = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let wij = w.get(owner[a], owner[b]);
                if owner[a] != owner[b] && wij != 0.0 {
                    trip.push((a, b, wij));
                }
            }
        }
        let l = Laplacian::from_weights(
            &CsrMatrix::from_triplets(n, trip).unwrap(),
            GraphSource::Custom,
        );
        let ye = TargetVector::new(owner.iter().map(|&i| y[i]).collect()).unwrap();
        let s = soft_harmonic(&l, &ye, cfg).unwrap();
        let mut first = vec![f64::NAN; v.len()];
        for (a, &i) in owner.iter().enumerate().rev() {
            first[i] = s.ell[a];
        }
        first
    }

    #[test]
    fn expansion_equivalence_three_centroids() {
        let w = CsrMatrix::from_triplets(
            3,
            [
                (0, 1, 0.8),
                (1, 0, 0.8),
                (1, 2, 0.3),
                (2, 1, 0.3),
                (0, 2, 0.05),
                (2, 0, 0.05),
            ],
        )
        .unwrap();
        let v = [2usize, 3, 1];
        let y = [1.0, -1.0, 1.0];
        let cfg = SolverConfig::default();
        let vf: Vec<f64> = v.iter().map(|&m| m as f64).collect();
        let lv = Laplacian::from_weights(&w.scale_symmetric(&vf).unwrap(), GraphSource::Custom);
        let s =
            soft_harmonic_backbone(&lv, &v, &TargetVector::new(y.to_vec()).unwrap(), &cfg).unwrap();
        let e = expanded_solution(&w, &v, &y, &cfg);
        for (a, b) in s.ell.iter().zip(&e) {
            assert!((a - b).abs() <= 10.0 * cfg.tol, "{a} vs {b}");
        }
    }

    #[test]
    fn isolated_node_damped_to_shrinkage_limit() {
        let l = lap(3, &[(0, 1, 1e-13), (1, 2, 1.0)]);
        let y = TargetVector::new(vec![1.0, -1.0, -1.0]).unwrap();
        for gamma in [0.5, 1.0, 3.0] {
            let cfg = SolverConfig::default().with_gamma(gamma);
            let s = soft_harmonic(&l, &y, &cfg).unwrap();
            assert!((s.ell[0] - cfg.shrinkage_bound()).abs() < 1e-11);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sign_symmetry(seed in any::<u64>(), n in 2usize..60) {
            let (l, y) = random_graph(n, seed);
            let cfg = SolverConfig::default();
            let a = soft_harmonic(&l, &y, &cfg).unwrap();
            let b = soft_harmonic(&l, &y.negated(), &cfg).unwrap();
            for (p, q) in a.ell.iter().zip(&b.ell) {
                prop_assert_eq!(*p, -*q);
            }
        }

        #[test]
        fn shrinkage_bound_holds(seed in any::<u64>(), n in 2usize..80, gamma in 0.01f64..5.0, c in 0.1f64..10.0) {
            let (l, y) = random_graph(n, seed);
            let cfg = SolverConfig { c_l: c, gamma_g: gamma, ..SolverConfig::default() };
            let s = soft_harmonic(&l, &y, &cfg).unwrap();
            let bound = cfg.shrinkage_bound();
            prop_assert!(s.ell.iter().all(|v| v.abs() <= bound + 1e-9));
            prop_assert!(s.ell.iter().all(|v| v.abs() < 1.0));
        }

        // The solution norm decays in gamma_g for any target vector; each
        // eigencomponent is divided by a growing shift.
        #[test]
        fn solution_norm_decreases_with_gamma(seed in any::<u64>(), n in 2usize..60) {
            let (l, y) = random_graph(n, seed);
            let mut prev = f64::INFINITY;
            for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
                let s = soft_harmonic(&l, &y, &SolverConfig::default().with_gamma(gamma)).unwrap();
                let nrm = norm(&s.ell);
                prop_assert!(nrm < prev);
                prev = nrm;
            }
        }

        // With same-sign targets every entry of the inverse is positive and
        // shrinks with gamma_g, so each |l_i| decreases.
        #[test]
        fn uniform_targets_decrease_pointwise(seed in any::<u64>(), n in 2usize..60) {
            let (l, _) = random_graph(n, seed);
            let y = TargetVector::new(vec![1.0; n]).unwrap();
            let mut prev = vec![f64::INFINITY; n];
            for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
                let s = soft_harmonic(&l, &y, &SolverConfig::default().with_gamma(gamma)).unwrap();
                for (a, b) in s.ell.iter().zip(&prev) {
                    prop_assert!(a.abs() < *b);
                }
                prev = s.ell;
            }
        }

        #[test]
        fn expansion_equivalence_random(seed in any::<u64>(), n in 2usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = FeatureMatrix::new(n, 2, data).unwrap();
            let g = build_knn_graph(&x, &FeatureWeights::uniform(2), 0.7, 3.min(n - 1)).unwrap();
            let v: Vec<usize> = (0..n).map(|_| rng.random_range(1..=10)).collect();
            let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let cfg = SolverConfig::default();
            let vf: Vec<f64> = v.iter().map(|&m| m as f64).collect();
            let lv = Laplacian::from_weights(&g.weights().scale_symmetric(&vf).unwrap(), GraphSource::Custom);
            let s = soft_harmonic_backbone(&lv, &v, &TargetVector::new(y.clone()).unwrap(), &cfg).unwrap();
            let e = expanded_solution(g.weights(), &v, &y, &cfg);
            for (a, b) in s.ell.iter().zip(&e) {
                prop_assert!((a - b).abs() <= 10.0 * cfg.tol, "{} vs {}", a, b);
            }
        }

        #[test]
        fn dense_and_iterative_agree_on_random_pd(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = &m * m.transpose() + DMatrix::identity(n, n) * n as f64;
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sparse = CsrMatrix::from_triplets(n, (0..n).flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| (i, j, a[(i, j)]))).unwrap();
            let it = conjugate_gradient(&sparse, &b, 1e-13, 10 * n).unwrap();
            let d = dense_solve_oracle(&a, &b).unwrap();
            for (p, q) in it.ell.iter().zip(&d) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }
    }
}
