//! The (u, q) block system, direct sparse LU, and condition estimates.
//!
//! Factorization is faer's sparse LU (COLAMD column ordering, partial
//! pivoting) run sequentially so results do not depend on thread count.
//! Because the supernodal factors do not expose their pivots, numerical
//! singularity is detected with a 1-norm reciprocal condition estimate
//! (Hager / Higham) computed right after factorization.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, LuRef, LuSymbolicParams, NumericLu, SymbolicLu};
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par};

use crate::assembly::{AssembledForms, SparseMatrix};
use crate::error::{Error, Result};
use crate::schemes::SchemeConfig;

/// Reciprocal condition numbers below this are treated as singular: the
/// matrix is singular to working precision.
pub const RCOND_SINGULAR: f64 = f64::EPSILON;

/// Acceptance bar on `|A x - b| / |b|` for a solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

const MAX_REFINEMENT_STEPS: usize = 3;

/// 2x2 block system; the unknown vector is `[u; q]`.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub k_uu: SparseMatrix,
    pub k_uq: SparseMatrix,
    pub k_qu: SparseMatrix,
    pub k_qq: SparseMatrix,
    pub rhs_u: Vec<f64>,
    pub rhs_q: Vec<f64>,
}

impl BlockSystem {
    pub fn n_u(&self) -> usize {
        self.k_uu.nrows()
    }

    pub fn n_q(&self) -> usize {
        self.k_qq.nrows()
    }

    fn check(&self) -> Result<()> {
        let (nu, nq) = (self.n_u(), self.n_q());
        let dims = [
            ("K_uu", &self.k_uu, nu, nu),
            ("K_uq", &self.k_uq, nu, nq),
            ("K_qu", &self.k_qu, nq, nu),
            ("K_qq", &self.k_qq, nq, nq),
        ];
        for (name, m, r, c) in dims {
            if m.nrows() != r || m.ncols() != c {
                return Err(Error::Dimension(format!("{name} is {}x{}, expected {r}x{c}", m.nrows(), m.ncols())));
            }
        }
        if self.rhs_u.len() != nu || self.rhs_q.len() != nq {
            return Err(Error::Dimension("right-hand side lengths".into()));
        }
        Ok(())
    }

    /// The assembled `(n_u + n_q)`-square matrix.
    pub fn monolithic(&self) -> Result<SparseMatrix> {
        self.check()?;
        let blocks = [&self.k_uu, &self.k_uq, &self.k_qu, &self.k_qq];
        if blocks.iter().all(|b| b.same_pattern(&self.k_uu)) {
            let pattern = std::sync::Arc::new(self.k_uu.pattern().tiled_2x2());
            let mut values = Vec::with_capacity(pattern.nnz());
            for (left, right) in [(&self.k_uu, &self.k_uq), (&self.k_qu, &self.k_qq)] {
                let rp = left.pattern().row_ptr();
                for i in 0..left.nrows() {
                    values.extend_from_slice(&left.values()[rp[i]..rp[i + 1]]);
                    values.extend_from_slice(&right.values()[rp[i]..rp[i + 1]]);
                }
            }
            return SparseMatrix::from_parts(pattern, values);
        }
        let nu = self.n_u();
        let mut t = Vec::new();
        for (m, r0, c0) in [(&self.k_uu, 0, 0), (&self.k_uq, 0, nu), (&self.k_qu, nu, 0), (&self.k_qq, nu, nu)] {
            for i in 0..m.nrows() {
                t.extend(m.row(i).map(|(j, v)| (r0 + i, c0 + j, v)));
            }
        }
        let n = nu + self.n_q();
        SparseMatrix::from_triplets(n, n, &t)
    }

    pub fn monolithic_rhs(&self) -> Vec<f64> {
        let mut r = self.rhs_u.clone();
        r.extend_from_slice(&self.rhs_q);
        r
    }
}

/// Blocks of one implicit (Euler-type) stage with step coefficient `tau_eff`:
///
/// ```text
/// [ M + tau K_perp        tau K_par          ] [u]   [rhs_u]
/// [ K_par           -eps K_par - alpha M     ] [q] = [  0  ]
/// ```
///
/// with `alpha = h^(k+1)` for the stabilized variants and 0 otherwise.
pub fn build_block_system(
    forms: &AssembledForms,
    cfg: &SchemeConfig,
    tau_eff: f64,
    h: f64,
    rhs_u: Vec<f64>,
) -> Result<BlockSystem> {
    let n = forms.mass.nrows();
    if rhs_u.len() != n {
        return Err(Error::Dimension(format!("rhs_u has {} entries, expected {n}", rhs_u.len())));
    }
    let alpha = cfg.penalty_coefficient(h);
    let m = &forms.mass;
    Ok(BlockSystem {
        k_uu: SparseMatrix::linear_combination(&[(1.0, m), (tau_eff, &forms.k_perp)])?,
        k_uq: SparseMatrix::linear_combination(&[(tau_eff, &forms.k_par)])?,
        k_qu: forms.k_par.clone(),
        k_qq: SparseMatrix::linear_combination(&[(-cfg.epsilon, &forms.k_par), (-alpha, m)])?,
        rhs_u,
        rhs_q: vec![0.0; n],
    })
}

/// What to do when the factorized matrix is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularPolicy {
    /// Return [`Error::Singular`].
    #[default]
    Reject,
    /// Keep the factorization and mark it ill-conditioned.
    Flag,
}

/// Reusable sparse LU factorization of a square matrix.
pub struct Factorization {
    matrix: SparseMatrix,
    /// Power-of-two row and column scalings; the LU factors are those of
    /// `diag(row_scale) A diag(col_scale)`.
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
    scaled_norm_1: f64,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
    policy: SingularPolicy,
    rcond: f64,
    ill_conditioned: bool,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("n", &self.n())
            .field("rcond", &self.rcond)
            .field("ill_conditioned", &self.ill_conditioned)
            .finish_non_exhaustive()
    }
}

pub fn factorize(matrix: &SparseMatrix) -> Result<Factorization> {
    Factorization::new(matrix, SingularPolicy::Reject)
}

impl Factorization {
    pub fn new(matrix: &SparseMatrix, policy: SingularPolicy) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Dimension(format!("cannot factorize a {}x{} matrix", matrix.nrows(), matrix.ncols())));
        }
        let (col_ptr, row_idx, _) = matrix.to_csc();
        let n = matrix.nrows();
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let symbolic = factorize_symbolic_lu(sym, LuSymbolicParams::default())
            .map_err(|e| Error::Solver(format!("symbolic factorization: {e:?}")))?;
        let mut f = Self {
            matrix: matrix.clone(),
            row_scale: Vec::new(),
            col_scale: Vec::new(),
            scaled_norm_1: 0.0,
            col_ptr,
            row_idx,
            symbolic,
            numeric: NumericLu::new(),
            policy,
            rcond: 0.0,
            ill_conditioned: false,
        };
        f.numeric_phase()?;
        Ok(f)
    }

    /// Refactor a matrix with the same sparsity pattern, reusing the
    /// symbolic analysis.
    pub fn refactor(&mut self, matrix: &SparseMatrix) -> Result<()> {
        if !matrix.same_pattern(&self.matrix) {
            *self = Self::new(matrix, self.policy)?;
            return Ok(());
        }
        self.matrix = matrix.clone();
        self.numeric_phase()
    }

    fn numeric_phase(&mut self) -> Result<()> {
        let n = self.n();
        let (row_scale, col_scale) = equilibrate(&self.matrix);
        let mut scaled = self.matrix.clone();
        {
            let pattern = scaled.pattern().clone();
            let (rp, ci) = (pattern.row_ptr(), pattern.col_idx());
            let vals = scaled.values_mut();
            for i in 0..n {
                for k in rp[i]..rp[i + 1] {
                    vals[k] *= row_scale[i] * col_scale[ci[k]];
                }
            }
        }
        self.scaled_norm_1 = scaled.norm_1();
        self.row_scale = row_scale;
        self.col_scale = col_scale;
        let (_, _, values) = scaled.to_csc();
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &self.col_ptr, None, &self.row_idx);
        let a = SparseColMatRef::new(sym, &values);
        let req = self.symbolic.factorize_numeric_lu_scratch::<f64>(Par::Seq, Default::default());
        let mut mem = MemBuffer::new(req);
        let res = self.symbolic.factorize_numeric_lu(
            &mut self.numeric,
            a,
            Par::Seq,
            MemStack::new(&mut mem),
            Default::default(),
        );
        match res {
            Ok(_) => {}
            Err(LuError::SymbolicSingular { index }) => return Err(Error::Singular { location: index, rcond: 0.0 }),
            Err(e) => return Err(Error::Solver(format!("numeric factorization: {e:?}"))),
        }
        let (rcond, location) = self.rcond_estimate();
        self.rcond = rcond;
        self.ill_conditioned = !(rcond >= RCOND_SINGULAR);
        if self.ill_conditioned && self.policy == SingularPolicy::Reject {
            return Err(Error::Singular { location, rcond });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Estimated reciprocal 1-norm condition number.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.ill_conditioned
    }

    fn lu(&self) -> LuRef<'_, usize, f64> {
        LuRef::new_unchecked(&self.symbolic, &self.numeric)
    }

    /// One solve with `A` (or `A^T`) through the scaled factors, with no
    /// residual check.
    fn raw_solve(&self, x: &mut [f64], transpose: bool) {
        let (pre, post) =
            if transpose { (&self.col_scale, &self.row_scale) } else { (&self.row_scale, &self.col_scale) };
        x.iter_mut().zip(pre).for_each(|(v, s)| *v *= s);
        self.lu_solve(x, transpose);
        x.iter_mut().zip(post).for_each(|(v, s)| *v *= s);
    }

    /// One solve with the scaled matrix.
    fn lu_solve(&self, x: &mut [f64], transpose: bool) {
        let n = self.n();
        let req = self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq);
        let mut mem = MemBuffer::new(req);
        let rhs = MatMut::from_column_major_slice_mut(x, n, 1);
        let stack = MemStack::new(&mut mem);
        if transpose {
            self.lu().solve_transpose_in_place_with_conj(Conj::No, rhs, Par::Seq, stack);
        } else {
            self.lu().solve_in_place_with_conj(Conj::No, rhs, Par::Seq, stack);
        }
    }

    /// Hager's 1-norm estimate of `|A^-1|`, returning `rcond` and the index
    /// where the last `A^-1 x` peaked.
    fn rcond_estimate(&self) -> (f64, usize) {
        let n = self.n();
        if n == 0 {
            return (1.0, 0);
        }
        let norm_a = self.scaled_norm_1;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0f64;
        let mut peak = 0;
        for _ in 0..5 {
            let mut y = x.clone();
            self.lu_solve(&mut y, false);
            if y.iter().any(|v| !v.is_finite()) {
                return (0.0, argmax_abs(&x));
            }
            let norm_y: f64 = y.iter().map(|v| v.abs()).sum();
            peak = argmax_abs(&y);
            if norm_y <= est {
                break;
            }
            est = norm_y;
            let mut z: Vec<f64> = y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
            self.lu_solve(&mut z, true);
            let j = argmax_abs(&z);
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if z[j].abs() <= ztx {
                break;
            }
            x.iter_mut().for_each(|v| *v = 0.0);
            x[j] = 1.0;
        }
        // Higham's alternating-sign probe guards against cancellation.
        let mut alt: Vec<f64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                s * (1.0 + i as f64 / (n as f64 - 1.0).max(1.0))
            })
            .collect();
        self.lu_solve(&mut alt, false);
        let alt_est = 2.0 * alt.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
        if alt_est > est {
            est = alt_est;
            peak = argmax_abs(&alt);
        }
        if !est.is_finite() || norm_a == 0.0 {
            return (0.0, peak);
        }
        (1.0 / (norm_a * est), peak)
    }

    fn solve_impl(&self, b: &[f64], transpose: bool) -> Result<(Vec<f64>, f64)> {
        let n = self.n();
        if b.len() != n {
            return Err(Error::Dimension(format!("rhs has {} entries, expected {n}", b.len())));
        }
        let apply = |x: &[f64]| {
            if transpose {
                self.matrix.matvec_transpose(x)
            } else {
                self.matrix.matvec(x)
            }
        };
        let norm_b = norm2(b);
        let mut x = b.to_vec();
        self.raw_solve(&mut x, transpose);
        if norm_b == 0.0 {
            return Ok((x, 0.0));
        }
        let mut r: Vec<f64> = b.iter().zip(apply(&x)).map(|(bi, ai)| bi - ai).collect();
        let mut rel = norm2(&r) / norm_b;
        for _ in 0..MAX_REFINEMENT_STEPS {
            if rel <= RESIDUAL_TOL || !rel.is_finite() {
                break;
            }
            self.raw_solve(&mut r, transpose);
            let candidate: Vec<f64> = x.iter().zip(&r).map(|(a, d)| a + d).collect();
            let rc: Vec<f64> = b.iter().zip(apply(&candidate)).map(|(bi, ai)| bi - ai).collect();
            let rel_c = norm2(&rc) / norm_b;
            if !(rel_c < rel) {
                break;
            }
            x = candidate;
            r = rc;
            rel = rel_c;
        }
        if !(rel <= RESIDUAL_TOL) && self.policy == SingularPolicy::Reject {
            return Err(Error::Solver(format!("relative residual {rel:.3e} exceeds {RESIDUAL_TOL:e}")));
        }
        Ok((x, rel))
    }

    /// Solve `A x = b`. Under [`SingularPolicy::Reject`] the relative
    /// residual must not exceed [`RESIDUAL_TOL`].
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(b, false).map(|(x, _)| x)
    }

    /// Solve and also return the final relative residual.
    pub fn solve_with_residual(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.solve_impl(b, false)
    }

    /// Solve `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(b, true).map(|(x, _)| x)
    }
}

/// Row then column scaling by powers of two bringing every row and column
/// maximum to within a factor 2 of 1. Powers of two keep the scaling exact.
fn equilibrate(a: &SparseMatrix) -> (Vec<f64>, Vec<f64>) {
    let pow2 = |m: f64| if m > 0.0 && m.is_finite() { (-m.log2().round()).exp2() } else { 1.0 };
    let row: Vec<f64> = (0..a.nrows()).map(|i| pow2(a.row(i).fold(0.0, |m, (_, v)| m.max(v.abs())))).collect();
    let mut col_max = vec![0.0f64; a.ncols()];
    for (i, r) in row.iter().enumerate() {
        for (j, v) in a.row(i) {
            col_max[j] = col_max[j].max((v * r).abs());
        }
    }
    (row, col_max.into_iter().map(pow2).collect())
}

fn argmax_abs(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, -1.0), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) }).0
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

const POWER_MAX_ITERS: usize = 1000;
const POWER_MIN_ITERS: usize = 30;
const POWER_REL_CHANGE: f64 = 1e-4;

/// Power iteration for the dominant eigenvalue of a symmetric positive
/// semidefinite operator.
fn power_iteration(n: usize, mut op: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (1.7 * i as f64 + 0.3).sin()).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for it in 0..POWER_MAX_ITERS {
        let mut w = op(&v)?;
        let next = normalize(&mut w);
        if !next.is_finite() {
            return Ok(f64::INFINITY);
        }
        if next == 0.0 {
            return Ok(0.0);
        }
        let change = (next - lambda).abs() / next;
        lambda = next;
        v = w;
        if it + 1 >= POWER_MIN_ITERS && change < POWER_REL_CHANGE {
            break;
        }
    }
    Ok(lambda)
}

/// Estimate of the 2-norm condition number `sigma_max / sigma_min`, by power
/// iteration on `A^T A` and on `A^-1 A^-T` through an LU factorization.
/// Singular matrices give `f64::INFINITY`.
pub fn estimate_condition(matrix: &SparseMatrix) -> Result<f64> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::Dimension("condition number of a non-square matrix".into()));
    }
    let n = matrix.nrows();
    if n == 0 {
        return Ok(1.0);
    }
    let fact = match Factorization::new(matrix, SingularPolicy::Flag) {
        Ok(f) => f,
        Err(Error::Singular { .. }) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    if fact.rcond() == 0.0 {
        return Ok(f64::INFINITY);
    }
    let smax2 = power_iteration(n, |v| Ok(matrix.matvec_transpose(&matrix.matvec(v))))?;
    let inv2 = power_iteration(n, |v| {
        let mut w = v.to_vec();
        fact.raw_solve(&mut w, true);
        fact.raw_solve(&mut w, false);
        Ok(w)
    })?;
    let cond = (smax2 * inv2).sqrt();
    Ok(if cond.is_finite() { cond } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve_and_condition() {
        let i = SparseMatrix::identity(5);
        let f = factorize(&i).unwrap();
        let b = vec![1.0, -2.0, 3.0, 0.5, 7.0];
        assert_eq!(f.solve(&b).unwrap(), b);
        assert!((estimate_condition(&i).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn diagonal_condition() {
        let d = SparseMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1e-6]]);
        let c = estimate_condition(&d).unwrap();
        assert!((c / 1e6 - 1.0).abs() < 0.1, "{c}");
    }

    #[test]
    fn exactly_singular_is_rejected() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0, 0.0], vec![2.0, 4.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert!(matches!(factorize(&a), Err(Error::Singular { .. })));
        assert_eq!(estimate_condition(&a).unwrap(), f64::INFINITY);
        let f = Factorization::new(&a, SingularPolicy::Flag);
        if let Ok(f) = f {
            assert!(f.is_ill_conditioned());
        }
    }

    #[test]
    fn transpose_solve() {
        let a = SparseMatrix::from_dense(&[vec![4.0, 1.0], vec![2.0, 3.0]]);
        let f = factorize(&a).unwrap();
        let x = f.solve_transpose(&[6.0, 4.0]).unwrap();
        // A^T = [[4,2],[1,3]]; solution (1, 1)
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn refactor_same_pattern() {
        let a = SparseMatrix::from_dense(&[vec![4.0, 1.0], vec![2.0, 3.0]]);
        let mut f = factorize(&a).unwrap();
        let mut b = a.clone();
        b.values_mut().iter_mut().for_each(|v| *v *= 2.0);
        f.refactor(&b).unwrap();
        let x = f.solve(&[10.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tiled_monolithic_matches_triplet_path() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        let sys = BlockSystem {
            k_uu: a.clone(),
            k_uq: a.clone(),
            k_qu: a.clone(),
            k_qq: a.clone(),
            rhs_u: vec![1.0, 2.0],
            rhs_q: vec![0.0, 0.0],
        };
        let m = sys.monolithic().unwrap();
        assert_eq!(
            m.to_dense(),
            vec![
                vec![1.0, 2.0, 1.0, 2.0],
                vec![0.0, 3.0, 0.0, 3.0],
                vec![1.0, 2.0, 1.0, 2.0],
                vec![0.0, 3.0, 0.0, 3.0],
            ]
        );
        assert_eq!(sys.monolithic_rhs(), vec![1.0, 2.0, 0.0, 0.0]);
    }
}
