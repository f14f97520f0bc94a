//! Small dense semidefinite programs in trace form.
//!
//! ```text
//! minimize    Tr(B Y)
//! subject to  Tr(A_i Y)  = a_i
//!             Tr(C_j Y) <= c_j
//!             Y PSD
//! ```
//!
//! `Y` may be declared block diagonal; the first block is the *lifted
//! block*, the one that stands for `z z^T`. Rank diagnostics and vector
//! extraction only look at that block.

mod ipm;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub use ipm::solve;

/// Below this leading-eigenvalue ratio the relaxation is reported as loose.
pub const LOOSE_RANK1_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub matrix: DMatrix<f64>,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(matrix: DMatrix<f64>, rhs: f64) -> Self {
        Self { matrix, rhs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    blocks: Vec<usize>,
    pub objective: DMatrix<f64>,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
}

impl SdpProblem {
    /// Single-block problem of dimension `dim` with a zero objective.
    pub fn new(dim: usize) -> Self {
        Self::with_blocks(vec![dim])
    }

    pub fn with_blocks(blocks: Vec<usize>) -> Self {
        let dim = blocks.iter().sum();
        Self {
            blocks,
            objective: DMatrix::zeros(dim, dim),
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.objective.nrows()
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn lifted_dim(&self) -> usize {
        self.blocks[0]
    }

    pub fn add_equality(&mut self, matrix: DMatrix<f64>, rhs: f64) {
        self.equalities.push(Constraint::new(matrix, rhs));
    }

    pub fn add_inequality(&mut self, matrix: DMatrix<f64>, rhs: f64) {
        self.inequalities.push(Constraint::new(matrix, rhs));
    }

    fn block_of(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
            .collect()
    }

    /// Checks shapes, exact symmetry and that no entry couples two blocks.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.blocks.contains(&0) {
            return Err(Error::Config("SDP blocks must be nonempty".into()));
        }
        let block_of = self.block_of();
        let all = std::iter::once(&self.objective)
            .chain(self.equalities.iter().map(|c| &c.matrix))
            .chain(self.inequalities.iter().map(|c| &c.matrix));
        for m in all {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, got: m.nrows().max(m.ncols()) });
            }
            for i in 0..n {
                for j in 0..n {
                    let v = m[(i, j)];
                    if !v.is_finite() || v != m[(j, i)] {
                        return Err(Error::Config(format!("SDP matrix not symmetric at ({i},{j})")));
                    }
                    if v != 0.0 && block_of[i] != block_of[j] {
                        return Err(Error::Config(format!("SDP entry ({i},{j}) couples two blocks")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `Tr(M Y)` for every constraint, objective first.
    pub fn evaluate(&self, y: &DMatrix<f64>) -> (f64, Vec<f64>, Vec<f64>) {
        let tr = |m: &DMatrix<f64>| m.component_mul(y).sum();
        (
            tr(&self.objective),
            self.equalities.iter().map(|c| tr(&c.matrix)).collect(),
            self.inequalities.iter().map(|c| tr(&c.matrix)).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpTolerances {
    /// Relative primal and dual infeasibility.
    pub feas: f64,
    /// Relative duality gap.
    pub gap: f64,
    /// Most negative eigenvalue accepted in a reported solution.
    pub psd: f64,
    pub max_iters: usize,
}

impl Default for SdpTolerances {
    fn default() -> Self {
        Self { feas: 1e-8, gap: 1e-8, psd: 1e-8, max_iters: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    /// Full (block diagonal) primal matrix.
    pub y: DMatrix<f64>,
    pub objective_value: f64,
    pub dual_value: f64,
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    pub min_eigenvalue: f64,
    /// `lambda_1 / lambda_2` of the lifted block.
    pub rank1_ratio: f64,
    pub iterations: usize,
    lifted_dim: usize,
}

impl SdpSolution {
    /// Wraps a primal matrix and computes its diagnostics against `problem`.
    pub fn from_matrix(problem: &SdpProblem, y: DMatrix<f64>, dual_value: f64, iterations: usize) -> Self {
        let (objective_value, eq, ineq) = problem.evaluate(&y);
        let max_eq_residual = eq
            .iter()
            .zip(&problem.equalities)
            .map(|(v, c)| (v - c.rhs).abs())
            .fold(0.0, f64::max);
        let max_ineq_violation = ineq
            .iter()
            .zip(&problem.inequalities)
            .map(|(v, c)| (v - c.rhs).max(0.0))
            .fold(0.0, f64::max);
        let mut min_eigenvalue = f64::INFINITY;
        let mut start = 0;
        for &size in problem.blocks() {
            let block = y.view((start, start), (size, size)).into_owned();
            let ev = block.symmetric_eigenvalues();
            min_eigenvalue = min_eigenvalue.min(ev.min());
            start += size;
        }
        let lifted_dim = problem.lifted_dim();
        let rank1_ratio = rank1_ratio(&y.view((0, 0), (lifted_dim, lifted_dim)).into_owned());
        Self {
            y,
            objective_value,
            dual_value,
            max_eq_residual,
            max_ineq_violation,
            min_eigenvalue,
            rank1_ratio,
            iterations,
            lifted_dim,
        }
    }

    pub fn lifted_block(&self) -> DMatrix<f64> {
        self.y.view((0, 0), (self.lifted_dim, self.lifted_dim)).into_owned()
    }

    pub fn is_loose(&self) -> bool {
        self.rank1_ratio < LOOSE_RANK1_RATIO
    }
}

/// `lambda_1 / lambda_2` of a symmetric matrix; infinite when the second
/// eigenvalue is numerically zero.
pub fn rank1_ratio(y: &DMatrix<f64>) -> f64 {
    let mut ev: Vec<f64> = y.symmetric_eigenvalues().iter().copied().collect();
    if ev.len() < 2 {
        return f64::INFINITY;
    }
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[1] <= 1e-12 * ev[0].abs().max(1.0) {
        f64::INFINITY
    } else {
        ev[0] / ev[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Candidate vector with the homogenizer coordinate removed.
    pub vector: DVector<f64>,
    pub rank1_ratio: f64,
    pub loose: bool,
}

fn drop_index(v: &DVector<f64>, h: usize) -> DVector<f64> {
    DVector::from_iterator(
        v.len() - 1,
        v.iter().enumerate().filter(|&(i, _)| i != h).map(|(_, &x)| x),
    )
}

/// Reads column `h` of the lifted block scaled by `1 / Y[h,h]`. Exact when
/// the block is `z z^T` with `z_h = 1`.
pub fn extract_vector(solution: &SdpSolution, homogenizer: usize) -> Result<Extraction> {
    let block = solution.lifted_block();
    if homogenizer >= block.nrows() {
        return Err(Error::DimensionMismatch { expected: block.nrows(), got: homogenizer });
    }
    let yhh = block[(homogenizer, homogenizer)];
    if yhh.is_nan() || yhh <= 1e-12 {
        return Err(Error::DegenerateSolution { index: homogenizer, value: yhh });
    }
    let col: DVector<f64> = block.column(homogenizer) / yhh;
    Ok(Extraction {
        vector: drop_index(&col, homogenizer),
        rank1_ratio: solution.rank1_ratio,
        loose: solution.is_loose(),
    })
}

/// Fallback extraction from the dominant eigenvector of the lifted block,
/// scaled so the homogenizer entry is one.
pub fn extract_dominant(solution: &SdpSolution, homogenizer: usize) -> Result<Extraction> {
    let block = solution.lifted_block();
    if homogenizer >= block.nrows() {
        return Err(Error::DimensionMismatch { expected: block.nrows(), got: homogenizer });
    }
    let eig = SymmetricEigen::new(block);
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top).into_owned();
    let vh = v[homogenizer];
    if vh.abs() < 1e-12 {
        return Err(Error::DegenerateSolution { index: homogenizer, value: vh });
    }
    Ok(Extraction {
        vector: drop_index(&(v / vh), homogenizer),
        rank1_ratio: solution.rank1_ratio,
        loose: solution.is_loose(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(d: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(d))
    }

    #[test]
    fn decoupled_diagonal_problem() {
        let mut p = SdpProblem::new(2);
        p.objective = diag(&[1.0, 0.0]);
        p.add_equality(diag(&[0.0, 1.0]), 1.0);
        let sol = solve(&p, &SdpTolerances::default()).unwrap();
        assert!(sol.objective_value.abs() < 1e-7, "{}", sol.objective_value);
        assert!(sol.y[(0, 0)].abs() < 1e-7);
        assert!((sol.y[(1, 1)] - 1.0).abs() < 1e-7);
        assert!(sol.y[(0, 1)].abs() < 1e-6);
        assert!(sol.min_eigenvalue >= -1e-8);
    }

    #[test]
    fn negative_trace_is_infeasible() {
        let mut p = SdpProblem::new(3);
        p.add_equality(DMatrix::identity(3, 3), -1.0);
        assert!(matches!(solve(&p, &SdpTolerances::default()), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn inequality_bound_problem() {
        // max Y11 subject to Tr(Y) <= 2, Y22 = 1  ->  Y11 = 1.
        let mut p = SdpProblem::new(2);
        p.objective = diag(&[-1.0, 0.0]);
        p.add_inequality(DMatrix::identity(2, 2), 2.0);
        p.add_equality(diag(&[0.0, 1.0]), 1.0);
        let sol = solve(&p, &SdpTolerances::default()).unwrap();
        assert!((sol.objective_value + 1.0).abs() < 1e-7);
        assert!(sol.max_ineq_violation < 1e-8);
    }

    #[test]
    fn max_cut_triangle() {
        // min sum_{i<j} Y_ij with unit diagonal: optimum -3/2 at the 120-degree configuration.
        let n = 3;
        let mut p = SdpProblem::new(n);
        p.objective = (DMatrix::from_element(n, n, 1.0) - DMatrix::identity(n, n)) * 0.5;
        for i in 0..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, i)] = 1.0;
            p.add_equality(e, 1.0);
        }
        let sol = solve(&p, &SdpTolerances::default()).unwrap();
        assert!((sol.objective_value + 1.5).abs() < 1e-7);
        assert!((sol.dual_value + 1.5).abs() < 1e-7);
    }

    #[test]
    fn block_diagonal_problem() {
        // Blocks [2, 1]; minimize Y00 + 2 Y22 with Y00 + Y22 >= 1 written as -Y00 - Y22 <= -1.
        let mut p = SdpProblem::with_blocks(vec![2, 1]);
        p.objective = diag(&[1.0, 0.0, 2.0]);
        p.add_inequality(diag(&[-1.0, 0.0, -1.0]), -1.0);
        p.add_equality(diag(&[0.0, 1.0, 0.0]), 1.0);
        let sol = solve(&p, &SdpTolerances::default()).unwrap();
        assert!((sol.objective_value - 1.0).abs() < 1e-7);
        assert_eq!(sol.y[(0, 2)], 0.0);
    }

    #[test]
    fn cross_block_entries_are_rejected() {
        let mut p = SdpProblem::with_blocks(vec![1, 1]);
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        p.add_equality(m, 0.0);
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn asymmetric_data_is_rejected() {
        let mut p = SdpProblem::new(2);
        p.objective[(0, 1)] = 1.0;
        assert!(p.validate().is_err());
    }

    fn wrap(y: DMatrix<f64>) -> SdpSolution {
        let p = SdpProblem::new(y.nrows());
        SdpSolution::from_matrix(&p, y, 0.0, 0)
    }

    #[test]
    fn rank_one_extraction() {
        let z = DVector::from_column_slice(&[0.3, 0.7, 1.0]);
        let sol = wrap(&z * z.transpose());
        let e = extract_vector(&sol, 2).unwrap();
        assert!((e.vector[0] - 0.3).abs() < 1e-15);
        assert!((e.vector[1] - 0.7).abs() < 1e-15);
        assert!(!e.loose);
        assert!(sol.rank1_ratio.is_infinite());
    }

    #[test]
    fn identity_extraction_is_loose() {
        let sol = wrap(DMatrix::identity(3, 3));
        let e = extract_vector(&sol, 2).unwrap();
        assert_eq!(e.vector.as_slice(), &[0.0, 0.0]);
        assert_eq!(e.rank1_ratio, 1.0);
        assert!(e.loose);
    }

    #[test]
    fn zero_homogenizer_is_degenerate() {
        let sol = wrap(diag(&[1.0, 0.0]));
        assert!(matches!(extract_vector(&sol, 1), Err(Error::DegenerateSolution { index: 1, .. })));
    }

    #[test]
    fn dominant_extraction_recovers_rank_one() {
        let z = DVector::from_column_slice(&[-0.4, 2.0, 1.0]);
        let sol = wrap(&z * z.transpose());
        let e = extract_dominant(&sol, 2).unwrap();
        assert!((e.vector[0] + 0.4).abs() < 1e-12);
        assert!((e.vector[1] - 2.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn extraction_reproduces_rank_one_factor(
            entries in proptest::collection::vec(-5.0f64..5.0, 1..12),
            h_seed in 0usize..100,
        ) {
            let n = entries.len() + 1;
            let h = h_seed % n;
            let mut z = Vec::with_capacity(n);
            let mut it = entries.iter();
            for i in 0..n {
                z.push(if i == h { 1.0 } else { *it.next().unwrap() });
            }
            let z = DVector::from_vec(z);
            let e = extract_vector(&wrap(&z * z.transpose()), h).unwrap();
            let expected = drop_index(&z, h);
            for (a, b) in e.vector.iter().zip(expected.iter()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}
