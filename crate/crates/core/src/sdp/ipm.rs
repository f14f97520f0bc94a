//! Infeasible primal-dual path-following method with the HKM search
//! direction and Mehrotra's predictor-corrector.
//!
//! Inequalities get a nonnegative slack each, so the cone is a product of
//! PSD blocks and an orthant. Constraint matrices are stored sparsely; the
//! Schur complement `M_ij = Tr(A_i X A_j Z^-1)` is formed entry by entry,
//! which is cheap because every lifted constraint touches a handful of entries.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{SdpProblem, SdpSolution, SdpTolerances};
use crate::error::{Error, Result};

const STEP_FRACTION: f64 = 0.98;
const REFINE_STEPS: usize = 2;

#[derive(Debug, Clone, Copy)]
struct Entry {
    block: usize,
    p: usize,
    q: usize,
    v: f64,
}

type Blocks = Vec<DMatrix<f64>>;

struct Layout {
    offsets: Vec<usize>,
    sizes: Vec<usize>,
}

impl Layout {
    fn sparsify(&self, m: &DMatrix<f64>) -> Vec<Entry> {
        let mut out = Vec::new();
        for (block, (&o, &size)) in self.offsets.iter().zip(&self.sizes).enumerate() {
            for q in 0..size {
                for p in 0..size {
                    let v = m[(o + p, o + q)];
                    if v != 0.0 {
                        out.push(Entry { block, p, q, v });
                    }
                }
            }
        }
        out
    }

    fn split(&self, m: &DMatrix<f64>) -> Blocks {
        self.offsets
            .iter()
            .zip(&self.sizes)
            .map(|(&o, &s)| m.view((o, o), (s, s)).into_owned())
            .collect()
    }

    fn scaled_identity(&self, v: f64) -> Blocks {
        self.sizes.iter().map(|&s| DMatrix::identity(s, s) * v).collect()
    }

    fn zeros(&self) -> Blocks {
        self.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect()
    }

    fn assemble(&self, blocks: &Blocks) -> DMatrix<f64> {
        let n = self.sizes.iter().sum();
        let mut out = DMatrix::zeros(n, n);
        for (b, &o) in blocks.iter().zip(&self.offsets) {
            out.view_mut((o, o), b.shape()).copy_from(b);
        }
        out
    }
}

fn trace(a: &[Entry], x: &Blocks) -> f64 {
    a.iter().map(|e| e.v * x[e.block][(e.q, e.p)]).sum()
}

fn accumulate(out: &mut Blocks, a: &[Entry], coeff: f64) {
    if coeff == 0.0 {
        return;
    }
    for e in a {
        out[e.block][(e.p, e.q)] += coeff * e.v;
    }
}

fn inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob2(a: &Blocks) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum()
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Largest `alpha` keeping `x + alpha dx` PSD; infinite if `dx` is PSD.
fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    if x.nrows() == 1 {
        return if dx[(0, 0)] < 0.0 { -x[(0, 0)] / dx[(0, 0)] } else { f64::INFINITY };
    }
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(a) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(w) = l.solve_lower_triangular(&a.transpose()) else {
        return 0.0;
    };
    let lmin = sym(w).symmetric_eigenvalues().min();
    if lmin >= 0.0 { f64::INFINITY } else { -1.0 / lmin }
}

fn max_step_orthant(s: &DVector<f64>, ds: &DVector<f64>) -> f64 {
    s.iter()
        .zip(ds.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn max_eig(blocks: &Blocks) -> f64 {
    blocks
        .iter()
        .map(|b| b.clone().symmetric_eigenvalues().max())
        .fold(f64::NEG_INFINITY, f64::max)
}

struct Direction {
    dx: Blocks,
    dz: Blocks,
    dy: DVector<f64>,
    ds: DVector<f64>,
    dzl: DVector<f64>,
}

/// Lowest-merit iterate seen so far.
struct Best {
    merit: f64,
    x: Blocks,
    dual_value: f64,
    iteration: usize,
    residuals: [f64; 3],
}

struct Iterate {
    x: Blocks,
    z: Blocks,
    y: DVector<f64>,
    s: DVector<f64>,
    zl: DVector<f64>,
}

struct Ipm {
    layout: Layout,
    c: Blocks,
    rows: Vec<Vec<Entry>>,
    b: DVector<f64>,
    n_eq: usize,
    ones: Blocks,
}

/// Per-iteration quantities shared by the predictor and corrector solves.
struct Step<'a> {
    it: &'a Iterate,
    zinv: Blocks,
    schur: Cholesky<f64, Dyn>,
    /// Unregularized Schur matrix, used for iterative refinement.
    schur_mat: DMatrix<f64>,
    /// Cholesky factor of `<A_i, X A_j X>` over the equality rows.
    projector: Option<Cholesky<f64, Dyn>>,
    rp: DVector<f64>,
    rd: Blocks,
    rdl: DVector<f64>,
    x_rd_zinv: Blocks,
}

impl Ipm {
    fn new(problem: &SdpProblem) -> Self {
        let sizes = problem.blocks().to_vec();
        let offsets = sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let layout = Layout { offsets, sizes };
        let c = layout.split(&problem.objective);
        let rows: Vec<Vec<Entry>> = problem
            .equalities
            .iter()
            .chain(&problem.inequalities)
            .map(|con| layout.sparsify(&con.matrix))
            .collect();
        let b = DVector::from_iterator(
            problem.equalities.len() + problem.inequalities.len(),
            problem.equalities.iter().chain(&problem.inequalities).map(|con| con.rhs),
        );
        let ones = layout.scaled_identity(1.0);
        Self { layout, c, rows, b, n_eq: problem.equalities.len(), ones }
    }

    /// Factor of the X-scaled equality Gram matrix, ridged if singular, with
    /// the unscaled Gram matrix as a last resort.
    fn projector(&self, x: &Blocks) -> Option<Cholesky<f64, Dyn>> {
        let mut g = self.scaled_gram(self.n_eq, x, x);
        if let Some(ch) = Cholesky::new(g.clone()) {
            return Some(ch);
        }
        let ridge = 1e-12 * g.diagonal().amax();
        for i in 0..self.n_eq {
            g[(i, i)] += ridge;
        }
        Cholesky::new(g).or_else(|| Cholesky::new(self.scaled_gram(self.n_eq, &self.ones, &self.ones)))
    }

    /// `M_ij = <A_i, L A_j R>` over the first `m` rows.
    fn scaled_gram(&self, m: usize, left: &Blocks, right: &Blocks) -> DMatrix<f64> {
        let mut mat = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut val = 0.0;
                for e in &self.rows[i] {
                    let (lb, rb) = (&left[e.block], &right[e.block]);
                    for f in self.rows[j].iter().filter(|f| f.block == e.block) {
                        val += e.v * f.v * lb[(e.q, f.p)] * rb[(f.q, e.p)];
                    }
                }
                mat[(i, j)] = val;
                mat[(j, i)] = val;
            }
        }
        mat
    }

    fn n_ineq(&self) -> usize {
        self.rows.len() - self.n_eq
    }

    fn adjoint(&self, y: &DVector<f64>) -> Blocks {
        let mut out = self.layout.zeros();
        for (row, &yi) in self.rows.iter().zip(y.iter()) {
            accumulate(&mut out, row, yi);
        }
        out
    }

    fn schur(&self, x: &Blocks, zinv: &Blocks, d: &DVector<f64>) -> Result<(Cholesky<f64, Dyn>, DMatrix<f64>)> {
        let m = self.rows.len();
        let mut mat = self.scaled_gram(m, x, zinv);
        for (j, &dj) in d.iter().enumerate() {
            mat[(self.n_eq + j, self.n_eq + j)] += dj;
        }
        if let Some(ch) = Cholesky::new(mat.clone()) {
            return Ok((ch, mat));
        }
        let mut ridged = mat.clone();
        let ridge = 1e-12 * mat.diagonal().amax().max(1.0);
        for i in 0..m {
            ridged[(i, i)] += ridge;
        }
        Cholesky::new(ridged)
            .map(|ch| (ch, mat))
            .ok_or_else(|| Error::Numerical("Schur complement not positive definite".into()))
    }

    fn direction(&self, st: &Step<'_>, g: &Blocks, rcl: &DVector<f64>) -> Direction {
        let it = st.it;
        let mut rhs = DVector::zeros(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            rhs[i] = st.rp[i] - trace(row, g);
        }
        for j in 0..self.n_ineq() {
            let d = it.s[j] / it.zl[j];
            rhs[self.n_eq + j] -= rcl[j] / it.zl[j] - d * st.rdl[j];
        }
        let mut dy = st.schur.solve(&rhs);
        for _ in 0..REFINE_STEPS {
            let r = &rhs - &st.schur_mat * &dy;
            dy += st.schur.solve(&r);
        }
        let h = self.adjoint(&dy);
        let mut dx: Blocks = (0..g.len())
            .map(|b| sym(&g[b] + &it.x[b] * &h[b] * &st.zinv[b]))
            .collect();
        // Cancellation in X H Z^-1 leaves A(dx) != rp; correct within range(X).
        if let Some(proj) = &st.projector {
            let r = DVector::from_fn(self.n_eq, |i, _| st.rp[i] - trace(&self.rows[i], &dx));
            let c = proj.solve(&r);
            let mut k = self.layout.zeros();
            for (row, &ci) in self.rows.iter().zip(c.iter()) {
                accumulate(&mut k, row, ci);
            }
            for b in 0..dx.len() {
                dx[b] += sym(&it.x[b] * &k[b] * &it.x[b]);
            }
        }
        let dz = st.rd.iter().zip(&h).map(|(r, hb)| r - hb).collect();
        let dzl = DVector::from_fn(self.n_ineq(), |j, _| st.rdl[j] - dy[self.n_eq + j]);
        let ds = DVector::from_fn(self.n_ineq(), |j, _| {
            st.rp[self.n_eq + j] - trace(&self.rows[self.n_eq + j], &dx)
        });
        Direction { dx, dz, dy, ds, dzl }
    }

    fn step_lengths(&self, it: &Iterate, d: &Direction) -> (f64, f64) {
        let mut ap = max_step_orthant(&it.s, &d.ds);
        let mut ad = max_step_orthant(&it.zl, &d.dzl);
        for b in 0..it.x.len() {
            ap = ap.min(max_step_psd(&it.x[b], &d.dx[b]));
            ad = ad.min(max_step_psd(&it.z[b], &d.dz[b]));
        }
        (ap, ad)
    }

    fn solution(&self, problem: &SdpProblem, it: &Iterate, iterations: usize) -> SdpSolution {
        let y = self.layout.assemble(&it.x);
        SdpSolution::from_matrix(problem, y, self.b.dot(&it.y), iterations)
    }

    fn initial(&self) -> Iterate {
        let n = self.layout.sizes.iter().sum::<usize>() as f64;
        let a_norm = |row: &[Entry]| row.iter().map(|e| e.v * e.v).sum::<f64>().sqrt();
        let mut xi = 10f64.max(n.sqrt());
        let mut eta = 10f64.max(n.sqrt()).max(frob2(&self.c).sqrt());
        for (row, &bi) in self.rows.iter().zip(self.b.iter()) {
            let an = a_norm(row);
            xi = xi.max(n * (1.0 + bi.abs()) / (1.0 + an));
            eta = eta.max(an);
        }
        Iterate {
            x: self.layout.scaled_identity(xi),
            z: self.layout.scaled_identity(eta),
            y: DVector::zeros(self.rows.len()),
            s: DVector::from_element(self.n_ineq(), xi),
            zl: DVector::from_element(self.n_ineq(), eta),
        }
    }

    fn run(&self, problem: &SdpProblem, tol: &SdpTolerances) -> Result<SdpSolution> {
        let m = self.rows.len();
        let n_ineq = self.n_ineq();
        let nu = (self.layout.sizes.iter().sum::<usize>() + n_ineq) as f64;
        let bnorm = self.b.norm();
        let cnorm = frob2(&self.c).sqrt();
        let mut it = self.initial();
        let mut best: Option<Best> = None;

        for iter in 0..tol.max_iters {
            let mut rp = self.b.clone();
            for (i, row) in self.rows.iter().enumerate() {
                rp[i] -= trace(row, &it.x);
            }
            for j in 0..n_ineq {
                rp[self.n_eq + j] -= it.s[j];
            }
            let aty = self.adjoint(&it.y);
            let rd: Blocks = (0..self.c.len()).map(|b| &self.c[b] - &aty[b] - &it.z[b]).collect();
            let rdl = DVector::from_fn(n_ineq, |j, _| -it.y[self.n_eq + j] - it.zl[j]);

            let pobj = inner(&self.c, &it.x);
            let dobj = self.b.dot(&it.y);
            let comp = inner(&it.x, &it.z) + it.s.dot(&it.zl);
            let mu = comp / nu;
            let pres = rp.norm() / (1.0 + bnorm);
            let dres = (frob2(&rd) + rdl.norm_squared()).sqrt() / (1.0 + cnorm);
            let rel_gap = comp / (1.0 + pobj.abs() + dobj.abs());
            if pres <= tol.feas && dres <= tol.feas && rel_gap <= tol.gap {
                return Ok(self.solution(problem, &it, iter));
            }

            // Farkas certificate: sum y_i A_i <= 0, y_ineq <= 0, b'y > 0.
            if dobj > 0.0 {
                let ineq_pos = (0..n_ineq).map(|j| it.y[self.n_eq + j]).fold(0.0, f64::max);
                // The largest diagonal entry bounds the largest eigenvalue from below.
                let diag = aty.iter().map(|b| b.diagonal().max()).fold(f64::NEG_INFINITY, f64::max);
                let possible = (diag.max(0.0) + ineq_pos) / dobj <= tol.feas;
                let cert = if possible { (max_eig(&aty).max(0.0) + ineq_pos) / dobj } else { f64::INFINITY };
                if cert <= tol.feas {
                    return Err(Error::Infeasible { certificate_residual: cert });
                }
            }
            // Primal ray: A(X) = 0 on equalities, <= 0 on inequalities, <C, X> < 0.
            if pobj < 0.0 {
                let ray = self
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let v = trace(row, &it.x);
                        if i < self.n_eq { v.abs() } else { v.max(0.0) }
                    })
                    .fold(0.0, f64::max)
                    / -pobj;
                if ray <= tol.feas {
                    return Err(Error::Unbounded { ray_residual: ray });
                }
            }

            let merit = pres.max(dres).max(rel_gap);
            if best.as_ref().is_none_or(|b| merit < b.merit) {
                best = Some(Best {
                    merit,
                    x: it.x.clone(),
                    dual_value: dobj,
                    iteration: iter,
                    residuals: [pres, dres, rel_gap],
                });
            }

            let zinv: Blocks = it
                .z
                .iter()
                .map(|zb| {
                    Cholesky::new(zb.clone())
                        .map(|c| c.inverse())
                        .ok_or_else(|| Error::Numerical("dual iterate lost definiteness".into()))
                })
                .collect::<Result<_>>()
                .map_err(|e| self.stalled(problem, e, best.take(), iter))?;
            let d = DVector::from_fn(n_ineq, |j, _| it.s[j] / it.zl[j]);
            let (schur, schur_mat) = match self.schur(&it.x, &zinv, &d) {
                Ok(s) => s,
                Err(e) => return Err(self.stalled(problem, e, best, iter)),
            };
            let x_rd_zinv: Blocks = (0..rd.len()).map(|b| &it.x[b] * &rd[b] * &zinv[b]).collect();
            let projector = self.projector(&it.x);
            let st = Step { it: &it, zinv, schur, schur_mat, projector, rp, rd, rdl, x_rd_zinv };

            // Predictor.
            let g_aff: Blocks = (0..st.rd.len()).map(|b| -&it.x[b] - &st.x_rd_zinv[b]).collect();
            let rcl_aff = -it.s.component_mul(&it.zl);
            let aff = self.direction(&st, &g_aff, &rcl_aff);
            let (ap, ad) = self.step_lengths(&it, &aff);
            let (ap, ad) = (ap.min(1.0), ad.min(1.0));
            let x_aff: Blocks = (0..it.x.len()).map(|b| &it.x[b] + &aff.dx[b] * ap).collect();
            let z_aff: Blocks = (0..it.z.len()).map(|b| &it.z[b] + &aff.dz[b] * ad).collect();
            let mu_aff = (inner(&x_aff, &z_aff)
                + (&it.s + &aff.ds * ap).dot(&(&it.zl + &aff.dzl * ad)))
                / nu;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let g: Blocks = (0..it.x.len())
                .map(|b| {
                    let k = it.x[b].nrows();
                    let rc = DMatrix::identity(k, k) * (sigma * mu)
                        - &it.x[b] * &it.z[b]
                        - &aff.dx[b] * &aff.dz[b];
                    rc * &st.zinv[b] - &st.x_rd_zinv[b]
                })
                .collect();
            let rcl = DVector::from_fn(n_ineq, |j, _| {
                sigma * mu - it.s[j] * it.zl[j] - aff.ds[j] * aff.dzl[j]
            });
            let dir = self.direction(&st, &g, &rcl);
            let (ap, ad) = self.step_lengths(&it, &dir);
            let ap = (STEP_FRACTION * ap).min(1.0);
            let ad = (STEP_FRACTION * ad).min(1.0);
            if ap < 1e-12 && ad < 1e-12 {
                return Err(self.stalled(problem, Error::Numerical("step length collapsed".into()), best, iter));
            }
            drop(st);

            for b in 0..it.x.len() {
                it.x[b] = sym(&it.x[b] + &dir.dx[b] * ap);
                it.z[b] = sym(&it.z[b] + &dir.dz[b] * ad);
            }
            it.s += &dir.ds * ap;
            it.y += &dir.dy * ad;
            it.zl += &dir.dzl * ad;
            debug_assert_eq!(it.y.len(), m);
        }

        Err(self.stalled(problem, Error::Numerical("iteration limit".into()), best, tol.max_iters))
    }

    /// Converts a breakdown into a non-convergence error carrying the best iterate.
    fn stalled(&self, problem: &SdpProblem, cause: Error, best: Option<Best>, iterations: usize) -> Error {
        match best {
            Some(b) => Error::NotConverged {
                iterations,
                primal_residual: b.residuals[0],
                dual_residual: b.residuals[1],
                gap: b.residuals[2],
                best: Box::new(SdpSolution::from_matrix(
                    problem,
                    self.layout.assemble(&b.x),
                    b.dual_value,
                    b.iteration,
                )),
            },
            None => cause,
        }
    }
}

/// Solves `problem` to the given tolerances.
pub fn solve(problem: &SdpProblem, tol: &SdpTolerances) -> Result<SdpSolution> {
    problem.validate()?;
    Ipm::new(problem).run(problem, tol)
}
