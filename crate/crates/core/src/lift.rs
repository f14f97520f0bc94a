//! Homogeneous QCQP data for both optimization stages.
//!
//! Stage 1 lifts `z = [x; y; beta; t; 1]` (length `3M + 2`) and stage 2
//! lifts `s = [beta; theta; 1; 1]` (length `M + 3`). Every constraint is a
//! quadratic form `z^T Q z` compared against a right-hand side. Matrices are
//! assembled entry by entry from the block placements of the derivation and
//! then symmetrized with `(Q + Q^T) / 2`, which leaves the quadratic form
//! unchanged.
//!
//! [`Stage1Lift::relaxation`] and [`Stage2Lift::relaxation`] turn a lift into
//! an [`SdpProblem`]. Besides the lifted constraints they pin the
//! homogenizers to one and add constraints that hold at every optimal
//! rank-one point:
//!
//! * `beta_m^2 <= beta_m` and `t^2 <= t_max t`, which bound the lifted block;
//! * one 2x2 PSD block per user,
//!   `[[beta, sqrt(k_c) y], [sqrt(k_c) y, t - k_l x - k_e y]]`, the
//!   perspective form of the user's delay bound.
//!
//! Without them the plain relaxation is unbounded below: the cross term
//! `Y[beta, t]` can grow through the unconstrained diagonal.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exact::delay_coefficients;
use crate::model::{DecisionVector, Scenario};
use crate::sdp::{extract_vector, SdpProblem, SdpSolution};

/// A named quadratic constraint `v^T matrix v (<= or =) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub name: String,
    pub matrix: DMatrix<f64>,
    pub rhs: f64,
}

/// Accumulates a quadratic form entry by entry.
struct FormBuilder {
    q: DMatrix<f64>,
}

impl FormBuilder {
    fn new(dim: usize) -> Self {
        Self { q: DMatrix::zeros(dim, dim) }
    }

    /// Writes a single (possibly off-diagonal) entry, as in a row-block layout.
    fn place(mut self, i: usize, j: usize, v: f64) -> Self {
        self.q[(i, j)] += v;
        self
    }

    /// Adds `c * v_i * v_j`.
    fn product(self, i: usize, j: usize, c: f64) -> Self {
        if i == j {
            self.place(i, i, c)
        } else {
            self.place(i, j, 0.5 * c).place(j, i, 0.5 * c)
        }
    }

    fn finish(self) -> DMatrix<f64> {
        (&self.q + self.q.transpose()) * 0.5
    }
}

fn constraint(name: String, matrix: DMatrix<f64>, rhs: f64) -> QuadConstraint {
    QuadConstraint { name, matrix, rhs }
}

/// Common view used by [`eval_quadratic`] and the matrix dump.
pub trait Lift {
    fn dim(&self) -> usize;
    fn objective(&self) -> &DMatrix<f64>;
    fn equalities(&self) -> &[QuadConstraint];
    fn inequalities(&self) -> &[QuadConstraint];
    /// Coordinates that must equal one.
    fn homogenizers(&self) -> Vec<usize>;

    /// Plain-text dump: one header line per matrix followed by its rows.
    fn write_dump(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let mut block = |name: &str, kind: &str, rhs: Option<f64>, m: &DMatrix<f64>| {
            match rhs {
                Some(r) => writeln!(out, "# {name} {kind} rhs={r} dim={}", m.nrows())?,
                None => writeln!(out, "# {name} {kind} dim={}", m.nrows())?,
            }
            for row in m.row_iter() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(out, "{}", cells.join(" "))?;
            }
            Ok::<_, std::io::Error>(())
        };
        block("objective", "min", None, self.objective())?;
        for c in self.equalities() {
            block(&c.name, "eq", Some(c.rhs), &c.matrix)?;
        }
        for c in self.inequalities() {
            block(&c.name, "le", Some(c.rhs), &c.matrix)?;
        }
        Ok(())
    }
}

/// Objective value and `v^T Q v - rhs` for every constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub objective: f64,
    pub equalities: Vec<f64>,
    pub inequalities: Vec<f64>,
}

pub fn eval_quadratic<L: Lift + ?Sized>(lift: &L, v: &DVector<f64>) -> Result<Residuals> {
    if v.len() != lift.dim() {
        return Err(Error::DimensionMismatch { expected: lift.dim(), got: v.len() });
    }
    for h in lift.homogenizers() {
        if v[h] != 1.0 {
            return Err(Error::Config(format!("homogenizer entry {h} is {}, expected 1", v[h])));
        }
    }
    let form = |m: &DMatrix<f64>| v.dot(&(m * v));
    Ok(Residuals {
        objective: form(lift.objective()),
        equalities: lift.equalities().iter().map(|c| form(&c.matrix) - c.rhs).collect(),
        inequalities: lift.inequalities().iter().map(|c| form(&c.matrix) - c.rhs).collect(),
    })
}

/// Index map of `z = [x; y; beta; t; 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage1Layout {
    pub users: usize,
}

impl Stage1Layout {
    pub fn x(&self, m: usize) -> usize {
        m
    }
    pub fn y(&self, m: usize) -> usize {
        self.users + m
    }
    pub fn beta(&self, m: usize) -> usize {
        2 * self.users + m
    }
    pub fn t(&self) -> usize {
        3 * self.users
    }
    pub fn homogenizer(&self) -> usize {
        3 * self.users + 1
    }
    pub fn dim(&self) -> usize {
        3 * self.users + 2
    }

    pub fn pack(&self, x: &[f64], y: &[f64], beta: &[f64], t: f64) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        for m in 0..self.users {
            z[self.x(m)] = x[m];
            z[self.y(m)] = y[m];
            z[self.beta(m)] = beta[m];
        }
        z[self.t()] = t;
        z[self.homogenizer()] = 1.0;
        z
    }

    /// Inverse of [`pack`](Self::pack): `(x, y, beta, t)`.
    pub fn unpack(&self, z: &DVector<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let n = self.users;
        (
            (0..n).map(|m| z[self.x(m)]).collect(),
            (0..n).map(|m| z[self.y(m)]).collect(),
            (0..n).map(|m| z[self.beta(m)]).collect(),
            z[self.t()],
        )
    }
}

/// Stage-1 per-user constants: local compute, edge compute and full-band upload delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Coefficients {
    pub k_local: f64,
    pub k_edge: f64,
    pub k_upload: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Lift {
    pub layout: Stage1Layout,
    pub objective: DMatrix<f64>,
    /// `B_x` for every user, then `B_y`, then `B_xy`.
    pub eq_constraints: Vec<QuadConstraint>,
    /// The bandwidth sum, then `B_beta_xy` for every user.
    pub ineq_constraints: Vec<QuadConstraint>,
    pub coefficients: Vec<Stage1Coefficients>,
}

pub fn build_stage1(scenario: &Scenario) -> Stage1Lift {
    let n = scenario.num_users();
    let l = Stage1Layout { users: n };
    let dim = l.dim();
    let h = l.homogenizer();
    let coefficients: Vec<Stage1Coefficients> = (0..n)
        .map(|m| Stage1Coefficients {
            k_local: scenario.local_delay(m),
            k_edge: scenario.edge_compute_delay(m),
            k_upload: scenario.full_band_upload_delay(m),
        })
        .collect();

    let objective = FormBuilder::new(dim).place(l.t(), h, 0.5).place(h, l.t(), 0.5).finish();

    let mut eq = Vec::with_capacity(3 * n);
    // x_m (1 - x_m) = 0
    for m in 0..n {
        let q = FormBuilder::new(dim).place(l.x(m), l.x(m), -1.0).product(l.x(m), h, 1.0);
        eq.push(constraint(format!("B_x[{m}]"), q.finish(), 0.0));
    }
    // y_m (1 - y_m) = 0
    for m in 0..n {
        let q = FormBuilder::new(dim).place(l.y(m), l.y(m), -1.0).product(l.y(m), h, 1.0);
        eq.push(constraint(format!("B_y[{m}]"), q.finish(), 0.0));
    }
    // x_m + y_m = 1
    for m in 0..n {
        let q = FormBuilder::new(dim).product(l.x(m), h, 1.0).product(l.y(m), h, 1.0);
        eq.push(constraint(format!("B_xy[{m}]"), q.finish(), 1.0));
    }

    let mut ineq = Vec::with_capacity(n + 1);
    let bandwidth = (0..n).fold(FormBuilder::new(dim), |q, m| q.product(l.beta(m), h, 1.0));
    ineq.push(constraint("B_beta_sum".into(), bandwidth.finish(), 1.0));
    // k_l x beta + k_e y beta + k_c y - beta t <= 0
    for (m, k) in coefficients.iter().enumerate() {
        let q = FormBuilder::new(dim)
            .place(l.x(m), l.beta(m), 0.5 * k.k_local)
            .place(l.beta(m), l.x(m), 0.5 * k.k_local)
            .place(l.y(m), l.beta(m), 0.5 * k.k_edge)
            .place(l.beta(m), l.y(m), 0.5 * k.k_edge)
            .place(l.beta(m), l.t(), -0.5)
            .place(l.t(), l.beta(m), -0.5)
            .product(l.y(m), h, k.k_upload);
        ineq.push(constraint(format!("B_beta_xy[{m}]"), q.finish(), 0.0));
    }

    Stage1Lift { layout: l, objective, eq_constraints: eq, ineq_constraints: ineq, coefficients }
}

impl Lift for Stage1Lift {
    fn dim(&self) -> usize {
        self.layout.dim()
    }
    fn objective(&self) -> &DMatrix<f64> {
        &self.objective
    }
    fn equalities(&self) -> &[QuadConstraint] {
        &self.eq_constraints
    }
    fn inequalities(&self) -> &[QuadConstraint] {
        &self.ineq_constraints
    }
    fn homogenizers(&self) -> Vec<usize> {
        vec![self.layout.homogenizer()]
    }
}

/// Adds `coeff * Y[i,j]` (symmetrically) to a trace-form constraint matrix.
fn add_entry(m: &mut DMatrix<f64>, i: usize, j: usize, coeff: f64) {
    if i == j {
        m[(i, i)] += coeff;
    } else {
        m[(i, j)] += 0.5 * coeff;
        m[(j, i)] += 0.5 * coeff;
    }
}

fn embed(m: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    out.view_mut((0, 0), m.shape()).copy_from(m);
    out
}

/// Fractional stage-1 point read off the lifted block.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Point {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub beta: Vec<f64>,
    pub t: f64,
    pub rank1_ratio: f64,
    pub loose: bool,
}

impl Stage1Lift {
    /// Upper bound on the optimal `t` used by the `t^2 <= t_max t` cut:
    /// twice the better of all-local and equal-split all-offload.
    pub fn t_max(&self) -> f64 {
        let n = self.coefficients.len() as f64;
        let local = self.coefficients.iter().map(|k| k.k_local).fold(0.0, f64::max);
        let edge = self.coefficients.iter().map(|k| k.k_edge + n * k.k_upload).fold(0.0, f64::max);
        2.0 * local.min(edge)
    }

    pub fn relaxation(&self) -> SdpProblem {
        let n = self.coefficients.len();
        let l = self.layout;
        let lifted = l.dim();
        let dim = lifted + 2 * n;
        let h = l.homogenizer();
        let mut blocks = vec![lifted];
        blocks.extend(std::iter::repeat_n(2, n));
        let mut p = SdpProblem::with_blocks(blocks);
        p.objective = embed(&self.objective, dim);
        for c in &self.eq_constraints {
            p.add_equality(embed(&c.matrix, dim), c.rhs);
        }
        for c in &self.ineq_constraints {
            p.add_inequality(embed(&c.matrix, dim), c.rhs);
        }

        let mut pin = DMatrix::zeros(dim, dim);
        add_entry(&mut pin, h, h, 1.0);
        p.add_equality(pin, 1.0);

        for m in 0..n {
            let mut cut = DMatrix::zeros(dim, dim);
            add_entry(&mut cut, l.beta(m), l.beta(m), 1.0);
            add_entry(&mut cut, l.beta(m), h, -1.0);
            p.add_inequality(cut, 0.0);
        }
        let mut cut = DMatrix::zeros(dim, dim);
        add_entry(&mut cut, l.t(), l.t(), 1.0);
        add_entry(&mut cut, l.t(), h, -self.t_max());
        p.add_inequality(cut, 0.0);

        for (m, k) in self.coefficients.iter().enumerate() {
            let o = lifted + 2 * m;
            let mut a = DMatrix::zeros(dim, dim);
            add_entry(&mut a, o, o, 1.0);
            add_entry(&mut a, l.beta(m), h, -1.0);
            p.add_equality(a, 0.0);

            let mut a = DMatrix::zeros(dim, dim);
            add_entry(&mut a, o, o + 1, 1.0);
            add_entry(&mut a, l.y(m), h, -k.k_upload.sqrt());
            p.add_equality(a, 0.0);

            let mut a = DMatrix::zeros(dim, dim);
            add_entry(&mut a, o + 1, o + 1, 1.0);
            add_entry(&mut a, l.t(), h, -1.0);
            add_entry(&mut a, l.x(m), h, k.k_local);
            add_entry(&mut a, l.y(m), h, k.k_edge);
            p.add_equality(a, 0.0);
        }
        p
    }

    /// Reads `(x, y, beta, t)` from the homogenizer column.
    pub fn extract(&self, solution: &SdpSolution) -> Result<Stage1Point> {
        let l = self.layout;
        let e = extract_vector(solution, l.homogenizer())?;
        // The homogenizer is the last coordinate, so dropping it keeps indices.
        let z = e.vector.push(1.0);
        let (x, y, beta, t) = l.unpack(&z);
        Ok(Stage1Point { x, y, beta, t, rank1_ratio: e.rank1_ratio, loose: e.loose })
    }
}

/// Index map of `s = [beta; theta; 1; 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage2Layout {
    pub users: usize,
}

impl Stage2Layout {
    pub fn beta(&self, m: usize) -> usize {
        m
    }
    pub fn theta(&self) -> usize {
        self.users
    }
    /// Trailing constant of `v`.
    pub fn v_homogenizer(&self) -> usize {
        self.users + 1
    }
    /// Trailing constant of `s`.
    pub fn s_homogenizer(&self) -> usize {
        self.users + 2
    }
    pub fn dim(&self) -> usize {
        self.users + 3
    }

    pub fn pack(&self, beta: &[f64], theta: f64) -> DVector<f64> {
        let mut s = DVector::zeros(self.dim());
        for (m, &b) in beta.iter().enumerate() {
            s[self.beta(m)] = b;
        }
        s[self.theta()] = theta;
        s[self.v_homogenizer()] = 1.0;
        s[self.s_homogenizer()] = 1.0;
        s
    }

    pub fn unpack(&self, s: &DVector<f64>) -> (Vec<f64>, f64) {
        ((0..self.users).map(|m| s[self.beta(m)]).collect(), s[self.theta()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Lift {
    pub layout: Stage2Layout,
    pub objective: DMatrix<f64>,
    /// The weighted bandwidth sum, then `H_beta_k_theta` for every user.
    pub ineq_constraints: Vec<QuadConstraint>,
    /// Per-user `(k_f, k_eta)`.
    pub coefficients: Vec<(f64, f64)>,
    pub decisions: DecisionVector,
}

pub fn build_stage2(scenario: &Scenario, decisions: &DecisionVector) -> Result<Stage2Lift> {
    let n = scenario.num_users();
    if decisions.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: decisions.len() });
    }
    let l = Stage2Layout { users: n };
    let dim = l.dim();
    let (theta, vh, sh) = (l.theta(), l.v_homogenizer(), l.s_homogenizer());
    let coefficients = delay_coefficients(scenario, decisions);

    let objective = FormBuilder::new(dim).place(theta, sh, 0.5).place(sh, theta, 0.5).finish();

    let mut ineq = Vec::with_capacity(n + 1);
    let bandwidth = (0..n).fold(FormBuilder::new(dim), |q, m| {
        q.product(l.beta(m), sh, decisions.y(m))
    });
    ineq.push(constraint("H_beta_sum".into(), bandwidth.finish(), 1.0));
    // k_f beta + k_eta - beta theta <= 0
    for (m, &(kf, keta)) in coefficients.iter().enumerate() {
        let q = FormBuilder::new(dim)
            .place(l.beta(m), theta, -0.5)
            .place(theta, l.beta(m), -0.5)
            .product(l.beta(m), sh, kf)
            .product(vh, sh, keta);
        ineq.push(constraint(format!("H_beta_k_theta[{m}]"), q.finish(), 0.0));
    }

    Ok(Stage2Lift {
        layout: l,
        objective,
        ineq_constraints: ineq,
        coefficients,
        decisions: decisions.clone(),
    })
}

impl Lift for Stage2Lift {
    fn dim(&self) -> usize {
        self.layout.dim()
    }
    fn objective(&self) -> &DMatrix<f64> {
        &self.objective
    }
    fn equalities(&self) -> &[QuadConstraint] {
        &[]
    }
    fn inequalities(&self) -> &[QuadConstraint] {
        &self.ineq_constraints
    }
    fn homogenizers(&self) -> Vec<usize> {
        vec![self.layout.v_homogenizer(), self.layout.s_homogenizer()]
    }
}

impl Stage2Lift {
    /// Twice the worst delay of an equal split among offloaders.
    pub fn theta_max(&self) -> f64 {
        let off = self.decisions.num_offloading() as f64;
        let worst = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(m, &(kf, keta))| if self.decisions.offloads(m) { kf + off * keta } else { kf })
            .fold(0.0, f64::max);
        2.0 * worst
    }

    pub fn relaxation(&self) -> SdpProblem {
        let n = self.coefficients.len();
        let l = self.layout;
        let lifted = l.dim();
        let dim = lifted + 2 * n;
        let (theta, vh, sh) = (l.theta(), l.v_homogenizer(), l.s_homogenizer());
        let mut blocks = vec![lifted];
        blocks.extend(std::iter::repeat_n(2, n));
        let mut p = SdpProblem::with_blocks(blocks);
        p.objective = embed(&self.objective, dim);
        for c in &self.ineq_constraints {
            p.add_inequality(embed(&c.matrix, dim), c.rhs);
        }

        for i in [vh, sh] {
            let mut pin = DMatrix::zeros(dim, dim);
            add_entry(&mut pin, i, i, 1.0);
            p.add_equality(pin, 1.0);
        }

        for m in 0..n {
            let mut cut = DMatrix::zeros(dim, dim);
            add_entry(&mut cut, l.beta(m), l.beta(m), 1.0);
            add_entry(&mut cut, l.beta(m), sh, -1.0);
            p.add_inequality(cut, 0.0);
        }
        let mut cut = DMatrix::zeros(dim, dim);
        add_entry(&mut cut, theta, theta, 1.0);
        add_entry(&mut cut, theta, sh, -self.theta_max());
        p.add_inequality(cut, 0.0);

        for (m, &(kf, keta)) in self.coefficients.iter().enumerate() {
            let o = lifted + 2 * m;
            let mut a = DMatrix::zeros(dim, dim);
            add_entry(&mut a, o, o, 1.0);
            add_entry(&mut a, l.beta(m), sh, -1.0);
            p.add_equality(a, 0.0);

            let mut a = DMatrix::zeros(dim, dim);
            add_entry(&mut a, o, o + 1, 1.0);
            p.add_equality(a, keta.sqrt());

            let mut a = DMatrix::zeros(dim, dim);
            add_entry(&mut a, o + 1, o + 1, 1.0);
            add_entry(&mut a, theta, sh, -1.0);
            p.add_equality(a, -kf);
        }
        p
    }

    /// Reads `(beta, theta)` from the `s` homogenizer column. Local users get
    /// `beta = 0`.
    pub fn extract(&self, solution: &SdpSolution) -> Result<(Vec<f64>, f64)> {
        let l = self.layout;
        let e = extract_vector(solution, l.s_homogenizer())?;
        let s = e.vector.push(1.0);
        let (mut beta, theta) = l.unpack(&s);
        for (m, b) in beta.iter_mut().enumerate() {
            *b = if self.decisions.offloads(m) { b.max(0.0) } else { 0.0 };
        }
        Ok((beta, theta))
    }
}
