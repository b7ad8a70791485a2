//! Dense two-phase simplex for the tiny LPs behind support functions,
//! boundedness checks and certificate verification.
//!
//! Problems are `maximize c·x` subject to `A x ≤ b`, optional equalities
//! `A_eq x = b_eq` and optional per-variable bounds; `x` is otherwise free.
//! Bounded variables are shifted or reflected onto `z ≥ 0`; free variables
//! are split as `x = x⁺ − x⁻`. Pivoting uses Bland's rule, so
//! the method terminates on degenerate problems (which support-function LPs
//! over polytopes with redundant rows routinely are).
//!
//! Every `Optimal` answer is checked against the KKT conditions of the
//! original problem using the dual read off the final tableau. A basis that
//! fails the check is reported as `NumericalFailure`, never as `Optimal`.

use nalgebra::DMatrix;

use crate::config::Tolerances;
use crate::error::{Error, Result};

/// `maximize objective·x` subject to the listed constraints.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub ineq_lhs: DMatrix<f64>,
    pub ineq_rhs: Vec<f64>,
    pub eq_lhs: Option<DMatrix<f64>>,
    pub eq_rhs: Vec<f64>,
    /// Per-variable `(lower, upper)` bounds; `None` means unbounded on that side.
    pub bounds: Vec<(Option<f64>, Option<f64>)>,
}

impl LpProblem {
    pub fn maximize(objective: Vec<f64>, ineq_lhs: DMatrix<f64>, ineq_rhs: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            ineq_lhs,
            ineq_rhs,
            eq_lhs: None,
            eq_rhs: Vec::new(),
            bounds: vec![(None, None); n],
        }
    }

    pub fn with_equalities(mut self, lhs: DMatrix<f64>, rhs: Vec<f64>) -> Self {
        self.eq_lhs = Some(lhs);
        self.eq_rhs = rhs;
        self
    }

    pub fn with_bounds(mut self, bounds: Vec<(Option<f64>, Option<f64>)>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.ineq_lhs.ncols() != n && self.ineq_lhs.nrows() > 0 {
            return Err(Error::DimensionMismatch(format!(
                "inequality matrix has {} columns, objective has {n}",
                self.ineq_lhs.ncols()
            )));
        }
        if self.ineq_lhs.nrows() != self.ineq_rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "inequality matrix has {} rows, rhs has {}",
                self.ineq_lhs.nrows(),
                self.ineq_rhs.len()
            )));
        }
        if let Some(eq) = &self.eq_lhs {
            if (eq.ncols() != n && eq.nrows() > 0) || eq.nrows() != self.eq_rhs.len() {
                return Err(Error::DimensionMismatch("equality block".into()));
            }
            if eq.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("equality matrix"));
            }
        } else if !self.eq_rhs.is_empty() {
            return Err(Error::DimensionMismatch("equality rhs without matrix".into()));
        }
        if self.bounds.len() != n {
            return Err(Error::DimensionMismatch("bounds length".into()));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("objective"));
        }
        if self.ineq_lhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("inequality matrix"));
        }
        if self.ineq_rhs.iter().chain(&self.eq_rhs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("right-hand side"));
        }
        for (lo, hi) in &self.bounds {
            if lo.is_some_and(|v| !v.is_finite()) || hi.is_some_and(|v| !v.is_finite()) {
                return Err(Error::NonFinite("bounds"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective value; `NaN` unless `Optimal`, `+inf` when unbounded.
    pub value: f64,
    /// Maximizer; empty unless `Optimal`.
    pub point: Vec<f64>,
    /// Multipliers in row order: inequality rows, then one row per finite
    /// bound (upper before lower), then equality rows. Empty unless `Optimal`.
    pub duals: Vec<f64>,
    /// Largest scaled KKT residual of the returned primal/dual pair.
    pub kkt_residual: f64,
}

impl LpSolution {
    fn status_only(status: LpStatus) -> Self {
        let value = match status {
            LpStatus::Unbounded => f64::INFINITY,
            _ => f64::NAN,
        };
        Self { status, value, point: Vec::new(), duals: Vec::new(), kkt_residual: 0.0 }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

const MAX_PIVOTS: usize = 200_000;
/// Reinversion rounds before accepting the tableau as is.
const REFINEMENT_ROUNDS: usize = 4;
/// Residual above which an apparently optimal basis is rejected.
const KKT_REJECT: f64 = 1e-6;

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    solve_lp_with(problem, &Tolerances::default())
}

pub fn solve_lp_with(problem: &LpProblem, tol: &Tolerances) -> Result<LpSolution> {
    problem.validate()?;
    let n = problem.num_vars();

    // Map each variable onto non-negative tableau columns.
    let mut maps = Vec::with_capacity(n);
    let mut nz = 0;
    for (lo, hi) in &problem.bounds {
        maps.push(match (lo, hi) {
            (Some(l), _) => VarMap::Shift { col: nz, lower: *l },
            (None, Some(h)) => VarMap::Reflect { col: nz, upper: *h },
            (None, None) => VarMap::Split { col: nz },
        });
        nz += if matches!(maps.last(), Some(VarMap::Split { .. })) { 2 } else { 1 };
    }
    let to_z = |a: &[f64], b: f64| -> (Vec<f64>, f64) {
        let mut row = vec![0.0; nz];
        let mut rhs = b;
        for (j, map) in maps.iter().enumerate() {
            match *map {
                VarMap::Shift { col, lower } => {
                    row[col] = a[j];
                    rhs -= a[j] * lower;
                }
                VarMap::Reflect { col, upper } => {
                    row[col] = -a[j];
                    rhs -= a[j] * upper;
                }
                VarMap::Split { col } => {
                    row[col] = a[j];
                    row[col + 1] = -a[j];
                }
            }
        }
        (row, rhs)
    };

    let ineq: Vec<Vec<f64>> = (0..problem.ineq_lhs.nrows())
        .map(|i| (0..n).map(|j| problem.ineq_lhs[(i, j)]).collect())
        .collect();
    let eq: Vec<Vec<f64>> = problem
        .eq_lhs
        .as_ref()
        .map(|m| (0..m.nrows()).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect())
        .unwrap_or_default();

    // Tableau rows: inequalities, upper limits of doubly bounded variables,
    // equalities.
    let mut zrows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for (a, b) in ineq.iter().zip(&problem.ineq_rhs) {
        let (row, rhs) = to_z(a, *b);
        zrows.push((row, rhs, false));
    }
    let mut upper_row = vec![None; n];
    for (j, (lo, hi)) in problem.bounds.iter().enumerate() {
        if let (Some(l), Some(h)) = (lo, hi) {
            let VarMap::Shift { col, .. } = maps[j] else { unreachable!() };
            let mut row = vec![0.0; nz];
            row[col] = 1.0;
            upper_row[j] = Some(zrows.len());
            zrows.push((row, h - l, false));
        }
    }
    let n_ineq = zrows.len();
    for (a, b) in eq.iter().zip(&problem.eq_rhs) {
        let (row, rhs) = to_z(a, *b);
        zrows.push((row, rhs, true));
    }

    let mut tableau = Tableau::build(nz, n_ineq, &zrows, tol);
    if tableau.has_artificials() {
        tableau.phase_one()?;
        let infeasibility: f64 = tableau.artificial_level();
        let scale = 1.0 + zrows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
        if infeasibility > tol.lp_feasibility * scale {
            return Ok(LpSolution::status_only(LpStatus::Infeasible));
        }
        tableau.evict_artificials();
    }

    let mut cost = vec![0.0; tableau.cols];
    for (j, map) in maps.iter().enumerate() {
        let c = problem.objective[j];
        match *map {
            VarMap::Shift { col, .. } => cost[col] = c,
            VarMap::Reflect { col, .. } => cost[col] = -c,
            VarMap::Split { col } => {
                cost[col] = c;
                cost[col + 1] = -c;
            }
        }
    }
    match tableau.optimize_refined(&cost, false)? {
        PivotOutcome::Optimal => {}
        PivotOutcome::Unbounded => return Ok(LpSolution::status_only(LpStatus::Unbounded)),
    }

    let z = tableau.primal();
    let point: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            VarMap::Shift { col, lower } => lower + z[col],
            VarMap::Reflect { col, upper } => upper - z[col],
            VarMap::Split { col } => z[col] - z[col + 1],
        })
        .collect();
    let zduals = tableau.duals(&cost);

    // Multipliers in the original row order, with bound multipliers taken
    // from the reduced costs.
    let mut stationarity = vec![0.0; n];
    for (a, y) in ineq.iter().zip(&zduals[..ineq.len()]).chain(eq.iter().zip(&zduals[n_ineq..])) {
        for j in 0..n {
            stationarity[j] += a[j] * y;
        }
    }
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    let mut duals = Vec::new();
    for (a, b) in ineq.iter().zip(&problem.ineq_rhs) {
        rows.push((a.clone(), *b, false));
    }
    duals.extend_from_slice(&zduals[..ineq.len()]);
    for (j, (lo, hi)) in problem.bounds.iter().enumerate() {
        let unit = |s: f64| {
            let mut a = vec![0.0; n];
            a[j] = s;
            a
        };
        let c = problem.objective[j];
        let up = upper_row[j].map(|r| zduals[r]);
        if let Some(h) = hi {
            rows.push((unit(1.0), *h, false));
            duals.push(up.unwrap_or(c - stationarity[j]));
        }
        if let Some(l) = lo {
            rows.push((unit(-1.0), -*l, false));
            duals.push(stationarity[j] + up.unwrap_or(0.0) - c);
        }
    }
    let n_rows_ineq = rows.len();
    for (a, b) in eq.iter().zip(&problem.eq_rhs) {
        rows.push((a.clone(), *b, true));
    }
    duals.extend_from_slice(&zduals[n_ineq..]);

    let value: f64 = point.iter().zip(&problem.objective).map(|(x, c)| x * c).sum();
    let kkt = kkt_residual(&rows, n_rows_ineq, &problem.objective, &point, &duals, value);
    if !(kkt <= KKT_REJECT) {
        return Err(Error::NumericalFailure(format!("KKT residual {kkt:.3e} at optimal basis")));
    }
    Ok(LpSolution { status: LpStatus::Optimal, value, point, duals, kkt_residual: kkt })
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = lower + z`.
    Shift { col: usize, lower: f64 },
    /// `x = upper − z`.
    Reflect { col: usize, upper: f64 },
    /// `x = z⁺ − z⁻`.
    Split { col: usize },
}

/// `max a·x s.t. F x ≤ g` with `x` free, solved through its dual
/// `min gᵀy s.t. Fᵀy = a, y ≥ 0`.
///
/// The dual tableau has only `dim(x)` rows, so this is the cheap and well
/// conditioned route for support functions of sets with many facets. The
/// returned `point` is the primal maximizer (read off the equality
/// multipliers) and `duals` holds `y`.
pub fn maximize_over_polyhedron(a: &[f64], lhs: &DMatrix<f64>, rhs: &[f64]) -> Result<LpSolution> {
    let (r, n) = lhs.shape();
    if a.len() != n || rhs.len() != r {
        return Err(Error::DimensionMismatch(format!("objective {} / F {r}×{n} / g {}", a.len(), rhs.len())));
    }
    let dual = LpProblem::maximize(rhs.iter().map(|g| -g).collect(), DMatrix::zeros(0, r), Vec::new())
        .with_equalities(lhs.transpose(), a.to_vec())
        .with_bounds(vec![(Some(0.0), None); r]);
    let sol = solve_lp(&dual)?;
    match sol.status {
        LpStatus::Optimal => {
            let w = &sol.duals[sol.duals.len() - n..];
            let point: Vec<f64> = w.iter().map(|v| -v).collect();
            Ok(LpSolution {
                status: LpStatus::Optimal,
                value: -sol.value,
                point,
                duals: sol.point,
                kkt_residual: sol.kkt_residual,
            })
        }
        // Dual unbounded: the primal is empty.
        LpStatus::Unbounded => Ok(LpSolution::status_only(LpStatus::Infeasible)),
        // Dual infeasible: the primal is unbounded or empty; a feasibility
        // probe tells them apart.
        LpStatus::Infeasible => {
            let probe = solve_lp(&LpProblem::maximize(vec![0.0; n], lhs.clone(), rhs.to_vec()))?;
            Ok(LpSolution::status_only(if probe.is_optimal() { LpStatus::Unbounded } else { LpStatus::Infeasible }))
        }
    }
}

/// Scaled KKT residual: primal feasibility, dual sign, stationarity and duality gap.
fn kkt_residual(
    rows: &[(Vec<f64>, f64, bool)],
    n_ineq: usize,
    c: &[f64],
    x: &[f64],
    y: &[f64],
    value: f64,
) -> f64 {
    let n = c.len();
    let data_scale = 1.0
        + rows
            .iter()
            .flat_map(|(a, b, _)| a.iter().chain(std::iter::once(b)))
            .chain(c)
            .fold(0.0f64, |m, v| m.max(v.abs()));
    let x_scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let y_scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut primal: f64 = 0.0;
    let mut dual_sign: f64 = 0.0;
    let mut stationarity = vec![0.0; n];
    let mut dual_obj = 0.0;
    for (i, (a, b, is_eq)) in rows.iter().enumerate() {
        let ax: f64 = a.iter().zip(x).map(|(p, q)| p * q).sum();
        let viol = if *is_eq { (ax - b).abs() } else { (ax - b).max(0.0) };
        primal = primal.max(viol);
        if i < n_ineq {
            dual_sign = dual_sign.max(-y[i]);
        }
        for j in 0..n {
            stationarity[j] += a[j] * y[i];
        }
        dual_obj += b * y[i];
    }
    let stat = stationarity.iter().zip(c).map(|(s, c)| (s - c).abs()).fold(0.0, f64::max);
    let gap = (dual_obj - value).abs();
    (primal / (data_scale * x_scale))
        .max(dual_sign / y_scale)
        .max(stat / (data_scale * y_scale))
        .max(gap / (data_scale * x_scale * y_scale))
}

enum PivotOutcome {
    Optimal,
    Unbounded,
}

/// Dense simplex tableau in standard form `M z = rhs, z ≥ 0`.
struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `rows × cols` coefficients.
    coef: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    first_artificial: usize,
    /// Column holding the initial identity column for each row.
    unit_col: Vec<usize>,
    /// `-1` when the row was negated to make its rhs non-negative.
    row_sign: Vec<f64>,
    /// Rows found to be linearly dependent during artificial eviction.
    dead_rows: Vec<bool>,
    /// Initial (sign-normalized) coefficients and rhs, for reinversion.
    orig_coef: Vec<f64>,
    orig_rhs: Vec<f64>,
    pivot_tol: f64,
    opt_tol: f64,
}

impl Tableau {
    fn build(nz: usize, n_ineq: usize, rows: &[(Vec<f64>, f64, bool)], tol: &Tolerances) -> Self {
        let m = rows.len();
        let n_art = rows
            .iter()
            .enumerate()
            .filter(|(i, (_, b, is_eq))| *is_eq || (*i < n_ineq && *b < 0.0))
            .count();
        let first_artificial = nz + n_ineq;
        let cols = first_artificial + n_art;
        let mut coef = vec![0.0; m * cols];
        let mut rhs = vec![0.0; m];
        let mut basis = vec![0; m];
        let mut unit_col = vec![0; m];
        let mut row_sign = vec![1.0; m];
        let mut next_art = first_artificial;
        for (i, (a, b, is_eq)) in rows.iter().enumerate() {
            let sign = if *b < 0.0 { -1.0 } else { 1.0 };
            row_sign[i] = sign;
            let row = &mut coef[i * cols..(i + 1) * cols];
            for j in 0..nz {
                row[j] = sign * a[j];
            }
            rhs[i] = sign * b;
            if !is_eq {
                row[nz + i] = sign;
            }
            if *is_eq || sign < 0.0 {
                row[next_art] = 1.0;
                basis[i] = next_art;
                unit_col[i] = next_art;
                next_art += 1;
            } else {
                basis[i] = nz + i;
                unit_col[i] = nz + i;
            }
        }
        Self {
            rows: m,
            cols,
            orig_coef: coef.clone(),
            orig_rhs: rhs.clone(),
            coef,
            rhs,
            basis,
            first_artificial,
            unit_col,
            row_sign,
            dead_rows: vec![false; m],
            pivot_tol: tol.lp_pivot,
            opt_tol: tol.lp_optimality,
        }
    }

    fn has_artificials(&self) -> bool {
        self.first_artificial < self.cols
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.coef[i * self.cols + j]
    }

    fn phase_one(&mut self) -> Result<()> {
        let mut cost = vec![0.0; self.cols];
        for c in cost.iter_mut().skip(self.first_artificial) {
            *c = -1.0;
        }
        match self.optimize_refined(&cost, true)? {
            PivotOutcome::Optimal => Ok(()),
            // Phase one is bounded by construction.
            PivotOutcome::Unbounded => Err(Error::NumericalFailure("phase one unbounded".into())),
        }
    }

    fn artificial_level(&self) -> f64 {
        self.basis
            .iter()
            .zip(&self.rhs)
            .filter(|(b, _)| **b >= self.first_artificial)
            .map(|(_, v)| v.max(0.0))
            .sum()
    }

    /// Pivot zero-level artificials out of the basis; rows where that is
    /// impossible are linearly dependent and are retired.
    fn evict_artificials(&mut self) {
        for i in 0..self.rows {
            if self.basis[i] < self.first_artificial {
                continue;
            }
            let candidate = (0..self.first_artificial)
                .filter(|&j| self.at(i, j).abs() > 1e-9)
                .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
            match candidate {
                Some(j) => self.pivot(i, j),
                None => self.dead_rows[i] = true,
            }
        }
    }

    /// [`Self::optimize`], then rebuild the tableau from the original data
    /// for the final basis and continue if the fresh reduced costs disagree.
    fn optimize_refined(&mut self, cost: &[f64], allow_artificial: bool) -> Result<PivotOutcome> {
        for _ in 0..REFINEMENT_ROUNDS {
            match self.optimize(cost, allow_artificial)? {
                PivotOutcome::Unbounded => return Ok(PivotOutcome::Unbounded),
                PivotOutcome::Optimal => {}
            }
            if !self.reinvert() || self.pivots_needed(cost, allow_artificial) == 0 {
                return Ok(PivotOutcome::Optimal);
            }
        }
        self.optimize(cost, allow_artificial)
    }

    fn pivots_needed(&self, cost: &[f64], allow_artificial: bool) -> usize {
        let limit = if allow_artificial { self.cols } else { self.first_artificial };
        (0..limit)
            .filter(|&j| {
                let mut r = cost[j];
                for i in 0..self.rows {
                    r -= cost[self.basis[i]] * self.at(i, j);
                }
                r > self.opt_tol
            })
            .count()
    }

    /// Recompute `B⁻¹ [M | rhs]` from the original data for the live rows.
    /// Returns `false` (leaving the tableau untouched) if the basis matrix is
    /// numerically singular.
    fn reinvert(&mut self) -> bool {
        let live: Vec<usize> = (0..self.rows).filter(|&i| !self.dead_rows[i]).collect();
        let k = live.len();
        if k == 0 {
            return true;
        }
        let cols = self.cols;
        let basis = DMatrix::from_fn(k, k, |a, b| self.orig_coef[live[a] * cols + self.basis[live[b]]]);
        let lu = basis.lu();
        let mut data = DMatrix::zeros(k, cols + 1);
        for (a, &i) in live.iter().enumerate() {
            for j in 0..cols {
                data[(a, j)] = self.orig_coef[i * cols + j];
            }
            data[(a, cols)] = self.orig_rhs[i];
        }
        let Some(solved) = lu.solve(&data) else {
            return false;
        };
        if solved.iter().any(|v| !v.is_finite()) {
            return false;
        }
        for (b, &i) in live.iter().enumerate() {
            for j in 0..cols {
                self.coef[i * cols + j] = solved[(b, j)];
            }
            self.rhs[i] = solved[(b, cols)];
        }
        true
    }

    /// Primal simplex with Bland's rule on `maximize cost·z`.
    fn optimize(&mut self, cost: &[f64], allow_artificial: bool) -> Result<PivotOutcome> {
        let limit = if allow_artificial { self.cols } else { self.first_artificial };
        let mut reduced = vec![0.0; self.cols];
        for _ in 0..MAX_PIVOTS {
            reduced[..limit].copy_from_slice(&cost[..limit]);
            for i in 0..self.rows {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    let row = &self.coef[i * self.cols..i * self.cols + limit];
                    for (r, a) in reduced[..limit].iter_mut().zip(row) {
                        *r -= cb * a;
                    }
                }
            }
            let entering = (0..limit).find(|&j| reduced[j] > self.opt_tol);
            let Some(col) = entering else {
                return Ok(PivotOutcome::Optimal);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                if self.dead_rows[i] {
                    continue;
                }
                let a = self.at(i, col);
                if a > self.pivot_tol {
                    let ratio = self.rhs[i].max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                            if ratio < best && !tie {
                                Some((i, ratio))
                            } else if tie && self.basis[i] < self.basis[k] {
                                Some((i, best.min(ratio)))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(PivotOutcome::Unbounded),
                Some((row, _)) => self.pivot(row, col),
            }
        }
        Err(Error::NumericalFailure(format!("simplex exceeded {MAX_PIVOTS} pivots")))
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let cols = self.cols;
        let p = self.at(row, col);
        {
            let r = &mut self.coef[row * cols..(row + 1) * cols];
            for v in r.iter_mut() {
                *v /= p;
            }
            r[col] = 1.0;
        }
        self.rhs[row] /= p;
        let pivot_row: Vec<f64> = self.coef[row * cols..(row + 1) * cols].to_vec();
        let pivot_rhs = self.rhs[row];
        for i in 0..self.rows {
            if i == row {
                continue;
            }
            let f = self.coef[i * cols + col];
            if f == 0.0 {
                continue;
            }
            let r = &mut self.coef[i * cols..(i + 1) * cols];
            for (v, pv) in r.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            r[col] = 0.0;
            self.rhs[i] -= f * pivot_rhs;
        }
        self.basis[row] = col;
    }

    fn primal(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.cols];
        for (i, &b) in self.basis.iter().enumerate() {
            z[b] = self.rhs[i].max(0.0);
        }
        z
    }

    /// Dual multipliers of the original rows, `y = c_B B⁻¹` mapped back
    /// through the row negations.
    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let col = self.unit_col[r];
                let y: f64 = (0..self.rows).map(|k| cost[self.basis[k]] * self.at(k, col)).sum();
                self.row_sign[r] * y
            })
            .collect()
    }
}
