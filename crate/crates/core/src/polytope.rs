//! Halfspace polytopes, C-set predicates, gauge functions and gauge maps.
//!
//! A polytope is stored as `{x : F x ≤ g}`. Symmetric sets
//! `{−b ≤ V x ≤ b}` are expanded to `F = [V; −V]`, `g = [b; b]`, so there is
//! one code path for every set the filter touches.
//!
//! For a C-set `Q = {w : F w ≤ g}` (so `g > 0`) the gauge is
//! `γ_Q(v) = max(0, maxᵢ Fᵢ·v / gᵢ)` and the gauge map
//! `G(v | Q) = (‖v‖_∞ / γ_Q(v)) · v` sends the ∞-norm unit ball onto `Q`,
//! preserving direction and matching ∞-norm level to gauge level.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::lp::{maximize_over_polyhedron, LpStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    lhs: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// Result of a gauge evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeValue {
    pub value: f64,
    /// Row attaining the max (lowest index on ties).
    pub active_row: usize,
}

impl HPolytope {
    pub fn new(lhs: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if lhs.nrows() != rhs.len() {
            return Err(Error::DimensionMismatch(format!(
                "F has {} rows but g has {}",
                lhs.nrows(),
                rhs.len()
            )));
        }
        if lhs.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("polytope"));
        }
        for (i, row) in lhs.row_iter().enumerate() {
            if row.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidInput(format!("row {i} of F is all zero")));
            }
        }
        Ok(Self { lhs, rhs })
    }

    /// `{x : −bound ≤ dirs·x ≤ bound}` stored as `[dirs; −dirs] x ≤ [bound; bound]`.
    pub fn from_symmetric(dirs: &DMatrix<f64>, bound: &DVector<f64>) -> Result<Self> {
        if dirs.nrows() != bound.len() {
            return Err(Error::DimensionMismatch("symmetric bound length".into()));
        }
        let r = dirs.nrows();
        let n = dirs.ncols();
        let mut lhs = DMatrix::zeros(2 * r, n);
        lhs.rows_mut(0, r).copy_from(dirs);
        lhs.rows_mut(r, r).copy_from(&dirs.map(|v| if v == 0.0 { 0.0 } else { -v }));
        let mut rhs = DVector::zeros(2 * r);
        rhs.rows_mut(0, r).copy_from(bound);
        rhs.rows_mut(r, r).copy_from(bound);
        Self::new(lhs, rhs)
    }

    /// Axis-aligned box `{|x_i| ≤ half_widths_i}`.
    pub fn centered_box(half_widths: &[f64]) -> Result<Self> {
        let n = half_widths.len();
        Self::from_symmetric(&DMatrix::identity(n, n), &DVector::from_column_slice(half_widths))
    }

    pub fn unit_box(n: usize) -> Self {
        Self::centered_box(&vec![1.0; n]).expect("unit box is well formed")
    }

    pub fn lhs(&self) -> &DMatrix<f64> {
        &self.lhs
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn dim(&self) -> usize {
        self.lhs.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.lhs.nrows()
    }

    /// Recover `(V, b)` when rows are stored as `[V; −V]`, `[b; b]`.
    pub fn as_symmetric(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let r2 = self.num_rows();
        if r2 % 2 != 0 {
            return None;
        }
        let r = r2 / 2;
        let top = self.lhs.rows(0, r);
        let bottom = self.lhs.rows(r, r);
        let mirrored = top.iter().zip(bottom.iter()).all(|(a, b)| *a == -*b);
        let same_rhs = (0..r).all(|i| self.rhs[i] == self.rhs[r + i]);
        (mirrored && same_rhs).then(|| (top.into_owned(), self.rhs.rows(0, r).into_owned()))
    }

    /// Half-widths when the set is an axis-aligned box centered at the origin.
    pub fn box_half_widths(&self) -> Option<Vec<f64>> {
        let (v, b) = self.as_symmetric()?;
        let n = self.dim();
        if v.nrows() != n {
            return None;
        }
        let mut hw = vec![f64::NAN; n];
        for i in 0..n {
            let nz: Vec<usize> = (0..n).filter(|&j| v[(i, j)] != 0.0).collect();
            if nz.len() != 1 || !hw[nz[0]].is_nan() {
                return None;
            }
            hw[nz[0]] = b[i] / v[(i, nz[0])].abs();
        }
        Some(hw)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {len} for polytope of dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `F x ≤ g + tol` elementwise.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(x.len())?;
        Ok(self.max_violation(x) <= tol)
    }

    /// `maxᵢ (Fᵢ·x − gᵢ)`; non-positive inside the set.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let fx = &self.lhs * x;
        fx.iter().zip(self.rhs.iter()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bounded with the origin strictly interior.
    pub fn is_cset(&self) -> Result<bool> {
        self.is_cset_with(&Tolerances::default())
    }

    pub fn is_cset_with(&self, tol: &Tolerances) -> Result<bool> {
        if self.rhs.iter().any(|g| *g <= tol.strict_interior) {
            return Ok(false);
        }
        self.is_bounded()
    }

    /// Support in ±e_j is finite for every coordinate.
    pub fn is_bounded(&self) -> Result<bool> {
        let n = self.dim();
        for j in 0..n {
            for s in [1.0, -1.0] {
                let mut a = vec![0.0; n];
                a[j] = s;
                let sol = maximize_over_polyhedron(&a, &self.lhs, self.rhs.as_slice())?;
                match sol.status {
                    LpStatus::Optimal => {}
                    LpStatus::Unbounded => return Ok(false),
                    LpStatus::Infeasible => return Ok(true),
                }
            }
        }
        Ok(true)
    }

    fn check_positive_rhs(&self) -> Result<()> {
        if self.rhs.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::NotACSet);
        }
        Ok(())
    }

    /// `γ_Q(v) = max(0, maxᵢ Fᵢ·v / gᵢ)`.
    ///
    /// Only `g > 0` is checked here; boundedness is the caller's
    /// responsibility (`is_cset`), since this sits on the per-step hot path.
    pub fn gauge(&self, v: &DVector<f64>) -> Result<GaugeValue> {
        self.check_dim(v.len())?;
        self.check_positive_rhs()?;
        Ok(self.gauge_unchecked(v))
    }

    fn gauge_unchecked(&self, v: &DVector<f64>) -> GaugeValue {
        let fv = &self.lhs * v;
        let mut best = f64::NEG_INFINITY;
        let mut active_row = 0;
        for i in 0..self.num_rows() {
            let ratio = fv[i] / self.rhs[i];
            if ratio > best {
                best = ratio;
                active_row = i;
            }
        }
        GaugeValue { value: best.max(0.0), active_row }
    }

    /// `max_{x ∈ P} a·x`.
    pub fn support(&self, a: &DVector<f64>) -> Result<f64> {
        Ok(self.support_point(a)?.0)
    }

    /// Support value together with a maximizer.
    pub fn support_point(&self, a: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_dim(a.len())?;
        let sol = self.lp(a)?;
        match sol.status {
            LpStatus::Optimal => Ok((sol.value, DVector::from_vec(sol.point))),
            LpStatus::Infeasible => Err(Error::Infeasible),
            LpStatus::Unbounded => Err(Error::Unbounded),
        }
    }

    fn lp(&self, a: &DVector<f64>) -> Result<crate::lp::LpSolution> {
        maximize_over_polyhedron(a.as_slice(), &self.lhs, self.rhs.as_slice())
    }

    /// `P − c = {x − c : x ∈ P} = {y : F y ≤ g − F c}`.
    pub fn translate(&self, c: &DVector<f64>) -> Result<Self> {
        self.check_dim(c.len())?;
        Ok(Self { lhs: self.lhs.clone(), rhs: &self.rhs - &self.lhs * c })
    }

    /// `λ P` for `λ > 0`.
    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidInput(format!("scale factor {factor}")));
        }
        Ok(Self { lhs: self.lhs.clone(), rhs: &self.rhs * factor })
    }

    pub fn intersect(&self, other: &Self) -> Result<Self> {
        self.check_dim(other.dim())?;
        let (r1, r2) = (self.num_rows(), other.num_rows());
        let mut lhs = DMatrix::zeros(r1 + r2, self.dim());
        lhs.rows_mut(0, r1).copy_from(&self.lhs);
        lhs.rows_mut(r1, r2).copy_from(&other.lhs);
        let rhs = DVector::from_iterator(r1 + r2, self.rhs.iter().chain(other.rhs.iter()).copied());
        Ok(Self { lhs, rhs })
    }

    /// Radius of the largest ∞-ball `{c + t e : ‖e‖_∞ ≤ 1}` inside the set.
    pub fn inscribed_box_radius(&self) -> Result<f64> {
        let n = self.dim();
        let r = self.num_rows();
        // Variables (c, t): F c + t ‖Fᵢ‖₁ ≤ g.
        let mut a = DMatrix::zeros(r, n + 1);
        a.view_mut((0, 0), (r, n)).copy_from(&self.lhs);
        for i in 0..r {
            a[(i, n)] = self.lhs.row(i).iter().map(|v| v.abs()).sum::<f64>();
        }
        let mut obj = vec![0.0; n + 1];
        obj[n] = 1.0;
        let sol = maximize_over_polyhedron(&obj, &a, self.rhs.as_slice())?;
        match sol.status {
            LpStatus::Optimal => Ok(sol.value),
            LpStatus::Infeasible => Err(Error::Infeasible),
            LpStatus::Unbounded => Err(Error::Unbounded),
        }
    }

    /// Drop rows implied by the others (one LP per row).
    pub fn remove_redundant(&self, tol: f64) -> Result<Self> {
        let mut keep: Vec<bool> = vec![true; self.num_rows()];
        for i in 0..self.num_rows() {
            keep[i] = false;
            let rows: Vec<usize> = (0..self.num_rows()).filter(|&k| keep[k]).collect();
            // Bound the probe with row i relaxed by a unit.
            let mut lhs = DMatrix::zeros(rows.len() + 1, self.dim());
            let mut rhs = Vec::with_capacity(rows.len() + 1);
            for (k, &src) in rows.iter().enumerate() {
                lhs.set_row(k, &self.lhs.row(src));
                rhs.push(self.rhs[src]);
            }
            lhs.set_row(rows.len(), &self.lhs.row(i));
            rhs.push(self.rhs[i] + 1.0);
            let obj: Vec<f64> = self.lhs.row(i).iter().copied().collect();
            let sol = maximize_over_polyhedron(&obj, &lhs, &rhs)?;
            keep[i] = match sol.status {
                LpStatus::Optimal => sol.value > self.rhs[i] + tol,
                LpStatus::Infeasible => return Err(Error::Infeasible),
                LpStatus::Unbounded => true,
            };
        }
        self.select_rows(&keep)
    }

    fn select_rows(&self, keep: &[bool]) -> Result<Self> {
        let idx: Vec<usize> = keep.iter().enumerate().filter(|(_, k)| **k).map(|(i, _)| i).collect();
        let lhs = self.lhs.select_rows(idx.iter());
        let rhs = self.rhs.select_rows(idx.iter());
        Self::new(lhs, rhs)
    }
}

/// Free-function form of [`HPolytope::contains`].
pub fn contains(p: &HPolytope, x: &DVector<f64>, tol: f64) -> Result<bool> {
    p.contains(x, tol)
}

pub fn is_cset(p: &HPolytope) -> Result<bool> {
    p.is_cset()
}

pub fn gauge_function(q: &HPolytope, v: &DVector<f64>) -> Result<GaugeValue> {
    q.gauge(v)
}

pub fn support(p: &HPolytope, a: &DVector<f64>) -> Result<f64> {
    p.support(a)
}

pub fn translate(p: &HPolytope, c: &DVector<f64>) -> Result<HPolytope> {
    p.translate(c)
}

/// `‖v‖_∞` with the lowest-index maximizing coordinate.
fn inf_norm_active(v: &DVector<f64>) -> (f64, usize) {
    let mut best = -1.0;
    let mut idx = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    (best.max(0.0), idx)
}

const BALL_SLACK: f64 = 1e-12;

/// Gauge map from the ∞-norm unit ball onto the C-set `q`.
pub fn gauge_map(v: &DVector<f64>, q: &HPolytope) -> Result<DVector<f64>> {
    q.check_dim(v.len())?;
    q.check_positive_rhs()?;
    let (norm, _) = inf_norm_active(v);
    if norm > 1.0 + BALL_SLACK {
        return Err(Error::InvalidInput(format!("virtual action has ∞-norm {norm} > 1")));
    }
    if norm == 0.0 {
        return Ok(DVector::zeros(v.len()));
    }
    let gamma = q.gauge_unchecked(v).value;
    if !(gamma > 0.0) {
        return Err(Error::NotACSet);
    }
    Ok(v * (norm / gamma))
}

/// General gauge map `G(v | P, Q) = (γ_P(v) / γ_Q(v)) · v`, a bijection `P → Q`.
pub fn gauge_map_general(v: &DVector<f64>, p: &HPolytope, q: &HPolytope) -> Result<DVector<f64>> {
    p.check_dim(v.len())?;
    q.check_dim(v.len())?;
    p.check_positive_rhs()?;
    q.check_positive_rhs()?;
    let gp = p.gauge_unchecked(v).value;
    if gp > 1.0 + BALL_SLACK {
        return Err(Error::InvalidInput(format!("point has gauge {gp} > 1 in the source set")));
    }
    if v.iter().all(|x| *x == 0.0) {
        return Ok(DVector::zeros(v.len()));
    }
    let gq = q.gauge_unchecked(v).value;
    if !(gq > 0.0) || !(gp > 0.0) {
        return Err(Error::NotACSet);
    }
    Ok(v * (gp / gq))
}

/// Inverse of [`gauge_map`]: sends `w ∈ q` back into the ∞-norm unit ball.
pub fn gauge_map_inverse(w: &DVector<f64>, q: &HPolytope) -> Result<DVector<f64>> {
    gauge_map_general(w, q, &HPolytope::unit_box(w.len()))
}

/// Jacobian `∂G(v|Q)/∂v` on the smooth branch selected by the lowest-index
/// active coordinate of `‖·‖_∞` and the lowest-index active row of `γ_Q`.
///
/// With `a` the active coordinate (sign `σ`) and `i` the active row,
/// `G(v) = s(v)·v` where `s(v) = gᵢ σ v_a / (Fᵢ·v)`, hence
/// `J = s I + v ∇sᵀ` with `∇s = (gᵢ σ / Fᵢ·v) e_a − (gᵢ σ v_a / (Fᵢ·v)²) Fᵢ`.
pub fn gauge_map_jacobian(v: &DVector<f64>, q: &HPolytope) -> Result<DMatrix<f64>> {
    q.check_dim(v.len())?;
    q.check_positive_rhs()?;
    let (norm, a) = inf_norm_active(v);
    if norm == 0.0 {
        return Err(Error::ZeroInput);
    }
    let sigma = v[a].signum();
    let GaugeValue { active_row: i, .. } = q.gauge_unchecked(v);
    let fi = q.lhs.row(i).transpose();
    let fv = fi.dot(v);
    if !(fv > 0.0) {
        return Err(Error::NotACSet);
    }
    let gi = q.rhs[i];
    let s = gi * sigma * v[a] / fv;
    let mut grad = fi * (-gi * sigma * v[a] / (fv * fv));
    grad[a] += gi * sigma / fv;
    let m = v.len();
    Ok(DMatrix::identity(m, m) * s + v * grad.transpose())
}

/// Jacobian of the gauge map at `v = 0`, taken as the limit along the ray
/// `v = ε e₁`, ε → 0⁺.
pub fn gauge_map_jacobian_at_origin(q: &HPolytope) -> Result<DMatrix<f64>> {
    q.check_positive_rhs()?;
    let m = q.dim();
    let mut e1 = DVector::zeros(m);
    e1[0] = 1.0;
    let GaugeValue { active_row: i, .. } = q.gauge_unchecked(&e1);
    let fi = q.lhs.row(i).transpose();
    let f1 = fi[0];
    if !(f1 > 0.0) {
        return Err(Error::NotACSet);
    }
    let s = q.rhs[i] / f1;
    let mut grad = fi * (-s / f1);
    grad[0] += s;
    Ok(DMatrix::identity(m, m) * s + e1 * grad.transpose())
}

/// JSON form `{"F": [[...]], "g": [...]}` with row-major `F`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeJson {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    pub g: Vec<f64>,
}

impl From<&HPolytope> for PolytopeJson {
    fn from(p: &HPolytope) -> Self {
        Self { f: matrix_to_rows(&p.lhs), g: p.rhs.iter().copied().collect() }
    }
}

impl TryFrom<PolytopeJson> for HPolytope {
    type Error = Error;

    fn try_from(j: PolytopeJson) -> Result<Self> {
        let ncols = j.f.first().map_or(0, Vec::len);
        let lhs = rows_to_matrix(&j.f, ncols)?;
        HPolytope::new(lhs, DVector::from_vec(j.g))
    }
}

impl Serialize for HPolytope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolytopeJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for HPolytope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = PolytopeJson::deserialize(d)?;
        HPolytope::try_from(j).map_err(serde::de::Error::custom)
    }
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Row-major nested vectors to a matrix; `ncols` is used when there are no rows.
pub fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
