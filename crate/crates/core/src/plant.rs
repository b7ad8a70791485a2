//! Frequency-regulation environment built from linearized swing equations.
//!
//! Per generator `i`:
//!
//! ```text
//! δ̇ᵢ = ωᵢ
//! Mᵢ ω̇ᵢ = −Dᵢ ωᵢ − Σⱼ Kᵢⱼ (δᵢ − δⱼ) + Σₖ bᵢₖ uₖ + Σₗ eᵢₗ dₗ
//! ```
//!
//! The synchronizing coefficients `K` come from Kron-reducing the DC network
//! Laplacian onto generator buses. Injections at non-generator buses reach
//! generators through the DC distribution factors `Φ = −L_gl L_ll⁻¹`, which
//! give the IBR placement `B̂` and the load placement `Ê = −Φ_loads` (a load
//! increase decelerates the machines). The sign lives inside `Ê`, so the
//! discrete system is exactly `x⁺ = A x + B u + E d`.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invariance::SafetySystem;
use crate::policy::{violation, Controller};
use crate::polytope::HPolytope;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub bus: usize,
    /// Inertia, per-unit·s²/rad.
    #[serde(rename = "M")]
    pub m: f64,
    /// Damping, per-unit·s/rad.
    #[serde(rename = "D")]
    pub d: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    /// Series susceptance (per-unit), `1/x` under the DC approximation.
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub angle: f64,
    pub frequency: f64,
    pub input: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { angle: 1000.0, frequency: 10.0, input: 5.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseBounds {
    /// `|δᵢ| ≤ angle` (rad).
    pub angle: f64,
    /// `|ωᵢ| ≤ frequency` (rad/s).
    pub frequency: f64,
    /// Per-IBR output limits (per-unit).
    pub ibr: Vec<f64>,
    /// Per-load deviation limits (per-unit).
    pub load: Vec<f64>,
}

/// Case file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub notes: Vec<String>,
    pub generators: Vec<GeneratorSpec>,
    pub lines: Vec<LineSpec>,
    pub ibr_buses: Vec<usize>,
    pub load_buses: Vec<usize>,
    pub bounds: CaseBounds,
    pub tau: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub cost: CostWeights,
    /// Use `B = [0; M⁻¹B̂]`, `E = [0; M⁻¹Ê]` without the step factor.
    #[serde(default)]
    pub unscaled_input_blocks: bool,
}

fn default_alpha() -> f64 {
    0.8
}

/// Electrical and discretization parameters of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub inertia: DVector<f64>,
    pub damping: DVector<f64>,
    pub stiffness: DMatrix<f64>,
    pub ibr_placement: DMatrix<f64>,
    pub load_placement: DMatrix<f64>,
    pub tau: f64,
    pub x_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub d_bar: DVector<f64>,
    pub alpha: f64,
    pub cost: CostWeights,
    pub unscaled_input_blocks: bool,
}

impl GridCase {
    pub fn num_generators(&self) -> usize {
        self.inertia.len()
    }

    pub fn num_ibrs(&self) -> usize {
        self.ibr_placement.ncols()
    }

    pub fn num_loads(&self) -> usize {
        self.load_placement.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_generators();
        if self.damping.len() != n || self.stiffness.shape() != (n, n) {
            return Err(Error::DimensionMismatch("generator parameter lengths".into()));
        }
        if self.ibr_placement.nrows() != n || self.load_placement.nrows() != n {
            return Err(Error::DimensionMismatch("placement matrices".into()));
        }
        if self.x_bar.len() != 2 * n || self.u_bar.len() != self.num_ibrs() || self.d_bar.len() != self.num_loads() {
            return Err(Error::DimensionMismatch("bound vectors".into()));
        }
        if let Some(i) = self.inertia.iter().position(|m| *m == 0.0) {
            return Err(Error::SingularInertia(i));
        }
        if self.inertia.iter().any(|m| *m < 0.0) || self.damping.iter().any(|d| *d < 0.0) {
            return Err(Error::InvalidInput("inertia must be positive and damping non-negative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidInput("tau must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `X = {|δ| ≤ δ̄, |ω| ≤ ω̄}`, `U`, `D` as centered boxes.
    pub fn safety_system(&self) -> Result<SafetySystem> {
        let (a, b, e) = build_dynamics(self)?;
        SafetySystem::new(
            a,
            b,
            e,
            HPolytope::centered_box(self.u_bar.as_slice())?,
            HPolytope::centered_box(self.d_bar.as_slice())?,
            HPolytope::centered_box(self.x_bar.as_slice())?,
        )
    }

    /// `Q = blockdiag(q_δ I, q_ω I)`, `R = r I`.
    pub fn cost_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.num_generators();
        let mut q = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            q[(i, i)] = self.cost.angle;
            q[(n + i, n + i)] = self.cost.frequency;
        }
        let r = DMatrix::identity(self.num_ibrs(), self.num_ibrs()) * self.cost.input;
        (q, r)
    }
}

impl CaseFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_case(&self) -> Result<GridCase> {
        let gen_buses: Vec<usize> = self.generators.iter().map(|g| g.bus).collect();
        let red = kron_reduce(&self.lines, &gen_buses)?;
        let column = |bus: usize| -> Result<DVector<f64>> {
            red.distribution
                .get(&bus)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("bus {bus} is not part of the network")))
        };
        let n = gen_buses.len();
        let mut ibr = DMatrix::zeros(n, self.ibr_buses.len());
        for (k, &bus) in self.ibr_buses.iter().enumerate() {
            ibr.set_column(k, &column(bus)?);
        }
        let mut load = DMatrix::zeros(n, self.load_buses.len());
        for (l, &bus) in self.load_buses.iter().enumerate() {
            load.set_column(l, &(-column(bus)?));
        }
        if self.bounds.ibr.len() != self.ibr_buses.len() || self.bounds.load.len() != self.load_buses.len() {
            return Err(Error::DimensionMismatch("bounds vs. IBR/load counts".into()));
        }
        let mut x_bar = DVector::from_element(2 * n, self.bounds.angle);
        x_bar.rows_mut(n, n).fill(self.bounds.frequency);
        let case = GridCase {
            inertia: DVector::from_iterator(n, self.generators.iter().map(|g| g.m)),
            damping: DVector::from_iterator(n, self.generators.iter().map(|g| g.d)),
            stiffness: red.stiffness,
            ibr_placement: ibr,
            load_placement: load,
            tau: self.tau,
            x_bar,
            u_bar: DVector::from_column_slice(&self.bounds.ibr),
            d_bar: DVector::from_column_slice(&self.bounds.load),
            alpha: self.alpha,
            cost: self.cost.clone(),
            unscaled_input_blocks: self.unscaled_input_blocks,
        };
        case.validate()?;
        Ok(case)
    }
}

/// Kron-reduced DC network.
#[derive(Debug, Clone)]
pub struct KronReduction {
    /// Generator-bus synchronizing matrix `L_gg − L_gl L_ll⁻¹ L_lg`.
    pub stiffness: DMatrix<f64>,
    /// Per bus label, the share of a unit injection seen by each generator.
    pub distribution: std::collections::BTreeMap<usize, DVector<f64>>,
}

/// Weighted Laplacian over the bus labels appearing in `lines`.
fn laplacian(lines: &[LineSpec]) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let mut labels: Vec<usize> = lines.iter().flat_map(|l| [l.from, l.to]).collect();
    labels.sort_unstable();
    labels.dedup();
    let index = |b: usize| labels.binary_search(&b).expect("label collected above");
    let mut lap = DMatrix::zeros(labels.len(), labels.len());
    for line in lines {
        if line.from == line.to || !(line.susceptance > 0.0) || !line.susceptance.is_finite() {
            return Err(Error::InvalidInput(format!("bad line {}-{}", line.from, line.to)));
        }
        let (i, j) = (index(line.from), index(line.to));
        lap[(i, i)] += line.susceptance;
        lap[(j, j)] += line.susceptance;
        lap[(i, j)] -= line.susceptance;
        lap[(j, i)] -= line.susceptance;
    }
    Ok((labels, lap))
}

fn is_connected(lap: &DMatrix<f64>) -> bool {
    let nb = lap.nrows();
    if nb == 0 {
        return false;
    }
    let mut seen = vec![false; nb];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..nb {
            if i != j && lap[(i, j)] != 0.0 && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

pub fn kron_reduce(lines: &[LineSpec], generator_buses: &[usize]) -> Result<KronReduction> {
    let (labels, lap) = laplacian(lines)?;
    if !is_connected(&lap) {
        return Err(Error::DisconnectedNetwork);
    }
    let mut gens = Vec::with_capacity(generator_buses.len());
    for &b in generator_buses {
        let i = labels
            .binary_search(&b)
            .map_err(|_| Error::InvalidInput(format!("generator bus {b} has no lines")))?;
        if gens.contains(&i) {
            return Err(Error::InvalidInput(format!("generator bus {b} listed twice")));
        }
        gens.push(i);
    }
    let others: Vec<usize> = (0..labels.len()).filter(|i| !gens.contains(i)).collect();
    let l_gg = lap.select_rows(&gens).select_columns(&gens);
    let mut distribution = std::collections::BTreeMap::new();
    for (k, &g) in gens.iter().enumerate() {
        let mut e = DVector::zeros(gens.len());
        e[k] = 1.0;
        distribution.insert(labels[g], e);
    }
    if others.is_empty() {
        return Ok(KronReduction { stiffness: l_gg, distribution });
    }
    let l_gl = lap.select_rows(&gens).select_columns(&others);
    let l_ll = lap.select_rows(&others).select_columns(&others);
    let chol = l_ll.cholesky().ok_or(Error::DisconnectedNetwork)?;
    let l_ll_inv_lg = chol.solve(&l_gl.transpose());
    let stiffness = &l_gg - &l_gl * &l_ll_inv_lg;
    let stiffness = (&stiffness + stiffness.transpose()) * 0.5;
    // Φ = −L_gl L_ll⁻¹ = −(L_ll⁻¹ L_lg)ᵀ.
    let phi = -l_ll_inv_lg.transpose();
    for (c, &o) in others.iter().enumerate() {
        distribution.insert(labels[o], phi.column(c).into_owned());
    }
    Ok(KronReduction { stiffness, distribution })
}

/// Kron-reduced synchronizing matrix on the generator buses.
pub fn dc_stiffness(lines: &[LineSpec], generator_buses: &[usize]) -> Result<DMatrix<f64>> {
    Ok(kron_reduce(lines, generator_buses)?.stiffness)
}

/// Forward-Euler discretization of the swing equations with state `[δ; ω]`.
pub fn build_dynamics(case: &GridCase) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    case.validate()?;
    let n = case.num_generators();
    let tau = case.tau;
    let m_inv = DMatrix::from_diagonal(&case.inertia.map(|m| 1.0 / m));
    let mut a = DMatrix::identity(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).copy_from(&(DMatrix::identity(n, n) * tau));
    a.view_mut((n, 0), (n, n)).copy_from(&(-(&m_inv * &case.stiffness) * tau));
    let damp = DMatrix::from_diagonal(&case.damping);
    a.view_mut((n, n), (n, n))
        .copy_from(&(DMatrix::identity(n, n) - (&m_inv * damp) * tau));
    let input_scale = if case.unscaled_input_blocks { 1.0 } else { tau };
    let mut b = DMatrix::zeros(2 * n, case.num_ibrs());
    b.view_mut((n, 0), (n, case.num_ibrs()))
        .copy_from(&((&m_inv * &case.ibr_placement) * input_scale));
    let mut e = DMatrix::zeros(2 * n, case.num_loads());
    e.view_mut((n, 0), (n, case.num_loads()))
        .copy_from(&((&m_inv * &case.load_placement) * input_scale));
    Ok((a, b, e))
}

/// `x⁺ = A x + B u + E d`.
pub fn step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<DVector<f64>> {
    if a.ncols() != x.len() || b.ncols() != u.len() || e.ncols() != d.len() || b.nrows() != a.nrows() || e.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch("step operands".into()));
    }
    Ok(a * x + b * u + e * d)
}

/// Uniform sampler over a polytope: exact for centered boxes, rejection
/// from the bounding box otherwise.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    set: HPolytope,
    lo: Vec<f64>,
    hi: Vec<f64>,
    exact_box: bool,
}

impl UniformSampler {
    pub fn new(set: &HPolytope) -> Result<Self> {
        let n = set.dim();
        let (mut lo, mut hi) = (vec![0.0; n], vec![0.0; n]);
        let exact_box = set.box_half_widths().is_some();
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            hi[j] = set.support(&e)?;
            lo[j] = -set.support(&(-e))?;
        }
        Ok(Self { set: set.clone(), lo, hi, exact_box })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        loop {
            let x = DVector::from_iterator(
                self.lo.len(),
                self.lo.iter().zip(&self.hi).map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l }),
            );
            if self.exact_box || self.set.max_violation(&x) <= 0.0 {
                return x;
            }
        }
    }
}

/// Autoregressive load model `d⁺ = α d + (1 − α) d̂`, `d̂ ~ Uniform(D)`.
#[derive(Debug, Clone)]
pub struct DisturbanceModel {
    pub alpha: f64,
    pub set: HPolytope,
    pub seed: u64,
    sampler: UniformSampler,
}

impl DisturbanceModel {
    pub fn new(alpha: f64, set: HPolytope, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha {alpha} outside [0, 1]")));
        }
        let sampler = UniformSampler::new(&set)?;
        Ok(Self { alpha, set, seed, sampler })
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.sampler.sample(rng)
    }

    /// A length-`len` AR sequence starting from a uniform draw.
    pub fn sequence<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(len);
        let mut d = self.sample_uniform(rng);
        for _ in 0..len {
            let next = sample_disturbance(self, &d, rng);
            out.push(std::mem::replace(&mut d, next));
        }
        out
    }
}

pub fn sample_disturbance<R: Rng + ?Sized>(model: &DisturbanceModel, d_prev: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    let fresh = model.sample_uniform(rng);
    d_prev * model.alpha + fresh * (1.0 - model.alpha)
}

/// `xᵀQx + uᵀRu`.
pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    (x.transpose() * q * x)[(0, 0)] + (u.transpose() * r * u)[(0, 0)]
}

/// Everything needed to simulate and score an episode.
#[derive(Debug, Clone)]
pub struct Environment {
    pub system: SafetySystem,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub disturbance: DisturbanceModel,
}

impl Environment {
    pub fn from_case(case: &GridCase, seed: u64) -> Result<Self> {
        let system = case.safety_system()?;
        let (q, r) = case.cost_matrices();
        let disturbance = DisturbanceModel::new(case.alpha, system.d.clone(), seed)?;
        Ok(Self { system, q, r, disturbance })
    }

    /// States are `[δ; ω]`, so half the state dimension.
    pub fn num_generators(&self) -> usize {
        self.system.state_dim() / 2
    }
}

/// A constraint counts as violated only beyond this absolute margin, so
/// states landing on a face up to rounding are not reported.
pub const VIOLATION_COUNT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    /// `x_0 … x_T`.
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    /// `J(x_t, u_t)`.
    pub costs: Vec<f64>,
    /// State-constraint violation of `x_{t+1}`.
    pub violations: Vec<f64>,
    /// Input-constraint violation of `u_t`.
    pub action_violations: Vec<f64>,
    /// Steps where the controller fell back to its linear law.
    pub fallbacks: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn accumulated_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Steps whose successor state violates `X` by more than
    /// [`VIOLATION_COUNT_TOL`].
    pub fn violation_count(&self) -> usize {
        self.violations.iter().filter(|v| **v > VIOLATION_COUNT_TOL).count()
    }

    pub fn fallback_count(&self) -> usize {
        self.fallbacks.iter().filter(|f| **f).count()
    }

    pub fn action_violation_count(&self) -> usize {
        self.action_violations.iter().filter(|v| **v > VIOLATION_COUNT_TOL).count()
    }

    /// `max_t max_i |δᵢ(t)|` over the first `generators` state coordinates.
    pub fn max_angle_deviation(&self, generators: usize) -> f64 {
        self.states.iter().map(|x| max_angle(x, generators)).fold(0.0, f64::max)
    }

    /// CSV with header `t,x_1..x_n,u_1..u_m,d_1..d_p,cost,violation`.
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        let (n, m, p) = (
            self.states.first().map_or(0, |x| x.len()),
            self.actions.first().map_or(0, |u| u.len()),
            self.disturbances.first().map_or(0, |d| d.len()),
        );
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("x_{i}")));
        cols.extend((1..=m).map(|i| format!("u_{i}")));
        cols.extend((1..=p).map(|i| format!("d_{i}")));
        cols.push("cost".into());
        cols.push("violation".into());
        writeln!(w, "{}", cols.join(","))?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.states[t].iter().map(|v| format!("{v:e}")));
            row.extend(self.actions[t].iter().map(|v| format!("{v:e}")));
            row.extend(self.disturbances[t].iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", self.costs[t]));
            row.push(format!("{:e}", self.violations[t]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn max_angle(x: &DVector<f64>, generators: usize) -> f64 {
    x.rows(0, generators).amax()
}

/// Simulate with a pre-drawn disturbance sequence (one entry per step).
pub fn rollout_with_disturbances(
    policy: &dyn Controller,
    env: &Environment,
    x0: &DVector<f64>,
    disturbances: &[DVector<f64>],
) -> Result<Trajectory> {
    if disturbances.is_empty() {
        return Err(Error::InvalidInput("rollout needs at least one step".into()));
    }
    let sys = &env.system;
    let mut traj = Trajectory { states: vec![x0.clone()], ..Default::default() };
    let mut x = x0.clone();
    for (t, d) in disturbances.iter().enumerate() {
        let (u, fallback) = policy
            .act_traced(&x)
            .map_err(|e| Error::PolicyStep { step: t, source: Box::new(e) })?;
        traj.fallbacks.push(fallback);
        let next = step(&sys.a, &sys.b, &sys.e, &x, &u, d)?;
        traj.costs.push(stage_cost(&x, &u, &env.q, &env.r));
        traj.violations.push(violation(&next, &sys.x));
        traj.action_violations.push(violation(&u, &sys.u));
        traj.actions.push(u);
        traj.disturbances.push(d.clone());
        traj.states.push(next.clone());
        x = next;
    }
    Ok(traj)
}

/// Simulate `steps` steps drawing AR disturbances from `rng`.
pub fn rollout<R: Rng + ?Sized>(
    policy: &dyn Controller,
    env: &Environment,
    x0: &DVector<f64>,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidInput("rollout needs at least one step".into()));
    }
    let ds = env.disturbance.sequence(steps, rng);
    rollout_with_disturbances(policy, env, x0, &ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(from: usize, to: usize, b: f64) -> LineSpec {
        LineSpec { from, to, susceptance: b }
    }

    fn single_machine(tau: f64, m: f64, d: f64) -> GridCase {
        GridCase {
            inertia: DVector::from_element(1, m),
            damping: DVector::from_element(1, d),
            stiffness: DMatrix::zeros(1, 1),
            ibr_placement: DMatrix::from_element(1, 1, 1.0),
            load_placement: DMatrix::from_element(1, 1, -1.0),
            tau,
            x_bar: DVector::from_vec(vec![0.1, 0.5]),
            u_bar: DVector::from_element(1, 1.0),
            d_bar: DVector::from_element(1, 0.5),
            alpha: 0.8,
            cost: CostWeights::default(),
            unscaled_input_blocks: false,
        }
    }

    #[test]
    fn two_bus_stiffness() {
        let k = dc_stiffness(&[line(1, 2, 3.0)], &[1, 2]).unwrap();
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[3.0, -3.0, -3.0, 3.0]));
    }

    #[test]
    fn triangle_stiffness() {
        let b = 2.5;
        let k = dc_stiffness(&[line(1, 2, b), line(2, 3, b), line(1, 3, b)], &[1, 2, 3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(k[(i, j)], if i == j { 2.0 * b } else { -b }, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn series_lines_reduce_to_equivalent() {
        // 1 -(2)- 3 -(2)- 2 gives an equivalent susceptance of 1.
        let red = kron_reduce(&[line(1, 3, 2.0), line(3, 2, 2.0)], &[1, 2]).unwrap();
        assert_abs_diff_eq!(red.stiffness, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]), epsilon = 1e-14);
        assert_abs_diff_eq!(red.distribution[&3], DVector::from_vec(vec![0.5, 0.5]), epsilon = 1e-14);
    }

    #[test]
    fn disconnected_network_rejected() {
        let err = dc_stiffness(&[line(1, 2, 1.0), line(3, 4, 1.0)], &[1, 3]).unwrap_err();
        assert_eq!(err, Error::DisconnectedNetwork);
    }

    #[test]
    fn double_integrator_without_coupling() {
        let mut case = single_machine(0.1, 1.0, 0.0);
        case.inertia = DVector::from_element(1, 2.0);
        let (a, _, _) = build_dynamics(&case).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
    }

    #[test]
    fn scalar_damped_machine() {
        let case = single_machine(0.05, 1.0, 2.0);
        let (a, b, e) = build_dynamics(&case).unwrap();
        assert_abs_diff_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 0.9]), epsilon = 1e-15);
        assert_abs_diff_eq!(b, DMatrix::from_row_slice(2, 1, &[0.0, 0.05]), epsilon = 1e-15);
        assert_abs_diff_eq!(e, DMatrix::from_row_slice(2, 1, &[0.0, -0.05]), epsilon = 1e-15);
        let mut literal = case.clone();
        literal.unscaled_input_blocks = true;
        let (_, b, _) = build_dynamics(&literal).unwrap();
        assert_abs_diff_eq!(b, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn zero_inertia_rejected() {
        let case = single_machine(0.05, 0.0, 1.0);
        assert_eq!(build_dynamics(&case).unwrap_err(), Error::SingularInertia(0));
    }

    #[test]
    fn step_is_affine() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 1);
        let e = DMatrix::zeros(2, 1);
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let one = DVector::from_element(1, 1.0);
        assert_eq!(step(&a, &b, &e, &x, &one, &one).unwrap(), x);
        let z = DVector::zeros(2);
        assert_eq!(step(&a, &b, &e, &z, &DVector::zeros(1), &DVector::zeros(1)).unwrap(), z);
        assert!(step(&a, &b, &e, &x, &DVector::zeros(2), &one).is_err());
    }

    #[test]
    fn disturbance_limits() {
        use rand::SeedableRng;
        let set = HPolytope::centered_box(&[0.3, 0.2]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let sticky = DisturbanceModel::new(1.0, set.clone(), 1).unwrap();
        let d = DVector::from_vec(vec![0.1, -0.2]);
        assert_eq!(sample_disturbance(&sticky, &d, &mut rng), d);
        let fresh = DisturbanceModel::new(0.0, set.clone(), 1).unwrap();
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_disturbance(&fresh, &d, &mut r1), fresh.sample_uniform(&mut r2));
    }

    #[test]
    fn default_cost_weights() {
        let n = 3;
        let mut q = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            q[(i, i)] = 1000.0;
            q[(n + i, n + i)] = 10.0;
        }
        let r = DMatrix::identity(3, 3) * 5.0;
        let mut x = DVector::zeros(6);
        x[0] = 1.0;
        assert_eq!(stage_cost(&x, &DVector::zeros(3), &q, &r), 1000.0);
        assert_eq!(stage_cost(&DVector::zeros(6), &DVector::zeros(3), &q, &r), 0.0);
    }

    #[test]
    fn case_file_validation() {
        let text = r#"{
            "generators": [{"bus": 1, "M": 1.0, "D": 0.1}, {"bus": 2, "M": 1.0, "D": 0.1}],
            "lines": [{"from": 1, "to": 3, "susceptance": 2.0}, {"from": 3, "to": 2, "susceptance": 2.0}],
            "ibr_buses": [1], "load_buses": [3],
            "bounds": {"angle": 0.1, "frequency": 0.5, "ibr": [1.0], "load": [0.2]},
            "tau": 0.05
        }"#;
        let case = CaseFile::from_json(text).unwrap().to_case().unwrap();
        assert_eq!(case.alpha, 0.8);
        assert_abs_diff_eq!(case.load_placement, DMatrix::from_column_slice(2, 1, &[-0.5, -0.5]), epsilon = 1e-14);
        assert_eq!(case.ibr_placement, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let bad = text.replace("\"ibr\": [1.0]", "\"ibr\": [1.0, 2.0]");
        assert!(CaseFile::from_json(&bad).unwrap().to_case().is_err());
    }
}
