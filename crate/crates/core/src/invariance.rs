//! Robust controlled invariance for `x⁺ = A x + B u + E d`.
//!
//! A certificate is a symmetric polytope `S = {−s̄ ≤ V_s x ≤ s̄}` together
//! with a linear gain `K`. Given a verified certificate, the safe action set
//!
//! ```text
//! Ω(x) = { u ∈ U : −s̄ − min_d V_sᵢ E d ≤ V_sᵢ (A x + B u) ≤ s̄ − max_d V_sᵢ E d  ∀ i }
//! ```
//!
//! is a polytope in `u`, and `Ω(x) − K x` is a C-set for every `x` in the
//! interior of `S`. The per-row disturbance extrema are computed once per
//! certificate and reused for every state.
//!
//! Certificates come either from a file (any external synthesis tool) or
//! from [`gain_search`], which runs the maximal robust positively invariant
//! set iteration for a list of fixed candidate gains.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::polytope::{matrix_to_rows, rows_to_matrix, HPolytope};

/// Linear system with polytopic input, disturbance and state sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub u: HPolytope,
    pub d: HPolytope,
    pub x: HPolytope,
}

impl SafetySystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        e: DMatrix<f64>,
        u: HPolytope,
        d: HPolytope,
        x: HPolytope,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || e.nrows() != n {
            return Err(Error::DimensionMismatch("A, B, E row counts".into()));
        }
        if u.dim() != b.ncols() || d.dim() != e.ncols() || x.dim() != n {
            return Err(Error::DimensionMismatch("set dimensions vs. A, B, E".into()));
        }
        if a.iter().chain(b.iter()).chain(e.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("system matrices"));
        }
        for (name, set) in [("U", &u), ("D", &d), ("X", &x)] {
            if !set.is_bounded()? {
                return Err(Error::InvalidInput(format!("{name} is unbounded")));
            }
        }
        if !d.contains(&DVector::zeros(d.dim()), 0.0)? {
            return Err(Error::InvalidInput("D must contain the zero disturbance".into()));
        }
        Ok(Self { a, b, e, u, d, x })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.e * d
    }
}

/// `(S, K)` with the per-row disturbance extrema of `V_sᵢ E d` over `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct RciCertificate {
    pub vs: DMatrix<f64>,
    pub s_bar: DVector<f64>,
    pub k: DMatrix<f64>,
    pub tighten_lo: DVector<f64>,
    pub tighten_hi: DVector<f64>,
    pub meta: CertificateMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateMeta {
    pub source: String,
    pub tolerances: Tolerances,
}

impl Default for CertificateMeta {
    fn default() -> Self {
        Self { source: "unspecified".into(), tolerances: Tolerances::default() }
    }
}

impl RciCertificate {
    pub fn new(vs: DMatrix<f64>, s_bar: DVector<f64>, k: DMatrix<f64>, sys: &SafetySystem) -> Result<Self> {
        Self::with_meta(vs, s_bar, k, sys, CertificateMeta::default())
    }

    pub fn with_meta(
        vs: DMatrix<f64>,
        s_bar: DVector<f64>,
        k: DMatrix<f64>,
        sys: &SafetySystem,
        meta: CertificateMeta,
    ) -> Result<Self> {
        if vs.ncols() != sys.state_dim() || vs.nrows() != s_bar.len() {
            return Err(Error::DimensionMismatch("V_s / s̄ vs. state dimension".into()));
        }
        if k.nrows() != sys.input_dim() || k.ncols() != sys.state_dim() {
            return Err(Error::DimensionMismatch("K must be m × n".into()));
        }
        if s_bar.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::CertificateInvalid("s̄ must be strictly positive".into()));
        }
        let (tighten_lo, tighten_hi) = tighten_rows(&vs, sys)?;
        Ok(Self { vs, s_bar, k, tighten_lo, tighten_hi, meta })
    }

    pub fn num_rows(&self) -> usize {
        self.vs.nrows()
    }

    /// `S` as a generic halfspace polytope.
    pub fn s_set(&self) -> HPolytope {
        HPolytope::from_symmetric(&self.vs, &self.s_bar).expect("certificate rows are validated")
    }

    pub fn contains_state(&self, x: &DVector<f64>, tol: f64) -> bool {
        let vx = &self.vs * x;
        vx.iter().zip(self.s_bar.iter()).all(|(v, s)| v.abs() <= s + tol)
    }

    /// `minᵢ (s̄ᵢ − |V_sᵢ x|) / s̄ᵢ`: positive inside, zero on the boundary.
    pub fn relative_margin(&self, x: &DVector<f64>) -> f64 {
        let vx = &self.vs * x;
        vx.iter().zip(self.s_bar.iter()).map(|(v, s)| (s - v.abs()) / s).fold(f64::INFINITY, f64::min)
    }

    pub fn linear_action(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * x
    }
}

fn tighten_rows(vs: &DMatrix<f64>, sys: &SafetySystem) -> Result<(DVector<f64>, DVector<f64>)> {
    let r = vs.nrows();
    let mut lo = DVector::zeros(r);
    let mut hi = DVector::zeros(r);
    let et = sys.e.transpose();
    for i in 0..r {
        let w: DVector<f64> = &et * vs.row(i).transpose();
        if w.iter().all(|v| *v == 0.0) {
            continue;
        }
        hi[i] = sys.d.support(&w)?;
        lo[i] = -sys.d.support(&(-w))?;
    }
    Ok((lo, hi))
}

/// Per-row `(min, max)` of `V_sᵢ E d` over `d ∈ D`.
pub fn tighten(cert: &RciCertificate, sys: &SafetySystem) -> Result<(DVector<f64>, DVector<f64>)> {
    if cert.vs.ncols() != sys.state_dim() {
        return Err(Error::DimensionMismatch("certificate vs. system".into()));
    }
    tighten_rows(&cert.vs, sys)
}

/// Rows whose coefficients are this small relative to the row scale are
/// treated as constant constraints.
const ZERO_ROW: f64 = 1e-13;

fn push_row(rows: &mut Vec<DVector<f64>>, rhs: &mut Vec<f64>, row: DVector<f64>, b: f64, scale: f64, tol: f64) -> Result<()> {
    if row.amax() <= ZERO_ROW * scale.max(1.0) {
        if b < -tol {
            return Err(Error::StateOutsideS);
        }
        return Ok(());
    }
    rows.push(row);
    rhs.push(b);
    Ok(())
}

/// `Ω(x)`: inputs keeping the successor in `S` for every disturbance in `D`.
pub fn safe_action_set(cert: &RciCertificate, sys: &SafetySystem, x: &DVector<f64>) -> Result<HPolytope> {
    let tol = cert.meta.tolerances.membership;
    if x.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch("state length".into()));
    }
    if !cert.contains_state(x, tol) {
        return Err(Error::StateOutsideS);
    }
    assemble_action_set(cert, sys, x, tol)
}

fn assemble_action_set(cert: &RciCertificate, sys: &SafetySystem, x: &DVector<f64>, tol: f64) -> Result<HPolytope> {
    let m = sys.input_dim();
    let vsb = &cert.vs * &sys.b;
    let vsax = &cert.vs * (&sys.a * x);
    let mut rows = Vec::with_capacity(sys.u.num_rows() + 2 * cert.num_rows());
    let mut rhs = Vec::with_capacity(rows.capacity());
    for i in 0..sys.u.num_rows() {
        rows.push(sys.u.lhs().row(i).transpose());
        rhs.push(sys.u.rhs()[i]);
    }
    // Upper rows first, then lower rows, mirroring the `[V; −V]` layout of `S`.
    for upper in [true, false] {
        for i in 0..cert.num_rows() {
            let scale = cert.vs.row(i).amax();
            if upper {
                let b = cert.s_bar[i] - cert.tighten_hi[i] - vsax[i];
                push_row(&mut rows, &mut rhs, vsb.row(i).transpose(), b, scale, tol)?;
            } else {
                let b = cert.s_bar[i] + cert.tighten_lo[i] + vsax[i];
                let neg = vsb.row(i).transpose().map(|v| if v == 0.0 { 0.0 } else { -v });
                push_row(&mut rows, &mut rhs, neg, b, scale, tol)?;
            }
        }
    }
    let lhs = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
    HPolytope::new(lhs, DVector::from_vec(rhs))
}

/// `Ω̂ = Ω(x) − K x`, a C-set for `x` strictly inside `S`.
pub fn shifted_safe_action_set(cert: &RciCertificate, sys: &SafetySystem, x: &DVector<f64>) -> Result<HPolytope> {
    let tol = cert.meta.tolerances;
    if x.len() != sys.state_dim() {
        return Err(Error::DimensionMismatch("state length".into()));
    }
    let margin = cert.relative_margin(x);
    if margin < -tol.membership {
        return Err(Error::StateOutsideS);
    }
    if margin < tol.interior_eps {
        return Err(Error::StateOnBoundary);
    }
    let omega = assemble_action_set(cert, sys, x, tol.membership)?;
    let shifted = omega.translate(&cert.linear_action(x))?;
    if shifted.rhs().iter().any(|g| *g <= tol.strict_interior) {
        return Err(Error::NotACSet);
    }
    Ok(shifted)
}

/// Worst-case slack of one constraint row.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RowSlack {
    pub row: usize,
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerificationReport {
    /// `(A+BK)S ⊕ ED ⊆ S`, one entry per row of the expanded `S`.
    pub invariance: Vec<RowSlack>,
    /// `S ⊆ X`, one entry per row of `X`.
    pub safety: Vec<RowSlack>,
    /// `KS ⊆ U`, one entry per row of `U`.
    pub control: Vec<RowSlack>,
    pub threshold: f64,
    pub valid: bool,
}

impl VerificationReport {
    pub fn violated(&self) -> impl Iterator<Item = (&'static str, &RowSlack)> {
        let t = self.threshold;
        let inv = self.invariance.iter().map(|r| ("invariance", r));
        let saf = self.safety.iter().map(|r| ("safety", r));
        let ctl = self.control.iter().map(|r| ("control", r));
        inv.chain(saf).chain(ctl).filter(move |(_, r)| r.slack < -t)
    }

    pub fn worst(&self) -> f64 {
        self.invariance
            .iter()
            .chain(&self.safety)
            .chain(&self.control)
            .map(|r| r.slack)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_valid(&self) -> bool {
        self.invariance.iter().all(|r| r.slack >= -self.threshold)
            && self.safety.iter().all(|r| r.slack >= -self.threshold)
            && self.control.iter().all(|r| r.slack >= -self.threshold)
    }
}

/// Check invariance, safety and control-bound containments by support LPs over `S`.
pub fn verify_certificate(cert: &RciCertificate, sys: &SafetySystem) -> Result<VerificationReport> {
    if cert.vs.ncols() != sys.state_dim() || cert.k.nrows() != sys.input_dim() {
        return Err(Error::DimensionMismatch("certificate vs. system".into()));
    }
    let s = cert.s_set();
    let acl_t = sys.closed_loop(&cert.k).transpose();
    let et = sys.e.transpose();
    let mut invariance = Vec::with_capacity(s.num_rows());
    for j in 0..s.num_rows() {
        let f: DVector<f64> = s.lhs().row(j).transpose();
        let reach = s.support(&(&acl_t * &f))?;
        let dist = sys.d.support(&(&et * &f))?;
        invariance.push(RowSlack { row: j, slack: s.rhs()[j] - reach - dist });
    }
    let mut safety = Vec::with_capacity(sys.x.num_rows());
    for j in 0..sys.x.num_rows() {
        let f: DVector<f64> = sys.x.lhs().row(j).transpose();
        safety.push(RowSlack { row: j, slack: sys.x.rhs()[j] - s.support(&f)? });
    }
    let kt = cert.k.transpose();
    let mut control = Vec::with_capacity(sys.u.num_rows());
    for j in 0..sys.u.num_rows() {
        let f: DVector<f64> = sys.u.lhs().row(j).transpose();
        control.push(RowSlack { row: j, slack: sys.u.rhs()[j] - s.support(&(&kt * f))? });
    }
    let threshold = cert.meta.tolerances.certificate_slack;
    let mut report = VerificationReport { invariance, safety, control, threshold, valid: false };
    report.valid = report.check_valid();
    Ok(report)
}

/// Spectral radius via the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Symmetric polytope `{|dirsᵢ·x| ≤ boundᵢ}` with rows normalized to unit ∞-norm.
#[derive(Debug, Clone)]
struct SymmetricSet {
    dirs: Vec<DVector<f64>>,
    bound: Vec<f64>,
}

impl SymmetricSet {
    fn push(&mut self, dir: DVector<f64>, bound: f64) -> bool {
        let scale = dir.amax();
        if scale <= ZERO_ROW {
            return false;
        }
        let mut dir = dir / scale;
        let mut bound = bound / scale;
        // Canonical sign: first significant coefficient positive.
        if let Some(first) = dir.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                dir = -dir;
            }
        }
        for (d, b) in self.dirs.iter().zip(self.bound.iter_mut()) {
            if (d - &dir).amax() <= 1e-12 {
                *b = b.min(bound);
                return true;
            }
        }
        bound = bound.max(f64::MIN_POSITIVE);
        self.dirs.push(dir);
        self.bound.push(bound);
        true
    }

    fn to_polytope(&self) -> Result<HPolytope> {
        let (v, b) = self.to_matrices();
        HPolytope::from_symmetric(&v, &b)
    }

    fn to_matrices(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dirs.first().map_or(0, |d| d.len());
        let v = DMatrix::from_fn(self.dirs.len(), n, |i, j| self.dirs[i][j]);
        (v, DVector::from_column_slice(&self.bound))
    }

    /// Drop symmetric row pairs implied by the rest.
    fn prune(&mut self, tol: f64) -> Result<()> {
        let mut i = 0;
        while i < self.dirs.len() && self.dirs.len() > 1 {
            let dir = self.dirs.remove(i);
            let bound = self.bound.remove(i);
            let mut probe = self.clone();
            probe.dirs.push(dir.clone());
            probe.bound.push(bound + 1.0 + bound.abs());
            let best = probe.to_polytope()?.support(&dir);
            let redundant = matches!(best, Ok(v) if v <= bound + tol * (1.0 + bound.abs()));
            if redundant {
                continue;
            }
            if let Err(e) = best {
                if e != Error::Unbounded {
                    return Err(e);
                }
            }
            self.dirs.insert(i, dir);
            self.bound.insert(i, bound);
            i += 1;
        }
        Ok(())
    }
}

/// Options and trace for [`max_rpi_for_gain`].
#[derive(Debug, Clone)]
pub struct RpiOptions {
    pub max_iter: usize,
    /// Relative tolerance for declaring `S_{k+1} = S_k`.
    pub tol: f64,
    /// Give up once `S` needs more than this many symmetric row pairs.
    pub max_pairs: usize,
}

impl Default for RpiOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-10, max_pairs: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct RpiResult {
    pub set: HPolytope,
    pub iterations: usize,
    /// `S_0, S_1, …` as generated (after pruning).
    pub history: Vec<HPolytope>,
}

/// Maximal robust positively invariant set of `x⁺ = (A+BK)x + Ed` inside
/// `X ∩ {x : Kx ∈ U}`, by the iteration
/// `S_{k+1} = S_k ∩ {x : (A+BK)x ∈ S_k ⊖ ED}`.
pub fn max_rpi_for_gain(sys: &SafetySystem, k: &DMatrix<f64>, opts: &RpiOptions) -> Result<RpiResult> {
    if k.nrows() != sys.input_dim() || k.ncols() != sys.state_dim() {
        return Err(Error::DimensionMismatch("K must be m × n".into()));
    }
    let acl = sys.closed_loop(k);
    let rho = spectral_radius(&acl);
    if !(rho < 1.0) {
        return Err(Error::Unstable(rho));
    }
    let (vx, xb) = sys
        .x
        .as_symmetric()
        .ok_or_else(|| Error::InvalidInput("X must be symmetric for RPI iteration".into()))?;
    let (vu, ub) = sys
        .u
        .as_symmetric()
        .ok_or_else(|| Error::InvalidInput("U must be symmetric for RPI iteration".into()))?;
    if sys.d.as_symmetric().is_none() {
        return Err(Error::InvalidInput("D must be symmetric for RPI iteration".into()));
    }

    let mut set = SymmetricSet { dirs: Vec::new(), bound: Vec::new() };
    for i in 0..vx.nrows() {
        set.push(vx.row(i).transpose(), xb[i]);
    }
    let vuk = &vu * k;
    for i in 0..vuk.nrows() {
        set.push(vuk.row(i).transpose(), ub[i]);
    }
    set.prune(opts.tol)?;
    let mut history = vec![set.to_polytope()?];

    let acl_t = acl.transpose();
    let et = sys.e.transpose();
    for iter in 0..opts.max_iter {
        let current = set.to_polytope()?;
        let mut additions = Vec::new();
        for (dir, bound) in set.dirs.iter().zip(&set.bound) {
            let pre_dir: DVector<f64> = &acl_t * dir;
            let w: DVector<f64> = &et * dir;
            let h = if w.amax() == 0.0 { 0.0 } else { sys.d.support(&w)? };
            let pre_bound = bound - h;
            if pre_bound <= 0.0 {
                return Err(Error::EmptyInterior);
            }
            if pre_dir.amax() <= ZERO_ROW {
                continue;
            }
            let reach = current.support(&pre_dir)?;
            if reach > pre_bound + opts.tol * (1.0 + pre_bound.abs()) {
                additions.push((pre_dir, pre_bound));
            }
        }
        if additions.is_empty() {
            let polytope = set.to_polytope()?;
            if polytope.inscribed_box_radius()? <= 0.0 {
                return Err(Error::EmptyInterior);
            }
            return Ok(RpiResult { set: polytope, iterations: iter, history });
        }
        for (dir, bound) in additions {
            set.push(dir, bound);
        }
        set.prune(opts.tol)?;
        if set.dirs.len() > opts.max_pairs {
            return Err(Error::SetTooComplex(opts.max_pairs));
        }
        history.push(set.to_polytope()?);
    }
    Err(Error::NotConverged(opts.max_iter))
}

/// Outcome of one candidate in [`gain_search`].
#[derive(Debug, Clone)]
pub struct CandidateOutcome {
    pub index: usize,
    pub score: Option<f64>,
    pub rows: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GainSearchResult {
    pub certificate: RciCertificate,
    pub report: VerificationReport,
    pub best_index: usize,
    pub outcomes: Vec<CandidateOutcome>,
}

/// Run the RPI iteration for every candidate gain and keep the verified
/// certificate whose `S` contains the largest ∞-ball.
pub fn gain_search(sys: &SafetySystem, candidates: &[DMatrix<f64>], opts: &RpiOptions) -> Result<GainSearchResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("empty candidate list".into()));
    }
    let mut best: Option<(f64, usize, RciCertificate, VerificationReport)> = None;
    let mut outcomes = Vec::with_capacity(candidates.len());
    for (index, k) in candidates.iter().enumerate() {
        let attempt = (|| -> Result<(f64, RciCertificate, VerificationReport)> {
            let rpi = max_rpi_for_gain(sys, k, opts)?;
            let (vs, s_bar) = rpi.set.as_symmetric().expect("RPI sets are stored symmetrically");
            let meta = CertificateMeta {
                source: format!("max-rpi gain-search candidate {index} ({} iterations)", rpi.iterations),
                tolerances: Tolerances::default(),
            };
            let cert = RciCertificate::with_meta(vs, s_bar, k.clone(), sys, meta)?;
            let report = verify_certificate(&cert, sys)?;
            if !report.valid {
                return Err(Error::CertificateInvalid(format!("worst slack {:.3e}", report.worst())));
            }
            Ok((rpi.set.inscribed_box_radius()?, cert, report))
        })();
        match attempt {
            Ok((score, cert, report)) => {
                outcomes.push(CandidateOutcome { index, score: Some(score), rows: cert.num_rows(), error: None });
                if best.as_ref().is_none_or(|(s, ..)| score > *s) {
                    best = Some((score, index, cert, report));
                }
            }
            Err(e) => outcomes.push(CandidateOutcome { index, score: None, rows: 0, error: Some(e.to_string()) }),
        }
    }
    let (_, best_index, certificate, report) = best.ok_or(Error::NoValidGain)?;
    Ok(GainSearchResult { certificate, report, best_index, outcomes })
}

/// Infinite-horizon discounted LQR gain (`u = K x`) by Riccati value iteration.
pub fn riccati_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    discount: f64,
) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    let at = a.transpose();
    let bt = b.transpose();
    for _ in 0..100_000 {
        let btp = &bt * &p;
        let gram = r + (&btp * b) * discount;
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("R + BᵀPB not positive definite".into()))?;
        let gain_rhs = &btp * a * discount;
        let feedback = chol.solve(&gain_rhs);
        let next = q + (&at * &p * a) * discount - gain_rhs.transpose() * &feedback;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("Riccati iteration diverged".into()));
        }
        if delta <= 1e-12 * (1.0 + p.amax()) {
            return Ok(-feedback);
        }
    }
    Err(Error::NumericalFailure("Riccati iteration did not converge".into()))
}

/// Candidate gains for [`gain_search`]: `K = 0` plus Riccati gains over a
/// sweep of state/input weights. Weights are normalized by the box
/// half-widths of `X` and `U` when those are boxes.
pub fn candidate_gains(sys: &SafetySystem, state_weights: &[f64], input_weights: &[f64], discount: f64) -> Result<Vec<DMatrix<f64>>> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let xw = sys.x.box_half_widths().unwrap_or_else(|| vec![1.0; n]);
    let uw = sys.u.box_half_widths().unwrap_or_else(|| vec![1.0; m]);
    let qn = DMatrix::from_diagonal(&DVector::from_iterator(n, xw.iter().map(|w| 1.0 / (w * w))));
    let rn = DMatrix::from_diagonal(&DVector::from_iterator(m, uw.iter().map(|w| 1.0 / (w * w))));
    let mut gains = vec![DMatrix::zeros(m, n)];
    for &qs in state_weights {
        for &rs in input_weights {
            gains.push(riccati_gain(&sys.a, &sys.b, &(&qn * qs), &(&rn * rs), discount)?);
        }
    }
    Ok(gains)
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateFile {
    #[serde(rename = "Vs")]
    pub vs: Vec<Vec<f64>>,
    pub s_bar: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(default)]
    pub meta: CertificateMeta,
}

impl CertificateFile {
    pub fn from_certificate(cert: &RciCertificate) -> Self {
        Self {
            vs: matrix_to_rows(&cert.vs),
            s_bar: cert.s_bar.iter().copied().collect(),
            k: matrix_to_rows(&cert.k),
            meta: cert.meta.clone(),
        }
    }

    /// Rebuild the certificate, recomputing tightenings against `sys`.
    pub fn into_certificate(self, sys: &SafetySystem) -> Result<RciCertificate> {
        let vs = rows_to_matrix(&self.vs, sys.state_dim())?;
        let k = rows_to_matrix(&self.k, sys.state_dim())?;
        RciCertificate::with_meta(vs, DVector::from_vec(self.s_bar), k, sys, self.meta)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "U")]
    pub u: HPolytope,
    #[serde(rename = "D")]
    pub d: HPolytope,
    #[serde(rename = "X")]
    pub x: HPolytope,
}

impl SystemFile {
    pub fn from_system(sys: &SafetySystem) -> Self {
        Self {
            a: matrix_to_rows(&sys.a),
            b: matrix_to_rows(&sys.b),
            e: matrix_to_rows(&sys.e),
            u: sys.u.clone(),
            d: sys.d.clone(),
            x: sys.x.clone(),
        }
    }

    pub fn into_system(self) -> Result<SafetySystem> {
        let n = self.a.len();
        let a = rows_to_matrix(&self.a, n)?;
        let b = rows_to_matrix(&self.b, self.u.dim())?;
        let e = rows_to_matrix(&self.e, self.d.dim())?;
        SafetySystem::new(a, b, e, self.u, self.d, self.x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_system(d_bar: f64) -> SafetySystem {
        SafetySystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            HPolytope::centered_box(&[10.0]).unwrap(),
            HPolytope::centered_box(&[d_bar]).unwrap(),
            HPolytope::centered_box(&[1.0]).unwrap(),
        )
        .unwrap()
    }

    fn box_system(d_bar: f64) -> SafetySystem {
        SafetySystem::new(
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            HPolytope::centered_box(&[1.0, 1.0]).unwrap(),
            HPolytope::centered_box(&[d_bar, d_bar]).unwrap(),
            HPolytope::centered_box(&[1.0, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn unit_cert(sys: &SafetySystem) -> RciCertificate {
        RciCertificate::new(DMatrix::identity(2, 2), DVector::from_element(2, 1.0), DMatrix::zeros(2, 2), sys).unwrap()
    }

    #[test]
    fn zero_disturbance_gives_zero_tightening() {
        let mut sys = box_system(0.4);
        sys.e = DMatrix::zeros(2, 2);
        let (lo, hi) = tighten(&unit_cert(&sys), &sys).unwrap();
        assert_eq!(lo, DVector::zeros(2));
        assert_eq!(hi, DVector::zeros(2));
    }

    #[test]
    fn box_tightening() {
        let sys = box_system(0.4);
        let cert = unit_cert(&sys);
        assert_abs_diff_eq!(cert.tighten_hi, DVector::from_element(2, 0.4), epsilon = 1e-12);
        assert_abs_diff_eq!(cert.tighten_lo, DVector::from_element(2, -0.4), epsilon = 1e-12);
    }

    #[test]
    fn verification_hand_examples() {
        let ok = box_system(0.4);
        let report = verify_certificate(&unit_cert(&ok), &ok).unwrap();
        assert!(report.valid);
        let inv_worst = report.invariance.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(inv_worst, 0.1, epsilon = 1e-12);
        // S = X, so the safety rows are tight.
        assert_abs_diff_eq!(report.worst(), 0.0, epsilon = 1e-12);

        let bad = box_system(0.6);
        let report = verify_certificate(&unit_cert(&bad), &bad).unwrap();
        assert!(!report.valid);
        let violated: Vec<_> = report.violated().collect();
        assert_eq!(violated.len(), 4);
        assert!(violated.iter().all(|(kind, r)| *kind == "invariance" && (r.slack + 0.1).abs() < 1e-12));
    }

    #[test]
    fn enlarged_set_fails_safety() {
        let sys = box_system(0.4);
        let cert = RciCertificate::new(DMatrix::identity(2, 2), DVector::from_element(2, 1.5), DMatrix::zeros(2, 2), &sys).unwrap();
        let report = verify_certificate(&cert, &sys).unwrap();
        assert!(!report.valid);
        assert!(report.safety.iter().all(|r| r.slack < 0.0));
    }

    #[test]
    fn safe_action_set_direct_substitution() {
        // D = {0}, A = B = I, S = X = box, x = 0 → Ω(0) = U ∩ {±B u ≤ s̄}.
        let sys = SafetySystem::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            HPolytope::centered_box(&[2.0, 0.5]).unwrap(),
            HPolytope::centered_box(&[0.0, 0.0]).unwrap(),
            HPolytope::centered_box(&[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let cert = unit_cert(&sys);
        let omega = safe_action_set(&cert, &sys, &DVector::zeros(2)).unwrap();
        let expected = HPolytope::centered_box(&[2.0, 0.5]).unwrap().intersect(&HPolytope::unit_box(2)).unwrap();
        assert_eq!(omega, expected);
        assert!(matches!(
            safe_action_set(&cert, &sys, &DVector::from_vec(vec![1.5, 0.0])),
            Err(Error::StateOutsideS)
        ));
    }

    #[test]
    fn shifted_set_at_origin_and_boundary() {
        let sys = box_system(0.4);
        let cert = unit_cert(&sys);
        let x0 = DVector::zeros(2);
        assert_eq!(
            shifted_safe_action_set(&cert, &sys, &x0).unwrap(),
            safe_action_set(&cert, &sys, &x0).unwrap()
        );
        let edge = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(shifted_safe_action_set(&cert, &sys, &edge).unwrap_err(), Error::StateOnBoundary);
    }

    #[test]
    fn scalar_rpi_is_whole_interval() {
        let sys = scalar_system(0.4);
        let rpi = max_rpi_for_gain(&sys, &DMatrix::zeros(1, 1), &RpiOptions::default()).unwrap();
        let (v, b) = rpi.set.as_symmetric().unwrap();
        assert_eq!(v.nrows(), 1);
        assert_abs_diff_eq!(b[0] / v[(0, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nilpotent_without_disturbance_converges_fast() {
        // A + BK = [[0,1],[0,0]] with K = 0.
        let sys = SafetySystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::identity(2, 2),
            HPolytope::centered_box(&[1.0]).unwrap(),
            HPolytope::centered_box(&[0.0, 0.0]).unwrap(),
            HPolytope::centered_box(&[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let rpi = max_rpi_for_gain(&sys, &DMatrix::zeros(1, 2), &RpiOptions::default()).unwrap();
        assert!(rpi.iterations <= 2);
        assert_eq!(rpi.set.num_rows(), 4);
    }

    #[test]
    fn unstable_gain_rejected() {
        let mut sys = scalar_system(0.1);
        sys.a = DMatrix::from_element(1, 1, 1.2);
        assert!(matches!(
            max_rpi_for_gain(&sys, &DMatrix::zeros(1, 1), &RpiOptions::default()),
            Err(Error::Unstable(_))
        ));
    }

    #[test]
    fn large_disturbance_leaves_no_interior() {
        let sys = scalar_system(1.5);
        assert_eq!(
            max_rpi_for_gain(&sys, &DMatrix::zeros(1, 1), &RpiOptions::default()).unwrap_err(),
            Error::EmptyInterior
        );
    }

    #[test]
    fn gain_search_prefers_valid_then_larger() {
        let sys = scalar_system(0.4);
        // K = 0.7 makes A+BK = 1.2 (unstable), so the candidate is invalid.
        let invalid = DMatrix::from_element(1, 1, 0.7);
        let valid = DMatrix::zeros(1, 1);
        let res = gain_search(&sys, &[invalid.clone(), valid.clone()], &RpiOptions::default()).unwrap();
        assert_eq!(res.best_index, 1);
        assert!(res.outcomes[0].error.is_some());
        assert!(matches!(gain_search(&sys, &[invalid], &RpiOptions::default()), Err(Error::NoValidGain)));
    }

    #[test]
    fn riccati_scalar() {
        // a = 1, b = 1, q = 1, r = 1: p = (1 + √5)/2, k = −p/(1+p).
        let one = DMatrix::from_element(1, 1, 1.0);
        let k = riccati_gain(&one, &one, &one, &one, 1.0).unwrap();
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(k[(0, 0)], -p / (1.0 + p), epsilon = 1e-10);
    }

    #[test]
    fn certificate_file_roundtrip() {
        let sys = box_system(0.4);
        let cert = unit_cert(&sys);
        let text = serde_json::to_string(&CertificateFile::from_certificate(&cert)).unwrap();
        assert!(text.contains("\"Vs\"") && text.contains("\"s_bar\"") && text.contains("\"K\""));
        let back: CertificateFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_certificate(&sys).unwrap(), cert);
        let sys_text = serde_json::to_string(&SystemFile::from_system(&sys)).unwrap();
        let sys_back: SystemFile = serde_json::from_str(&sys_text).unwrap();
        assert_eq!(sys_back.into_system().unwrap(), sys);
    }
}
