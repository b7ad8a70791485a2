//! Independent oracles shared by the integration tests: brute-force vertex
//! enumeration, bisection gauges, finite differences and case fixtures.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use safegauge::invariance::{candidate_gains, gain_search, RciCertificate, RpiOptions, SafetySystem};
use safegauge::plant::{CaseFile, Environment, GridCase};
use safegauge::polytope::HPolytope;

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases").join(name)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Vertices of `{x : F x ≤ g}` by solving every square subsystem of active
/// rows and keeping the feasible, distinct solutions.
pub fn vertices(f: &DMatrix<f64>, g: &DVector<f64>, tol: f64) -> Vec<DVector<f64>> {
    let n = f.ncols();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for rows in combinations(f.nrows(), n) {
        let a = DMatrix::from_fn(n, n, |i, j| f[(rows[i], j)]);
        let b = DVector::from_fn(n, |i, _| g[rows[i]]);
        let lu = a.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(x) = lu.solve(&b) else { continue };
        let slack = (f * &x - g).max();
        if slack <= tol * (1.0 + x.amax()) && !out.iter().any(|y| (y - &x).amax() <= 1e-9 * (1.0 + x.amax())) {
            out.push(x);
        }
    }
    out
}

pub fn polytope_vertices(p: &HPolytope) -> Vec<DVector<f64>> {
    vertices(p.lhs(), p.rhs(), 1e-9)
}

/// `max c·x` over the polytope's vertices.
pub fn max_over_vertices(c: &DVector<f64>, verts: &[DVector<f64>]) -> f64 {
    verts.iter().map(|v| c.dot(v)).fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest `λ ≥ 0` with `v ∈ λQ`, bisected on plain membership.
pub fn bisection_gauge(q: &HPolytope, v: &DVector<f64>) -> f64 {
    let inside = |lam: f64| {
        if lam == 0.0 {
            return v.iter().all(|c| *c == 0.0);
        }
        let y = v / lam;
        (q.lhs() * y - q.rhs()).iter().all(|s| *s <= 0.0)
    };
    if inside(0.0) {
        return 0.0;
    }
    let mut hi = 1.0;
    while !inside(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-13 * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Random bounded C-set in `R^m` with `rows` constraints: `2m` box rows at
/// distance 3 guarantee boundedness, the rest are random directions with
/// offsets in `[0.3, 2]`.
pub fn random_cset<R: Rng + ?Sized>(rng: &mut R, m: usize, rows: usize) -> HPolytope {
    assert!(rows >= 2 * m);
    let extra = rows - 2 * m;
    let mut lhs = DMatrix::zeros(rows, m);
    let mut rhs = DVector::zeros(rows);
    for i in 0..extra {
        let dir: DVector<f64> = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
        let dir = &dir / dir.norm();
        lhs.set_row(i, &dir.transpose());
        rhs[i] = rng.random_range(0.3..2.0);
    }
    for j in 0..m {
        lhs[(extra + 2 * j, j)] = 1.0;
        lhs[(extra + 2 * j + 1, j)] = -1.0;
        rhs[extra + 2 * j] = 3.0;
        rhs[extra + 2 * j + 1] = 3.0;
    }
    HPolytope::new(lhs, rhs).unwrap()
}

/// Uniform point of the unit ∞-ball.
pub fn random_unit_ball<R: Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
}

/// Central differences of a vector function.
pub fn jacobian_fd(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

/// Central differences of a scalar function of a flat parameter vector.
pub fn gradient_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let fp = f(&p);
            p[i] = orig - h;
            let fm = f(&p);
            p[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

pub struct NineBus {
    pub case: GridCase,
    pub system: SafetySystem,
    pub env: Environment,
    pub cert: RciCertificate,
}

/// The shipped 9-bus case with a certificate from the default gain sweep.
pub fn nine_bus() -> &'static NineBus {
    static CELL: OnceLock<NineBus> = OnceLock::new();
    CELL.get_or_init(|| {
        let case = CaseFile::load(&case_path("nine_bus.json")).unwrap().to_case().unwrap();
        let system = case.safety_system().unwrap();
        let weights = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0];
        let candidates = candidate_gains(&system, &weights, &[1.0], 1.0).unwrap();
        let cert = gain_search(&system, &candidates, &RpiOptions::default()).unwrap().certificate;
        let env = Environment::from_case(&case, 0).unwrap();
        NineBus { case, system, env, cert }
    })
}

/// Vertices of a centered box with the given half-widths.
pub fn box_vertices(half: &[f64]) -> Vec<DVector<f64>> {
    let n = half.len();
    (0..1usize << n)
        .map(|mask| DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { half[i] } else { -half[i] }))
        .collect()
}
