//! Controllers: the linear fallback `u = K x`, the gauge-map safety layer,
//! and neural policies whose actor outputs a virtual action in `(−1, 1)^m`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::invariance::{shifted_safe_action_set, RciCertificate, SafetySystem};
use crate::nn::Mlp;
use crate::polytope::{gauge_map, gauge_map_jacobian, gauge_map_jacobian_at_origin, HPolytope};

/// A state-feedback law.
pub trait Controller {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn name(&self) -> &str;

    /// Action plus whether a boundary fallback replaced the nominal law.
    fn act_traced(&self, x: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
        Ok((self.act(x)?, false))
    }
}

/// `Σⱼ max(Fⱼ x − gⱼ, 0)`.
pub fn violation(x: &DVector<f64>, set: &HPolytope) -> f64 {
    (set.lhs() * x - set.rhs()).iter().map(|v| v.max(0.0)).sum()
}

/// `u = K x`.
#[derive(Debug, Clone)]
pub struct LinearPolicy {
    pub k: DMatrix<f64>,
    label: String,
}

impl LinearPolicy {
    pub fn new(k: DMatrix<f64>) -> Self {
        Self { k, label: "linear".into() }
    }
}

impl Controller for LinearPolicy {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.k.ncols() {
            return Err(Error::DimensionMismatch("state length vs. gain".into()));
        }
        Ok(&self.k * x)
    }

    fn name(&self) -> &str {
        &self.label
    }
}

/// Result of mapping a virtual action through the safety layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeAction {
    pub u: DVector<f64>,
    /// `∂u/∂v`; zero when the fallback was taken.
    pub jacobian: DMatrix<f64>,
    /// `true` when `x` is within the boundary band (or `Ω̂(x)` is degenerate)
    /// and `u = K x` was returned.
    pub fallback: bool,
}

/// `u = K x + G(v | Ω̂(x))`: maps the unit ∞-ball onto the safe action set.
#[derive(Debug, Clone)]
pub struct SafetyLayer {
    pub cert: RciCertificate,
    pub system: SafetySystem,
}

impl SafetyLayer {
    pub fn new(cert: RciCertificate, system: SafetySystem) -> Result<Self> {
        if cert.vs.ncols() != system.state_dim() || cert.k.nrows() != system.input_dim() {
            return Err(Error::DimensionMismatch("certificate vs. system".into()));
        }
        Ok(Self { cert, system })
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    fn shifted_set(&self, x: &DVector<f64>) -> Result<Option<HPolytope>> {
        match shifted_safe_action_set(&self.cert, &self.system, x) {
            Ok(set) => Ok(Some(set)),
            Err(Error::StateOnBoundary | Error::NotACSet) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn check_virtual(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.input_dim() {
            return Err(Error::DimensionMismatch("virtual action length".into()));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("virtual action"));
        }
        Ok(())
    }

    pub fn apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.apply_traced(x, v)?.0)
    }

    /// `(u, fallback)`.
    pub fn apply_traced(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
        self.check_virtual(v)?;
        let base = self.cert.linear_action(x);
        match self.shifted_set(x)? {
            Some(set) => Ok((base + gauge_map(v, &set)?, false)),
            None => Ok((base, true)),
        }
    }

    pub fn apply_with_jacobian(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<SafeAction> {
        self.check_virtual(v)?;
        let m = self.input_dim();
        let base = self.cert.linear_action(x);
        let Some(set) = self.shifted_set(x)? else {
            return Ok(SafeAction { u: base, jacobian: DMatrix::zeros(m, m), fallback: true });
        };
        let u = base + gauge_map(v, &set)?;
        let jacobian = if v.iter().all(|c| *c == 0.0) {
            gauge_map_jacobian_at_origin(&set)?
        } else {
            gauge_map_jacobian(v, &set)?
        };
        Ok(SafeAction { u, jacobian, fallback: false })
    }

    /// `(∂u/∂v)ᵀ · grad_u`.
    pub fn backward(&self, x: &DVector<f64>, v: &DVector<f64>, grad_u: &DVector<f64>) -> Result<DVector<f64>> {
        if grad_u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch("action gradient length".into()));
        }
        Ok(self.apply_with_jacobian(x, v)?.jacobian.transpose() * grad_u)
    }
}

/// How a virtual action in `(−1, 1)^m` becomes a physical input.
#[derive(Debug, Clone)]
pub enum ActionMap {
    /// Gauge map onto the safe action set.
    Safe(Box<SafetyLayer>),
    /// Componentwise scaling onto a centered box `U`, no state constraints.
    Box { half_widths: DVector<f64> },
}

impl ActionMap {
    pub fn input_dim(&self) -> usize {
        match self {
            ActionMap::Safe(layer) => layer.input_dim(),
            ActionMap::Box { half_widths } => half_widths.len(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.apply_traced(x, v)?.0)
    }

    pub fn apply_traced(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
        match self {
            ActionMap::Safe(layer) => layer.apply_traced(x, v),
            ActionMap::Box { half_widths } => {
                if v.len() != half_widths.len() {
                    return Err(Error::DimensionMismatch("virtual action length".into()));
                }
                Ok((v.component_mul(half_widths), false))
            }
        }
    }

    /// `(u, ∂u/∂v)`.
    pub fn apply_with_jacobian(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match self {
            ActionMap::Safe(layer) => {
                let out = layer.apply_with_jacobian(x, v)?;
                Ok((out.u, out.jacobian))
            }
            ActionMap::Box { half_widths } => Ok((self.apply(x, v)?, DMatrix::from_diagonal(half_widths))),
        }
    }
}

/// Actor network followed by an [`ActionMap`]. Network inputs are states
/// divided componentwise by `state_scale`.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub actor: Mlp,
    pub map: ActionMap,
    pub state_scale: DVector<f64>,
    label: String,
}

/// Divide by the half-widths of `X` when it is a centered box.
pub fn state_scale(sys: &SafetySystem) -> DVector<f64> {
    let n = sys.state_dim();
    DVector::from_vec(sys.x.box_half_widths().unwrap_or_else(|| vec![1.0; n]))
}

impl NeuralPolicy {
    /// Safe policy `u = K x + G(ψ(x) | Ω̂(x))`.
    pub fn safe(actor: Mlp, cert: RciCertificate, system: SafetySystem) -> Result<Self> {
        let scale = state_scale(&system);
        let layer = SafetyLayer::new(cert, system)?;
        Self::build(actor, ActionMap::Safe(Box::new(layer)), scale, "safe")
    }

    /// Unconstrained policy `u = diag(ū) ψ(x)`; requires a centered box `U`.
    pub fn penalty(actor: Mlp, system: &SafetySystem) -> Result<Self> {
        let widths = system.u.box_half_widths().ok_or(Error::NonBoxInputSet)?;
        Self::build(
            actor,
            ActionMap::Box { half_widths: DVector::from_vec(widths) },
            state_scale(system),
            "penalty",
        )
    }

    fn build(actor: Mlp, map: ActionMap, state_scale: DVector<f64>, label: &str) -> Result<Self> {
        if actor.input_dim() != state_scale.len() || actor.output_dim() != map.input_dim() {
            return Err(Error::DimensionMismatch("actor widths vs. system".into()));
        }
        Ok(Self { actor, map, state_scale, label: label.into() })
    }

    /// Replace the input divisors; they must be positive and finite.
    pub fn with_state_scale(mut self, scale: DVector<f64>) -> Result<Self> {
        if scale.len() != self.state_scale.len() {
            return Err(Error::DimensionMismatch("state scale length".into()));
        }
        if !scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidInput("state scale must be positive and finite".into()));
        }
        self.state_scale = scale;
        Ok(self)
    }

    pub fn features(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_scale.len() {
            return Err(Error::DimensionMismatch("state length".into()));
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(x.component_div(&self.state_scale))
    }

    /// Actor output `ψ(x)`.
    pub fn virtual_action(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.actor.forward_one(&self.features(x)?)
    }

    /// Action with Gaussian exploration added to the virtual action and
    /// clipped back to the closed unit ball (for a box map this is noise
    /// scaled by `ū` and clipped to `U`). Returns `(v_explore, u, fallback)`.
    pub fn explore<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        sigma: f64,
        rng: &mut R,
    ) -> Result<(DVector<f64>, DVector<f64>, bool)> {
        let mut v = self.virtual_action(x)?;
        if sigma > 0.0 {
            for c in v.iter_mut() {
                let n: f64 = StandardNormal.sample(rng);
                *c = (*c + sigma * n).clamp(-1.0, 1.0);
            }
        }
        let (u, fallback) = self.map.apply_traced(x, &v)?;
        Ok((v, u, fallback))
    }
}

impl Controller for NeuralPolicy {
    fn act(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.virtual_action(x)?;
        self.map.apply(x, &v)
    }

    fn name(&self) -> &str {
        &self.label
    }

    fn act_traced(&self, x: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
        let v = self.virtual_action(x)?;
        self.map.apply_traced(x, &v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OutputHead;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (RciCertificate, SafetySystem) {
        let sys = SafetySystem::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            HPolytope::centered_box(&[1.0]).unwrap(),
            HPolytope::centered_box(&[0.2]).unwrap(),
            HPolytope::centered_box(&[1.0]).unwrap(),
        )
        .unwrap();
        let cert = RciCertificate::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DMatrix::from_element(1, 1, -0.5),
            &sys,
        )
        .unwrap();
        (cert, sys)
    }

    #[test]
    fn violation_sums_positive_parts() {
        let set = HPolytope::centered_box(&[1.0, 2.0]).unwrap();
        assert_eq!(violation(&DVector::from_vec(vec![1.5, -3.0]), &set), 1.5);
        assert_eq!(violation(&DVector::zeros(2), &set), 0.0);
    }

    #[test]
    fn scalar_safety_layer() {
        // x⁺ = 0.5x + u + d, |d| ≤ 0.2, S = [−1, 1]: Ω(x) = [−0.8 − 0.5x, 0.8 − 0.5x] ∩ [−1, 1].
        let (cert, sys) = toy();
        let layer = SafetyLayer::new(cert, sys).unwrap();
        let x = DVector::from_element(1, 0.4);
        // Ω̂ = Ω − Kx = [−0.8, 0.8]; G(v) = 0.8 v.
        let out = layer.apply_with_jacobian(&x, &DVector::from_element(1, 0.5)).unwrap();
        assert_abs_diff_eq!(out.u[0], -0.2 + 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(out.jacobian[(0, 0)], 0.8, epsilon = 1e-12);
        let zero = layer.apply_with_jacobian(&x, &DVector::zeros(1)).unwrap();
        assert_abs_diff_eq!(zero.u[0], -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(zero.jacobian[(0, 0)], 0.8, epsilon = 1e-12);
        assert!(!zero.fallback);
    }

    #[test]
    fn boundary_falls_back_to_linear() {
        let (cert, sys) = toy();
        let layer = SafetyLayer::new(cert, sys).unwrap();
        let x = DVector::from_element(1, 1.0);
        let out = layer.apply_with_jacobian(&x, &DVector::from_element(1, 0.9)).unwrap();
        assert!(out.fallback);
        assert_eq!(out.u[0], -0.5);
        assert_eq!(out.jacobian[(0, 0)], 0.0);
        assert_eq!(
            layer.apply(&DVector::from_element(1, 1.5), &DVector::zeros(1)).unwrap_err(),
            Error::StateOutsideS
        );
    }

    #[test]
    fn penalty_requires_box() {
        let (_, mut sys) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let actor = Mlp::new(&[1, 4, 1], OutputHead::Saturating { steepness: 2.0 }, 1.0, &mut rng).unwrap();
        assert!(NeuralPolicy::penalty(actor.clone(), &sys).is_ok());
        sys.u = HPolytope::new(
            DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 2.0]),
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(NeuralPolicy::penalty(actor, &sys).unwrap_err(), Error::NonBoxInputSet);
    }

    #[test]
    fn zero_actor_is_linear_policy() {
        let (cert, sys) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut actor = Mlp::new(&[1, 8, 1], OutputHead::Saturating { steepness: 1.0 }, 1.0, &mut rng).unwrap();
        actor.zero_output_layer();
        let k = cert.k.clone();
        let policy = NeuralPolicy::safe(actor, cert, sys).unwrap();
        let lin = LinearPolicy::new(k);
        for x in [-0.9, -0.3, 0.0, 0.7] {
            let x = DVector::from_element(1, x);
            assert_eq!(policy.act(&x).unwrap(), lin.act(&x).unwrap());
        }
    }
}
