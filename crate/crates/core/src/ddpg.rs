//! Deep deterministic policy gradient for the gauge-map safe policy and the
//! soft-penalty baseline, plus paired evaluation of arbitrary controllers.
//!
//! Everything minimizes cost: the critic estimates discounted cost-to-go and
//! the actor descends it.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::invariance::{verify_certificate, RciCertificate, SafetySystem};
use crate::nn::{adam_step, soft_update, AdamState, Gradients, Mlp, MlpCheckpoint, OutputHead};
use crate::plant::{max_angle, rollout_with_disturbances, stage_cost, Environment, UniformSampler, VIOLATION_COUNT_TOL};
use crate::policy::{state_scale, violation, Controller, LinearPolicy, NeuralPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Actor composed with the gauge-map safety layer.
    Safe,
    /// Actor scaled onto `U`, trained with an ℓ₁ state-violation penalty.
    Penalty,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Safe => "safe",
            PolicyKind::Penalty => "penalty",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// Training cost: stage cost plus any penalty term.
    pub cost: f64,
    pub x_next: DVector<f64>,
    /// Terminal (not time-limit) transition: no bootstrapping.
    pub done: bool,
    /// `Σ max(F x_next − g, 0)` against `X`.
    pub violation: f64,
}

impl Transition {
    pub fn new(x: DVector<f64>, u: DVector<f64>, cost: f64, x_next: DVector<f64>, done: bool, violation: f64) -> Result<Self> {
        let finite = x.iter().chain(u.iter()).chain(x_next.iter()).all(|v| v.is_finite());
        if !finite || !cost.is_finite() || !violation.is_finite() {
            return Err(Error::NonFinite("transition"));
        }
        Ok(Self { x, u, cost, x_next, done, violation })
    }
}

/// FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidInput("replay capacity must be positive".into()));
        }
        Ok(Self { data: VecDeque::with_capacity(capacity.min(1 << 16)), capacity })
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() == self.capacity {
            self.data.pop_front();
        }
        self.data.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.data.get(i)
    }

    /// Uniform draw of `min(batch, len)` distinct transitions.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let k = batch.min(self.data.len());
        index::sample(rng, self.data.len(), k).into_iter().map(|i| &self.data[i]).collect()
    }
}

fn default_hidden() -> Vec<usize> {
    vec![256, 256]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    /// Target-network tracking rate.
    pub rho: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Transitions collected before the first update.
    pub warmup: usize,
    /// Exploration standard deviation at the first episode, decayed linearly
    /// to `noise_final` at the last.
    pub noise_initial: f64,
    pub noise_final: f64,
    /// Weight of the ℓ₁ violation penalty (penalty runs only).
    pub penalty_weight: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Steepness of the actor's saturating head.
    pub steepness: f64,
    /// Scale of the actor's final-layer initialization; small values start
    /// the safe policy near `u = K x`.
    pub actor_final_scale: f64,
    /// Initial states are uniform over `init_fraction · S`.
    pub init_fraction: f64,
    /// Costs are multiplied by this before entering the critic.
    pub cost_scale: f64,
    pub seed: u64,
    /// Episodes between validation runs of the greedy actor (0 disables).
    /// The deployed actor is the best validated snapshot, the initial actor
    /// included.
    pub validation_interval: usize,
    /// Paired episodes per validation run, drawn from a stream reserved for
    /// validation.
    pub validation_episodes: usize,
    /// Scale actor and critic inputs by the root-mean-square state and
    /// action seen under `u = K x` instead of the bounds of `X` and `U`.
    pub normalize_inputs: bool,
    /// Record elapsed seconds per episode; off by default so metric files
    /// are reproducible byte for byte.
    pub record_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            steps_per_episode: 100,
            batch_size: 64,
            buffer_capacity: 100_000,
            gamma: 0.99,
            rho: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            warmup: 1000,
            noise_initial: 0.1,
            noise_final: 0.0,
            penalty_weight: 10.0,
            hidden: default_hidden(),
            steepness: 1.0,
            actor_final_scale: 0.01,
            init_fraction: 0.5,
            cost_scale: 1.0,
            seed: 0,
            validation_interval: 5,
            validation_episodes: 50,
            normalize_inputs: true,
            record_wallclock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.into()));
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return bad("episodes and steps_per_episode must be at least 1");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("batch_size must be positive and fit in the buffer");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad("rho must lie in (0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.noise_initial >= 0.0 && self.noise_final >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return bad("penalty_weight must be finite and non-negative");
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return bad("hidden widths must be positive");
        }
        if !(self.steepness > 0.0 && self.actor_final_scale >= 0.0 && self.cost_scale > 0.0) {
            return bad("steepness and cost_scale must be positive");
        }
        if !(self.init_fraction > 0.0 && self.init_fraction <= 1.0) {
            return bad("init_fraction must lie in (0, 1]");
        }
        if self.validation_interval > 0 && self.validation_episodes == 0 {
            return bad("validation needs at least one episode");
        }
        Ok(())
    }

    /// Exploration level for a 0-based episode index.
    pub fn noise_at(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.noise_initial;
        }
        let f = episode as f64 / (self.episodes - 1) as f64;
        self.noise_initial + (self.noise_final - self.noise_initial) * f
    }
}

/// `Q(x, u)` on inputs `[x / x_scale; u / u_scale]`, predicting scaled cost.
#[derive(Debug, Clone)]
pub struct Critic {
    pub net: Mlp,
    pub state_scale: DVector<f64>,
    pub action_scale: DVector<f64>,
    pub cost_scale: f64,
}

impl Critic {
    pub fn new(net: Mlp, state_scale: DVector<f64>, action_scale: DVector<f64>, cost_scale: f64) -> Result<Self> {
        if net.input_dim() != state_scale.len() + action_scale.len() || net.output_dim() != 1 {
            return Err(Error::DimensionMismatch("critic widths".into()));
        }
        Ok(Self { net, state_scale, action_scale, cost_scale })
    }

    fn inputs(&self, xs: &[&DVector<f64>], us: &[&DVector<f64>]) -> DMatrix<f64> {
        let (n, m) = (self.state_scale.len(), self.action_scale.len());
        let mut out = DMatrix::zeros(n + m, xs.len());
        for (j, (x, u)) in xs.iter().zip(us).enumerate() {
            for i in 0..n {
                out[(i, j)] = x[i] / self.state_scale[i];
            }
            for i in 0..m {
                out[(n + i, j)] = u[i] / self.action_scale[i];
            }
        }
        out
    }

    pub fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
        let (q, _) = self.net.forward(&self.inputs(&[x], &[u]))?;
        Ok(q[(0, 0)])
    }

    /// Batched values, one per column.
    pub fn values(&self, xs: &[&DVector<f64>], us: &[&DVector<f64>]) -> Result<DVector<f64>> {
        let (q, _) = self.net.forward(&self.inputs(xs, us))?;
        Ok(q.row(0).transpose())
    }
}

fn check_batch(batch: &[&Transition]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    Ok(())
}

/// TD targets `c·s + γ (1 − done) Q'(x', π'(x'))`.
pub fn td_targets(target_critic: &Critic, target_policy: &NeuralPolicy, batch: &[&Transition], gamma: f64) -> Result<DVector<f64>> {
    check_batch(batch)?;
    let next_x: Vec<&DVector<f64>> = batch.iter().map(|t| &t.x_next).collect();
    let next_u = next_x.iter().map(|x| target_policy.act(x)).collect::<Result<Vec<_>>>()?;
    let next_u_refs: Vec<&DVector<f64>> = next_u.iter().collect();
    let q_next = target_critic.values(&next_x, &next_u_refs)?;
    Ok(DVector::from_iterator(
        batch.len(),
        batch.iter().enumerate().map(|(j, t)| {
            let boot = if t.done { 0.0 } else { gamma * q_next[j] };
            t.cost * target_critic.cost_scale + boot
        }),
    ))
}

/// Mean squared error of `Q(x, u)` against fixed targets, with its gradient.
pub fn critic_loss_and_grad(critic: &Critic, batch: &[&Transition], targets: &DVector<f64>) -> Result<(f64, Gradients)> {
    check_batch(batch)?;
    if targets.len() != batch.len() {
        return Err(Error::DimensionMismatch("targets vs. batch".into()));
    }
    let xs: Vec<&DVector<f64>> = batch.iter().map(|t| &t.x).collect();
    let us: Vec<&DVector<f64>> = batch.iter().map(|t| &t.u).collect();
    let (q, cache) = critic.net.forward(&critic.inputs(&xs, &us))?;
    let b = batch.len() as f64;
    let err = DMatrix::from_fn(1, batch.len(), |_, j| q[(0, j)] - targets[j]);
    let loss = err.iter().map(|e| e * e).sum::<f64>() / b;
    let (grads, _) = critic.net.backward(&cache, &(err * (2.0 / b)))?;
    Ok((loss, grads))
}

/// One Adam step on the TD loss. Returns the loss before the step.
pub fn critic_update(
    critic: &mut Critic,
    optimizer: &mut AdamState,
    target_critic: &Critic,
    target_policy: &NeuralPolicy,
    batch: &[&Transition],
    gamma: f64,
) -> Result<f64> {
    let targets = td_targets(target_critic, target_policy, batch, gamma)?;
    let (loss, grads) = critic_loss_and_grad(critic, batch, &targets)?;
    adam_step(optimizer, &mut critic.net, &grads)?;
    Ok(loss)
}

/// Mean of `Q(x, π(x))` over the batch states and its gradient with respect
/// to the actor parameters, chained through the action map's Jacobian.
pub fn actor_loss_and_grad(policy: &NeuralPolicy, critic: &Critic, states: &[&DVector<f64>]) -> Result<(f64, Gradients)> {
    if states.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (n, m) = (critic.state_scale.len(), critic.action_scale.len());
    let b = states.len();
    let mut feats = DMatrix::zeros(n, b);
    for (j, x) in states.iter().enumerate() {
        feats.set_column(j, &policy.features(x)?);
    }
    let (v, actor_cache) = policy.actor.forward(&feats)?;
    let mut us = Vec::with_capacity(b);
    let mut jacobians = Vec::with_capacity(b);
    for (j, x) in states.iter().enumerate() {
        let (u, jac) = policy.map.apply_with_jacobian(x, &v.column(j).into_owned())?;
        us.push(u);
        jacobians.push(jac);
    }
    let u_refs: Vec<&DVector<f64>> = us.iter().collect();
    let (q, critic_cache) = critic.net.forward(&critic.inputs(states, &u_refs))?;
    let loss = q.iter().sum::<f64>() / b as f64;
    let (_, input_grad) = critic.net.backward(&critic_cache, &DMatrix::from_element(1, b, 1.0 / b as f64))?;
    let mut v_grad = DMatrix::zeros(m, b);
    for j in 0..b {
        let du = DVector::from_fn(m, |i, _| input_grad[(n + i, j)] / critic.action_scale[i]);
        v_grad.set_column(j, &(jacobians[j].transpose() * du));
    }
    let (grads, _) = policy.actor.backward(&actor_cache, &v_grad)?;
    Ok((loss, grads))
}

/// One Adam step descending `mean Q(x, π(x))`. Returns the loss before the step.
pub fn actor_update(policy: &mut NeuralPolicy, optimizer: &mut AdamState, critic: &Critic, batch: &[&Transition]) -> Result<f64> {
    check_batch(batch)?;
    let states: Vec<&DVector<f64>> = batch.iter().map(|t| &t.x).collect();
    let (loss, grads) = actor_loss_and_grad(policy, critic, &states)?;
    adam_step(optimizer, &mut policy.actor, &grads)?;
    Ok(loss)
}

/// Online and target networks with their optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: NeuralPolicy,
    pub target_policy: NeuralPolicy,
    pub critic: Critic,
    pub target_critic: Critic,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
}

impl Agent {
    pub fn new(env: &Environment, cert: &RciCertificate, kind: PolicyKind, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let sys = &env.system;
        let (n, m) = (sys.state_dim(), sys.input_dim());
        let mut actor_widths = vec![n];
        actor_widths.extend(&config.hidden);
        actor_widths.push(m);
        let actor = Mlp::new(
            &actor_widths,
            OutputHead::Saturating { steepness: config.steepness },
            config.actor_final_scale,
            rng,
        )?;
        let mut critic_widths = vec![n + m];
        critic_widths.extend(&config.hidden);
        critic_widths.push(1);
        let critic_net = Mlp::new(&critic_widths, OutputHead::Identity, 1.0, rng)?;
        let policy = match kind {
            PolicyKind::Safe => NeuralPolicy::safe(actor, cert.clone(), sys.clone())?,
            PolicyKind::Penalty => NeuralPolicy::penalty(actor, sys)?,
        };
        let bound_scales = (state_scale(sys), DVector::from_vec(sys.u.box_half_widths().unwrap_or_else(|| vec![1.0; m])));
        let (x_scale, u_scale) = if config.normalize_inputs {
            linear_input_scales(env, cert, config, &bound_scales)?
        } else {
            bound_scales
        };
        let policy = policy.with_state_scale(x_scale.clone())?;
        let critic = Critic::new(critic_net, x_scale, u_scale, config.cost_scale)?;
        Ok(Self {
            actor_opt: AdamState::new(&policy.actor, config.actor_lr),
            critic_opt: AdamState::new(&critic.net, config.critic_lr),
            target_policy: policy.clone(),
            target_critic: critic.clone(),
            policy,
            critic,
        })
    }

    /// Critic step, actor step, then target tracking. Returns both losses.
    pub fn update(&mut self, batch: &[&Transition], gamma: f64, rho: f64) -> Result<(f64, f64)> {
        let critic_loss = critic_update(&mut self.critic, &mut self.critic_opt, &self.target_critic, &self.target_policy, batch, gamma)?;
        let actor_loss = actor_update(&mut self.policy, &mut self.actor_opt, &self.critic, batch)?;
        soft_update(&mut self.target_critic.net, &self.critic.net, rho)?;
        soft_update(&mut self.target_policy.actor, &self.policy.actor, rho)?;
        Ok((critic_loss, actor_loss))
    }
}

/// Root-mean-square states and actions over rollouts of `u = K x` from the
/// training initial distribution (own stream), floored at a thousandth of
/// the bound-based scales.
fn linear_input_scales(
    env: &Environment,
    cert: &RciCertificate,
    config: &TrainConfig,
    bounds: &(DVector<f64>, DVector<f64>),
) -> Result<(DVector<f64>, DVector<f64>)> {
    const ROLLOUTS: usize = 20;
    let sampler = initial_state_sampler(cert, config.init_fraction)?;
    let linear = LinearPolicy::new(cert.k.clone());
    let mut rng = stream(config.seed, 5);
    let (mut xs, mut us) = (DVector::zeros(bounds.0.len()), DVector::zeros(bounds.1.len()));
    let mut count = 0.0;
    for _ in 0..ROLLOUTS {
        let x0 = sampler.sample(&mut rng);
        let ds = env.disturbance.sequence(config.steps_per_episode, &mut rng);
        let traj = rollout_with_disturbances(&linear, env, &x0, &ds)?;
        for (x, u) in traj.states.iter().zip(&traj.actions) {
            xs += x.component_mul(x);
            us += u.component_mul(u);
            count += 1.0;
        }
    }
    let rms = |sq: DVector<f64>, bound: &DVector<f64>| sq.zip_map(bound, |s, b| (s / count).sqrt().max(1e-3 * b));
    Ok((rms(xs, &bounds.0), rms(us, &bounds.1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// 1-based.
    pub episode: usize,
    /// `Σ J(x_t, u_t)` without penalty terms.
    pub accum_cost: f64,
    /// `max_t max_i |δᵢ(t)|`, including the initial state.
    pub max_angle_dev: f64,
    /// Successor states outside `X`.
    pub violations: usize,
    /// Steps where the safety layer used `u = K x`.
    pub fallbacks: usize,
    pub wallclock_s: f64,
    /// Mean losses over the episode's updates (0 before warmup ends).
    pub critic_loss: f64,
    pub actor_loss: f64,
    /// Mean validation cost of the greedy actor after this episode, when a
    /// validation run was due.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_cost: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub kind: PolicyKind,
    pub config: TrainConfig,
    pub episodes: Vec<EpisodeMetrics>,
    pub updates: usize,
    pub agent: Agent,
    /// The actor to deploy: the best validated snapshot, or the final actor
    /// when validation is off.
    pub selected: NeuralPolicy,
    /// Episode after which `selected` was taken (0 is the initial actor).
    pub selected_episode: usize,
}

impl TrainingReport {
    pub fn total_violations(&self) -> usize {
        self.episodes.iter().map(|e| e.violations).sum()
    }

    /// Mean accumulated cost over episodes `range`.
    pub fn mean_cost(&self, range: std::ops::Range<usize>) -> f64 {
        let sel = &self.episodes[range];
        sel.iter().map(|e| e.accum_cost).sum::<f64>() / sel.len().max(1) as f64
    }

    /// `episode,accum_cost,max_angle_dev,violations,wallclock_s`.
    pub fn write_metrics_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "episode,accum_cost,max_angle_dev,violations,wallclock_s")?;
        for e in &self.episodes {
            writeln!(w, "{},{:e},{:e},{},{:e}", e.episode, e.accum_cost, e.max_angle_dev, e.violations, e.wallclock_s)?;
        }
        Ok(())
    }
}

/// Independent, reproducible random streams for one training run.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn abort(msg: String) -> Error {
    Error::TrainingAborted(msg)
}

/// Sampler for initial states uniform over `fraction · S`.
pub fn initial_state_sampler(cert: &RciCertificate, fraction: f64) -> Result<UniformSampler> {
    UniformSampler::new(&cert.s_set().scale(fraction)?)
}

/// Train a policy of `kind`. Initial states are drawn from
/// `init_fraction · S` for both kinds so runs are comparable.
pub fn train(env: &Environment, cert: &RciCertificate, kind: PolicyKind, config: &TrainConfig) -> Result<TrainingReport> {
    config.validate()?;
    if kind == PolicyKind::Safe {
        let report = verify_certificate(cert, &env.system)?;
        if !report.check_valid() {
            return Err(Error::CertificateInvalid(format!("worst slack {:e}", report.worst())));
        }
    }
    let tol = Tolerances::default();
    let sys = &env.system;
    let generators = env.num_generators();
    let mut init_rng = stream(config.seed, 0);
    let mut episode_rng = stream(config.seed, 1);
    let mut noise_rng = stream(config.seed, 2);
    let mut replay_rng = stream(config.seed, 3);
    let mut agent = Agent::new(env, cert, kind, config, &mut init_rng)?;
    let sampler = initial_state_sampler(cert, config.init_fraction)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut episodes = Vec::with_capacity(config.episodes);
    let mut updates = 0usize;
    let validation = ValidationSet::new(env, &sampler, config)?;
    let mut best = match &validation {
        Some(v) => Some((v.cost(env, &agent.policy)?, 0usize, agent.policy.clone())),
        None => None,
    };
    let penalty = match kind {
        PolicyKind::Safe => 0.0,
        PolicyKind::Penalty => config.penalty_weight,
    };

    for ep in 0..config.episodes {
        let started = Instant::now();
        let sigma = config.noise_at(ep);
        let mut x = sampler.sample(&mut episode_rng);
        let ds = env.disturbance.sequence(config.steps_per_episode, &mut episode_rng);
        let mut m = EpisodeMetrics {
            episode: ep + 1,
            accum_cost: 0.0,
            max_angle_dev: max_angle(&x, generators),
            violations: 0,
            fallbacks: 0,
            wallclock_s: 0.0,
            critic_loss: 0.0,
            actor_loss: 0.0,
            validation_cost: None,
        };
        let mut ep_updates = 0usize;
        for (t, d) in ds.iter().enumerate() {
            let (_, u, fallback) = agent
                .policy
                .explore(&x, sigma, &mut noise_rng)
                .map_err(|e| abort(format!("episode {} step {t}: policy failed: {e}", ep + 1)))?;
            let next = sys.step(&x, &u, d);
            let j = stage_cost(&x, &u, &env.q, &env.r);
            let viol = violation(&next, &sys.x);
            if kind == PolicyKind::Safe && !cert.contains_state(&next, tol.membership) {
                return Err(abort(format!(
                    "episode {} step {t}: safe policy left S (margin {:e})",
                    ep + 1,
                    cert.s_set().max_violation(&next)
                )));
            }
            m.accum_cost += j;
            m.max_angle_dev = m.max_angle_dev.max(max_angle(&next, generators));
            m.violations += usize::from(viol > VIOLATION_COUNT_TOL);
            m.fallbacks += usize::from(fallback);
            let transition = Transition::new(x, u, j + penalty * viol, next.clone(), false, viol)
                .map_err(|e| abort(format!("episode {} step {t}: {e}", ep + 1)))?;
            buffer.push(transition);
            x = next;

            if buffer.len() >= config.warmup.max(config.batch_size) {
                let batch = buffer.sample(config.batch_size, &mut replay_rng);
                let (lc, la) = agent
                    .update(&batch, config.gamma, config.rho)
                    .map_err(|e| abort(format!("episode {} step {t}: update failed: {e}", ep + 1)))?;
                if !(lc.is_finite() && la.is_finite()) {
                    return Err(abort(format!(
                        "episode {} step {t}: non-finite loss (critic {lc}, actor {la})",
                        ep + 1
                    )));
                }
                m.critic_loss += lc;
                m.actor_loss += la;
                ep_updates += 1;
                updates += 1;
            }
        }
        if ep_updates > 0 {
            m.critic_loss /= ep_updates as f64;
            m.actor_loss /= ep_updates as f64;
            let finite = agent.policy.actor.params_flat().iter().chain(agent.critic.net.params_flat().iter()).all(|p| p.is_finite());
            if !finite {
                return Err(abort(format!("episode {}: non-finite network parameters", ep + 1)));
            }
        }
        if let (Some(v), Some(b)) = (&validation, best.as_mut()) {
            if (ep + 1) % config.validation_interval == 0 {
                let cost = v.cost(env, &agent.policy)?;
                m.validation_cost = Some(cost);
                if cost < b.0 {
                    *b = (cost, ep + 1, agent.policy.clone());
                }
            }
        }
        if config.record_wallclock {
            m.wallclock_s = started.elapsed().as_secs_f64();
        }
        episodes.push(m);
    }
    let (selected, selected_episode) = match best {
        Some((_, ep, policy)) => (policy, ep),
        None => (agent.policy.clone(), config.episodes),
    };
    Ok(TrainingReport { kind, config: config.clone(), episodes, updates, agent, selected, selected_episode })
}

/// Fixed initial states and disturbance sequences for model selection,
/// drawn from their own stream so they never coincide with training or
/// evaluation episodes.
struct ValidationSet {
    episodes: Vec<(DVector<f64>, Vec<DVector<f64>>)>,
}

impl ValidationSet {
    fn new(env: &Environment, sampler: &UniformSampler, config: &TrainConfig) -> Result<Option<Self>> {
        if config.validation_interval == 0 {
            return Ok(None);
        }
        let mut rng = stream(config.seed, 4);
        let episodes = (0..config.validation_episodes)
            .map(|_| {
                let x0 = sampler.sample(&mut rng);
                let ds = env.disturbance.sequence(config.steps_per_episode, &mut rng);
                (x0, ds)
            })
            .collect();
        Ok(Some(Self { episodes }))
    }

    fn cost(&self, env: &Environment, policy: &NeuralPolicy) -> Result<f64> {
        let mut total = 0.0;
        for (x0, ds) in &self.episodes {
            total += rollout_with_disturbances(policy, env, x0, ds)?.accumulated_cost();
        }
        Ok(total / self.episodes.len() as f64)
    }
}

/// Where evaluation episodes start.
#[derive(Debug, Clone)]
pub enum InitialStates {
    Fixed(DVector<f64>),
    Uniform(UniformSampler),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
}

/// Per-policy results, one entry per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub name: String,
    pub costs: Vec<f64>,
    pub violations: Vec<usize>,
    pub action_violations: Vec<usize>,
    pub max_angle_dev: Vec<f64>,
    pub fallbacks: Vec<usize>,
}

impl PolicyEval {
    pub fn mean_cost(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len().max(1) as f64
    }

    pub fn total_violations(&self) -> usize {
        self.violations.iter().sum()
    }

    pub fn total_action_violations(&self) -> usize {
        self.action_violations.iter().sum()
    }
}

/// `a − b` per episode: mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub n: usize,
    pub mean: f64,
    pub std_err: f64,
}

pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<PairedDifference> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch("paired samples".into()));
    }
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(PairedDifference { n, mean, std_err })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub policies: Vec<PolicyEval>,
}

impl EvalReport {
    pub fn policy(&self, name: &str) -> Option<&PolicyEval> {
        self.policies.iter().find(|p| p.name == name)
    }

    /// Paired cost difference `policies[a] − policies[b]`.
    pub fn compare(&self, a: usize, b: usize) -> Result<PairedDifference> {
        let (pa, pb) = (
            self.policies.get(a).ok_or_else(|| Error::InvalidInput(format!("no policy {a}")))?,
            self.policies.get(b).ok_or_else(|| Error::InvalidInput(format!("no policy {b}")))?,
        );
        paired_difference(&pa.costs, &pb.costs)
    }

    /// One row per episode: `episode,<name>_cost,<name>_violations,...`.
    pub fn write_csv<W: Write>(&self, mut w: W, header_comment: Option<&str>) -> Result<()> {
        if let Some(c) = header_comment {
            writeln!(w, "# {c}")?;
        }
        let mut cols = vec!["episode".to_string()];
        for p in &self.policies {
            cols.push(format!("{}_cost", p.name));
            cols.push(format!("{}_violations", p.name));
            cols.push(format!("{}_max_angle_dev", p.name));
        }
        writeln!(w, "{}", cols.join(","))?;
        for e in 0..self.options.episodes {
            let mut row = vec![(e + 1).to_string()];
            for p in &self.policies {
                row.push(format!("{:e}", p.costs[e]));
                row.push(p.violations[e].to_string());
                row.push(format!("{:e}", p.max_angle_dev[e]));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Initial state and disturbance sequence of evaluation episode `episode`;
/// a pure function of `(seed, episode)`.
pub fn evaluation_episode(env: &Environment, initial: &InitialStates, opts: &EvalOptions, episode: usize) -> (DVector<f64>, Vec<DVector<f64>>) {
    let mut rng = stream(opts.seed, 1u64 << 32 | episode as u64);
    let x0 = match initial {
        InitialStates::Fixed(x) => x.clone(),
        InitialStates::Uniform(s) => s.sample(&mut rng),
    };
    let ds = env.disturbance.sequence(opts.steps, &mut rng);
    (x0, ds)
}

/// Run every policy on identical initial states and disturbance streams.
pub fn evaluate(policies: &[&dyn Controller], env: &Environment, initial: &InitialStates, opts: &EvalOptions) -> Result<EvalReport> {
    if opts.episodes == 0 || opts.steps == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one episode and step".into()));
    }
    let generators = env.num_generators();
    let mut out: Vec<PolicyEval> = policies
        .iter()
        .map(|p| PolicyEval {
            name: p.name().to_string(),
            costs: Vec::with_capacity(opts.episodes),
            violations: Vec::with_capacity(opts.episodes),
            action_violations: Vec::with_capacity(opts.episodes),
            max_angle_dev: Vec::with_capacity(opts.episodes),
            fallbacks: Vec::with_capacity(opts.episodes),
        })
        .collect();
    for e in 0..opts.episodes {
        let (x0, ds) = evaluation_episode(env, initial, opts, e);
        for (p, rec) in policies.iter().zip(out.iter_mut()) {
            let traj = rollout_with_disturbances(*p, env, &x0, &ds)?;
            rec.costs.push(traj.accumulated_cost());
            rec.violations.push(traj.violation_count());
            rec.action_violations.push(traj.action_violation_count());
            rec.max_angle_dev.push(traj.max_angle_deviation(generators));
            rec.fallbacks.push(traj.fallback_count());
        }
    }
    Ok(EvalReport { options: *opts, policies: out })
}

/// Condensed record of a run for the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub kind: PolicyKind,
    pub seed: u64,
    pub config: TrainConfig,
    pub updates: usize,
    pub total_violations: usize,
    pub total_fallbacks: usize,
    /// Episode whose actor was kept (0 is the initial actor).
    pub selected_episode: usize,
    pub first_cost: f64,
    pub last_cost: f64,
}

impl TrainingSummary {
    pub fn from_report(r: &TrainingReport) -> Self {
        Self {
            kind: r.kind,
            seed: r.config.seed,
            config: r.config.clone(),
            updates: r.updates,
            total_violations: r.total_violations(),
            total_fallbacks: r.episodes.iter().map(|e| e.fallbacks).sum(),
            selected_episode: r.selected_episode,
            first_cost: r.episodes.first().map_or(0.0, |e| e.accum_cost),
            last_cost: r.episodes.last().map_or(0.0, |e| e.accum_cost),
        }
    }
}

/// A trained actor together with the action map it was trained behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub kind: PolicyKind,
    pub network: MlpCheckpoint,
    /// SHA-256 of the certificate file the policy was trained against.
    #[serde(default)]
    pub certificate_sha256: Option<String>,
    #[serde(default)]
    pub config_hash: Option<String>,
    /// Divisors applied to states before the actor; the bounds of `X` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_scale: Option<Vec<f64>>,
}

impl PolicyCheckpoint {
    pub fn new(kind: PolicyKind, policy: &NeuralPolicy, optimizer: Option<&AdamState>, seed: Option<u64>) -> Self {
        Self {
            kind,
            network: MlpCheckpoint::new(&policy.actor, optimizer, seed),
            certificate_sha256: None,
            config_hash: None,
            state_scale: Some(policy.state_scale.iter().copied().collect()),
        }
    }

    /// Rebuild the policy; safe checkpoints need the certificate they were
    /// trained against.
    pub fn into_policy(self, system: &SafetySystem, cert: Option<&RciCertificate>) -> Result<NeuralPolicy> {
        let actor = self.network.to_network()?;
        let policy = match self.kind {
            PolicyKind::Safe => {
                let cert = cert.ok_or_else(|| Error::InvalidInput("safe policy needs a certificate".into()))?;
                NeuralPolicy::safe(actor, cert.clone(), system.clone())?
            }
            PolicyKind::Penalty => NeuralPolicy::penalty(actor, system)?,
        };
        match self.state_scale {
            Some(scale) => policy.with_state_scale(DVector::from_vec(scale)),
            None => Ok(policy),
        }
    }
}
