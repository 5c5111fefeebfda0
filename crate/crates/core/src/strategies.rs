//! Decentralized update rules. Each `step_*` function performs one
//! synchronous round over the whole swarm given every agent's current
//! direction estimate `D̂_i^k`.

use serde::{Deserialize, Serialize};

use crate::block::{Block, Triple};
use crate::directions::{DirectionTriple, StepSizes};
use crate::error::{DsboError, Result};
use crate::problems::Dims;
use crate::scalar::Scalar;
use crate::topology::WeightMatrix;

/// One block of agent vectors, indexed `[agent][coordinate]`.
pub type AgentRows<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState<T> {
    /// Current iterates `(θ_i, x_i, y_i)`.
    pub vars: Triple<AgentRows<T>>,
    /// Gradient trackers `D_i^{k−1}` (GT variants); zero before the first step.
    pub trackers: Triple<AgentRows<T>>,
    /// Estimates `D̂_i^{k−1}` from the previous step; zero before the first.
    pub prev_estimates: Triple<AgentRows<T>>,
    /// Iterates from the previous step (EXTRA, ED).
    pub prev_vars: Option<Triple<AgentRows<T>>>,
    pub k: usize,
}

impl<T: Scalar> SwarmState<T> {
    /// Swarm where every agent starts from the same `(θ, x, y)`.
    pub fn uniform(n: usize, theta: &[T], x: &[T], y: &[T]) -> Self {
        Self::from_rows(vec![theta.to_vec(); n], vec![x.to_vec(); n], vec![y.to_vec(); n]).expect("uniform rows are consistent")
    }

    pub fn zeros(n: usize, dims: Dims) -> Self {
        Self::uniform(n, &vec![T::zero(); dims.dy], &vec![T::zero(); dims.dx], &vec![T::zero(); dims.dy])
    }

    pub fn from_rows(theta: AgentRows<T>, x: AgentRows<T>, y: AgentRows<T>) -> Result<Self> {
        let n = x.len();
        if n == 0 || theta.len() != n || y.len() != n {
            return Err(DsboError::InvalidInput("every block needs one row per agent".into()));
        }
        let same = |rows: &AgentRows<T>| rows.iter().all(|r| r.len() == rows[0].len());
        if !(same(&theta) && same(&x) && same(&y)) || theta[0].len() != y[0].len() {
            return Err(DsboError::InvalidInput(
                "agents must share dimensions and dim(theta) == dim(y)".into(),
            ));
        }
        let vars = Triple::new(theta, x, y);
        let zeros = vars.clone().map(|_, rows| rows.iter().map(|r| vec![T::zero(); r.len()]).collect());
        Ok(Self {
            vars,
            trackers: zeros.clone(),
            prev_estimates: zeros,
            prev_vars: None,
            k: 0,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.vars.x.len()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            dx: self.vars.x[0].len(),
            dy: self.vars.y[0].len(),
        }
    }

    /// Agent `i`'s `(x_i, y_i, θ_i)`.
    pub fn agent(&self, i: usize) -> (&[T], &[T], &[T]) {
        (&self.vars.x[i], &self.vars.y[i], &self.vars.theta[i])
    }

    /// Clear all strategy memory, keeping the iterates.
    pub fn reset_memory(&mut self) {
        let zeros = self
            .vars
            .clone()
            .map(|_, rows| rows.iter().map(|r| vec![T::zero(); r.len()]).collect::<AgentRows<T>>());
        self.trackers = zeros.clone();
        self.prev_estimates = zeros;
        self.prev_vars = None;
        self.k = 0;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a, T> {
    pub w: &'a WeightMatrix<T>,
    pub steps: StepSizes,
    pub mu: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Se,
    GtAtc,
    GtSemiAtc,
    GtNonAtc,
    Extra,
    Ed,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Se,
        StrategyKind::GtAtc,
        StrategyKind::GtSemiAtc,
        StrategyKind::GtNonAtc,
        StrategyKind::Extra,
        StrategyKind::Ed,
    ];

    pub fn is_gradient_tracking(self) -> bool {
        matches!(self, StrategyKind::GtAtc | StrategyKind::GtSemiAtc | StrategyKind::GtNonAtc)
    }

    /// Communication rounds per iteration.
    pub fn mixes_per_round(self) -> usize {
        if self.is_gradient_tracking() {
            2
        } else {
            1
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Se => "se",
            StrategyKind::GtAtc => "gt_atc",
            StrategyKind::GtSemiAtc => "gt_semi_atc",
            StrategyKind::GtNonAtc => "gt_non_atc",
            StrategyKind::Extra => "extra",
            StrategyKind::Ed => "ed",
        }
    }

    pub fn step<T: Scalar>(self, swarm: &mut SwarmState<T>, ctx: &StepContext<'_, T>, estimates: &[DirectionTriple<T>]) -> Result<()> {
        match self {
            StrategyKind::Se => step_se(swarm, ctx, estimates),
            StrategyKind::GtAtc => step_gt_atc(swarm, ctx, estimates),
            StrategyKind::GtSemiAtc => step_gt_semi_atc(swarm, ctx, estimates),
            StrategyKind::GtNonAtc => step_gt_non_atc(swarm, ctx, estimates),
            StrategyKind::Extra => step_extra(swarm, ctx, estimates),
            StrategyKind::Ed => step_ed(swarm, ctx, estimates),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Validate shapes and transpose per-agent triples into per-block rows.
fn gather<T: Scalar>(swarm: &SwarmState<T>, ctx: &StepContext<'_, T>, estimates: &[DirectionTriple<T>]) -> Result<Triple<AgentRows<T>>> {
    let n = swarm.n_agents();
    if ctx.w.n() != n || estimates.len() != n {
        return Err(DsboError::InvalidInput(format!(
            "swarm has {n} agents, weight matrix {}, estimates {}",
            ctx.w.n(),
            estimates.len()
        )));
    }
    let s = ctx.steps;
    if !(s.theta >= 0.0 && s.x >= 0.0 && s.y >= 0.0) {
        return Err(DsboError::InvalidParameter("step sizes must be nonnegative".into()));
    }
    let dims = swarm.dims();
    for (i, e) in estimates.iter().enumerate() {
        if e.x.len() != dims.dx || e.y.len() != dims.dy || e.theta.len() != dims.dy {
            return Err(DsboError::InvalidInput(format!("estimate for agent {i} has wrong dimensions")));
        }
    }
    Ok(Triple::new((), (), ()).map(|b, _| estimates.iter().map(|e| e.get(b).clone()).collect()))
}

fn lambda<T: Scalar>(ctx: &StepContext<'_, T>, b: Block) -> T {
    T::of(b.step(&ctx.steps))
}

/// `rows − λ·dirs`, row-wise.
fn descend<T: Scalar>(rows: &AgentRows<T>, lam: T, dirs: &AgentRows<T>) -> AgentRows<T> {
    rows.iter()
        .zip(dirs)
        .map(|(r, d)| r.iter().zip(d).map(|(&v, &g)| v - lam * g).collect())
        .collect()
}

fn commit<T: Scalar>(swarm: &mut SwarmState<T>, next: Triple<AgentRows<T>>, estimates: Triple<AgentRows<T>>) {
    let old = std::mem::replace(&mut swarm.vars, next);
    swarm.prev_vars = Some(old);
    swarm.prev_estimates = estimates;
    swarm.k += 1;
}

/// Adapt-then-combine without tracking:
/// `◇_i^{k+1} = Σ_j w_ij (◇_j^k − λ_◇ D̂_◇,j^k)`.
pub fn step_se<T: Scalar>(swarm: &mut SwarmState<T>, ctx: &StepContext<'_, T>, estimates: &[DirectionTriple<T>]) -> Result<()> {
    let est = gather(swarm, ctx, estimates)?;
    let next = swarm
        .vars
        .clone()
        .map(|b, rows| ctx.w.mix_unchecked(&descend(&rows, lambda(ctx, b), est.get(b))));
    commit(swarm, next, est);
    Ok(())
}

/// `D_i^k = Σ_j w_ij (D_j^{k−1} + D̂_j^k − D̂_j^{k−1})`
fn tracker_mixed<T: Scalar>(swarm: &SwarmState<T>, ctx: &StepContext<'_, T>, est: &Triple<AgentRows<T>>) -> Triple<AgentRows<T>> {
    Triple::new((), (), ()).map(|b, _| {
        let innov: AgentRows<T> = swarm
            .trackers
            .get(b)
            .iter()
            .zip(est.get(b).iter().zip(swarm.prev_estimates.get(b)))
            .map(|(d, (e, p))| d.iter().zip(e.iter().zip(p)).map(|(&d, (&e, &p))| d + e - p).collect())
            .collect();
        ctx.w.mix_unchecked(&innov)
    })
}

/// `◇_i^{k+1} = Σ_j w_ij ◇_j^k − λ D_i^k`
fn combine_then_adapt<T: Scalar>(swarm: &SwarmState<T>, ctx: &StepContext<'_, T>, trackers: &Triple<AgentRows<T>>) -> Triple<AgentRows<T>> {
    swarm
        .vars
        .clone()
        .map(|b, rows| descend(&ctx.w.mix_unchecked(&rows), lambda(ctx, b), trackers.get(b)))
}

pub fn step_gt_atc<T: Scalar>(swarm: &mut SwarmState<T>, ctx: &StepContext<'_, T>, estimates: &[DirectionTriple<T>]) -> Result<()> {
    let est = gather(swarm, ctx, estimates)?;
    let trackers = tracker_mixed(swarm, ctx, &est);
    let next = swarm
        .vars
        .clone()
        .map(|b, rows| ctx.w.mix_unchecked(&descend(&rows, lambda(ctx, b), trackers.get(b))));
    swarm.trackers = trackers;
    commit(swarm, next, est);
    Ok(())
}

pub fn step_gt_semi_atc<T: Scalar>(swarm: &mut SwarmState<T>, ctx: &StepContext<'_, T>, estimates: &[DirectionTriple<T>]) -> Result<()> {
    let est = gather(swarm, ctx, estimates)?;
    let trackers = tracker_mixed(swarm, ctx, &est);
    let next = combine_then_adapt(swarm, ctx, &trackers);
    swarm.trackers = trackers;
    commit(swarm, next, est);
    Ok(())
}

/// `D_i^k = Σ_j w_ij D_j^{k−1} + D̂_i^k − D̂_i^{k−1}`, then combine-then-adapt.
pub fn step_gt_non_atc<T: Scalar>(swarm: &mut SwarmState<T>, ctx: &StepContext<'_, T>, estimates: &[DirectionTriple<T>]) -> Result<()> {
    let est = gather(swarm, ctx, estimates)?;
    let trackers = Triple::new((), (), ()).map(|b, _| {
        let mixed = ctx.w.mix_unchecked(swarm.trackers.get(b));
        mixed
            .into_iter()
            .zip(est.get(b).iter().zip(swarm.prev_estimates.get(b)))
            .map(|(m, (e, p))| m.iter().zip(e.iter().zip(p)).map(|(&m, (&e, &p))| m + e - p).collect())
            .collect()
    });
    let next = combine_then_adapt(swarm, ctx, &trackers);
    swarm.trackers = trackers;
    commit(swarm, next, est);
    Ok(())
}

/// EXTRA with `W̃ = (W + I)/2`:
///
/// ```text
/// k = 0:  ◇^1     = W◇^0 − λ D̂^0
/// k ≥ 1:  ◇^{k+1} = ◇^k + W◇^k − W̃◇^{k−1} − λ (D̂^k − D̂^{k−1})
/// ```
pub fn step_extra<T: Scalar>(swarm: &mut SwarmState<T>, ctx: &StepContext<'_, T>, estimates: &[DirectionTriple<T>]) -> Result<()> {
    let est = gather(swarm, ctx, estimates)?;
    let next = match swarm.prev_vars.as_ref().filter(|_| swarm.k > 0) {
        None => swarm
            .vars
            .clone()
            .map(|b, rows| descend(&ctx.w.mix_unchecked(&rows), lambda(ctx, b), est.get(b))),
        Some(prev) => {
            let tilde = ctx.w.half_lazy();
            swarm.vars.clone().map(|b, rows| {
                let lam = lambda(ctx, b);
                let wv = ctx.w.mix_unchecked(&rows);
                let wp = tilde.mix_unchecked(prev.get(b));
                rows.iter()
                    .zip(wv.iter().zip(&wp))
                    .zip(est.get(b).iter().zip(swarm.prev_estimates.get(b)))
                    .map(|((v, (m, t)), (e, p))| (0..v.len()).map(|c| v[c] + m[c] - t[c] - lam * (e[c] - p[c])).collect())
                    .collect()
            })
        }
    };
    commit(swarm, next, est);
    Ok(())
}

/// Exact diffusion:
///
/// ```text
/// k = 0:  ◇^1     = W(◇^0 − λ D̂^0)
/// k ≥ 1:  ◇^{k+1} = W(2◇^k − ◇^{k−1} − λ (D̂^k − D̂^{k−1}))
/// ```
pub fn step_ed<T: Scalar>(swarm: &mut SwarmState<T>, ctx: &StepContext<'_, T>, estimates: &[DirectionTriple<T>]) -> Result<()> {
    let est = gather(swarm, ctx, estimates)?;
    let two = T::of(2.0);
    let next = match swarm.prev_vars.as_ref().filter(|_| swarm.k > 0) {
        None => swarm
            .vars
            .clone()
            .map(|b, rows| ctx.w.mix_unchecked(&descend(&rows, lambda(ctx, b), est.get(b)))),
        Some(prev) => swarm.vars.clone().map(|b, rows| {
            let lam = lambda(ctx, b);
            let pre: AgentRows<T> = rows
                .iter()
                .zip(prev.get(b))
                .zip(est.get(b).iter().zip(swarm.prev_estimates.get(b)))
                .map(|((v, q), (e, p))| (0..v.len()).map(|c| two * v[c] - q[c] - lam * (e[c] - p[c])).collect())
                .collect();
            ctx.w.mix_unchecked(&pre)
        }),
    };
    commit(swarm, next, est);
    Ok(())
}
