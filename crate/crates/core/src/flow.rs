//! Orthonormality-preserving linearized gradient flow.
//!
//! One step solves `(I + τA) U⁺ = (I − τA) U` with `τ = Δt/2` and the
//! rank-2N operator `A V = g (UᵀMV) − U (ĜᵀV)`, where `g = M⁻¹G` are the
//! Riesz representatives of the gradient load and `Ĝ = M g`. Using `Ĝ`
//! rather than `G` makes `MA` skew to rounding even when the mass solves are
//! inexact, so the update preserves the Gram matrix exactly in exact
//! arithmetic.
//!
//! With [`Metric::H1`] the driving field `g` is the preconditioned residual
//! `(K/2 + sM)⁻¹ (G − MU UᵀG)` instead. `MA` stays skew and the step stays a
//! descent direction, while the admissible Δt no longer shrinks with `h²`.

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ksmodel::{EnergyBreakdown, Evaluation, KsModel, OrbitalSet};
use crate::fem::{gram, solve_spd_in_place, CgOptions, SparseOperator};

/// Condition number above which the reduced 2N×2N system counts as singular.
pub const MAX_REDUCED_CONDITION: f64 = 1e14;

/// Inner product defining the gradient that drives the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    /// `g = M⁻¹ G`.
    L2,
    /// `g = (K/2 + shift·M)⁻¹ (G − MU UᵀG)`, the preconditioned residual.
    H1 { shift: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    /// Stopping threshold on `(E_n − E_{n+1}) / Δt_n`.
    pub epsilon: f64,
    pub dt_max: f64,
    pub max_halvings: usize,
    pub max_steps: usize,
    /// Δt doubles whenever the accepted-step counter is a positive multiple of this.
    pub doubling_period: usize,
    pub metric: Metric,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            epsilon: 1e-6,
            dt_max: 0.1,
            max_halvings: 40,
            max_steps: 200_000,
            doubling_period: 200,
            metric: Metric::L2,
        }
    }
}

/// The skew operator `A` of the current state.
#[derive(Debug, Clone)]
pub struct SkewApplication {
    u: DMatrix<f64>,
    mu: DMatrix<f64>,
    riesz: DMatrix<f64>,
    load: DMatrix<f64>,
}

impl SkewApplication {
    /// `riesz` are representatives `P⁻¹G` of the gradient load of `u` for
    /// some symmetric positive definite `P`; `MA` is skew for any choice.
    pub fn new(mass: &SparseOperator, u: &DMatrix<f64>, riesz: &DMatrix<f64>) -> Self {
        SkewApplication {
            mu: mass.mul_mat(u),
            load: mass.mul_mat(riesz),
            u: u.clone(),
            riesz: riesz.clone(),
        }
    }

    pub fn n_orbitals(&self) -> usize {
        self.u.ncols()
    }

    /// `D V = [UᵀM V; −ĜᵀV]`.
    fn reduce(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n_orbitals();
        let mut out = DMatrix::zeros(2 * n, v.ncols());
        out.rows_mut(0, n).copy_from(&(self.mu.transpose() * v));
        out.rows_mut(n, n).copy_from(&(-(self.load.transpose() * v)));
        out
    }

    /// `W Y = g Y_top + U Y_bottom`.
    fn expand(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n_orbitals();
        &self.riesz * y.rows(0, n) + &self.u * y.rows(n, n)
    }

    pub fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.expand(&self.reduce(v))
    }

    /// `D W`, the 2N×2N core of the low-rank factorization.
    pub fn core(&self) -> DMatrix<f64> {
        let n = self.n_orbitals();
        let mut w = DMatrix::zeros(self.u.nrows(), 2 * n);
        w.columns_mut(0, n).copy_from(&self.riesz);
        w.columns_mut(n, n).copy_from(&self.u);
        self.reduce(&w)
    }

    /// `U⁺ = (I + τA)⁻¹ (I − τA) U` via the Woodbury identity.
    pub fn cayley(&self, dt: f64) -> Result<DMatrix<f64>> {
        let tau = 0.5 * dt;
        let x = &self.u - self.apply(&self.u) * tau;
        if tau == 0.0 {
            return Ok(x);
        }
        let n2 = 2 * self.n_orbitals();
        let system = DMatrix::identity(n2, n2) + self.core() * tau;
        let sv = system.singular_values();
        let condition = sv.max() / sv.min();
        if !(condition <= MAX_REDUCED_CONDITION) {
            return Err(Error::StepFailure { condition });
        }
        let y = system
            .lu()
            .solve(&self.reduce(&x))
            .ok_or(Error::StepFailure { condition: f64::INFINITY })?;
        Ok(x - self.expand(&y) * tau)
    }
}

/// `‖UᵀMU − I‖_F`.
pub fn gram_error(mass: &SparseOperator, u: &DMatrix<f64>) -> f64 {
    let s = u.transpose() * mass.mul_mat(u);
    (s - DMatrix::identity(u.ncols(), u.ncols())).norm()
}

/// Löwdin orthonormalization `U S^{-1/2}` in the M inner product.
pub fn orthonormalize(u: &OrbitalSet, mass: &SparseOperator) -> Result<OrbitalSet> {
    let s = gram(mass, &u.coefficients, &u.coefficients)?;
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.min();
    if !(min_eigenvalue >= 1e-14) {
        return Err(Error::RankDeficient { min_eigenvalue });
    }
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
    let c = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    Ok(u.with_coefficients(&u.coefficients * c))
}

/// One accepted state in the flow history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub energy: EnergyBreakdown,
    pub grad_norm: f64,
    pub gram_err: f64,
    pub level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtChange {
    Halved,
    Doubled,
}

/// A Δt adjustment made by the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtEvent {
    pub level: usize,
    /// Accepted-step counter at the time of the change.
    pub step: usize,
    pub change: DtChange,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowTermination {
    Converged,
    BudgetExhausted,
}

/// Outcome of [`accept_or_halve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Accepted with the given energy decrease per unit flow time.
    Accepted { rate: f64 },
    Rejected,
}

/// Current orbitals with their energy, gradient and controller state.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub orbitals: OrbitalSet,
    pub t: f64,
    pub dt: f64,
    pub step_index: usize,
    pub level: usize,
    pub energy: EnergyBreakdown,
    pub grad_norm: f64,
    pub history: Vec<HistoryRecord>,
    pub dt_events: Vec<DtEvent>,
    /// Largest Gram error over all accepted states.
    pub max_gram_err: f64,
    pub consecutive_halvings: usize,
    evaluation: Evaluation,
    /// `M⁻¹G`, for the residual norm.
    riesz: DMatrix<f64>,
    /// The metric representative driving the step (same as `riesz` for L²).
    direction: Option<DMatrix<f64>>,
    metric_operator: Option<SparseOperator>,
    metric_tol: f64,
}

impl FlowState {
    /// Evaluates `orbitals` (assumed M-orthonormal) and records step 0.
    pub fn new(model: &KsModel, orbitals: OrbitalSet, dt: f64, level: usize) -> Result<Self> {
        FlowState::with_metric(model, orbitals, dt, level, Metric::L2)
    }

    pub fn with_metric(model: &KsModel, orbitals: OrbitalSet, dt: f64, level: usize, metric: Metric) -> Result<Self> {
        let metric_operator = match metric {
            Metric::L2 => None,
            Metric::H1 { shift } => Some(model.mass().scaled(shift).add_scaled(0.5, model.stiffness())),
        };
        let metric_tol = model.options().poisson_tol;
        let evaluation = model.evaluate(&orbitals, None)?;
        let load = model.gradient_load(&orbitals, &evaluation);
        let riesz = model.riesz(&load, None)?;
        let direction = metric_direction(model, metric_operator.as_ref(), &orbitals, &load, None, metric_tol)?;
        let grad_norm = model.residual_norm(&orbitals, &load, &riesz);
        let gram_err = gram_error(model.mass(), &orbitals.coefficients);
        let energy = evaluation.energy;
        Ok(FlowState {
            history: vec![HistoryRecord {
                step: 0,
                t: 0.0,
                dt,
                energy,
                grad_norm,
                gram_err,
                level,
            }],
            orbitals,
            t: 0.0,
            dt,
            step_index: 0,
            level,
            energy,
            grad_norm,
            dt_events: Vec::new(),
            max_gram_err: gram_err,
            consecutive_halvings: 0,
            evaluation,
            riesz,
            direction,
            metric_operator,
            metric_tol,
        })
    }

    pub fn evaluation(&self) -> &Evaluation {
        &self.evaluation
    }

    /// Riesz representatives of the current gradient load.
    pub fn riesz(&self) -> &DMatrix<f64> {
        &self.riesz
    }

    pub fn skew(&self, model: &KsModel) -> SkewApplication {
        let g = self.direction.as_ref().unwrap_or(&self.riesz);
        SkewApplication::new(model.mass(), &self.orbitals.coefficients, g)
    }

    /// Continues the history and controller state of `previous` (used across levels).
    pub fn inherit(mut self, previous: FlowState) -> Self {
        let mut history = previous.history;
        history.append(&mut self.history);
        self.history = history;
        let mut events = previous.dt_events;
        events.append(&mut self.dt_events);
        self.dt_events = events;
        self.max_gram_err = self.max_gram_err.max(previous.max_gram_err);
        self
    }
}

/// `P⁻¹ (G − MU UᵀG)` column by column, or `None` for the L² metric. The
/// residual (rather than `G`) keeps the step a descent direction for any
/// symmetric positive definite `P`.
fn metric_direction(
    model: &KsModel,
    op: Option<&SparseOperator>,
    orbitals: &OrbitalSet,
    load: &DMatrix<f64>,
    warm: Option<&DMatrix<f64>>,
    tol: f64,
) -> Result<Option<DMatrix<f64>>> {
    let Some(op) = op else { return Ok(None) };
    let u = &orbitals.coefficients;
    let load = load - model.mass().mul_mat(u) * (u.transpose() * load);
    let mut out = match warm {
        Some(w) if w.shape() == load.shape() => w.clone(),
        _ => DMatrix::zeros(load.nrows(), load.ncols()),
    };
    for j in 0..load.ncols() {
        solve_spd_in_place(
            op,
            load.column(j).as_slice(),
            out.column_mut(j).as_mut_slice(),
            CgOptions::with_tol(tol),
        )?;
    }
    Ok(Some(out))
}

/// The candidate `U^{n+1}` of the linearized scheme.
pub fn step_linearized(model: &KsModel, state: &FlowState) -> Result<OrbitalSet> {
    let next = state.skew(model).cayley(state.dt)?;
    Ok(state.orbitals.with_coefficients(next))
}

/// Accepts `candidate` if it lowers the energy, otherwise halves Δt.
pub fn accept_or_halve(
    model: &KsModel,
    state: &mut FlowState,
    candidate: OrbitalSet,
    options: &FlowOptions,
) -> Result<StepOutcome> {
    let warm = Some(state.evaluation.hartree_potential.as_slice()).filter(|w| !w.is_empty());
    let evaluation = model.evaluate(&candidate, warm)?;
    if evaluation.energy.total < state.energy.total {
        let load = model.gradient_load(&candidate, &evaluation);
        let riesz = model.riesz(&load, Some(&state.riesz))?;
        let direction = metric_direction(
            model,
            state.metric_operator.as_ref(),
            &candidate,
            &load,
            state.direction.as_ref(),
            state.metric_tol,
        )?;
        let rate = (state.energy.total - evaluation.energy.total) / state.dt;
        state.grad_norm = model.residual_norm(&candidate, &load, &riesz);
        let gram_err = gram_error(model.mass(), &candidate.coefficients);
        state.max_gram_err = state.max_gram_err.max(gram_err);
        state.t += state.dt;
        state.step_index += 1;
        state.energy = evaluation.energy;
        state.orbitals = candidate;
        state.evaluation = evaluation;
        state.riesz = riesz;
        state.direction = direction;
        state.consecutive_halvings = 0;
        state.history.push(HistoryRecord {
            step: state.step_index,
            t: state.t,
            dt: state.dt,
            energy: state.energy,
            grad_norm: state.grad_norm,
            gram_err,
            level: state.level,
        });
        Ok(StepOutcome::Accepted { rate })
    } else {
        halve(state, options)?;
        Ok(StepOutcome::Rejected)
    }
}

fn halve(state: &mut FlowState, options: &FlowOptions) -> Result<()> {
    state.consecutive_halvings += 1;
    state.dt *= 0.5;
    state.dt_events.push(DtEvent {
        level: state.level,
        step: state.step_index,
        change: DtChange::Halved,
        dt: state.dt,
    });
    if state.consecutive_halvings > options.max_halvings || state.dt < 1e-16 {
        return Err(Error::FlowStalled {
            dt: state.dt,
            residual: state.grad_norm,
        });
    }
    Ok(())
}

/// Doubles Δt (up to `dt_max`) at positive multiples of the doubling period.
pub fn maybe_double_dt(state: &mut FlowState, options: &FlowOptions) {
    if state.step_index > 0 && state.step_index % options.doubling_period == 0 && state.dt < options.dt_max {
        state.dt = (2.0 * state.dt).min(options.dt_max);
        state.dt_events.push(DtEvent {
            level: state.level,
            step: state.step_index,
            change: DtChange::Doubled,
            dt: state.dt,
        });
    }
}

/// Steps until an accepted step decreases the energy at a rate below `epsilon`.
pub fn inner_loop(model: &KsModel, state: &mut FlowState, options: &FlowOptions) -> Result<FlowTermination> {
    let start = state.step_index;
    while state.step_index - start < options.max_steps {
        let candidate = match step_linearized(model, state) {
            Ok(c) => c,
            Err(Error::StepFailure { .. }) => {
                halve(state, options)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        if let StepOutcome::Accepted { rate } = accept_or_halve(model, state, candidate, options)? {
            if state.step_index % 100 == 0 {
                debug!(
                    "level {} step {}: E = {:.10}, dt = {:.3e}, |grad| = {:.3e}",
                    state.level, state.step_index, state.energy.total, state.dt, state.grad_norm
                );
            }
            if rate < options.epsilon {
                return Ok(FlowTermination::Converged);
            }
            maybe_double_dt(state, options);
        }
    }
    Ok(FlowTermination::BudgetExhausted)
}
