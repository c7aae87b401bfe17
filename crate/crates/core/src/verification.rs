//! Independent oracles and sampled evidence.
//!
//! The brute-force minimizer evaluates the one-step (discrete) or pointwise
//! Hamiltonian (continuous) objective literally and never touches the closed
//! form solutions it is used to check.

use nalgebra::DVector;
use serde_json::json;

use crate::continuous;
use crate::discrete;
use crate::error::{Error, Result};
use crate::geometry::{Control, Regime, State};
use crate::report::VerificationReport;
use crate::sampling::{argmin_parallel, LipschitzEstimate, SamplingSpec};
use crate::system::SystemModel;

/// Tolerance for analytic-vs-oracle control agreement.
pub const ORACLE_TOL: f64 = 1e-6;
/// Bellman/HJB residual tolerance, relative to `1 + V(x)`.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// `Q` non-negativity tolerance, relative to `1 + ||x||_P^2`.
pub const NONNEG_TOL: f64 = 1e-12;
/// Relative rollout-vs-value gap allowed on top of the truncation tail.
pub const ROLLOUT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    /// Grid points per input axis.
    pub grid_points: usize,
    /// Final golden-section bracket width.
    pub refine_tol: f64,
    /// Box growth factor when the grid minimizer lands on the boundary.
    pub widen_factor: f64,
    pub max_widenings: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            grid_points: 2001,
            refine_tol: 1e-9,
            widen_factor: 10.0,
            max_widenings: 3,
        }
    }
}

/// Literal objective over `u`, precomputed at one state.
struct Objective {
    regime: Regime,
    n: usize,
    m: usize,
    gamma: f64,
    f: Vec<f64>,
    /// row-major `n x m`
    g: Vec<f64>,
    /// row-major `m x m`
    r: Vec<f64>,
    /// row-major `n x n`
    p: Vec<f64>,
    /// `2 P x` (continuous only)
    grad: Vec<f64>,
    scratch: Vec<f64>,
}

impl Objective {
    fn new(sys: &SystemModel, x: &State) -> Result<Self> {
        let pt = sys.eval_at(x)?;
        let (n, m) = (sys.n(), sys.m());
        let p = sys.weight().matrix();
        let row_major = |mat: &nalgebra::DMatrix<f64>| {
            let mut out = Vec::with_capacity(mat.len());
            for i in 0..mat.nrows() {
                for j in 0..mat.ncols() {
                    out.push(mat[(i, j)]);
                }
            }
            out
        };
        let mut grad = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                grad[i] += 2.0 * p[(i, j)] * x[j];
            }
        }
        Ok(Self {
            regime: sys.regime(),
            n,
            m,
            gamma: sys.gamma(),
            f: pt.f.iter().copied().collect(),
            g: row_major(&pt.g),
            r: row_major(&pt.r),
            p: row_major(p),
            grad,
            scratch: vec![0.0; n],
        })
    }

    fn eval(&mut self, u: &[f64]) -> f64 {
        let (n, m) = (self.n, self.m);
        let mut control_cost = 0.0;
        for i in 0..m {
            for j in 0..m {
                control_cost += u[i] * self.r[i * m + j] * u[j];
            }
        }
        // Terms that do not depend on u are dropped: they leave the argmin
        // unchanged but swamp its curvature in floating point when |f| is large.
        for i in 0..n {
            let row = &self.g[i * m..(i + 1) * m];
            self.scratch[i] = row.iter().zip(u).map(|(g, u)| g * u).sum();
        }
        let w = &self.scratch;
        match self.regime {
            Regime::Discrete => {
                let mut quad = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        quad += (2.0 * self.f[i] + w[i]) * self.p[i * n + j] * w[j];
                    }
                }
                control_cost + self.gamma * quad
            }
            Regime::Continuous => {
                control_cost + (0..n).map(|i| self.grad[i] * w[i]).sum::<f64>()
            }
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of a unimodal `h` on `[a, b]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut h: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut hc = h(c);
    let mut hd = h(d);
    for _ in 0..500 {
        if (b - a).abs() <= tol {
            break;
        }
        if hc <= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - INV_PHI * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + INV_PHI * (b - a);
            hd = h(d);
        }
    }
    0.5 * (a + b)
}

/// Grid search followed by golden-section refinement; `m <= 2`.
pub fn brute_force_control(sys: &SystemModel, x: &State) -> Result<Control> {
    brute_force_control_with(sys, x, &OracleSettings::default())
}

pub fn brute_force_control_with(
    sys: &SystemModel,
    x: &State,
    settings: &OracleSettings,
) -> Result<Control> {
    let m = sys.m();
    if m > 2 {
        return Err(Error::InvalidInput(format!(
            "grid oracle supports at most 2 inputs, system has {m}"
        )));
    }
    let mut obj = Objective::new(sys, x)?;
    let mut u_max = 10.0 * (1.0 + x.norm());
    for _ in 0..=settings.max_widenings {
        if let Some(u) = grid_then_refine(&mut obj, u_max, settings) {
            return Ok(DVector::from_vec(u));
        }
        u_max *= settings.widen_factor;
    }
    Err(Error::OracleBoundary {
        u_max: u_max / settings.widen_factor,
        state: x.iter().copied().collect(),
    })
}

fn grid_then_refine(obj: &mut Objective, u_max: f64, settings: &OracleSettings) -> Option<Vec<f64>> {
    let pts = settings.grid_points.max(3);
    let h = 2.0 * u_max / (pts - 1) as f64;
    let coord = |i: usize| -u_max + i as f64 * h;
    let last = pts - 1;
    let m = obj.m;

    let mut best_idx = vec![0usize; m];
    let mut best_val = f64::INFINITY;
    if m == 1 {
        for i in 0..pts {
            let v = obj.eval(&[coord(i)]);
            if v < best_val {
                best_val = v;
                best_idx[0] = i;
            }
        }
    } else {
        for i in 0..pts {
            for j in 0..pts {
                let v = obj.eval(&[coord(i), coord(j)]);
                if v < best_val {
                    best_val = v;
                    best_idx = vec![i, j];
                }
            }
        }
    }
    if best_idx.iter().any(|&i| i == 0 || i == last) {
        return None;
    }

    let mut u: Vec<f64> = best_idx.iter().map(|&i| coord(i)).collect();
    let tol = settings.refine_tol;
    if m == 1 {
        u[0] = golden_section(|t| obj.eval(&[t]), u[0] - h, u[0] + h, tol);
    } else {
        // cyclic coordinate golden-section, re-centred each sweep
        for _ in 0..10_000 {
            let mut moved = 0.0f64;
            for k in 0..m {
                let centre = u[k];
                let mut trial = u.clone();
                let new = golden_section(
                    |t| {
                        trial[k] = t;
                        obj.eval(&trial)
                    },
                    centre - h,
                    centre + h,
                    tol,
                );
                moved = moved.max((new - centre).abs());
                u[k] = new;
            }
            if moved <= tol {
                break;
            }
        }
    }
    if u.iter().any(|v| v.abs() >= u_max) {
        return None;
    }
    Some(u)
}

/// Closed-form control for either regime.
pub fn analytic_control(sys: &SystemModel, x: &State) -> Result<Control> {
    match sys.regime() {
        Regime::Discrete => discrete::optimal_control(sys, x),
        Regime::Continuous => continuous::optimal_control(sys, x),
    }
}

/// Synthesized `Q` for either regime.
pub fn synthesized_q(sys: &SystemModel, x: &State) -> Result<f64> {
    match sys.regime() {
        Regime::Discrete => discrete::synthesize_q(sys, x),
        Regime::Continuous => continuous::synthesize_q(sys, x),
    }
}

/// Bellman (discrete) or HJB (continuous) residual.
pub fn optimality_residual(sys: &SystemModel, x: &State) -> Result<f64> {
    match sys.regime() {
        Regime::Discrete => discrete::bellman_residual(sys, x),
        Regime::Continuous => continuous::hjb_residual(sys, x),
    }
}

/// Gradient of the literal objective at the analytic control, computed from
/// the objective definition: `2 R u + gamma g' (2 P x+)` or `2 R u + g' (2 P x)`.
pub fn stationarity_residual(sys: &SystemModel, x: &State) -> Result<f64> {
    let u = analytic_control(sys, x)?;
    let pt = sys.eval_at(x)?;
    let p = sys.weight().matrix();
    let grad = match sys.regime() {
        Regime::Discrete => {
            let next = &pt.f + &pt.g * &u;
            &pt.r * &u * 2.0 + pt.g.transpose() * (p * next) * (2.0 * sys.gamma())
        }
        Regime::Continuous => &pt.r * &u * 2.0 + pt.g.transpose() * (p * x) * 2.0,
    };
    Ok(grad.amax())
}

/// `max ||f(x)||_P^2 / ||x||_P^2` over the sampled states.
pub fn estimate_lipschitz(sys: &SystemModel, spec: &SamplingSpec) -> Result<LipschitzEstimate> {
    spec.require_dim(sys.n())?;
    let w = sys.weight();
    let states = spec.states();
    let best = argmin_parallel(&states, |x| {
        let nx = w.norm_squared_unchecked(x);
        if nx == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(-w.norm_squared_unchecked(&sys.drift(x)?) / nx)
    })?;
    let (l_hat, argmax) = match best {
        Some((i, s)) if s.is_finite() => (-s, states[i].iter().copied().collect()),
        _ => (0.0, Vec::new()),
    };
    Ok(LipschitzEstimate {
        l_hat: l_hat.max(0.0),
        samples: spec.count(),
        bounds: spec.bounds().to_vec(),
        argmax,
    })
}

fn worst_report(
    sys: &SystemModel,
    check: &str,
    spec: &SamplingSpec,
    states: &[State],
    worst: Option<(usize, f64)>,
) -> VerificationReport {
    let mut report = VerificationReport::new(sys.name(), check);
    report.samples = spec.count();
    if let Some((i, _)) = worst {
        report.worst_state = states[i].iter().copied().collect();
    }
    report
}

/// Sampled minimum of `Q(x) / (1 + ||x||_P^2)`; passes iff `>= -1e-12`.
pub fn check_q_nonnegativity(sys: &SystemModel, spec: &SamplingSpec) -> Result<VerificationReport> {
    spec.require_dim(sys.n())?;
    let w = sys.weight();
    let states = spec.states();
    let worst = argmin_parallel(&states, |x| {
        Ok(synthesized_q(sys, x)? / (1.0 + w.norm_squared_unchecked(x)))
    })?;
    let mut report = worst_report(sys, "q-nonnegativity", spec, &states, worst);
    let (idx, min_scaled) = worst.expect("sampling spec has at least one state");
    report.worst_value = synthesized_q(sys, &states[idx])?;
    report.tolerance = NONNEG_TOL;
    report.pass = min_scaled >= -NONNEG_TOL;

    let lip = estimate_lipschitz(sys, spec)?;
    let (condition, bound) = match sys.regime() {
        Regime::Discrete => ("gamma <= 1/L_hat", discrete::max_discount(&lip)),
        Regime::Continuous => ("gamma >= 2 L_hat", continuous::min_discount(&lip)),
    };
    let holds = match sys.regime() {
        Regime::Discrete => sys.gamma() <= bound,
        Regime::Continuous => sys.gamma() >= bound,
    };
    let verdict = if report.pass { "pass" } else { "fail" };
    Ok(report
        .extra("min_normalized_q", min_scaled)
        .extra("lipschitz", serde_json::to_value(&lip)?)
        .extra("discount_condition", condition)
        .extra("discount_bound", bound)
        .extra("discount_condition_holds", holds)
        .extra("verdict", verdict))
}

/// Largest `|residual| / (1 + V(x))` of the Bellman or HJB equation.
pub fn check_optimality_residual(sys: &SystemModel, spec: &SamplingSpec) -> Result<VerificationReport> {
    spec.require_dim(sys.n())?;
    let w = sys.weight();
    let states = spec.states();
    let worst = argmin_parallel(&states, |x| {
        Ok(-optimality_residual(sys, x)?.abs() / (1.0 + w.norm_squared_unchecked(x)))
    })?;
    let check = match sys.regime() {
        Regime::Discrete => "bellman-residual",
        Regime::Continuous => "hjb-residual",
    };
    let mut report = worst_report(sys, check, spec, &states, worst);
    let (_, neg) = worst.expect("sampling spec has at least one state");
    report.worst_value = -neg;
    report.tolerance = RESIDUAL_TOL;
    report.pass = -neg <= RESIDUAL_TOL;
    let verdict = if report.pass { "pass" } else { "fail" };
    Ok(report.extra("verdict", verdict))
}

/// Analytic control vs. brute-force minimizer (max-norm deviation). Systems
/// with more than two inputs fall back to the stationarity residual.
pub fn check_oracle_agreement(sys: &SystemModel, spec: &SamplingSpec) -> Result<VerificationReport> {
    spec.require_dim(sys.n())?;
    let states = spec.states();
    let grid = sys.m() <= 2;
    let worst = argmin_parallel(&states, |x| {
        if grid {
            let analytic = analytic_control(sys, x)?;
            let oracle = brute_force_control(sys, x)?;
            Ok(-(analytic - oracle).amax())
        } else {
            Ok(-stationarity_residual(sys, x)?)
        }
    })?;
    let check = if grid { "oracle-agreement" } else { "first-order-residual" };
    let mut report = worst_report(sys, check, spec, &states, worst);
    let (_, neg) = worst.expect("sampling spec has at least one state");
    report.worst_value = -neg;
    report.tolerance = ORACLE_TOL;
    report.pass = -neg <= ORACLE_TOL;
    let verdict = if report.pass { "pass" } else { "fail" };
    Ok(report.extra("verdict", verdict))
}

/// `z(x) < 0` at every sampled `x != 0` (continuous regime).
pub fn check_norm_decrease(sys: &SystemModel, spec: &SamplingSpec) -> Result<VerificationReport> {
    sys.require_regime(Regime::Continuous)?;
    spec.require_dim(sys.n())?;
    let w = sys.weight();
    let states = spec.states();
    let worst = argmin_parallel(&states, |x| {
        let nx = w.norm_squared_unchecked(x);
        if nx == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(-continuous::norm_rate(sys, x)?.z / nx)
    })?;
    let mut report = worst_report(sys, "norm-rate-negative", spec, &states, worst);
    let (idx, neg) = worst.expect("sampling spec has at least one state");
    report.worst_value = continuous::norm_rate(sys, &states[idx])?.z;
    report.tolerance = 0.0;
    report.pass = neg.is_finite() && -neg < 0.0;
    let verdict = if report.pass { "pass" } else { "fail" };
    Ok(report
        .extra("max_normalized_rate", -neg)
        .extra("verdict", verdict))
}

/// Checks `R(x) > 0` and full-rank `g(x)` at every sampled state.
pub fn check_assumptions(sys: &SystemModel, spec: &SamplingSpec) -> Result<usize> {
    spec.require_dim(sys.n())?;
    let states = spec.states();
    argmin_parallel(&states, |x| sys.check_assumptions_at(x).map(|_| 0.0))?;
    Ok(states.len())
}

/// Horizon of a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Steps(usize),
    Time { dt: f64, steps: usize },
}

/// Compares the truncated discounted cost of the optimal closed loop with
/// `V(x0)`. The truncation tail is estimated from the measured decay of the
/// stage cost; a rollout whose stage cost is not decaying is inconclusive.
pub fn rollout_vs_value(sys: &SystemModel, x0: &State, horizon: Horizon) -> Result<VerificationReport> {
    let w = sys.weight();
    let v0 = sys.value_function().value(x0)?;
    let gamma = sys.gamma();
    let traj = match (sys.regime(), horizon) {
        (Regime::Discrete, Horizon::Steps(n)) => discrete::simulate(sys, x0, n),
        (Regime::Continuous, Horizon::Time { dt, steps }) => {
            continuous::integrate_closed_loop(sys, x0, dt, steps)
        }
        (regime, _) => {
            return Err(Error::InvalidInput(format!(
                "horizon {horizon:?} does not match the {regime} regime"
            )))
        }
    };
    let mut report = VerificationReport::new(sys.name(), "rollout-vs-value");
    report.worst_state = x0.iter().copied().collect();
    let traj = match traj {
        Ok(t) => t,
        Err(Error::Divergence { step }) => {
            report.pass = false;
            return Ok(report
                .extra("verdict", "inconclusive")
                .extra("reason", format!("trajectory diverged at step {step}")));
        }
        Err(e) => return Err(e),
    };
    report.samples = traj.len();
    let last = traj.last().expect("trajectory has at least one sample");
    let truncated = last.discounted_running_cost;
    let n_samples = traj.len();

    let (decay_ok, tail, rate) = if last.stage_cost == 0.0 {
        (true, 0.0, 0.0)
    } else if n_samples < 2 {
        (false, f64::INFINITY, f64::NAN)
    } else {
        let prev = traj.samples[n_samples - 2].stage_cost;
        let ratio = last.stage_cost / prev;
        match (sys.regime(), horizon) {
            (Regime::Discrete, Horizon::Steps(n)) => {
                let contraction = gamma * ratio;
                let ok = ratio.is_finite() && ratio >= 0.0 && contraction < 1.0;
                let tail = gamma.powi(n as i32) * last.stage_cost / (1.0 - contraction);
                (ok, tail, ratio)
            }
            (_, Horizon::Time { dt, .. }) => {
                let decay = -ratio.ln() / dt;
                let t_end = last.t;
                let ok = ratio.is_finite() && ratio > 0.0 && decay + gamma > 0.0;
                let tail = (-gamma * t_end).exp() * last.stage_cost / (decay + gamma);
                (ok, tail, decay)
            }
            _ => unreachable!(),
        }
    };
    let final_norm = w.norm_squared_unchecked(&DVector::from_vec(last.x.clone())).sqrt();
    let scale = v0.max(f64::MIN_POSITIVE);
    let gap = (v0 - truncated).abs();
    report.worst_value = if v0 > 0.0 { gap / v0 } else { gap };
    report.tolerance = ROLLOUT_TOL + if tail.is_finite() { tail / scale } else { 0.0 };
    report = report
        .extra("value_x0", v0)
        .extra("truncated_cost", truncated)
        .extra("tail_bound", if tail.is_finite() { json!(tail) } else { json!(null) })
        .extra("decay", if rate.is_finite() { json!(rate) } else { json!(null) })
        .extra("final_state_norm_p", final_norm);
    if !decay_ok {
        report.pass = false;
        return Ok(report
            .extra("verdict", "inconclusive")
            .extra("reason", "stage cost is not decaying over the horizon"));
    }
    report.pass = if v0 > 0.0 {
        gap / v0 <= report.tolerance
    } else {
        gap <= ROLLOUT_TOL
    };
    let verdict = if report.pass { "pass" } else { "fail" };
    Ok(report.extra("verdict", verdict))
}

/// `exp(-cost)`, a reward in `(0, 1]` that reverses the cost ordering.
pub fn rl_reward(cost: f64) -> Result<f64> {
    if cost.is_nan() || cost < 0.0 {
        return Err(Error::InvalidInput(format!("cost {cost} must be non-negative")));
    }
    Ok((-cost).exp())
}

/// Index of the largest reward, lowest index on ties.
pub fn argmax_reward(costs: &[f64]) -> Result<Option<usize>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &c) in costs.iter().enumerate() {
        let r = rl_reward(c)?;
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    Ok(best.map(|(i, _)| i))
}

/// Discrete regime: cost of applying each candidate once and acting
/// optimally afterwards, `Q(x) + u'R(x)u + gamma V(f + g u)`.
pub fn candidate_costs(sys: &SystemModel, x: &State, candidates: &[Control]) -> Result<Vec<f64>> {
    sys.require_regime(Regime::Discrete)?;
    let q = discrete::synthesize_q(sys, x)?;
    let pt = sys.eval_at(x)?;
    let w = sys.weight();
    candidates
        .iter()
        .map(|u| {
            if u.len() != sys.m() {
                return Err(Error::Dimension {
                    context: "candidate control",
                    expected: sys.m(),
                    found: u.len(),
                });
            }
            let next = &pt.f + &pt.g * u;
            Ok(q + u.dot(&(&pt.r * u)) + sys.gamma() * w.norm_squared_unchecked(&next))
        })
        .collect()
}

/// Settings of the full verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub spec: SamplingSpec,
    /// States used for the brute-force oracle (the first `oracle_samples`
    /// of `spec`).
    pub oracle_samples: usize,
    pub discrete_steps: usize,
    pub dt: f64,
    pub continuous_steps: usize,
}

impl SuiteOptions {
    pub fn new(spec: SamplingSpec) -> Self {
        Self {
            spec,
            oracle_samples: 100,
            discrete_steps: 200,
            dt: 1e-3,
            continuous_steps: 10_000,
        }
    }
}

/// Runs every applicable check. Violated model assumptions surface as
/// [`Error::ModelAssumption`] rather than as a failed report.
pub fn run_suite(sys: &SystemModel, options: &SuiteOptions) -> Result<Vec<VerificationReport>> {
    let spec = &options.spec;
    check_assumptions(sys, spec)?;
    let oracle_spec = spec.with_count(options.oracle_samples.clamp(1, spec.count()))?;
    let mut reports = vec![
        check_oracle_agreement(sys, &oracle_spec)?,
        check_optimality_residual(sys, spec)?,
        check_q_nonnegativity(sys, spec)?,
    ];
    if sys.regime() == Regime::Continuous {
        if sys.m() == 1 && sys.gamma() == 0.0 {
            reports.push(continuous::gperp_drift_check(sys, spec, continuous::GPERP_TOL)?);
        }
        reports.push(check_norm_decrease(sys, spec)?);
    }
    let x0 = spec.states().swap_remove(0);
    let horizon = match sys.regime() {
        Regime::Discrete => Horizon::Steps(options.discrete_steps),
        Regime::Continuous => Horizon::Time {
            dt: options.dt,
            steps: options.continuous_steps,
        },
    };
    reports.push(rollout_vs_value(sys, &x0, horizon)?);
    Ok(reports)
}
