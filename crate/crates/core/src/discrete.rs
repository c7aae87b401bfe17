//! Discrete-time optimal control with a quadratic value function `V(x) = x'Px`
//! and the inverse-optimal state weight `Q(x)` that makes `V` solve the
//! discounted Bellman equation.
//!
//! With `M(x) = R(x) + gamma g(x)' P g(x)` the optimal law is the regularized
//! least-squares solution `u = -gamma M^-1 g' P f`, and
//!
//! ```text
//! Q(x) = x'Px - gamma f'Pf + gamma^2 f'Pg M^-1 g'Pf
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::geometry::{Control, Regime, State};
use crate::sampling::LipschitzEstimate;
use crate::system::{PointEval, SystemModel};
use crate::trajectory::{Trajectory, TrajectorySample};

/// `M(x)`, the Hessian of the one-step objective (up to a factor 2).
pub fn gain_m(sys: &SystemModel, x: &State) -> Result<DMatrix<f64>> {
    sys.require_regime(Regime::Discrete)?;
    let pt = sys.eval_at(x)?;
    Ok(gain_from(sys, &pt))
}

fn gain_from(sys: &SystemModel, pt: &PointEval) -> DMatrix<f64> {
    let p = sys.weight().matrix();
    &pt.r + pt.g.transpose() * p * &pt.g * sys.gamma()
}

fn factor_m(m: DMatrix<f64>, x: &State) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::assumption("M(x) is not positive definite", x.as_slice()))
}

struct Step {
    pt: PointEval,
    /// `g' P f`
    gpf: DVector<f64>,
    u: Control,
    /// `M^-1 g' P f`
    m_inv_gpf: DVector<f64>,
}

fn solve_step(sys: &SystemModel, x: &State) -> Result<Step> {
    sys.require_regime(Regime::Discrete)?;
    let pt = sys.eval_at(x)?;
    let m = factor_m(gain_from(sys, &pt), x)?;
    let gpf = pt.g.transpose() * (sys.weight().matrix() * &pt.f);
    let m_inv_gpf = m.solve(&gpf);
    let u = &m_inv_gpf * -sys.gamma();
    Ok(Step { pt, gpf, u, m_inv_gpf })
}

/// `u = -gamma M(x)^-1 g(x)' P f(x)`.
pub fn optimal_control(sys: &SystemModel, x: &State) -> Result<Control> {
    Ok(solve_step(sys, x)?.u)
}

/// Single-input law written with the P-geometry:
/// `u = -[1 + R / (gamma ||g||_P^2)]^-1 <f, g / ||g||_P^2>_P`.
pub fn optimal_control_projection_form(sys: &SystemModel, x: &State) -> Result<f64> {
    sys.require_regime(Regime::Discrete)?;
    sys.require_single_input()?;
    let pt = sys.eval_at(x)?;
    let w = sys.weight();
    let g = pt.g.column(0).into_owned();
    let g_norm2 = g_norm_squared(sys, &g, x)?;
    let r = pt.r[(0, 0)];
    let shrink = 1.0 / (1.0 + r / (sys.gamma() * g_norm2));
    Ok(-shrink * w.inner_unchecked(&pt.f, &g) / g_norm2)
}

fn g_norm_squared(sys: &SystemModel, g: &DVector<f64>, x: &State) -> Result<f64> {
    let n2 = sys.weight().norm_squared_unchecked(g);
    if n2 <= 0.0 {
        return Err(Error::assumption("g(x) vanishes", x.as_slice()));
    }
    Ok(n2)
}

/// Inverse-optimal state weight for the discrete regime.
pub fn synthesize_q(sys: &SystemModel, x: &State) -> Result<f64> {
    Ok(q_from(sys, x, &solve_step(sys, x)?))
}

fn q_from(sys: &SystemModel, x: &State, step: &Step) -> f64 {
    let w = sys.weight();
    let gamma = sys.gamma();
    w.norm_squared_unchecked(x) - gamma * w.norm_squared_unchecked(&step.pt.f)
        + gamma * gamma * step.gpf.dot(&step.m_inv_gpf)
}

/// Single-input form `Q = ||x||_P^2 - gamma Q2(x)` with
/// `Q2 = ||f||_P^2 - [1 + R/(gamma ||g||_P^2)]^-1 |<f, g/||g||_P>_P|^2`.
pub fn q_single_input_form(sys: &SystemModel, x: &State) -> Result<f64> {
    sys.require_regime(Regime::Discrete)?;
    sys.require_single_input()?;
    let pt = sys.eval_at(x)?;
    let w = sys.weight();
    let gamma = sys.gamma();
    let g = pt.g.column(0).into_owned();
    let g_norm2 = g_norm_squared(sys, &g, x)?;
    let r = pt.r[(0, 0)];
    let along_g = w.inner_unchecked(&pt.f, &g);
    let q2 = w.norm_squared_unchecked(&pt.f)
        - along_g * along_g / g_norm2 / (1.0 + r / (gamma * g_norm2));
    Ok(w.norm_squared_unchecked(x) - gamma * q2)
}

/// `V(x) - gamma V(x+)`, the small-`R` approximation of `Q`.
pub fn deadbeat_q_approx(sys: &SystemModel, x: &State) -> Result<f64> {
    sys.require_single_input()?;
    let next = step_closed_loop(sys, x)?;
    let w = sys.weight();
    Ok(w.norm_squared_unchecked(x) - sys.gamma() * w.norm_squared_unchecked(&next))
}

/// `x+ = f(x) + g(x) u(x)` under the optimal law.
pub fn step_closed_loop(sys: &SystemModel, x: &State) -> Result<State> {
    let step = solve_step(sys, x)?;
    Ok(&step.pt.f + &step.pt.g * &step.u)
}

/// Stage cost `Q(x) + u' R(x) u` of the optimal law.
pub fn stage_cost(sys: &SystemModel, x: &State) -> Result<f64> {
    let step = solve_step(sys, x)?;
    Ok(q_from(sys, x, &step) + step.u.dot(&(&step.pt.r * &step.u)))
}

/// `V(x) - [Q(x) + u'Ru + gamma V(x+)]`; zero when `Q` is the synthesized one.
pub fn bellman_residual(sys: &SystemModel, x: &State) -> Result<f64> {
    let step = solve_step(sys, x)?;
    let w = sys.weight();
    let q = q_from(sys, x, &step);
    let next = &step.pt.f + &step.pt.g * &step.u;
    let control_cost = step.u.dot(&(&step.pt.r * &step.u));
    Ok(w.norm_squared_unchecked(x)
        - (q + control_cost + sys.gamma() * w.norm_squared_unchecked(&next)))
}

/// `2 R(x) u + gamma g(x)' grad V(x+)`, zero at the optimum.
pub fn first_order_residual(sys: &SystemModel, x: &State) -> Result<DVector<f64>> {
    let step = solve_step(sys, x)?;
    let next = &step.pt.f + &step.pt.g * &step.u;
    let grad = sys.value_function().gradient(&next)?;
    Ok(&step.pt.r * &step.u * 2.0 + step.pt.g.transpose() * grad * sys.gamma())
}

/// Iterates the closed loop for `steps` steps. `discounted_running_cost` at
/// sample `k` is `sum_{i<k} gamma^i (Q(x_i) + u_i' R u_i)`, so
/// `running_cost(k) + gamma^k V(x_k) = V(x_0)`.
pub fn simulate(sys: &SystemModel, x0: &State, steps: usize) -> Result<Trajectory> {
    sys.require_regime(Regime::Discrete)?;
    let w = sys.weight();
    let gamma = sys.gamma();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut running = 0.0;
    let mut discount = 1.0;
    for k in 0..=steps {
        let step = solve_step(sys, &x)?;
        let stage = q_from(sys, &x, &step) + step.u.dot(&(&step.pt.r * &step.u));
        samples.push(TrajectorySample {
            t: k as f64,
            x: x.iter().copied().collect(),
            u: step.u.iter().copied().collect(),
            stage_cost: stage,
            value: w.norm_squared_unchecked(&x),
            discounted_running_cost: running,
        });
        if k == steps {
            break;
        }
        running += discount * stage;
        discount *= gamma;
        x = &step.pt.f + &step.pt.g * &step.u;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
    }
    Ok(Trajectory {
        regime: Regime::Discrete,
        step: 1.0,
        samples,
    })
}

/// Largest discount with guaranteed `Q >= 0`: `1 / L`, capped at 1.
pub fn max_discount(estimate: &LipschitzEstimate) -> f64 {
    if estimate.l_hat <= 0.0 {
        return 1.0;
    }
    (1.0 / estimate.l_hat).min(1.0)
}
