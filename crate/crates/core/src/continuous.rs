//! Continuous-time optimal control with `V(x) = x'Px`: the HJB-optimal law
//! `u = -R^-1 g' P x`, the inverse-optimal weight
//!
//! ```text
//! Q(x) = gamma x'Px - 2 x'P f + x'P g R^-1 g'P x
//! ```
//!
//! and the single-input conditions on the set `S = {x : <g(x), x>_P = 0}`
//! that certify `Q >= 0` and a decreasing `||x||_P` when `gamma = 0`.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Control, Regime, State};
use crate::report::VerificationReport;
use crate::sampling::{LipschitzEstimate, SamplingSpec};
use crate::system::{PointEval, SystemModel};
use crate::trajectory::{Trajectory, TrajectorySample};

/// Default absolute tolerance for membership in `S`.
pub const GPERP_TOL: f64 = 1e-10;

fn control_from(sys: &SystemModel, x: &State, pt: &PointEval) -> Control {
    let gpx = pt.g.transpose() * (sys.weight().matrix() * x);
    -pt.r_solve(&gpx)
}

fn q_from(sys: &SystemModel, x: &State, pt: &PointEval) -> f64 {
    let w = sys.weight();
    let gpx = pt.g.transpose() * (w.matrix() * x);
    sys.gamma() * w.norm_squared_unchecked(x) - 2.0 * w.inner_unchecked(&pt.f, x)
        + gpx.dot(&pt.r_solve(&gpx))
}

fn eval(sys: &SystemModel, x: &State) -> Result<PointEval> {
    sys.require_regime(Regime::Continuous)?;
    sys.eval_at(x)
}

/// `u = -R(x)^-1 g(x)' P x`.
pub fn optimal_control(sys: &SystemModel, x: &State) -> Result<Control> {
    let pt = eval(sys, x)?;
    Ok(control_from(sys, x, &pt))
}

/// Single-input form `u = -R^-1 <g(x), x>_P`.
pub fn optimal_control_inner_form(sys: &SystemModel, x: &State) -> Result<f64> {
    sys.require_single_input()?;
    let pt = eval(sys, x)?;
    let g = pt.g.column(0).into_owned();
    Ok(-sys.weight().inner_unchecked(&g, x) / pt.r[(0, 0)])
}

/// Inverse-optimal state weight for the continuous regime.
pub fn synthesize_q(sys: &SystemModel, x: &State) -> Result<f64> {
    let pt = eval(sys, x)?;
    Ok(q_from(sys, x, &pt))
}

/// `gamma ||x||_P^2 - 2 <f, x>_P + R^-1 |<g, x>_P|^2`.
pub fn q_single_input_form(sys: &SystemModel, x: &State) -> Result<f64> {
    sys.require_single_input()?;
    let pt = eval(sys, x)?;
    let w = sys.weight();
    let g = pt.g.column(0).into_owned();
    let gx = w.inner_unchecked(&g, x);
    Ok(sys.gamma() * w.norm_squared_unchecked(x) - 2.0 * w.inner_unchecked(&pt.f, x)
        + gx * gx / pt.r[(0, 0)])
}

/// `gamma V(x) - [Q + u'Ru + grad V' (f + g u)]`; zero for the synthesized `Q`.
pub fn hjb_residual(sys: &SystemModel, x: &State) -> Result<f64> {
    let pt = eval(sys, x)?;
    let u = control_from(sys, x, &pt);
    let q = q_from(sys, x, &pt);
    let grad = sys.value_function().gradient(x)?;
    let xdot = &pt.f + &pt.g * &u;
    Ok(sys.gamma() * sys.weight().norm_squared_unchecked(x)
        - (q + u.dot(&(&pt.r * &u)) + grad.dot(&xdot)))
}

/// Closed-loop vector field `f(x) - g R^-1 g' P x`.
pub fn closed_loop_field(sys: &SystemModel, x: &State) -> Result<State> {
    let pt = eval(sys, x)?;
    let u = control_from(sys, x, &pt);
    Ok(&pt.f + &pt.g * &u)
}

/// `-<grad V, g/||g||_P^2>_P g`, the projection of the value gradient onto
/// the control direction. The gradient is taken in the P-geometry
/// (`P^-1 grad V = 2x`), which coincides with `grad V` when `P = I`.
pub fn projected_gradient_field(sys: &SystemModel, x: &State) -> Result<State> {
    sys.require_single_input()?;
    let pt = eval(sys, x)?;
    let w = sys.weight();
    let g = pt.g.column(0).into_owned();
    let g_norm2 = w.norm_squared_unchecked(&g);
    if g_norm2 <= 0.0 {
        return Err(Error::assumption("g(x) vanishes", x.as_slice()));
    }
    let p_grad = x * 2.0;
    Ok(&g * (-w.inner_unchecked(&p_grad, &g) / g_norm2))
}

fn stage_from(sys: &SystemModel, x: &State, pt: &PointEval) -> (Control, f64) {
    let u = control_from(sys, x, pt);
    let stage = q_from(sys, x, pt) + u.dot(&(&pt.r * &u));
    (u, stage)
}

fn rk4_step(sys: &SystemModel, x: &State, dt: f64, step: usize) -> Result<State> {
    let field = |y: &State| -> Result<State> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let v = closed_loop_field(sys, y)?;
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Divergence { step });
        }
        Ok(v)
    };
    let k1 = field(x)?;
    let k2 = field(&(x + &k1 * (dt / 2.0)))?;
    let k3 = field(&(x + &k2 * (dt / 2.0)))?;
    let k4 = field(&(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Classical fixed-step RK4 on the closed loop. The discounted running cost
/// `int_0^t e^{-gamma s} (Q + u'Ru) ds` is accumulated with the trapezoidal
/// rule on the integration grid.
pub fn integrate_closed_loop(
    sys: &SystemModel,
    x0: &State,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    sys.require_regime(Regime::Continuous)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("step size {dt} must be positive")));
    }
    let gamma = sys.gamma();
    let w = sys.weight();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut running = 0.0;
    let mut prev_weighted = 0.0;
    for k in 0..=steps {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        let t = k as f64 * dt;
        let pt = sys.eval_at(&x)?;
        let (u, stage) = stage_from(sys, &x, &pt);
        let weighted = (-gamma * t).exp() * stage;
        if k > 0 {
            running += 0.5 * dt * (prev_weighted + weighted);
        }
        prev_weighted = weighted;
        samples.push(TrajectorySample {
            t,
            x: x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            stage_cost: stage,
            value: w.norm_squared_unchecked(&x),
            discounted_running_cost: running,
        });
        if k < steps {
            x = rk4_step(sys, &x, dt, k + 1)?;
        }
    }
    Ok(Trajectory {
        regime: Regime::Continuous,
        step: dt,
        samples,
    })
}

/// `|<g(x), x>_P| <= tol`.
pub fn in_gperp(sys: &SystemModel, x: &State, tol: f64) -> Result<bool> {
    sys.require_single_input()?;
    Ok(gperp_residual(sys, x)?.abs() <= tol)
}

fn gperp_residual(sys: &SystemModel, x: &State) -> Result<f64> {
    let g = sys.input_map(x)?.column(0).into_owned();
    Ok(sys.weight().inner_unchecked(&g, x))
}

/// `<f(x), x>_P / |<g(x), x>_P|^2`, or `None` on `S`.
pub fn r_upper_bound(sys: &SystemModel, x: &State) -> Result<Option<f64>> {
    sys.require_single_input()?;
    let w = sys.weight();
    let gx = gperp_residual(sys, x)?;
    if gx.abs() <= GPERP_TOL {
        return Ok(None);
    }
    let fx = w.inner_unchecked(&sys.drift(x)?, x);
    Ok(Some(fx / (gx * gx)))
}

/// Both readings of the control-weight selection rule at one state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCondition {
    /// `<f,x>_P / |<g,x>_P|^2`, `None` on `S`.
    pub bound: Option<f64>,
    /// `bound - R(x)`.
    pub literal_margin: Option<f64>,
    /// `bound - R(x) > 0` as literally stated.
    pub literal_holds: bool,
    /// `d||x||_P^2/dt` along the closed loop.
    pub z: f64,
    /// `z < 0`.
    pub decreasing: bool,
}

pub fn rate_condition(sys: &SystemModel, x: &State) -> Result<RateCondition> {
    let bound = r_upper_bound(sys, x)?;
    let r = sys.control_weight(x)?[(0, 0)];
    let literal_margin = bound.map(|b| b - r);
    let z = norm_rate(sys, x)?.z;
    Ok(RateCondition {
        bound,
        literal_margin,
        literal_holds: literal_margin.is_some_and(|m| m > 0.0),
        z,
        decreasing: z < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRateSample {
    pub x: Vec<f64>,
    pub z: f64,
}

/// `z = 2 <x, xdot>_P` along the closed loop.
pub fn norm_rate(sys: &SystemModel, x: &State) -> Result<NormRateSample> {
    let xdot = closed_loop_field(sys, x)?;
    Ok(NormRateSample {
        x: x.iter().copied().collect(),
        z: 2.0 * sys.weight().inner_unchecked(x, &xdot),
    })
}

/// Single-input form `z = 2 [<f,x>_P - R^-1 |<g,x>_P|^2]`.
pub fn norm_rate_single_input(sys: &SystemModel, x: &State) -> Result<f64> {
    sys.require_single_input()?;
    let pt = eval(sys, x)?;
    let w = sys.weight();
    let gx = w.inner_unchecked(&pt.g.column(0).into_owned(), x);
    Ok(2.0 * (w.inner_unchecked(&pt.f, x) - gx * gx / pt.r[(0, 0)]))
}

/// Smallest discount with guaranteed `Q >= 0`: `2 L`.
pub fn min_discount(estimate: &LipschitzEstimate) -> f64 {
    2.0 * estimate.l_hat.max(0.0)
}

/// Finds a point of `S` near `start` along the line `start + t d` by
/// bracketing and bisection on `h(t) = <g, x>_P`.
fn project_to_gperp(sys: &SystemModel, start: &State, dir: &State, radius: f64) -> Result<Option<State>> {
    let h = |t: f64| -> Result<f64> { gperp_residual(sys, &(start + dir * t)) };
    const SCAN: usize = 32;
    let span = 4.0 * radius;
    let h0 = h(0.0)?;
    if h0 == 0.0 {
        return Ok(Some(start.clone()));
    }
    // nearest sign change on either side of t = 0
    let mut bracket = None;
    'scan: for j in 1..=SCAN {
        for side in [1.0, -1.0] {
            let t_prev = side * span * (j - 1) as f64 / SCAN as f64;
            let t = side * span * j as f64 / SCAN as f64;
            let (h_prev, ht) = (h(t_prev)?, h(t)?);
            if h_prev.signum() != ht.signum() || ht == 0.0 {
                bracket = Some((t_prev, h_prev, t));
                break 'scan;
            }
        }
    }
    let Some((mut a, mut ha, mut b)) = bracket else {
        return Ok(None);
    };
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let hm = h(mid)?;
        if hm == 0.0 || (b - a).abs() <= f64::EPSILON * radius {
            a = mid;
            ha = hm;
            break;
        }
        if hm.signum() == ha.signum() {
            a = mid;
            ha = hm;
        } else {
            b = mid;
        }
    }
    let x = start + dir * a;
    if ha.abs() > GPERP_TOL * (1.0 + x.norm_squared()) {
        return Ok(None);
    }
    Ok(Some(x))
}

/// Samples `S` and checks `<f(x), x>_P <= tol (1 + ||x||_P^2)` there.
///
/// States are drawn on spheres `||x|| = rho` with `rho` on a logarithmic
/// grid up to the box radius, then moved onto `S` along a random tangent
/// direction. Sampling is evidence only.
pub fn gperp_drift_check(sys: &SystemModel, spec: &SamplingSpec, tol: f64) -> Result<VerificationReport> {
    sys.require_regime(Regime::Continuous)?;
    sys.require_single_input()?;
    if sys.gamma() != 0.0 {
        return Err(Error::InvalidInput(
            "the drift condition on S applies to gamma = 0".into(),
        ));
    }
    spec.require_dim(sys.n())?;
    let n = sys.n();
    let w = sys.weight();
    let outer = spec
        .bounds()
        .iter()
        .map(|&(lo, hi)| lo.abs().max(hi.abs()))
        .fold(0.0, f64::max);
    let inner = outer * 1e-3;
    let levels = spec.count().clamp(1, 16);
    let mut rng = spec.rng();

    let origin = State::zeros(n);
    let mut worst_state = origin.clone();
    let mut worst_scaled = 0.0;
    let mut worst_raw = 0.0;
    let mut min_raw: f64 = 0.0;
    let mut found = 0usize;
    let mut skipped = 0usize;
    for i in 0..spec.count() {
        let frac = if levels > 1 { (i % levels) as f64 / (levels - 1) as f64 } else { 1.0 };
        let radius = inner * (outer / inner).powf(frac);
        let dir = random_unit(&mut rng, n);
        let start = &dir * radius;
        let candidate = if n == 1 {
            // the sphere is {-rho, rho}; no tangent to move along
            (gperp_residual(sys, &start)?.abs() <= GPERP_TOL).then_some(start)
        } else {
            let tangent = random_tangent(&mut rng, &dir);
            project_to_gperp(sys, &start, &tangent, radius)?
        };
        let Some(x) = candidate else {
            skipped += 1;
            continue;
        };
        found += 1;
        let fx = w.inner_unchecked(&sys.drift(&x)?, &x);
        let scaled = fx / (1.0 + w.norm_squared_unchecked(&x));
        min_raw = min_raw.min(fx);
        if scaled > worst_scaled {
            worst_scaled = scaled;
            worst_raw = fx;
            worst_state = x;
        }
    }
    let mut report = VerificationReport::new(sys.name(), "drift-on-gperp");
    report.samples = found + 1;
    report.worst_value = worst_raw;
    report.worst_state = worst_state.iter().copied().collect();
    report.tolerance = tol;
    report.pass = worst_scaled <= tol;
    Ok(report
        .extra("min_inner_f_x", min_raw)
        .extra("max_inner_f_x", worst_raw)
        .extra("points_off_set_skipped", skipped)
        .extra("verdict", if worst_scaled <= tol { "pass" } else { "fail" }))
}

fn random_unit<R: Rng>(rng: &mut R, n: usize) -> State {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-3 && norm <= 1.0 {
            return v / norm;
        }
    }
}

fn random_tangent<R: Rng>(rng: &mut R, normal: &State) -> State {
    loop {
        let v = random_unit(rng, normal.len());
        let t = &v - normal * normal.dot(&v);
        let norm = t.norm();
        if norm > 1e-3 {
            return t / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{builtin_config, builtin_system, load_system};
    use nalgebra::dvector;

    fn neg() -> SystemModel {
        builtin_system("scalar-continuous-neg").unwrap()
    }

    fn ex2() -> SystemModel {
        builtin_system("example2-continuous").unwrap()
    }

    #[test]
    fn control_examples() {
        assert_eq!(optimal_control(&neg(), &dvector![0.0]).unwrap()[0], 0.0);
        assert_eq!(optimal_control(&neg(), &dvector![3.0]).unwrap()[0], -3.0);
        assert_eq!(optimal_control(&ex2(), &dvector![1.0, 2.0]).unwrap()[0], -2.0);
        assert_eq!(optimal_control_inner_form(&ex2(), &dvector![1.0, 2.0]).unwrap(), -2.0);
    }

    #[test]
    fn q_examples() {
        assert_eq!(synthesize_q(&neg(), &dvector![0.0]).unwrap(), 0.0);
        assert_eq!(synthesize_q(&neg(), &dvector![3.0]).unwrap(), 27.0);
        assert_eq!(synthesize_q(&ex2(), &dvector![1.0, 2.0]).unwrap(), 6.0);
        assert_eq!(q_single_input_form(&ex2(), &dvector![1.0, 2.0]).unwrap(), 6.0);
    }

    #[test]
    fn hjb_examples() {
        assert_eq!(hjb_residual(&neg(), &dvector![0.0]).unwrap(), 0.0);
        assert_eq!(hjb_residual(&neg(), &dvector![3.0]).unwrap(), 0.0);
    }

    #[test]
    fn field_examples() {
        assert_eq!(closed_loop_field(&neg(), &dvector![0.0]).unwrap()[0], 0.0);
        assert_eq!(closed_loop_field(&neg(), &dvector![3.0]).unwrap()[0], -6.0);
        assert_eq!(closed_loop_field(&ex2(), &dvector![1.0, 2.0]).unwrap(), dvector![7.0, -6.0]);
    }

    #[test]
    fn integrate_examples() {
        let t = integrate_closed_loop(&neg(), &dvector![3.0], 1e-3, 0).unwrap();
        assert_eq!(t.len(), 1);
        let t = integrate_closed_loop(&neg(), &dvector![3.0], 1e-3, 5000).unwrap();
        let exact = 3.0 * (-10.0f64).exp();
        let got = t.last().unwrap().x[0];
        assert!(((got - exact) / exact).abs() <= 1e-6, "{got} {exact}");
        assert!(integrate_closed_loop(&neg(), &dvector![3.0], 0.0, 10).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut c = builtin_config("scalar-continuous-neg").unwrap();
        c.f = vec!["x1^3".into()];
        let sys = load_system(&c).unwrap();
        let err = integrate_closed_loop(&sys, &dvector![10.0], 0.1, 100).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn gperp_examples() {
        assert!(in_gperp(&ex2(), &dvector![5.0, 0.0], GPERP_TOL).unwrap());
        assert!(!in_gperp(&ex2(), &dvector![0.0, 1.0], GPERP_TOL).unwrap());
        assert!(in_gperp(&ex2(), &dvector![0.0, 0.0], GPERP_TOL).unwrap());
    }

    #[test]
    fn r_bound_examples() {
        assert_eq!(r_upper_bound(&neg(), &dvector![3.0]).unwrap(), Some(-1.0));
        assert_eq!(r_upper_bound(&ex2(), &dvector![1.0, 1.0]).unwrap(), Some(-1.0));
        assert_eq!(r_upper_bound(&ex2(), &dvector![1.0, 0.0]).unwrap(), None);
        let c = rate_condition(&ex2(), &dvector![1.0, 1.0]).unwrap();
        // the literal inequality fails while the norm still decreases
        assert!(!c.literal_holds);
        assert!(c.decreasing);
        assert_eq!(c.literal_margin, Some(-2.0));
    }

    #[test]
    fn norm_rate_examples() {
        assert_eq!(norm_rate(&ex2(), &dvector![0.0, 0.0]).unwrap().z, 0.0);
        assert_eq!(norm_rate(&neg(), &dvector![3.0]).unwrap().z, -36.0);
        assert_eq!(norm_rate(&ex2(), &dvector![1.0, 2.0]).unwrap().z, -10.0);
        assert_eq!(norm_rate_single_input(&ex2(), &dvector![1.0, 2.0]).unwrap(), -10.0);
    }

    #[test]
    fn discount_bound() {
        assert_eq!(min_discount(&LipschitzEstimate::new(1.0)), 2.0);
        assert_eq!(min_discount(&LipschitzEstimate::new(0.5)), 1.0);
        assert_eq!(min_discount(&LipschitzEstimate::new(0.0)), 0.0);
    }

    #[test]
    fn drift_check_examples() {
        let spec = SamplingSpec::cube(2, -10.0, 10.0, 500, 3).unwrap();
        let r = gperp_drift_check(&ex2(), &spec, 1e-10).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.samples > 100);

        let spec1 = SamplingSpec::cube(1, -10.0, 10.0, 100, 3).unwrap();
        assert!(gperp_drift_check(&neg(), &spec1, 1e-10).unwrap().pass);

        let mut c = builtin_config("example2-continuous").unwrap();
        c.f = vec!["x1".into(), "x2".into()];
        let unstable = load_system(&c).unwrap();
        let r = gperp_drift_check(&unstable, &spec, 1e-10).unwrap();
        assert!(!r.pass);
        assert!(r.worst_state[1].abs() < 1e-9);
        assert!(r.worst_value > 0.0);
    }

    #[test]
    fn drift_check_preconditions() {
        let spec = SamplingSpec::cube(2, -1.0, 1.0, 10, 3).unwrap();
        let sys = ex2().with_gamma(1.0).unwrap();
        assert!(gperp_drift_check(&sys, &spec, 1e-10).is_err());
    }
}
