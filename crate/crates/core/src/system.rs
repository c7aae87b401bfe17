//! Control-affine plant definitions: `x+ = f(x) + g(x) u` (discrete) or
//! `dx/dt = f(x) + g(x) u` (continuous), with control weight `R(x)`, value
//! matrix `P` and discount factor.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::geometry::{
    check_state, relative_asymmetry, DiscountFactor, QuadraticValue, Regime, State, WeightMatrix,
    SYMMETRY_TOL,
};

/// Tolerance on `|f_i(0)|` when loading a system.
pub const ORIGIN_DRIFT_TOL: f64 = 1e-12;
/// Smallest singular value of `g(x)` accepted as full rank.
pub const RANK_TOL: f64 = 1e-10;

pub const BUILTIN_NAMES: [&str; 4] = [
    "example1-discrete",
    "example2-continuous",
    "scalar-discrete-half",
    "scalar-continuous-neg",
];

/// JSON document describing a system; expressions are strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub name: String,
    pub regime: Regime,
    pub n: usize,
    pub m: usize,
    pub f: Vec<String>,
    pub g: Vec<Vec<String>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<String>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Drift, input map and control weight evaluated at one state.
#[derive(Debug, Clone)]
pub struct PointEval {
    pub f: DVector<f64>,
    /// `n x m`
    pub g: DMatrix<f64>,
    /// `m x m`, symmetric positive definite
    pub r: DMatrix<f64>,
    pub(crate) r_chol: Cholesky<f64, Dyn>,
}

impl PointEval {
    /// `R(x)^-1 b`
    pub fn r_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.r_chol.solve(b)
    }
}

#[derive(Debug, Clone)]
pub struct SystemModel {
    name: String,
    regime: Regime,
    n: usize,
    m: usize,
    drift: Vec<Expr>,
    input_map: Vec<Vec<Expr>>,
    control_weight: Vec<Vec<Expr>>,
    value: QuadraticValue,
    gamma: DiscountFactor,
}

fn parse_all(texts: &[String], n: usize, what: &str) -> Result<Vec<Expr>> {
    texts
        .iter()
        .map(|t| {
            expr::parse(t, n).map_err(|e| {
                Error::InvalidInput(format!("{what} entry `{t}`: {e}"))
            })
        })
        .collect()
}

fn check_rows(rows: usize, expected: usize, context: &'static str) -> Result<()> {
    if rows != expected {
        return Err(Error::Dimension {
            context,
            expected,
            found: rows,
        });
    }
    Ok(())
}

/// Builds and validates a [`SystemModel`] from its configuration.
pub fn load_system(config: &SystemConfig) -> Result<SystemModel> {
    let (n, m) = (config.n, config.m);
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("n and m must be positive".into()));
    }
    check_rows(config.f.len(), n, "f")?;
    check_rows(config.g.len(), n, "g rows")?;
    for row in &config.g {
        check_rows(row.len(), m, "g columns")?;
    }
    check_rows(config.r.len(), m, "R rows")?;
    for row in &config.r {
        check_rows(row.len(), m, "R columns")?;
    }
    check_rows(config.p.len(), n, "P rows")?;
    for row in &config.p {
        check_rows(row.len(), n, "P columns")?;
    }

    let drift = parse_all(&config.f, n, "f")?;
    let input_map = config
        .g
        .iter()
        .map(|row| parse_all(row, n, "g"))
        .collect::<Result<Vec<_>>>()?;
    let control_weight = config
        .r
        .iter()
        .map(|row| parse_all(row, n, "R"))
        .collect::<Result<Vec<_>>>()?;
    let weight = WeightMatrix::from_rows(&config.p)?;
    let gamma = DiscountFactor::new(config.gamma, config.regime)?;

    let sys = SystemModel {
        name: config.name.clone(),
        regime: config.regime,
        n,
        m,
        drift,
        input_map,
        control_weight,
        value: QuadraticValue::new(weight),
        gamma,
    };
    let f0 = sys.drift(&State::zeros(n))?;
    if f0.iter().any(|v| v.abs() > ORIGIN_DRIFT_TOL) {
        return Err(Error::DriftAtOrigin(f0.iter().copied().collect()));
    }
    Ok(sys)
}

pub fn load_system_json(text: &str) -> Result<SystemModel> {
    load_system(&SystemConfig::from_json(text)?)
}

pub fn load_system_file(path: impl AsRef<Path>) -> Result<SystemModel> {
    load_system_json(&std::fs::read_to_string(path)?)
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Configuration of a named built-in system.
pub fn builtin_config(name: &str) -> Result<SystemConfig> {
    let one = || vec![strings(&["1"])];
    let config = match name {
        "example1-discrete" => SystemConfig {
            name: name.into(),
            regime: Regime::Discrete,
            n: 2,
            m: 1,
            f: strings(&["-x2*sin(x2)", "-x1*cos(x2)*sin(x1)"]),
            g: vec![strings(&["0"]), strings(&["1"])],
            r: one(),
            p: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            gamma: 1.0,
        },
        "example2-continuous" => SystemConfig {
            name: name.into(),
            regime: Regime::Continuous,
            n: 2,
            m: 1,
            f: strings(&["x2^3 - x1", "-x1*x2^2"]),
            g: vec![strings(&["0"]), strings(&["1"])],
            r: one(),
            p: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            gamma: 0.0,
        },
        "scalar-discrete-half" => SystemConfig {
            name: name.into(),
            regime: Regime::Discrete,
            n: 1,
            m: 1,
            f: strings(&["0.5*x1"]),
            g: one(),
            r: one(),
            p: vec![vec![1.0]],
            gamma: 1.0,
        },
        "scalar-continuous-neg" => SystemConfig {
            name: name.into(),
            regime: Regime::Continuous,
            n: 1,
            m: 1,
            f: strings(&["-x1"]),
            g: one(),
            r: one(),
            p: vec![vec![1.0]],
            gamma: 0.0,
        },
        _ => return Err(Error::UnknownSystem(name.to_string())),
    };
    Ok(config)
}

pub fn builtin_system(name: &str) -> Result<SystemModel> {
    load_system(&builtin_config(name)?)
}

impl SystemModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.value()
    }

    pub fn weight(&self) -> &WeightMatrix {
        self.value.weight()
    }

    pub fn value_function(&self) -> &QuadraticValue {
        &self.value
    }

    pub(crate) fn require_regime(&self, expected: Regime) -> Result<()> {
        if self.regime != expected {
            return Err(Error::Regime { expected });
        }
        Ok(())
    }

    pub(crate) fn require_single_input(&self) -> Result<()> {
        if self.m != 1 {
            return Err(Error::SingleInputOnly(self.m));
        }
        Ok(())
    }

    fn eval_entry(e: &Expr, x: &State, what: &str) -> Result<f64> {
        e.eval(x.as_slice()).map_err(|source| Error::Eval {
            context: format!("{what} at x = {:?}", x.as_slice()),
            source,
        })
    }

    pub fn drift(&self, x: &State) -> Result<DVector<f64>> {
        check_state(x.as_slice(), self.n)?;
        let mut out = DVector::zeros(self.n);
        for (i, e) in self.drift.iter().enumerate() {
            out[i] = Self::eval_entry(e, x, "f")?;
        }
        Ok(out)
    }

    pub fn input_map(&self, x: &State) -> Result<DMatrix<f64>> {
        check_state(x.as_slice(), self.n)?;
        let mut out = DMatrix::zeros(self.n, self.m);
        for (i, row) in self.input_map.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                out[(i, j)] = Self::eval_entry(e, x, "g")?;
            }
        }
        Ok(out)
    }

    /// Raw `R(x)` without the definiteness check.
    pub fn control_weight_raw(&self, x: &State) -> Result<DMatrix<f64>> {
        check_state(x.as_slice(), self.n)?;
        let mut out = DMatrix::zeros(self.m, self.m);
        for (i, row) in self.control_weight.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                out[(i, j)] = Self::eval_entry(e, x, "R")?;
            }
        }
        Ok(out)
    }

    fn factor_control_weight(r: &DMatrix<f64>, x: &State) -> Result<Cholesky<f64, Dyn>> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::assumption("R(x) is not finite", x.as_slice()));
        }
        if relative_asymmetry(r) > SYMMETRY_TOL {
            return Err(Error::assumption("R(x) is not symmetric", x.as_slice()));
        }
        Cholesky::new(r.clone())
            .ok_or_else(|| Error::assumption("R(x) is not positive definite", x.as_slice()))
    }

    /// `R(x)`, checked symmetric positive definite.
    pub fn control_weight(&self, x: &State) -> Result<DMatrix<f64>> {
        let r = self.control_weight_raw(x)?;
        Self::factor_control_weight(&r, x)?;
        Ok(r)
    }

    /// Evaluates `f`, `g` and `R` at `x` (checking `R(x) > 0`).
    pub fn eval_at(&self, x: &State) -> Result<PointEval> {
        let f = self.drift(x)?;
        let g = self.input_map(x)?;
        let r = self.control_weight_raw(x)?;
        let r_chol = Self::factor_control_weight(&r, x)?;
        Ok(PointEval { f, g, r, r_chol })
    }

    /// Smallest singular value of `g(x)`.
    pub fn input_map_min_singular_value(&self, x: &State) -> Result<f64> {
        let g = self.input_map(x)?;
        let gram = g.transpose() * &g;
        let min_eig = gram.symmetric_eigenvalues().min();
        Ok(min_eig.max(0.0).sqrt())
    }

    /// Sampled check of the standing assumptions at `x`: `R(x) > 0` and,
    /// for `x != 0`, `g(x)` of full column rank.
    pub fn check_assumptions_at(&self, x: &State) -> Result<()> {
        self.control_weight(x)?;
        if x.iter().any(|v| *v != 0.0) {
            let sigma = self.input_map_min_singular_value(x)?;
            if sigma <= RANK_TOL {
                return Err(Error::assumption(
                    format!("g(x) is rank deficient (smallest singular value {sigma:e})"),
                    x.as_slice(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_config(&self) -> SystemConfig {
        let show = |row: &Vec<Expr>| row.iter().map(|e| e.to_string()).collect::<Vec<_>>();
        SystemConfig {
            name: self.name.clone(),
            regime: self.regime,
            n: self.n,
            m: self.m,
            f: show(&self.drift),
            g: self.input_map.iter().map(show).collect(),
            r: self.control_weight.iter().map(show).collect(),
            p: self.weight().to_rows(),
            gamma: self.gamma.value(),
        }
    }

    /// Copy with `R(x) = r * I`.
    pub fn with_constant_control_weight(&self, r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidInput(format!("control weight {r} must be positive")));
        }
        let mut out = self.clone();
        out.control_weight = (0..self.m)
            .map(|i| {
                (0..self.m)
                    .map(|j| Expr::constant(if i == j { r } else { 0.0 }))
                    .collect()
            })
            .collect();
        Ok(out)
    }

    /// Copy with a different discount factor (validated for the regime).
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut out = self.clone();
        out.gamma = DiscountFactor::new(gamma, self.regime)?;
        Ok(out)
    }

    pub fn with_name(&self, name: impl Into<String>) -> Self {
        let mut out = self.clone();
        out.name = name.into();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn builtin_drifts() {
        let s = builtin_system("example1-discrete").unwrap();
        assert_eq!((s.n(), s.m(), s.regime()), (2, 1, Regime::Discrete));
        let f = s.drift(&dvector![FRAC_PI_2, 0.0]).unwrap();
        assert_eq!(f[0], 0.0);
        assert!((f[1] + FRAC_PI_2).abs() < 1e-15);

        let s = builtin_system("example2-continuous").unwrap();
        assert_eq!(s.drift(&dvector![1.0, 2.0]).unwrap(), dvector![7.0, -4.0]);
        assert_eq!(s.gamma(), 0.0);

        let s = builtin_system("scalar-discrete-half").unwrap();
        assert_eq!(s.drift(&dvector![2.0]).unwrap(), dvector![1.0]);
        let s = builtin_system("scalar-continuous-neg").unwrap();
        assert_eq!(s.drift(&dvector![3.0]).unwrap(), dvector![-3.0]);
    }

    #[test]
    fn unknown_builtin() {
        assert!(matches!(builtin_system("nosuch"), Err(Error::UnknownSystem(_))));
    }

    #[test]
    fn loads_example1_json() {
        let json = r#"{
            "name": "ex1", "regime": "discrete", "n": 2, "m": 1,
            "f": ["-x2*sin(x2)", "-x1*cos(x2)*sin(x1)"],
            "g": [["0"], ["1"]],
            "R": [["1"]],
            "P": [[1, 0], [0, 1]],
            "gamma": 1
        }"#;
        let s = load_system_json(json).unwrap();
        assert_eq!((s.n(), s.m()), (2, 1));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = builtin_config("scalar-discrete-half").unwrap();
        c.gamma = 1.5;
        assert!(matches!(load_system(&c), Err(Error::InvalidDiscount { .. })));

        let mut c = builtin_config("example1-discrete").unwrap();
        c.f = vec!["x1+1".into(), "0".into()];
        assert!(matches!(load_system(&c), Err(Error::DriftAtOrigin(_))));

        let mut c = builtin_config("example1-discrete").unwrap();
        c.f.pop();
        assert!(matches!(load_system(&c), Err(Error::Dimension { .. })));

        let mut c = builtin_config("example1-discrete").unwrap();
        c.p = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(load_system(&c), Err(Error::NotPositiveDefinite)));

        let mut c = builtin_config("example1-discrete").unwrap();
        c.f[0] = "x3".into();
        assert!(matches!(load_system(&c), Err(Error::InvalidInput(_))));

        assert!(matches!(load_system_json("{"), Err(Error::Config(_))));
        assert!(matches!(
            load_system_json(r#"{"name":"a"}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn origin_domain_error_surfaces() {
        let mut c = builtin_config("scalar-discrete-half").unwrap();
        c.f = vec!["x1/x1".into()];
        assert!(matches!(load_system(&c), Err(Error::Eval { .. })));
    }

    #[test]
    fn control_weight_must_be_positive_definite() {
        let mut c = builtin_config("scalar-discrete-half").unwrap();
        c.r = vec![vec!["x1".into()]];
        let s = load_system(&c).unwrap();
        assert!(s.control_weight(&dvector![2.0]).is_ok());
        let err = s.eval_at(&dvector![-2.0]).unwrap_err();
        assert!(err.is_model_assumption(), "{err}");
    }

    #[test]
    fn rank_check() {
        let mut c = builtin_config("example1-discrete").unwrap();
        c.g = vec![vec!["x1".into()], vec!["0".into()]];
        let s = load_system(&c).unwrap();
        assert!(s.check_assumptions_at(&dvector![1.0, 1.0]).is_ok());
        assert!(matches!(
            s.check_assumptions_at(&dvector![0.0, 1.0]),
            Err(Error::ModelAssumption { .. })
        ));
        // the origin itself is exempt
        assert!(s.check_assumptions_at(&dvector![0.0, 0.0]).is_ok());
    }

    #[test]
    fn overrides() {
        let s = builtin_system("example1-discrete").unwrap();
        let s2 = s.with_constant_control_weight(0.1).unwrap();
        assert_eq!(s2.control_weight(&dvector![1.0, 1.0]).unwrap()[(0, 0)], 0.1);
        assert!(s.with_constant_control_weight(0.0).is_err());
        assert!(s.with_gamma(0.5).is_ok());
        assert!(s.with_gamma(2.0).is_err());
    }

    #[test]
    fn config_round_trip_json() {
        let c = builtin_config("example2-continuous").unwrap();
        let again = SystemConfig::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
