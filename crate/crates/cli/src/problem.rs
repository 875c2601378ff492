//! Problem files: JSON documents with explicit dimensions and row-major
//! matrices.

use ergolq::model::{CostWeights, LinearSystem, Strategy};
use ergolq::simulate::SimConfig;
use ergolq::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub weights: WeightsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
}

/// `C`, `D` and `sigma` hold one entry per noise channel. Missing `b` and
/// `sigma` mean zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b_mat: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d_mats: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub sigma: Vec<Vec<f64>>,
}

/// Missing `q` and `rho` mean zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    #[serde(rename = "Q")]
    pub q_mat: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<f64>,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    #[serde(rename = "Theta")]
    pub theta: Vec<f64>,
    #[serde(default)]
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abel_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

/// Parsed and validated problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub file: ProblemFile,
    pub sys: LinearSystem<f64>,
    pub w: CostWeights<f64>,
}

fn dim_err(what: &str, expected: usize, got: usize) -> CliError {
    CliError::Dimension(format!("{what}: expected {expected} entries, got {got}"))
}

fn matrix(what: &str, data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>, CliError> {
    if data.len() != rows * cols {
        return Err(dim_err(what, rows * cols, data.len()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn vector(what: &str, data: &[f64], len: usize) -> Result<DVector<f64>, CliError> {
    if data.is_empty() {
        return Ok(DVector::zeros(len));
    }
    if data.len() != len {
        return Err(dim_err(what, len, data.len()));
    }
    Ok(DVector::from_column_slice(data))
}

fn list(what: &str, items: &[Vec<f64>], d: usize) -> Result<(), CliError> {
    if items.len() != d {
        return Err(CliError::Dimension(format!("{what}: expected {d} channel entries, got {}", items.len())));
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn check_finite(file: &ProblemFile) -> Result<(), CliError> {
    let s = &file.system;
    let w = &file.weights;
    let mut all = s.a.iter().chain(&s.b_mat).chain(&s.b).chain(&w.q_mat).chain(&w.s).chain(&w.r).chain(&w.q).chain(&w.rho);
    let bad = all.any(|x| !x.is_finite())
        || s.c.iter().chain(&s.d_mats).chain(&s.sigma).flatten().any(|x| !x.is_finite())
        || file.strategy.as_ref().is_some_and(|st| st.theta.iter().chain(&st.v).any(|x| !x.is_finite()))
        || file.schedule.as_ref().is_some_and(|sc| sc.iter().any(|x| !x.is_finite()));
    if bad {
        return Err(CliError::Parse("non-finite number in problem file".into()));
    }
    Ok(())
}

impl Problem {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ProblemFile = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(CliError::Parse(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        check_finite(&file)?;
        let s = &file.system;
        let (n, m, d) = (s.n, s.m, s.d);
        if n == 0 || m == 0 || d == 0 {
            return Err(CliError::Dimension("n, m and d must be at least 1".into()));
        }
        list("C", &s.c, d)?;
        list("D", &s.d_mats, d)?;
        if !s.sigma.is_empty() {
            list("sigma", &s.sigma, d)?;
        }
        let sys = LinearSystem::new(
            matrix("A", &s.a, n, n)?,
            matrix("B", &s.b_mat, n, m)?,
            s.c.iter().map(|c| matrix("C", c, n, n)).collect::<Result<_, _>>()?,
            s.d_mats.iter().map(|c| matrix("D", c, n, m)).collect::<Result<_, _>>()?,
            vector("b", &s.b, n)?,
            if s.sigma.is_empty() {
                vec![DVector::zeros(n); d]
            } else {
                s.sigma.iter().map(|v| vector("sigma", v, n)).collect::<Result<_, _>>()?
            },
        )?;
        let wt = &file.weights;
        let w = CostWeights::new(
            n,
            m,
            matrix("Q", &wt.q_mat, n, n)?,
            matrix("S", &wt.s, m, n)?,
            matrix("R", &wt.r, m, m)?,
            vector("q", &wt.q, n)?,
            vector("rho", &wt.rho, m)?,
        )?;
        if let Some(st) = &file.strategy {
            matrix("Theta", &st.theta, m, n)?;
            vector("v", &st.v, m)?;
        }
        if let Some(x0) = file.sim.as_ref().and_then(|s| s.x0.as_ref()) {
            vector("x0", x0, n)?;
        }
        Ok(Self { file, sys, w })
    }

    /// The file with every optional vector filled in and `Q`, `R`
    /// symmetrized, as the solvers see it.
    pub fn normalized(&self) -> ProblemFile {
        let (sys, w) = (&self.sys, &self.w);
        let mut out = self.file.clone();
        out.system = SystemSpec {
            n: sys.n(),
            m: sys.m(),
            d: sys.channels(),
            a: row_major(&sys.a),
            b_mat: row_major(&sys.b),
            c: sys.c.iter().map(row_major).collect(),
            d_mats: sys.d.iter().map(row_major).collect(),
            b: sys.drift.as_slice().to_vec(),
            sigma: sys.sigma.iter().map(|s| s.as_slice().to_vec()).collect(),
        };
        out.weights = WeightsSpec {
            q_mat: row_major(&w.q),
            s: row_major(&w.s),
            r: row_major(&w.r),
            q: w.q_lin.as_slice().to_vec(),
            rho: w.rho.as_slice().to_vec(),
        };
        if let Some(st) = &mut out.strategy {
            if st.v.is_empty() {
                st.v = vec![0.0; sys.m()];
            }
        }
        out
    }

    pub fn strategy(&self) -> Option<Strategy<f64>> {
        let st = self.file.strategy.as_ref()?;
        let (n, m) = (self.sys.n(), self.sys.m());
        Some(Strategy::new(
            DMatrix::from_row_slice(m, n, &st.theta),
            if st.v.is_empty() { DVector::zeros(m) } else { DVector::from_column_slice(&st.v) },
        ))
    }

    pub fn sim_config(&self) -> SimConfig {
        let d = SimConfig::default();
        let s = self.file.sim.clone().unwrap_or_default();
        SimConfig {
            dt: s.dt.unwrap_or(d.dt),
            horizon: s.horizon.unwrap_or(d.horizon),
            n_paths: s.n_paths.unwrap_or(d.n_paths),
            burn_in: s.burn_in.unwrap_or(d.burn_in),
            seed: s.seed.unwrap_or(d.seed),
            abel_lambda: s.abel_lambda.unwrap_or(d.abel_lambda),
        }
    }

    pub fn x0(&self) -> DVector<f64> {
        match self.file.sim.as_ref().and_then(|s| s.x0.as_ref()) {
            Some(x) => DVector::from_column_slice(x),
            None => DVector::zeros(self.sys.n()),
        }
    }

    pub fn to_json(file: &ProblemFile) -> String {
        serde_json::to_string_pretty(file).expect("problem file serializes")
    }
}
