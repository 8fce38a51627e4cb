//! Core domain types: observations, datasets, principal strata, linear
//! regimes and estimates.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: covariates, instrument, compliance and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: Vec<f64>,
    pub z: i8,
    pub a: i8,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, z: i8, a: i8, y: f64) -> Result<Self> {
        let obs = Self { x, z, a, y };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.z != -1 && self.z != 1 {
            return Err(Error::InvalidInput(format!("instrument must be -1 or +1, got {}", self.z)));
        }
        if !(-1..=1).contains(&self.a) {
            return Err(Error::InvalidInput(format!("compliance must be in {{-1,0,1}}, got {}", self.a)));
        }
        if !self.y.is_finite() || self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite covariate or outcome".into()));
        }
        Ok(())
    }
}

/// An ordered collection of observations sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Vec<Observation>,
    dim_x: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("dataset"))?;
        let dim_x = first.x.len();
        if dim_x == 0 {
            return Err(Error::InvalidInput("covariate dimension must be positive".into()));
        }
        for r in &rows {
            if r.x.len() != dim_x {
                return Err(Error::DimensionMismatch { expected: dim_x, got: r.x.len() });
            }
            r.validate()?;
        }
        Ok(Self { rows, dim_x })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn has_both_arms(&self) -> bool {
        self.rows.iter().any(|r| r.z == 1) && self.rows.iter().any(|r| r.z == -1)
    }

    /// Subset by row indices, preserving the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.rows[i].clone()).collect())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Csv { line: 1, msg: e.to_string() })?.clone();
        let k = headers.len();
        if k < 4 {
            return Err(Error::Csv { line: 1, msg: "expected header x1,...,xk,z,a,y".into() });
        }
        let dim = k - 3;
        for (j, h) in headers.iter().enumerate() {
            let expected = match j {
                j if j < dim => format!("x{}", j + 1),
                j if j == dim => "z".into(),
                j if j == dim + 1 => "a".into(),
                _ => "y".into(),
            };
            if h.trim() != expected {
                return Err(Error::Csv { line: 1, msg: format!("column {} should be `{expected}`, found `{h}`", j + 1) });
            }
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Csv { line, msg: e.to_string() })?;
            let field = |j: usize| -> Result<&str> {
                rec.get(j).map(str::trim).ok_or(Error::Csv { line, msg: format!("missing column {}", j + 1) })
            };
            let mut x = Vec::with_capacity(dim);
            for j in 0..dim {
                x.push(parse::<f64>(field(j)?, line)?);
            }
            let z = parse::<i8>(field(dim)?, line)?;
            let a = parse::<i8>(field(dim + 1)?, line)?;
            let y = parse::<f64>(field(dim + 2)?, line)?;
            let obs = Observation { x, z, a, y };
            obs.validate().map_err(|e| Error::Csv { line, msg: e.to_string() })?;
            rows.push(obs);
        }
        Self::new(rows)
    }

    /// Writes the dataset; `f64` values use the shortest representation that
    /// parses back to the identical bit pattern.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim_x).map(|j| format!("x{j}")).chain(["z".into(), "a".into(), "y".into()]).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            for v in &r.x {
                write!(w, "{v:?},")?;
            }
            writeln!(w, "{},{},{:?}", r.z, r.a, r.y)?;
        }
        Ok(())
    }
}

fn parse<T: FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse::<T>().map_err(|_| Error::Csv { line, msg: format!("cannot parse `{s}`") })
}

/// Joint potential-compliance type `(A(-1), A(+1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PrincipalStratum {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
    S8,
    S9,
}

impl PrincipalStratum {
    pub const ALL: [PrincipalStratum; 9] = [Self::S1, Self::S2, Self::S3, Self::S4, Self::S5, Self::S6, Self::S7, Self::S8, Self::S9];
    /// Strata allowed under monotonicity.
    pub const MONOTONE: [PrincipalStratum; 6] = [Self::S1, Self::S2, Self::S3, Self::S4, Self::S5, Self::S6];

    /// `(A(-1), A(+1))`.
    pub fn potential_compliance(self) -> (i8, i8) {
        match self {
            Self::S1 => (-1, -1),
            Self::S2 => (1, 1),
            Self::S3 => (0, 0),
            Self::S4 => (-1, 1),
            Self::S5 => (-1, 0),
            Self::S6 => (0, 1),
            Self::S7 => (1, -1),
            Self::S8 => (1, 0),
            Self::S9 => (0, -1),
        }
    }

    pub fn a_minus(self) -> i8 {
        self.potential_compliance().0
    }

    pub fn a_plus(self) -> i8 {
        self.potential_compliance().1
    }

    pub fn is_monotone(self) -> bool {
        !matches!(self, Self::S7 | Self::S8 | Self::S9)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::S1 => "S1",
            Self::S2 => "S2",
            Self::S3 => "S3",
            Self::S4 => "S4",
            Self::S5 => "S5",
            Self::S6 => "S6",
            Self::S7 => "S7",
            Self::S8 => "S8",
            Self::S9 => "S9",
        }
    }
}

impl fmt::Display for PrincipalStratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Linear decision rule `g(x) = beta0 + beta^T x`, regime `sign(g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub beta0: f64,
    pub beta: Vec<f64>,
}

impl LinearPolicy {
    pub fn new(beta0: f64, beta: Vec<f64>) -> Self {
        Self { beta0, beta }
    }

    pub fn zero(dim: usize) -> Self {
        Self { beta0: 0.0, beta: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.beta.len() {
            return Err(Error::DimensionMismatch { expected: self.beta.len(), got: x.len() });
        }
        Ok(self.decision_unchecked(x))
    }

    #[inline]
    pub(crate) fn decision_unchecked(&self, x: &[f64]) -> f64 {
        self.beta0 + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// The regime: `sign(g(x))`, with an exact zero mapped to `+1`.
    #[inline]
    pub(crate) fn decide_unchecked(&self, x: &[f64]) -> i8 {
        if self.decision_unchecked(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn negated(&self) -> Self {
        Self { beta0: -self.beta0, beta: self.beta.iter().map(|b| -b).collect() }
    }
}

/// `sign(beta0 + beta^T x)` with `sign(0) = +1`.
pub fn policy_decide(policy: &LinearPolicy, x: &[f64]) -> Result<i8> {
    Ok(if policy.decision(x)? >= 0.0 { 1 } else { -1 })
}

/// Fraction of evaluation points where the policy picks the optimal action.
pub fn correct_classification_rate(policy: &LinearPolicy, eval_set: &[(Vec<f64>, i8)]) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut hits = 0usize;
    for (x, opt) in eval_set {
        if policy_decide(policy, x)? == *opt {
            hits += 1;
        }
    }
    Ok(hits as f64 / eval_set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Ipw,
    Mr,
    MrKnownFz,
    Owl,
    Ivt,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Ipw => "IPW",
            Self::Mr => "MR",
            Self::MrKnownFz => "MR_KNOWN_FZ",
            Self::Owl => "OWL",
            Self::Ivt => "IVT",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IPW" => Ok(Self::Ipw),
            "MR" => Ok(Self::Mr),
            "MR_KNOWN_FZ" => Ok(Self::MrKnownFz),
            "OWL" => Ok(Self::Owl),
            "IVT" => Ok(Self::Ivt),
            other => Err(Error::InvalidInput(format!("unknown method `{other}`"))),
        }
    }
}

/// A point estimate with an influence-function standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithSE {
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
    pub method: Method,
}

impl EstimateWithSE {
    /// Builds an estimate from per-row values whose mean is the estimate.
    pub fn from_values(values: &[f64], method: Method) -> Result<(Self, Vec<f64>)> {
        if values.is_empty() {
            return Err(Error::Empty("per-row values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite per-row contribution in {method}")));
        }
        let estimate = crate::stats::mean(values);
        let contributions: Vec<f64> = values.iter().map(|v| v - estimate).collect();
        let n = values.len();
        let se = crate::stats::sample_sd(&contributions) / (n as f64).sqrt();
        Ok((Self { estimate, se, n, method }, contributions))
    }
}
