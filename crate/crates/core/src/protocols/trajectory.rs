use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lae::csv_err;
use crate::linalg;

/// Any state row norm above this aborts a run and marks it diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Run metadata written next to the CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub protocol: String,
    pub params: serde_json::Map<String, serde_json::Value>,
    pub seed: Option<u64>,
    pub diverged: bool,
    pub warnings: Vec<String>,
}

impl RunMeta {
    pub fn new(protocol: &str) -> Self {
        Self {
            protocol: protocol.to_string(),
            ..Self::default()
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Node states `x(0..=T)`; each state is `n x m` with row `i` holding `x_i(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    m: usize,
    states: Vec<DMatrix<f64>>,
    pub meta: RunMeta,
}

impl Trajectory {
    pub fn new(x0: DMatrix<f64>, meta: RunMeta) -> Result<Self> {
        let (n, m) = x0.shape();
        if n == 0 || m == 0 {
            return Err(Error::Dimension("empty initial state".into()));
        }
        let mut traj = Self {
            n,
            m,
            states: Vec::new(),
            meta,
        };
        traj.push(x0)?;
        Ok(traj)
    }

    /// Appends a state. Returns `Ok(false)` and sets the divergence flag when
    /// the state blew past [`DIVERGENCE_LIMIT`]; the state is still stored.
    pub fn push(&mut self, x: DMatrix<f64>) -> Result<bool> {
        if x.shape() != (self.n, self.m) {
            return Err(Error::Dimension(format!(
                "state is {}x{}, trajectory is {}x{}",
                x.nrows(),
                x.ncols(),
                self.n,
                self.m
            )));
        }
        let t = self.states.len();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t });
        }
        let blown = x.row_iter().any(|r| r.norm() > DIVERGENCE_LIMIT);
        self.states.push(x);
        if blown {
            self.meta.diverged = true;
        }
        Ok(!blown)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of stored states (`T + 1`).
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of transitions `T`.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn states(&self) -> &[DMatrix<f64>] {
        &self.states
    }

    pub fn state(&self, t: usize) -> &DMatrix<f64> {
        &self.states[t]
    }

    pub fn last(&self) -> &DMatrix<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// `x_i(t)`.
    pub fn node(&self, t: usize, i: usize) -> DVector<f64> {
        self.states[t].row(i).transpose()
    }

    /// Node-major stacked state in `R^{nm}`.
    pub fn stacked(&self, t: usize) -> DVector<f64> {
        linalg::stack(&self.states[t])
    }

    /// `(1/n) Σ_i x_i(t)`.
    pub fn node_average(&self, t: usize) -> DVector<f64> {
        self.states[t].row_mean().transpose()
    }

    /// Largest `‖x_i(t) − target‖` over nodes.
    pub fn max_error(&self, t: usize, target: &DVector<f64>) -> f64 {
        (0..self.n)
            .map(|i| (self.node(t, i) - target).norm())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t,node,x_1..x_m`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "node".to_string()];
        header.extend((1..=self.m).map(|k| format!("x_{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for (t, x) in self.states.iter().enumerate() {
            for i in 0..self.n {
                let mut rec = vec![t.to_string(), i.to_string()];
                rec.extend(x.row(i).iter().map(f64::to_string));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Reads the CSV layout produced by [`Trajectory::write_csv`].
    pub fn read_csv<R: Read>(input: R, meta: RunMeta) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let m = headers.len().saturating_sub(2);
        if m == 0 || &headers[0] != "t" || &headers[1] != "node" {
            return Err(Error::Dimension("expected columns t,node,x_1..x_m".into()));
        }
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let parse_err = |what: &str| {
                Error::InvalidParameter(format!("csv record {}: bad {what}", line + 2))
            };
            let t: usize = rec[0].parse().map_err(|_| parse_err("t"))?;
            let i: usize = rec[1].parse().map_err(|_| parse_err("node"))?;
            let xs = (2..rec.len())
                .map(|k| rec[k].parse::<f64>().map_err(|_| parse_err("value")))
                .collect::<Result<Vec<_>>>()?;
            rows.push((t, i, xs));
        }
        let n = rows.iter().map(|r| r.1).max().map_or(0, |v| v + 1);
        let len = rows.iter().map(|r| r.0).max().map_or(0, |v| v + 1);
        if rows.len() != n * len {
            return Err(Error::Dimension(format!(
                "{} records do not form a {len} x {n} grid",
                rows.len()
            )));
        }
        let mut states = vec![DMatrix::from_element(n, m, f64::NAN); len];
        for (t, i, xs) in rows {
            for (k, v) in xs.into_iter().enumerate() {
                states[t][(i, k)] = v;
            }
        }
        let mut iter = states.into_iter();
        let mut traj = Self::new(iter.next().expect("len >= 1"), meta)?;
        for x in iter {
            traj.push(x)?;
        }
        Ok(traj)
    }

    pub fn meta_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }
}
