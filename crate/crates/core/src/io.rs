// SPDX-License-Identifier: Apache-2.0

//! JSON formats for problem definitions and fields.
//!
//! A problem file holds the system, the target block and the time grid:
//!
//! ```json
//! { "M": 2, "N": 2, "energies": [0.0, 1.0],
//!   "mu": [[0, 1], [1, 0]],
//!   "target": [[0, 1], [1, 0]],
//!   "grid": { "T": 20.0, "steps": 400 } }
//! ```
//!
//! Matrix entries are either a real number or a `[re, im]` pair.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_model, CMatrix, ControlField, SystemModel, TargetGate, TimeGrid, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Complex([f64; 2]),
    Real(f64),
}

impl Entry {
    pub fn value(self) -> C64 {
        match self {
            Entry::Complex([re, im]) => C64::new(re, im),
            Entry::Real(re) => C64::new(re, 0.0),
        }
    }
}

impl From<C64> for Entry {
    fn from(z: C64) -> Self {
        Entry::Complex([z.re, z.im])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub energies: Vec<f64>,
    pub mu: Vec<Vec<Entry>>,
    pub target: Vec<Vec<Entry>>,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
}

/// A fully validated problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: SystemModel,
    pub target: TargetGate,
    pub grid: TimeGrid,
}

fn rows_to_matrix(rows: &[Vec<Entry>]) -> Option<CMatrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(CMatrix::from_fn(nrows, ncols, |i, j| rows[i][j].value()))
}

fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<Entry>> {
    m.row_iter()
        .map(|r| r.iter().map(|z| Entry::from(*z)).collect())
        .collect()
}

fn shape(rows: &[Vec<Entry>]) -> String {
    match rows.first() {
        Some(r) => format!("{}x{}", rows.len(), r.len()),
        None => "0x0".into(),
    }
}

impl ProblemFile {
    pub fn from_parts(model: &SystemModel, target: &TargetGate, grid: &TimeGrid) -> Self {
        Self {
            m: model.level_count(),
            n: model.relevant_dim(),
            energies: model.energies().to_vec(),
            mu: matrix_to_rows(model.dipole()),
            target: matrix_to_rows(target.block()),
            grid: GridSpec {
                horizon: grid.horizon(),
                steps: grid.steps(),
            },
        }
    }

    /// Checks shapes and every model invariant, reporting all problems at once.
    pub fn build(&self) -> Result<Problem> {
        let (m, n) = (self.m, self.n);
        let mut problems = Vec::new();
        if n > m {
            problems.push(format!("N exceeds M ({n} > {m})"));
        }
        if self.energies.len() != m {
            problems.push(format!("energies has {} entries, expected M={m}", self.energies.len()));
        }
        let mu = rows_to_matrix(&self.mu).filter(|x| x.nrows() == m && x.ncols() == m);
        if mu.is_none() {
            problems.push(format!("mu is {}, expected {m}x{m}", shape(&self.mu)));
        }
        let target = rows_to_matrix(&self.target).filter(|x| x.nrows() == n && x.ncols() == n);
        if target.is_none() {
            problems.push(format!(
                "dimension mismatch: target is {}, expected {n}x{n} (N={n})",
                shape(&self.target)
            ));
        }
        let grid = TimeGrid::new(self.grid.horizon, self.grid.steps);
        if let Err(e) = &grid {
            problems.push(e.to_string());
        }

        let model = match (&mu, n <= m && self.energies.len() == m) {
            (Some(mu), true) => Some(SystemModel::new(self.energies.clone(), mu.clone(), n)?),
            _ => None,
        };
        if let Some(model) = &model {
            problems.extend(validate_model(model).messages());
        }
        let target = match target.map(TargetGate::new) {
            Some(Ok(t)) => Some(t),
            Some(Err(Error::InvalidModel(msgs))) => {
                problems.extend(msgs);
                None
            }
            Some(Err(e)) => {
                problems.push(e.to_string());
                None
            }
            None => None,
        };
        if !problems.is_empty() {
            return Err(Error::InvalidModel(problems));
        }
        Ok(Problem {
            model: model.expect("checked above"),
            target: target.expect("checked above"),
            grid: grid.expect("checked above"),
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.display().to_string(),
        source,
    })
}

/// Reads and validates a problem file.
pub fn load_model(path: impl AsRef<Path>) -> Result<Problem> {
    let path = path.as_ref();
    let text = read(path)?;
    let file: ProblemFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    file.build()
}

pub fn save_problem(path: impl AsRef<Path>, problem: &Problem) -> Result<()> {
    let file = ProblemFile::from_parts(&problem.model, &problem.target, &problem.grid);
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// A field together with the grid it is sampled on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFile {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl FieldFile {
    pub fn new(field: &ControlField, grid: &TimeGrid) -> Self {
        Self {
            horizon: grid.horizon(),
            steps: grid.steps(),
            dt: grid.dt(),
            samples: field.samples().to_vec(),
        }
    }

    pub fn into_parts(self) -> Result<(ControlField, TimeGrid)> {
        let grid = TimeGrid::new(self.horizon, self.steps)?;
        let field = ControlField::new(self.samples)?;
        field.check_grid(&grid)?;
        Ok((field, grid))
    }
}

pub fn save_field(path: impl AsRef<Path>, field: &ControlField, grid: &TimeGrid) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&FieldFile::new(field, grid))?)?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<(ControlField, TimeGrid)> {
    let path = path.as_ref();
    let text = read(path)?;
    let file: FieldFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    file.into_parts()
}
