//! CSV and JSON formats for trajectories, controls, tables and multipliers.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificate::{BVPath, Candidate, SignedMeasure};
use crate::controls::GridControl;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::experiments::{OracleRow, SweepRow};
use crate::optimizer::ContinuationRow;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, cells: impl IntoIterator<Item = f64>) {
    let row: Vec<String> = cells.into_iter().map(num).collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// `t,x1..xn,u1..um,xi`.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.states[0].len();
    let m = traj.controls[0].len();
    let mut out = String::from("t");
    (1..=n).for_each(|i| write!(out, ",x{i}").unwrap());
    (1..=m).for_each(|i| write!(out, ",u{i}").unwrap());
    out.push_str(",xi\n");
    for i in 0..traj.len() {
        let row = std::iter::once(traj.grid[i])
            .chain(traj.states[i].iter().copied())
            .chain(traj.controls[i].iter().copied())
            .chain(std::iter::once(traj.xi[i]));
        push_row(&mut out, row);
    }
    out
}

/// `t,u1..um`.
pub fn control_csv(u: &GridControl) -> String {
    let mut out = String::from("t");
    (1..=u.m).for_each(|i| write!(out, ",u{i}").unwrap());
    out.push('\n');
    for i in 0..u.nodes() {
        push_row(&mut out, std::iter::once(u.grid[i]).chain(u.node(i).iter().copied()));
    }
    out
}

fn parse_table(text: &str, source: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header[0].is_empty() {
        return Err(err(1, "empty file".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = record
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| err(line, format!("cannot parse `{c}` as a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(err(line, "non-finite value".into()));
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(err(1, "need at least two rows".into()));
    }
    for w in rows.windows(2) {
        if w[1][0] <= w[0][0] {
            return Err(err(1, "time column must be strictly increasing".into()));
        }
    }
    Ok((header, rows))
}

fn count_prefix(header: &[String], prefix: &str) -> usize {
    header
        .iter()
        .filter(|h| {
            h.strip_prefix(prefix)
                .map(|r| !r.is_empty() && r.chars().all(|c| c.is_ascii_digit()))
                .unwrap_or(false)
        })
        .count()
}

pub fn parse_control_csv(text: &str, source: &str) -> Result<GridControl> {
    let (header, rows) = parse_table(text, source)?;
    let m = header.len() - 1;
    if header[0] != "t" || m == 0 || count_prefix(&header, "u") != m {
        return Err(Error::Parse {
            source_name: source.into(),
            line: 1,
            message: "header must be t,u1..um".into(),
        });
    }
    let grid = rows.iter().map(|r| r[0]).collect();
    let values = rows.iter().flat_map(|r| r[1..].to_vec()).collect();
    Ok(GridControl::new(grid, m, values))
}

/// Columns of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub control: GridControl,
    pub xi: Vec<f64>,
}

pub fn parse_trajectory_csv(text: &str, source: &str) -> Result<TrajectoryTable> {
    let (header, rows) = parse_table(text, source)?;
    let n = count_prefix(&header, "x");
    let m = count_prefix(&header, "u");
    if header[0] != "t" || n == 0 || m == 0 || header.len() != n + m + 2 || header[n + m + 1] != "xi" {
        return Err(Error::Parse {
            source_name: source.into(),
            line: 1,
            message: "header must be t,x1..xn,u1..um,xi".into(),
        });
    }
    let grid: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    Ok(TrajectoryTable {
        states: rows.iter().map(|r| r[1..=n].to_vec()).collect(),
        control: GridControl::new(
            grid.clone(),
            m,
            rows.iter().flat_map(|r| r[n + 1..=n + m].to_vec()).collect(),
        ),
        xi: rows.iter().map(|r| r[n + m + 1]).collect(),
        grid,
    })
}

/// `k,gamma,cost,du_sup,dx_sup,grad_norm`.
pub fn continuation_csv(rows: &[ContinuationRow]) -> String {
    let mut out = String::from("k,gamma,cost,du_sup,dx_sup,grad_norm\n");
    for r in rows {
        write!(out, "{},", r.k).unwrap();
        push_row(&mut out, [r.gamma, r.cost, r.du_sup, r.dx_sup, r.grad_norm]);
    }
    out
}

/// `gamma,sup_err_x,xi_weak_err_1,xi_weak_err_t,xi_weak_err_t2,max_psi,max_xi`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("gamma,sup_err_x,xi_weak_err_1,xi_weak_err_t,xi_weak_err_t2,max_psi,max_xi\n");
    for r in rows {
        push_row(
            &mut out,
            [r.gamma, r.sup_err_x, r.xi_weak_err[0], r.xi_weak_err[1], r.xi_weak_err[2], r.max_psi, r.max_xi],
        );
    }
    out
}

/// `n,h,err_catching_up,err_penalty`.
pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from("n,h,err_catching_up,err_penalty\n");
    for r in rows {
        write!(out, "{},", r.n).unwrap();
        push_row(&mut out, [r.h, r.err_catching_up, r.err_penalty]);
    }
    out
}

/// Multipliers of a candidate, stored next to its trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierFile {
    pub lambda: Option<f64>,
    /// Right-continuous node values.
    pub p: Vec<Vec<f64>>,
    /// `(node index, jump)`.
    pub p_jumps: Vec<(usize, Vec<f64>)>,
    pub nu_density: Option<Vec<f64>>,
    /// `(node index, mass)`.
    pub nu_atoms: Vec<(usize, f64)>,
    pub band: f64,
    #[serde(default)]
    pub xi_cells: Option<Vec<f64>>,
}

impl MultiplierFile {
    pub fn of(c: &Candidate) -> Self {
        MultiplierFile {
            lambda: c.lambda,
            p: c.p.values.clone(),
            p_jumps: c.p.atoms.clone(),
            nu_density: c.nu.as_ref().map(|m| m.density.clone()),
            nu_atoms: c.nu.as_ref().map(|m| m.atoms.clone()).unwrap_or_default(),
            band: c.band,
            xi_cells: c.xi_cells.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("multipliers serialize")
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source.into(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Joins the multipliers with a trajectory table into a candidate.
    pub fn candidate(self, table: TrajectoryTable, source: &str) -> Result<Candidate> {
        let nodes = table.grid.len();
        let bad = |message: String| Error::Parse {
            source_name: source.into(),
            line: 1,
            message,
        };
        if self.p.len() != nodes {
            return Err(bad(format!("p has {} nodes, trajectory has {nodes}", self.p.len())));
        }
        let n = table.states[0].len();
        if self.p.iter().any(|v| v.len() != n) {
            return Err(bad("p has the wrong dimension".into()));
        }
        if self.p_jumps.iter().any(|(i, _)| *i >= nodes) || self.nu_atoms.iter().any(|(i, _)| *i >= nodes) {
            return Err(bad("atom index out of range".into()));
        }
        let nu = match (self.nu_density, self.nu_atoms.is_empty()) {
            (Some(d), _) => {
                if d.len() != nodes {
                    return Err(bad("nu density has the wrong length".into()));
                }
                Some(SignedMeasure {
                    density: d,
                    atoms: self.nu_atoms,
                })
            }
            (None, false) => Some(SignedMeasure {
                density: vec![0.0; nodes],
                atoms: self.nu_atoms,
            }),
            (None, true) => None,
        };
        Ok(Candidate {
            p: BVPath {
                grid: table.grid.clone(),
                values: self.p,
                atoms: self.p_jumps,
            },
            grid: table.grid,
            states: table.states,
            control: table.control,
            xi: table.xi,
            xi_cells: self.xi_cells,
            lambda: self.lambda,
            nu,
            band: self.band,
        })
    }
}

/// Trajectory CSV of a candidate.
pub fn candidate_csv(c: &Candidate) -> String {
    let traj = Trajectory {
        grid: c.grid.clone(),
        states: c.states.clone(),
        velocities: vec![Vec::new(); c.grid.len()],
        controls: (0..c.grid.len()).map(|i| c.control.node(i).to_vec()).collect(),
        xi: c.xi.clone(),
        gamma: None,
        substeps: Vec::new(),
    };
    trajectory_csv(&traj)
}
