//! Static grid data model: buses, branches, generators, case validation,
//! and nodal admittance assembly.
//!
//! Everything is per unit on a single implied system base. Branches use the
//! standard pi model without taps or phase shift.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loads::LoadModel;

pub type BusId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
}

fn default_v_min() -> f64 {
    0.94
}

fn default_v_max() -> f64 {
    1.06
}

/// One bus with its voltage-magnitude operating limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

/// Pi-model branch: series r + jx and total line-charging susceptance b_sh
/// (split evenly across both ends).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_sh: f64,
}

impl Branch {
    /// Series admittance y = 1 / (r + jx) as (g, b).
    pub fn series_admittance(&self) -> (f64, f64) {
        let d = self.r * self.r + self.x * self.x;
        (self.r / d, -self.x / d)
    }
}

/// Polynomial generation cost c2 p^2 + c1 p + c0 in $/h with p in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPoly(pub f64, pub f64, pub f64);

impl CostPoly {
    pub fn c2(&self) -> f64 {
        self.0
    }

    pub fn c1(&self) -> f64 {
        self.1
    }

    pub fn c0(&self) -> f64 {
        self.2
    }

    pub fn value(&self, p: f64) -> f64 {
        self.0 * p * p + self.1 * p + self.2
    }
}

fn default_cost() -> CostPoly {
    CostPoly(0.0, 1.0, 0.0)
}

/// Dispatchable generator with box limits on real and reactive output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(default = "default_cost")]
    pub cost: CostPoly,
}

/// A load attached to a bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadEntry {
    pub bus: BusId,
    #[serde(flatten)]
    pub model: LoadModel,
}

/// The raw static network as parsed from a case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCase {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub loads: Vec<LoadEntry>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaseError {
    #[error("duplicate bus id {0}")]
    DuplicateBusId(BusId),
    #[error("{element} references nonexistent bus {bus}")]
    DanglingReference { element: String, bus: BusId },
    #[error("expected exactly one slack bus, found {found}")]
    NoSlack { found: usize },
    #[error("bus {0} is not connected to the slack bus")]
    Disconnected(BusId),
    #[error("load bus {0} has no incident branch")]
    IsolatedLoadBus(BusId),
    #[error("bus {id}: {reason}")]
    InvalidBus { id: BusId, reason: String },
    #[error("branch {from}-{to}: {reason}")]
    InvalidBranch {
        from: BusId,
        to: BusId,
        reason: String,
    },
    #[error("generator at bus {bus}: {reason}")]
    InvalidGenerator { bus: BusId, reason: String },
}

/// A [`GridCase`] whose invariants have been checked, with the index maps
/// the solvers need. Immutable once built; safe to share across solver
/// instances.
#[derive(Debug, Clone)]
pub struct ValidatedCase {
    case: GridCase,
    index_of: HashMap<BusId, usize>,
    slack: usize,
}

impl ValidatedCase {
    pub fn case(&self) -> &GridCase {
        &self.case
    }

    pub fn n_buses(&self) -> usize {
        self.case.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.case.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.case.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.case.generators
    }

    pub fn loads(&self) -> &[LoadEntry] {
        &self.case.loads
    }

    /// Position of `id` in the bus array. Panics on unknown ids, which
    /// validation has already excluded.
    pub fn bus_index(&self, id: BusId) -> usize {
        self.index_of[&id]
    }

    /// Position of the slack bus.
    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// Replace the load set (used by the experiment harness to swap
    /// per-segment models) and re-validate.
    pub fn with_loads(&self, loads: Vec<LoadEntry>) -> Result<ValidatedCase, CaseError> {
        let mut case = self.case.clone();
        case.loads = loads;
        validate_case(case)
    }
}

/// Check all case invariants and build the solver index maps.
pub fn validate_case(case: GridCase) -> Result<ValidatedCase, CaseError> {
    let mut index_of = HashMap::new();
    for (i, bus) in case.buses.iter().enumerate() {
        if index_of.insert(bus.id, i).is_some() {
            return Err(CaseError::DuplicateBusId(bus.id));
        }
        if !(bus.v_min > 0.0 && bus.v_min <= bus.v_max) {
            return Err(CaseError::InvalidBus {
                id: bus.id,
                reason: format!(
                    "need 0 < v_min <= v_max, got [{}, {}]",
                    bus.v_min, bus.v_max
                ),
            });
        }
    }

    let slacks: Vec<usize> = case
        .buses
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BusKind::Slack)
        .map(|(i, _)| i)
        .collect();
    if slacks.len() != 1 {
        return Err(CaseError::NoSlack {
            found: slacks.len(),
        });
    }

    for br in &case.branches {
        for bus in [br.from, br.to] {
            if !index_of.contains_key(&bus) {
                return Err(CaseError::DanglingReference {
                    element: format!("branch {}-{}", br.from, br.to),
                    bus,
                });
            }
        }
        if br.from == br.to {
            return Err(CaseError::InvalidBranch {
                from: br.from,
                to: br.to,
                reason: "self-loop".into(),
            });
        }
        if br.r < 0.0 {
            return Err(CaseError::InvalidBranch {
                from: br.from,
                to: br.to,
                reason: format!("negative resistance {}", br.r),
            });
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(CaseError::InvalidBranch {
                from: br.from,
                to: br.to,
                reason: "zero series impedance".into(),
            });
        }
    }

    for g in &case.generators {
        let Some(&i) = index_of.get(&g.bus) else {
            return Err(CaseError::DanglingReference {
                element: "generator".into(),
                bus: g.bus,
            });
        };
        if case.buses[i].kind == BusKind::Load {
            return Err(CaseError::InvalidGenerator {
                bus: g.bus,
                reason: "attached to a load-kind bus".into(),
            });
        }
        if g.p_min > g.p_max || g.q_min > g.q_max {
            return Err(CaseError::InvalidGenerator {
                bus: g.bus,
                reason: "empty limit box".into(),
            });
        }
        if g.cost.c2() < 0.0 {
            return Err(CaseError::InvalidGenerator {
                bus: g.bus,
                reason: format!("negative quadratic cost {}", g.cost.c2()),
            });
        }
    }

    let mut branch_touch = vec![false; case.buses.len()];
    for br in &case.branches {
        branch_touch[index_of[&br.from]] = true;
        branch_touch[index_of[&br.to]] = true;
    }
    for load in &case.loads {
        let Some(&i) = index_of.get(&load.bus) else {
            return Err(CaseError::DanglingReference {
                element: "load".into(),
                bus: load.bus,
            });
        };
        if !branch_touch[i] {
            return Err(CaseError::IsolatedLoadBus(load.bus));
        }
    }

    // connectivity from the slack bus
    if case.buses.len() > 1 {
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); case.buses.len()];
        for br in &case.branches {
            let (i, j) = (index_of[&br.from], index_of[&br.to]);
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        let mut seen = HashSet::from([slacks[0]]);
        let mut stack = vec![slacks[0]];
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if seen.insert(j) {
                    stack.push(j);
                }
            }
        }
        if let Some(bus) = case.buses.iter().find(|b| !seen.contains(&index_of[&b.id])) {
            return Err(CaseError::Disconnected(bus.id));
        }
    }

    Ok(ValidatedCase {
        slack: slacks[0],
        index_of,
        case,
    })
}

/// Sparse nodal admittance matrix, CSR over bus positions, with the real
/// and imaginary parts stored as parallel value arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    g: Vec<f64>,
    b: Vec<f64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Entries (column, g, b) of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| (self.col_idx[k], self.g[k], self.b[k]))
    }

    /// Y[i][j] as (g, b), zero if not stored.
    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        self.row(i)
            .find(|&(c, _, _)| c == j)
            .map_or((0.0, 0.0), |(_, g, b)| (g, b))
    }

    /// Complex product Y * v for rectangular voltages, returning per-row
    /// (real, imag) current components.
    pub fn mul(&self, v_r: impl Fn(usize) -> f64, v_i: impl Fn(usize) -> f64) -> Vec<(f64, f64)> {
        (0..self.n)
            .map(|i| {
                let mut acc = (0.0, 0.0);
                for (j, g, b) in self.row(i) {
                    acc.0 += g * v_r(j) - b * v_i(j);
                    acc.1 += b * v_r(j) + g * v_i(j);
                }
                acc
            })
            .collect()
    }
}

/// Assemble the bus admittance matrix of a validated case.
///
/// Off-diagonals hold -y_series per branch; each diagonal accumulates the
/// incident series admittances plus j b_sh/2 per branch end.
pub fn build_admittance(case: &ValidatedCase) -> AdmittanceMatrix {
    let n = case.n_buses();
    let mut dense: Vec<HashMap<usize, (f64, f64)>> = vec![HashMap::new(); n];
    let add = |rows: &mut Vec<HashMap<usize, (f64, f64)>>, i: usize, j: usize, g: f64, b: f64| {
        let e = rows[i].entry(j).or_insert((0.0, 0.0));
        e.0 += g;
        e.1 += b;
    };
    for br in case.branches() {
        let (i, j) = (case.bus_index(br.from), case.bus_index(br.to));
        let (gs, bs) = br.series_admittance();
        add(&mut dense, i, i, gs, bs + br.b_sh / 2.0);
        add(&mut dense, j, j, gs, bs + br.b_sh / 2.0);
        add(&mut dense, i, j, -gs, -bs);
        add(&mut dense, j, i, -gs, -bs);
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut g = Vec::new();
    let mut b = Vec::new();
    row_ptr.push(0);
    for row in dense {
        let mut entries: Vec<_> = row.into_iter().collect();
        entries.sort_by_key(|&(j, _)| j);
        for (j, (gv, bv)) in entries {
            col_idx.push(j);
            g.push(gv);
            b.push(bv);
        }
        row_ptr.push(col_idx.len());
    }
    AdmittanceMatrix {
        n,
        row_ptr,
        col_idx,
        g,
        b,
    }
}
