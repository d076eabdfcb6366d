//! AC power flow by Newton-Raphson on rectangular current-injection
//! residuals.
//!
//! Every non-slack bus contributes two residual entries, the real and
//! imaginary nodal current mismatch
//!
//! ```text
//! F = Y*V + I_load(V) - I_gen
//! ```
//!
//! with load currents drawn positive. Voltages stay in rectangular
//! coordinates throughout; generator buses hold their magnitude setpoint
//! with reactive power as the free variable (PV behavior) until a Q limit
//! engages, in which case the bus is clamped to the limit with one switch
//! back allowed per solve.

use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::loads::{self, LoadError, LoadModel, OperatingVoltage, PqParams};
use crate::network::{build_admittance, AdmittanceMatrix, BusId, ValidatedCase};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    /// Infinity-norm threshold on the current mismatch.
    pub tol: f64,
    pub max_iter: usize,
    /// Flat-start magnitude for non-slack buses.
    pub v_init: f64,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
            v_init: 1.0,
        }
    }
}

/// Generator operating targets for a power-flow run, parallel to
/// `case.generators()`: scheduled real power (ignored at the slack bus) and
/// the voltage-magnitude setpoint of the generator's bus.
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub gen_p: Vec<f64>,
    pub gen_v: Vec<f64>,
}

impl Dispatch {
    /// Zero scheduled power, 1.0 p.u. setpoints.
    pub fn flat(case: &ValidatedCase) -> Self {
        let n = case.generators().len();
        Self {
            gen_p: vec![0.0; n],
            gen_v: vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PfSolution {
    /// Per-bus voltages in case order.
    pub v: Vec<OperatingVoltage>,
    /// Total (p, q) injected by the slack bus.
    pub slack_injection: (f64, f64),
    /// Reactive output per generator, in case order.
    pub gen_q: Vec<f64>,
    /// Newton updates applied; a start already at equilibrium reports 0.
    pub iterations: usize,
    /// Final residual infinity norm.
    pub residual: f64,
    /// Buses whose solved |V| is below 0.5 p.u., flagging a low-voltage
    /// root.
    pub low_voltage_buses: Vec<BusId>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PfError {
    #[error("no convergence after {max_iter} iterations (residual {residual:.3e})")]
    NonConvergence { max_iter: usize, residual: f64 },
    #[error("voltage collapse at bus {bus}: {source}")]
    VoltageCollapse { bus: BusId, source: LoadError },
    #[error("singular Newton system")]
    Singular,
}

/// Current mismatch per non-slack bus (loads and network only, no
/// generator injections), interleaved as [re, im] pairs in case bus order.
pub fn residual(case: &ValidatedCase, v: &[OperatingVoltage]) -> Result<Vec<f64>, PfError> {
    let ybus = build_admittance(case);
    let mismatch = nodal_mismatch(case, &ybus, v, &[])?;
    let mut out = Vec::with_capacity(2 * (case.n_buses() - 1));
    for (i, (re, im)) in mismatch.into_iter().enumerate() {
        if i != case.slack_index() {
            out.push(re);
            out.push(im);
        }
    }
    Ok(out)
}

/// Sparse matrix in triplet form; rows/cols follow the same non-slack
/// (v_r, v_i) interleaving as [`residual`].
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }
}

/// Analytic Jacobian of [`residual`] with respect to the non-slack
/// rectangular voltages. Affine loads (BIG, Y) contribute constant blocks.
pub fn jacobian(case: &ValidatedCase, v: &[OperatingVoltage]) -> Result<SparseMatrix, PfError> {
    let ybus = build_admittance(case);
    let slack = case.slack_index();
    let n = case.n_buses();
    let mut row_of = vec![None; n];
    let mut next = 0;
    for (i, r) in row_of.iter_mut().enumerate() {
        if i != slack {
            *r = Some(next);
            next += 1;
        }
    }
    let mut entries = Vec::new();
    for i in 0..n {
        let Some(ri) = row_of[i] else { continue };
        for (j, g, b) in ybus.row(i) {
            let Some(cj) = row_of[j] else { continue };
            entries.push((2 * ri, 2 * cj, g));
            entries.push((2 * ri, 2 * cj + 1, -b));
            entries.push((2 * ri + 1, 2 * cj, b));
            entries.push((2 * ri + 1, 2 * cj + 1, g));
        }
    }
    for load in case.loads() {
        let i = case.bus_index(load.bus);
        let Some(ri) = row_of[i] else { continue };
        let jac = loads::current_jacobian(&load.model, v[i]).map_err(|source| {
            PfError::VoltageCollapse {
                bus: load.bus,
                source,
            }
        })?;
        entries.push((2 * ri, 2 * ri, jac[0][0]));
        entries.push((2 * ri, 2 * ri + 1, jac[0][1]));
        entries.push((2 * ri + 1, 2 * ri, jac[1][0]));
        entries.push((2 * ri + 1, 2 * ri + 1, jac[1][1]));
    }
    let dim = 2 * (n - 1);
    Ok(SparseMatrix {
        n_rows: dim,
        n_cols: dim,
        entries,
    })
}

/// Solve the power flow with a flat dispatch (no scheduled generation,
/// 1.0 p.u. setpoints); the slack covers the entire demand.
pub fn solve_pf(case: &ValidatedCase, options: &PfOptions) -> Result<PfSolution, PfError> {
    solve_pf_dispatch(case, &Dispatch::flat(case), options)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClampSide {
    Min,
    Max,
}

#[derive(Debug, Clone)]
struct PvBus {
    p_sched: f64,
    v_set: f64,
    q_min: f64,
    q_max: f64,
    q_solved: f64,
    clamped: Option<ClampSide>,
    reswitched: bool,
}

impl PvBus {
    fn q_limit(&self, side: ClampSide) -> f64 {
        match side {
            ClampSide::Min => self.q_min,
            ClampSide::Max => self.q_max,
        }
    }

    fn q_injected(&self) -> f64 {
        match self.clamped {
            Some(side) => self.q_limit(side),
            None => self.q_solved,
        }
    }
}

#[derive(Debug, Clone)]
enum NodeRole {
    PlainBus,
    Pv(PvBus),
}

/// Solve the power flow for a given generator dispatch.
pub fn solve_pf_dispatch(
    case: &ValidatedCase,
    dispatch: &Dispatch,
    options: &PfOptions,
) -> Result<PfSolution, PfError> {
    assert_eq!(dispatch.gen_p.len(), case.generators().len());
    assert_eq!(dispatch.gen_v.len(), case.generators().len());
    let ybus = build_admittance(case);
    let n = case.n_buses();
    let slack = case.slack_index();

    let mut roles: Vec<NodeRole> = vec![NodeRole::PlainBus; n];
    for (gi, gen) in case.generators().iter().enumerate() {
        let i = case.bus_index(gen.bus);
        if i == slack {
            continue;
        }
        match &mut roles[i] {
            NodeRole::Pv(pv) => {
                pv.p_sched += dispatch.gen_p[gi];
                pv.q_min += gen.q_min;
                pv.q_max += gen.q_max;
                pv.v_set = dispatch.gen_v[gi];
            }
            role => {
                *role = NodeRole::Pv(PvBus {
                    p_sched: dispatch.gen_p[gi],
                    v_set: dispatch.gen_v[gi],
                    q_min: gen.q_min,
                    q_max: gen.q_max,
                    q_solved: 0.0,
                    clamped: None,
                    reswitched: false,
                });
            }
        }
    }

    let slack_v = case
        .generators()
        .iter()
        .zip(&dispatch.gen_v)
        .find(|(g, _)| case.bus_index(g.bus) == slack)
        .map(|(_, &v)| v)
        .unwrap_or(1.0);

    let mut v: Vec<OperatingVoltage> = (0..n)
        .map(|i| {
            if i == slack {
                OperatingVoltage::new(slack_v, 0.0)
            } else {
                match &roles[i] {
                    NodeRole::Pv(pv) => OperatingVoltage::new(pv.v_set, 0.0),
                    NodeRole::PlainBus => OperatingVoltage::new(options.v_init, 0.0),
                }
            }
        })
        .collect();

    let mut iterations = 0;
    let mut final_res = f64::INFINITY;
    // Q-limit rounds: run Newton to convergence, clamp violators, repeat.
    for _round in 0..6 {
        final_res = newton_loop(case, &ybus, &mut roles, &mut v, options, &mut iterations)?;
        let mut changed = false;
        for (i, role) in roles.iter_mut().enumerate() {
            let NodeRole::Pv(pv) = role else { continue };
            match pv.clamped {
                None => {
                    if pv.q_solved > pv.q_max + 1e-9 {
                        pv.clamped = Some(ClampSide::Max);
                        changed = true;
                    } else if pv.q_solved < pv.q_min - 1e-9 {
                        pv.clamped = Some(ClampSide::Min);
                        changed = true;
                    }
                }
                Some(side) if !pv.reswitched => {
                    // at q_max the bus sags below its setpoint; ending up
                    // above means the clamp is no longer needed (vice versa
                    // for q_min)
                    let vm = v[i].mag();
                    let recover = match side {
                        ClampSide::Max => vm > pv.v_set + 1e-9,
                        ClampSide::Min => vm < pv.v_set - 1e-9,
                    };
                    if recover {
                        pv.clamped = None;
                        pv.reswitched = true;
                        changed = true;
                    }
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }

    if final_res > options.tol {
        return Err(PfError::NonConvergence {
            max_iter: options.max_iter,
            residual: final_res,
        });
    }

    // slack injection from the solved voltages: I_gen = Y*V + I_load there
    let mismatch = nodal_mismatch(case, &ybus, &v, &[])?;
    let (ir, ii) = mismatch[slack];
    let vs = v[slack];
    let slack_p = vs.v_r * ir + vs.v_i * ii;
    let slack_q = vs.v_i * ir - vs.v_r * ii;

    // bus Q split evenly across co-located generators
    let mut gens_at_bus = vec![0usize; n];
    for gen in case.generators() {
        gens_at_bus[case.bus_index(gen.bus)] += 1;
    }
    let gen_q: Vec<f64> = case
        .generators()
        .iter()
        .map(|gen| {
            let i = case.bus_index(gen.bus);
            let total = if i == slack {
                slack_q
            } else {
                match &roles[i] {
                    NodeRole::Pv(pv) => pv.q_injected(),
                    NodeRole::PlainBus => 0.0,
                }
            };
            total / gens_at_bus[i] as f64
        })
        .collect();

    let low_voltage_buses = case
        .buses()
        .iter()
        .filter(|b| v[case.bus_index(b.id)].mag() < 0.5)
        .map(|b| b.id)
        .collect();

    Ok(PfSolution {
        v,
        slack_injection: (slack_p, slack_q),
        gen_q,
        iterations,
        residual: final_res,
        low_voltage_buses,
    })
}

/// Full nodal complex current mismatch Y*V + I_load - I_gen for every bus.
/// `gen_inj` lists (bus index, p, q) generator injections to subtract.
fn nodal_mismatch(
    case: &ValidatedCase,
    ybus: &AdmittanceMatrix,
    v: &[OperatingVoltage],
    gen_inj: &[(usize, f64, f64)],
) -> Result<Vec<(f64, f64)>, PfError> {
    let mut mis = ybus.mul(|j| v[j].v_r, |j| v[j].v_i);
    for load in case.loads() {
        let i = case.bus_index(load.bus);
        let e = loads::eval(&load.model, v[i]).map_err(|source| PfError::VoltageCollapse {
            bus: load.bus,
            source,
        })?;
        mis[i].0 += e.i_r;
        mis[i].1 += e.i_i;
    }
    for &(i, p, q) in gen_inj {
        let e = loads::eval(&LoadModel::Pq(PqParams { p, q }), v[i]).map_err(|source| {
            PfError::VoltageCollapse {
                bus: case.buses()[i].id,
                source,
            }
        })?;
        mis[i].0 -= e.i_r;
        mis[i].1 -= e.i_i;
    }
    Ok(mis)
}

struct Unknowns {
    /// first state row of bus i's (v_r, v_i) pair, None for slack
    bus_row: Vec<Option<usize>>,
    /// extra Q unknown per unclamped PV bus: (bus index, state row)
    q_rows: Vec<(usize, usize)>,
    dim: usize,
}

fn layout(case: &ValidatedCase, roles: &[NodeRole]) -> Unknowns {
    let n = case.n_buses();
    let slack = case.slack_index();
    let mut bus_row = vec![None; n];
    let mut next = 0;
    for (i, row) in bus_row.iter_mut().enumerate() {
        if i != slack {
            *row = Some(next);
            next += 2;
        }
    }
    let mut q_rows = Vec::new();
    for (i, role) in roles.iter().enumerate() {
        if let NodeRole::Pv(pv) = role {
            if pv.clamped.is_none() {
                q_rows.push((i, next));
                next += 1;
            }
        }
    }
    Unknowns {
        bus_row,
        q_rows,
        dim: next,
    }
}

/// Residual for the current unknown layout: two current-mismatch entries
/// per non-slack bus plus one magnitude equation per unclamped PV bus.
fn assemble_residual(
    case: &ValidatedCase,
    ybus: &AdmittanceMatrix,
    roles: &[NodeRole],
    v: &[OperatingVoltage],
    q_pv: &[f64],
    lay: &Unknowns,
) -> Result<DVector<f64>, PfError> {
    let gen_inj: Vec<(usize, f64, f64)> = roles
        .iter()
        .enumerate()
        .filter_map(|(i, role)| match role {
            NodeRole::Pv(pv) => {
                let q = match pv.clamped {
                    Some(side) => pv.q_limit(side),
                    None => {
                        let k = lay.q_rows.iter().position(|&(b, _)| b == i).unwrap();
                        q_pv[k]
                    }
                };
                Some((i, pv.p_sched, q))
            }
            NodeRole::PlainBus => None,
        })
        .collect();
    let mis = nodal_mismatch(case, ybus, v, &gen_inj)?;
    let mut f = DVector::zeros(lay.dim);
    for (i, row) in lay.bus_row.iter().enumerate() {
        if let Some(r) = row {
            f[*r] = mis[i].0;
            f[*r + 1] = mis[i].1;
        }
    }
    for &(i, row) in &lay.q_rows {
        let NodeRole::Pv(pv) = &roles[i] else {
            unreachable!()
        };
        f[row] = v[i].mag_sq() - pv.v_set * pv.v_set;
    }
    Ok(f)
}

fn assemble_jacobian(
    case: &ValidatedCase,
    ybus: &AdmittanceMatrix,
    roles: &[NodeRole],
    v: &[OperatingVoltage],
    q_pv: &[f64],
    lay: &Unknowns,
) -> Result<DMatrix<f64>, PfError> {
    let mut jac = DMatrix::zeros(lay.dim, lay.dim);
    for (i, row) in lay.bus_row.iter().enumerate() {
        let Some(r) = *row else { continue };
        for (j, g, b) in ybus.row(i) {
            let Some(c) = lay.bus_row[j] else { continue };
            jac[(r, c)] += g;
            jac[(r, c + 1)] += -b;
            jac[(r + 1, c)] += b;
            jac[(r + 1, c + 1)] += g;
        }
    }
    for load in case.loads() {
        let i = case.bus_index(load.bus);
        let Some(r) = lay.bus_row[i] else { continue };
        let j = loads::current_jacobian(&load.model, v[i]).map_err(|source| {
            PfError::VoltageCollapse {
                bus: load.bus,
                source,
            }
        })?;
        jac[(r, r)] += j[0][0];
        jac[(r, r + 1)] += j[0][1];
        jac[(r + 1, r)] += j[1][0];
        jac[(r + 1, r + 1)] += j[1][1];
    }
    for (i, role) in roles.iter().enumerate() {
        let NodeRole::Pv(pv) = role else { continue };
        let Some(r) = lay.bus_row[i] else { continue };
        let q = match pv.clamped {
            Some(side) => pv.q_limit(side),
            None => {
                let k = lay.q_rows.iter().position(|&(b, _)| b == i).unwrap();
                q_pv[k]
            }
        };
        // generator injection enters the mismatch with a minus sign
        let gj = loads::current_jacobian(&LoadModel::Pq(PqParams { p: pv.p_sched, q }), v[i])
            .map_err(|source| PfError::VoltageCollapse {
                bus: case.buses()[i].id,
                source,
            })?;
        jac[(r, r)] -= gj[0][0];
        jac[(r, r + 1)] -= gj[0][1];
        jac[(r + 1, r)] -= gj[1][0];
        jac[(r + 1, r + 1)] -= gj[1][1];
        if pv.clamped.is_none() {
            let (_, qrow) = *lay.q_rows.iter().find(|&&(b, _)| b == i).unwrap();
            let d = loads::pq_param_derivatives(v[i].v_r, v[i].v_i);
            jac[(r, qrow)] = -d.di_r[1];
            jac[(r + 1, qrow)] = -d.di_i[1];
            jac[(qrow, r)] = 2.0 * v[i].v_r;
            jac[(qrow, r + 1)] = 2.0 * v[i].v_i;
        }
    }
    Ok(jac)
}

/// Damped Newton: full step, halved up to 6 times while the residual norm
/// fails to decrease; the most damped step is taken regardless so max_iter
/// bounds the total work. Returns the final residual norm and stores the
/// solved Q back on each PV bus.
fn newton_loop(
    case: &ValidatedCase,
    ybus: &AdmittanceMatrix,
    roles: &mut [NodeRole],
    v: &mut Vec<OperatingVoltage>,
    options: &PfOptions,
    iterations: &mut usize,
) -> Result<f64, PfError> {
    let lay = layout(case, roles);
    let mut q_pv: Vec<f64> = lay
        .q_rows
        .iter()
        .map(|&(i, _)| match &roles[i] {
            NodeRole::Pv(pv) => pv.q_solved,
            NodeRole::PlainBus => 0.0,
        })
        .collect();

    let mut f = assemble_residual(case, ybus, roles, v, &q_pv, &lay)?;
    let mut norm = f.amax();
    let mut local_iter = 0;
    while norm > options.tol {
        if local_iter >= options.max_iter {
            return Err(PfError::NonConvergence {
                max_iter: options.max_iter,
                residual: norm,
            });
        }
        let jac = assemble_jacobian(case, ybus, roles, v, &q_pv, &lay)?;
        let dx = linalg::lu_solve(&jac, &(-&f)).ok_or(PfError::Singular)?;
        let mut alpha = 1.0;
        let mut accepted = None;
        let mut last_err = None;
        for _ in 0..=6 {
            let (v_try, q_try) = apply_step(v, &q_pv, &dx, alpha, &lay);
            match assemble_residual(case, ybus, roles, &v_try, &q_try, &lay) {
                Ok(f_try) => {
                    let n_try = f_try.amax();
                    accepted = Some((v_try, q_try, f_try, n_try));
                    if n_try < norm {
                        break;
                    }
                }
                // a collapsed trial point just means the step was too long
                Err(e) => last_err = Some(e),
            }
            alpha *= 0.5;
        }
        let (v_new, q_new, f_new, n_new) = match accepted {
            Some(step) => step,
            None => return Err(last_err.unwrap_or(PfError::Singular)),
        };
        *v = v_new;
        q_pv = q_new;
        f = f_new;
        norm = n_new;
        local_iter += 1;
        *iterations += 1;
    }

    for (k, &(i, _)) in lay.q_rows.iter().enumerate() {
        if let NodeRole::Pv(pv) = &mut roles[i] {
            pv.q_solved = q_pv[k];
        }
    }
    Ok(norm)
}

fn apply_step(
    v: &[OperatingVoltage],
    q_pv: &[f64],
    dx: &DVector<f64>,
    alpha: f64,
    lay: &Unknowns,
) -> (Vec<OperatingVoltage>, Vec<f64>) {
    let mut v_new = v.to_vec();
    for (i, row) in lay.bus_row.iter().enumerate() {
        if let Some(r) = row {
            v_new[i].v_r += alpha * dx[*r];
            v_new[i].v_i += alpha * dx[*r + 1];
        }
    }
    let q_new = lay
        .q_rows
        .iter()
        .enumerate()
        .map(|(k, &(_, row))| q_pv[k] + alpha * dx[row])
        .collect();
    (v_new, q_new)
}

/// Total series real losses at a voltage profile, from branch currents.
pub fn series_losses(case: &ValidatedCase, v: &[OperatingVoltage]) -> f64 {
    let mut total = 0.0;
    for br in case.branches() {
        let (i, j) = (case.bus_index(br.from), case.bus_index(br.to));
        let (g, b) = br.series_admittance();
        let dvr = v[i].v_r - v[j].v_r;
        let dvi = v[i].v_i - v[j].v_i;
        let ir = g * dvr - b * dvi;
        let ii = b * dvr + g * dvi;
        total += br.r * (ir * ir + ii * ii);
    }
    total
}
