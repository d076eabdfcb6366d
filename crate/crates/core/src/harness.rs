//! Comparative experiments over a segmented case: per-segment OPF sweeps
//! across load-model kinds, and the dispatch-gap study where one model's
//! optimal setpoints are imposed on a power flow under another model.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::loads::{self, ClassificationReport, LoadModel, ModelKind};
use crate::network::{BusId, LoadEntry, ValidatedCase};
use crate::opf::{self, BoundActivity, OpfOptions};
use crate::pf::{self, Dispatch, PfOptions};

/// A base network plus per-segment load parameter sets, one family per
/// model kind. Every segment of every family covers the same load-bus set.
#[derive(Debug, Clone)]
pub struct SegmentedCase {
    pub base: ValidatedCase,
    families: BTreeMap<ModelKind, Vec<BTreeMap<BusId, LoadModel>>>,
    load_buses: BTreeSet<BusId>,
    n_segments: usize,
}

impl SegmentedCase {
    /// Validate family shape: consistent kinds, equal segment counts, and
    /// full load-bus coverage in every segment.
    pub fn new(
        base: ValidatedCase,
        families: BTreeMap<ModelKind, Vec<BTreeMap<BusId, LoadModel>>>,
    ) -> Result<Self, String> {
        if families.is_empty() {
            return Err("segmented case has no model families".into());
        }
        let mut load_buses: BTreeSet<BusId> = BTreeSet::new();
        for segments in families.values() {
            for segment in segments {
                load_buses.extend(segment.keys().copied());
            }
        }
        let mut n_segments = None;
        for (kind, segments) in &families {
            match n_segments {
                None => n_segments = Some(segments.len()),
                Some(n) if n != segments.len() => {
                    return Err(format!(
                        "family {kind} has {} segments, expected {n}",
                        segments.len()
                    ));
                }
                _ => {}
            }
            for (s, segment) in segments.iter().enumerate() {
                for &bus in &load_buses {
                    if !segment.contains_key(&bus) {
                        return Err(format!(
                            "family {kind}: segment {} missing load bus {bus}",
                            s + 1
                        ));
                    }
                }
                for (bus, model) in segment {
                    if model.kind() != *kind {
                        return Err(format!(
                            "family {kind}: segment {} bus {bus} holds a {} model",
                            s + 1,
                            model.kind()
                        ));
                    }
                }
            }
        }
        let n_segments = n_segments.unwrap_or(0);
        if n_segments == 0 {
            return Err("segmented case has no segments".into());
        }
        Ok(Self {
            base,
            families,
            load_buses,
            n_segments,
        })
    }

    pub fn families(&self) -> &BTreeMap<ModelKind, Vec<BTreeMap<BusId, LoadModel>>> {
        &self.families
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn kinds(&self) -> Vec<ModelKind> {
        self.families.keys().copied().collect()
    }

    pub fn load_buses(&self) -> &BTreeSet<BusId> {
        &self.load_buses
    }

    /// The base case with segment `s` of family `kind` installed.
    pub fn case_for(&self, kind: ModelKind, s: usize) -> Result<ValidatedCase, String> {
        let segments = self
            .families
            .get(&kind)
            .ok_or_else(|| format!("no {kind} family in the segmented case"))?;
        let segment = segments
            .get(s)
            .ok_or_else(|| format!("segment {s} out of range"))?;
        let loads: Vec<LoadEntry> = segment
            .iter()
            .map(|(&bus, &model)| LoadEntry { bus, model })
            .collect();
        self.base.with_loads(loads).map_err(|e| e.to_string())
    }
}

/// Serialization format for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "detail")]
pub enum RunStatus {
    Ok,
    Error(String),
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BusVoltageRow {
    pub bus: BusId,
    pub v_r: f64,
    pub v_i: f64,
    pub v_mag: f64,
    pub bind: BoundActivity,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadClassRow {
    pub bus: BusId,
    pub model: LoadModel,
    pub report: ClassificationReport,
}

/// One OPF cell of the sweep: a (segment, kind) pair.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub segment: usize,
    pub kind: ModelKind,
    pub status: RunStatus,
    pub objective: Option<f64>,
    pub buses: Vec<BusVoltageRow>,
    pub loads: Vec<LoadClassRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// One OPF per (segment, kind): objective, solved voltages with bound
/// activity, and the classification of every load at its solved voltage.
/// Infeasible cells are recorded, never fatal.
pub fn experiment_sweep(
    seg_case: &SegmentedCase,
    kinds: &[ModelKind],
    options: &OpfOptions,
) -> SweepReport {
    let mut rows = Vec::new();
    for s in 0..seg_case.n_segments() {
        for &kind in kinds {
            rows.push(sweep_cell(seg_case, kind, s, options));
        }
    }
    rows.sort_by_key(|r| (r.segment, r.kind.as_str()));
    SweepReport { rows }
}

fn sweep_cell(
    seg_case: &SegmentedCase,
    kind: ModelKind,
    s: usize,
    options: &OpfOptions,
) -> SweepRow {
    let mut row = SweepRow {
        segment: s,
        kind,
        status: RunStatus::Ok,
        objective: None,
        buses: Vec::new(),
        loads: Vec::new(),
    };
    let case = match seg_case.case_for(kind, s) {
        Ok(c) => c,
        Err(e) => {
            row.status = RunStatus::Error(e);
            return row;
        }
    };
    let sol = match opf::solve_opf(&case, options) {
        Ok(sol) => sol,
        Err(e) => {
            row.status = RunStatus::Error(e.to_string());
            return row;
        }
    };
    row.objective = Some(sol.objective);
    for (i, bus) in case.buses().iter().enumerate() {
        let v = sol.x.v[i];
        row.buses.push(BusVoltageRow {
            bus: bus.id,
            v_r: v.v_r,
            v_i: v.v_i,
            v_mag: v.mag(),
            bind: sol.bound_activity.v_mag[i],
        });
    }
    for load in case.loads() {
        let v = sol.x.v[case.bus_index(load.bus)];
        row.loads.push(LoadClassRow {
            bus: load.bus,
            model: load.model,
            report: loads::classify(&load.model, v),
        });
    }
    row
}

/// How much of model A's optimal setpoints a gap run imposes on the
/// power flow under model B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreezeMode {
    /// Freeze generator voltage magnitudes and non-slack real dispatch;
    /// the slack absorbs the entire model mismatch.
    Both,
    /// Freeze voltage magnitudes only; the real-power mismatch is shared
    /// equally by all generators (uniform participation).
    VoltagesOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct GapOptions {
    pub opf: OpfOptions,
    pub pf: PfOptions,
    pub freeze: FreezeMode,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            opf: OpfOptions::default(),
            pf: PfOptions::default(),
            freeze: FreezeMode::Both,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub segment: usize,
    pub status: RunStatus,
    /// Objective of the model-A OPF, $/h.
    pub objective_a: Option<f64>,
    /// Total real generation at the A optimum, p.u.
    pub gen_a: Option<f64>,
    /// Total real generation of the B power flow at A's setpoints, p.u.
    pub gen_b: Option<f64>,
    /// gen_b - gen_a: additional power required under the B models.
    pub delta: Option<f64>,
    /// Whether the B operating point respects voltage bands and the slack
    /// generator box.
    pub b_within_limits: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub from: ModelKind,
    pub to: ModelKind,
    pub freeze: FreezeMode,
    pub rows: Vec<GapRow>,
}

/// Per segment: solve the OPF under `from`, freeze its setpoints, run the
/// power flow under `to`, and report the additional generation needed.
pub fn experiment_gap(
    seg_case: &SegmentedCase,
    from: ModelKind,
    to: ModelKind,
    options: &GapOptions,
) -> GapReport {
    let mut rows = Vec::new();
    for s in 0..seg_case.n_segments() {
        rows.push(gap_cell(seg_case, from, to, s, options));
    }
    GapReport {
        from,
        to,
        freeze: options.freeze,
        rows,
    }
}

fn gap_cell(
    seg_case: &SegmentedCase,
    from: ModelKind,
    to: ModelKind,
    s: usize,
    options: &GapOptions,
) -> GapRow {
    let mut row = GapRow {
        segment: s,
        status: RunStatus::Ok,
        objective_a: None,
        gen_a: None,
        gen_b: None,
        delta: None,
        b_within_limits: None,
    };
    let fail = |row: &mut GapRow, msg: String| {
        row.status = RunStatus::Error(msg);
    };

    let case_a = match seg_case.case_for(from, s) {
        Ok(c) => c,
        Err(e) => {
            fail(&mut row, e);
            return row;
        }
    };
    let sol_a = match opf::solve_opf(&case_a, &options.opf) {
        Ok(sol) => sol,
        Err(e) => {
            fail(&mut row, format!("model-A OPF: {e}"));
            return row;
        }
    };
    row.objective_a = Some(sol_a.objective);
    let gen_a: f64 = sol_a.x.gen_p.iter().sum();
    row.gen_a = Some(gen_a);

    let case_b = match seg_case.case_for(to, s) {
        Ok(c) => c,
        Err(e) => {
            fail(&mut row, e);
            return row;
        }
    };
    // A's optimal voltage magnitudes become the setpoints
    let gen_v: Vec<f64> = case_a
        .generators()
        .iter()
        .map(|g| sol_a.x.v[case_a.bus_index(g.bus)].mag())
        .collect();
    let slack = case_b.slack_index();
    let slack_p_a: f64 = case_a
        .generators()
        .iter()
        .zip(&sol_a.x.gen_p)
        .filter(|(g, _)| case_a.bus_index(g.bus) == slack)
        .map(|(_, &p)| p)
        .sum();

    let result = match options.freeze {
        FreezeMode::Both => {
            let dispatch = Dispatch {
                gen_p: sol_a.x.gen_p.clone(),
                gen_v,
            };
            pf::solve_pf_dispatch(&case_b, &dispatch, &options.pf).map(|sol| {
                let non_slack: f64 = case_b
                    .generators()
                    .iter()
                    .zip(&dispatch.gen_p)
                    .filter(|(g, _)| case_b.bus_index(g.bus) != slack)
                    .map(|(_, &p)| p)
                    .sum();
                (sol.slack_injection.0 + non_slack, sol)
            })
        }
        FreezeMode::VoltagesOnly => {
            // uniform participation: every generator moves off its A
            // dispatch by the same amount gamma, found by fixed point on
            // the slack surplus
            let ng = case_b.generators().len() as f64;
            let mut gamma = 0.0;
            let mut out = Err(pf::PfError::NonConvergence {
                max_iter: 0,
                residual: f64::NAN,
            });
            for _ in 0..25 {
                let gen_p: Vec<f64> = case_b
                    .generators()
                    .iter()
                    .zip(&sol_a.x.gen_p)
                    .map(|(g, &p)| {
                        if case_b.bus_index(g.bus) == slack {
                            p
                        } else {
                            p + gamma
                        }
                    })
                    .collect();
                let dispatch = Dispatch {
                    gen_p: gen_p.clone(),
                    gen_v: gen_v.clone(),
                };
                match pf::solve_pf_dispatch(&case_b, &dispatch, &options.pf) {
                    Ok(sol) => {
                        let surplus = sol.slack_injection.0 - slack_p_a;
                        let non_slack: f64 = case_b
                            .generators()
                            .iter()
                            .zip(&gen_p)
                            .filter(|(g, _)| case_b.bus_index(g.bus) != slack)
                            .map(|(_, &p)| p)
                            .sum();
                        let total = sol.slack_injection.0 + non_slack;
                        let step = (surplus - gamma) / ng;
                        out = Ok((total, sol));
                        if step.abs() < 1e-10 {
                            break;
                        }
                        gamma += step;
                    }
                    Err(e) => {
                        out = Err(e);
                        break;
                    }
                }
            }
            out
        }
    };

    match result {
        Ok((gen_b, sol_b)) => {
            row.gen_b = Some(gen_b);
            row.delta = Some(gen_b - gen_a);
            let volts_ok = case_b.buses().iter().enumerate().all(|(i, b)| {
                let vm = sol_b.v[i].mag();
                vm >= b.v_min - 1e-6 && vm <= b.v_max + 1e-6
            });
            let slack_box: (f64, f64) = case_b
                .generators()
                .iter()
                .filter(|g| case_b.bus_index(g.bus) == slack)
                .fold((0.0, 0.0), |acc, g| (acc.0 + g.p_min, acc.1 + g.p_max));
            let slack_ok = sol_b.slack_injection.0 >= slack_box.0 - 1e-6
                && sol_b.slack_injection.0 <= slack_box.1 + 1e-6;
            row.b_within_limits = Some(volts_ok && slack_ok);
        }
        Err(e) => fail(&mut row, format!("model-B power flow: {e}")),
    }
    row
}

// ---------------------------------------------------------------------------
// Report serialization.
// ---------------------------------------------------------------------------

fn csv_sanitize(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepReport {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| !r.status.is_ok())
    }

    /// Deterministic serialization; CSV columns are
    /// `segment,kind,status,objective` followed by `v{bus}` and
    /// `bind{bus}` per bus and `class{bus}` per load bus.
    pub fn emit(&self, format: ReportFormat) -> Vec<u8> {
        match format {
            ReportFormat::Json => {
                let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
                bytes.push(b'\n');
                bytes
            }
            ReportFormat::Csv => self.to_csv().into_bytes(),
        }
    }

    fn to_csv(&self) -> String {
        let mut bus_ids: Vec<BusId> = Vec::new();
        let mut load_ids: Vec<BusId> = Vec::new();
        for row in &self.rows {
            for b in &row.buses {
                if !bus_ids.contains(&b.bus) {
                    bus_ids.push(b.bus);
                }
            }
            for l in &row.loads {
                if !load_ids.contains(&l.bus) {
                    load_ids.push(l.bus);
                }
            }
        }
        bus_ids.sort_unstable();
        load_ids.sort_unstable();

        let mut header = String::from("segment,kind,status,objective");
        for id in &bus_ids {
            header.push_str(&format!(",v{id}"));
        }
        for id in &bus_ids {
            header.push_str(&format!(",bind{id}"));
        }
        for id in &load_ids {
            header.push_str(&format!(",class{id}"));
        }
        let mut out = header;
        out.push('\n');
        for row in &self.rows {
            let status = match &row.status {
                RunStatus::Ok => "ok".to_string(),
                RunStatus::Error(e) => csv_sanitize(e),
            };
            out.push_str(&format!(
                "{},{},{},{}",
                row.segment,
                row.kind,
                status,
                fmt_opt(row.objective)
            ));
            for id in &bus_ids {
                let v = row.buses.iter().find(|b| b.bus == *id).map(|b| b.v_mag);
                out.push_str(&format!(",{}", fmt_opt(v)));
            }
            for id in &bus_ids {
                let bind = row
                    .buses
                    .iter()
                    .find(|b| b.bus == *id)
                    .map(|b| format!("{:?}", b.bind).to_lowercase())
                    .unwrap_or_default();
                out.push_str(&format!(",{bind}"));
            }
            for id in &load_ids {
                let class = row
                    .loads
                    .iter()
                    .find(|l| l.bus == *id)
                    .map(|l| match l.report.joint {
                        loads::JointClass::PowerType => "power-type",
                        loads::JointClass::ImpedanceType => "impedance-type",
                        loads::JointClass::Mixed => "mixed",
                    })
                    .unwrap_or_default();
                out.push_str(&format!(",{class}"));
            }
            out.push('\n');
        }
        out
    }
}

impl GapReport {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| !r.status.is_ok())
    }

    /// Deterministic serialization; CSV columns are
    /// `segment,from,to,freeze,status,objective_a,gen_a,gen_b,delta,b_within_limits`.
    pub fn emit(&self, format: ReportFormat) -> Vec<u8> {
        match format {
            ReportFormat::Json => {
                let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
                bytes.push(b'\n');
                bytes
            }
            ReportFormat::Csv => {
                let mut out = String::from(
                    "segment,from,to,freeze,status,objective_a,gen_a,gen_b,delta,b_within_limits\n",
                );
                let freeze = match self.freeze {
                    FreezeMode::Both => "both",
                    FreezeMode::VoltagesOnly => "voltages-only",
                };
                for row in &self.rows {
                    let status = match &row.status {
                        RunStatus::Ok => "ok".to_string(),
                        RunStatus::Error(e) => csv_sanitize(e),
                    };
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{}\n",
                        row.segment,
                        self.from,
                        self.to,
                        freeze,
                        status,
                        fmt_opt(row.objective_a),
                        fmt_opt(row.gen_a),
                        fmt_opt(row.gen_b),
                        fmt_opt(row.delta),
                        row.b_within_limits
                            .map(|b| b.to_string())
                            .unwrap_or_default(),
                    ));
                }
                out.into_bytes()
            }
        }
    }
}
