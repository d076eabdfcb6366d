//! Deterministic generators for the bundled example data.
//!
//! The networks here are reconstructions built to exercise the solvers and
//! experiments at realistic scale; they are not measured systems. The
//! first-segment load parameters are a fixed reference set in
//! measured-feeder style; the remaining segments follow a synthetic daily
//! shape.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::fit::{MeasurementSample, MeasurementSeries};
use crate::harness::SegmentedCase;
use crate::loads::{
    self, BigParams, LoadModel, ModelKind, OperatingVoltage, PqParams, YParams, ZipParams,
};
use crate::network::{
    validate_case, Branch, Bus, BusId, BusKind, CostPoly, Generator, GridCase, ValidatedCase,
};

/// First-segment PQ parameters for load buses 2, 3, 4.
pub fn seg1_pq() -> BTreeMap<BusId, LoadModel> {
    BTreeMap::from([
        (
            2,
            LoadModel::Pq(PqParams {
                p: 1.4499,
                q: 0.44594,
            }),
        ),
        (
            3,
            LoadModel::Pq(PqParams {
                p: 2.0868,
                q: 0.64185,
            }),
        ),
        (
            4,
            LoadModel::Pq(PqParams {
                p: 1.0589,
                q: 0.32567,
            }),
        ),
    ])
}

/// First-segment ZIP parameters for load buses 2, 3, 4.
pub fn seg1_zip() -> BTreeMap<BusId, LoadModel> {
    BTreeMap::from([
        (
            2,
            LoadModel::Zip(ZipParams {
                p0: 1.1392,
                q0: -0.19632,
                i_p: 0.4767,
                i_q: 0.15877,
                g_z: -0.16338,
                b_z: 0.50372,
            }),
        ),
        (
            3,
            LoadModel::Zip(ZipParams {
                p0: 0.98408,
                q0: 0.076938,
                i_p: 0.70154,
                i_q: 0.22081,
                g_z: 0.42845,
                b_z: 0.36053,
            }),
        ),
        (
            4,
            LoadModel::Zip(ZipParams {
                p0: 0.49932,
                q0: 0.03904,
                i_p: 0.35596,
                i_q: 0.11204,
                g_z: 0.21739,
                b_z: 0.18293,
            }),
        ),
    ])
}

/// First-segment BIG parameters for load buses 2, 3, 4.
pub fn seg1_big() -> BTreeMap<BusId, LoadModel> {
    BTreeMap::from([
        (
            2,
            LoadModel::Big(BigParams {
                alpha_r: 1.5775,
                alpha_i: 0.031136,
                g_b: -0.10372,
                b_b: -0.49365,
            }),
        ),
        (
            3,
            LoadModel::Big(BigParams {
                alpha_r: 2.2709,
                alpha_i: 0.044819,
                g_b: -0.14931,
                b_b: -0.7106,
            }),
        ),
        (
            4,
            LoadModel::Big(BigParams {
                alpha_r: 0.65358,
                alpha_i: -0.13531,
                g_b: 0.43166,
                b_b: -0.19968,
            }),
        ),
    ])
}

/// Five-bus feeder reconstruction: generators at buses 1 (slack) and 5,
/// loads at 2, 3, 4, ring topology.
pub fn five_bus_case() -> ValidatedCase {
    let bus = |id, kind| Bus {
        id,
        kind,
        v_min: 0.94,
        v_max: 1.06,
    };
    let line = |from, to, r, x| Branch {
        from,
        to,
        r,
        x,
        b_sh: 0.02,
    };
    let gen = |bus| Generator {
        bus,
        p_min: 0.0,
        p_max: 4.0,
        q_min: -3.0,
        q_max: 3.0,
        cost: CostPoly(0.05, 1.0, 0.0),
    };
    validate_case(GridCase {
        buses: vec![
            bus(1, BusKind::Slack),
            bus(2, BusKind::Load),
            bus(3, BusKind::Load),
            bus(4, BusKind::Load),
            bus(5, BusKind::Generator),
        ],
        branches: vec![
            line(1, 2, 0.005, 0.02),
            line(2, 3, 0.004, 0.016),
            line(3, 4, 0.004, 0.016),
            line(4, 5, 0.005, 0.02),
            line(1, 5, 0.006, 0.024),
        ],
        generators: vec![gen(1), gen(5)],
        loads: vec![],
    })
    .expect("five-bus reconstruction validates")
}

/// Daily load-shape factors for the 12 bundled segments (two days of six).
/// Segment 1 is the measured-style parameter set; the rest scale it.
const SEGMENT_SHAPE: [f64; 12] = [
    1.0, 0.92, 0.78, 0.66, 0.71, 0.85, 0.97, 0.9, 0.76, 0.64, 0.69, 0.83,
];

fn scale_model(model: &LoadModel, f: f64) -> LoadModel {
    match *model {
        LoadModel::Pq(p) => LoadModel::Pq(PqParams {
            p: f * p.p,
            q: f * p.q,
        }),
        LoadModel::Zip(z) => LoadModel::Zip(ZipParams {
            p0: f * z.p0,
            q0: f * z.q0,
            i_p: f * z.i_p,
            i_q: f * z.i_q,
            g_z: f * z.g_z,
            b_z: f * z.b_z,
        }),
        LoadModel::Big(b) => LoadModel::Big(BigParams {
            alpha_r: f * b.alpha_r,
            alpha_i: f * b.alpha_i,
            g_b: f * b.g_b,
            b_b: f * b.b_b,
        }),
        LoadModel::Y(y) => LoadModel::Y(YParams {
            g: f * y.g,
            b: f * y.b,
        }),
    }
}

fn scaled_family(seg1: BTreeMap<BusId, LoadModel>) -> Vec<BTreeMap<BusId, LoadModel>> {
    SEGMENT_SHAPE
        .iter()
        .map(|&f| {
            seg1.iter()
                .map(|(&bus, model)| (bus, scale_model(model, f)))
                .collect()
        })
        .collect()
}

/// The bundled 12-segment case on the five-bus reconstruction, with pq,
/// zip, and big families. Scaling every coefficient by the segment shape
/// factor preserves each model's classification margins' signs.
pub fn segmented_reconstruction() -> SegmentedCase {
    let families = BTreeMap::from([
        (ModelKind::Pq, scaled_family(seg1_pq())),
        (ModelKind::Zip, scaled_family(seg1_zip())),
        (ModelKind::Big, scaled_family(seg1_big())),
    ]);
    SegmentedCase::new(five_bus_case(), families).expect("bundled segmented case validates")
}

/// Three-bus contrast case: slack generator at bus 1 with a wide voltage
/// band, two symmetric load buses with a tighter band so their bounds can
/// bind in both directions. `kind` selects constant-power loads or the
/// equivalent admittances absorbing the same nominal power at 1 p.u.
pub fn three_bus_case(kind: ModelKind) -> ValidatedCase {
    let nominal = [(2, 0.44, 0.135), (3, 0.44, 0.135)];
    let loads = nominal
        .iter()
        .map(|&(bus, p, q)| {
            let model = match kind {
                ModelKind::Y => LoadModel::Y(
                    loads::equivalent_admittance(p, q, OperatingVoltage::nominal()).unwrap(),
                ),
                _ => LoadModel::Pq(PqParams { p, q }),
            };
            crate::network::LoadEntry { bus, model }
        })
        .collect();
    validate_case(GridCase {
        buses: vec![
            Bus {
                id: 1,
                kind: BusKind::Slack,
                v_min: 0.94,
                v_max: 1.06,
            },
            Bus {
                id: 2,
                kind: BusKind::Load,
                v_min: 0.97,
                v_max: 1.03,
            },
            Bus {
                id: 3,
                kind: BusKind::Load,
                v_min: 0.97,
                v_max: 1.03,
            },
        ],
        branches: vec![
            Branch {
                from: 1,
                to: 2,
                r: 0.01,
                x: 0.03,
                b_sh: 0.0,
            },
            Branch {
                from: 2,
                to: 3,
                r: 0.008,
                x: 0.025,
                b_sh: 0.0,
            },
            Branch {
                from: 1,
                to: 3,
                r: 0.01,
                x: 0.03,
                b_sh: 0.0,
            },
        ],
        generators: vec![Generator {
            bus: 1,
            p_min: 0.0,
            p_max: 5.0,
            q_min: -5.0,
            q_max: 5.0,
            cost: CostPoly(0.0, 1.0, 0.0),
        }],
        loads,
    })
    .expect("three-bus contrast case validates")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Per-segment BIG generators behind the bundled two-day series (six
/// daily segments of sixteen 15-minute samples; day two runs 3% lighter).
const DAY_SEGMENTS: [BigParams; 6] = [
    BigParams {
        alpha_r: 0.9,
        alpha_i: -0.1,
        g_b: 0.25,
        b_b: -0.3,
    },
    BigParams {
        alpha_r: 1.1,
        alpha_i: -0.05,
        g_b: 0.3,
        b_b: -0.35,
    },
    BigParams {
        alpha_r: 1.6,
        alpha_i: 0.05,
        g_b: 0.45,
        b_b: -0.5,
    },
    BigParams {
        alpha_r: 1.9,
        alpha_i: 0.1,
        g_b: 0.5,
        b_b: -0.55,
    },
    BigParams {
        alpha_r: 1.5,
        alpha_i: 0.0,
        g_b: 0.4,
        b_b: -0.45,
    },
    BigParams {
        alpha_r: 1.1,
        alpha_i: -0.08,
        g_b: 0.3,
        b_b: -0.35,
    },
];

/// Two-day measurement series at 15-minute resolution, generated from
/// time-varying BIG parameters with 2% relative current noise.
pub fn two_day_series(seed: u64) -> MeasurementSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = 96;
    let dt = 900.0;
    let mut samples = Vec::with_capacity(2 * per_day);
    for day in 0..2 {
        let day_scale = if day == 0 { 1.0 } else { 0.97 };
        for k in 0..per_day {
            let t = (day * per_day + k) as f64 * dt;
            let phase = k as f64 / per_day as f64 * std::f64::consts::TAU;
            let v = OperatingVoltage::new(
                1.0 + 0.015 * phase.sin() + 0.004 * normal(&mut rng),
                0.01 * (phase + 1.3).sin() + 0.003 * normal(&mut rng),
            );
            let seg = DAY_SEGMENTS[k / (per_day / 6)];
            let model = scale_model(&LoadModel::Big(seg), day_scale);
            let e = loads::eval(&model, v).unwrap();
            let mag = (e.i_r * e.i_r + e.i_i * e.i_i).sqrt();
            samples.push(MeasurementSample {
                t,
                v_r: v.v_r,
                v_i: v.v_i,
                i_r: e.i_r + 0.02 * mag * normal(&mut rng),
                i_i: e.i_i + 0.02 * mag * normal(&mut rng),
            });
        }
    }
    MeasurementSeries { bus: 4, samples }
}

/// Random connected 3-6 bus network with a mixed bag of load models, for
/// randomized derivative and solver checks.
pub fn random_case(seed: u64, n_buses: usize) -> ValidatedCase {
    assert!((2..=10).contains(&n_buses));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buses = vec![Bus {
        id: 1,
        kind: BusKind::Slack,
        v_min: 0.5,
        v_max: 1.5,
    }];
    for id in 2..=n_buses {
        buses.push(Bus {
            id,
            kind: BusKind::Load,
            v_min: 0.5,
            v_max: 1.5,
        });
    }
    let mut branches = Vec::new();
    let line = |rng: &mut ChaCha8Rng, from: usize, to: usize| Branch {
        from,
        to,
        r: rng.gen_range(0.005..0.03),
        x: rng.gen_range(0.02..0.1),
        b_sh: if rng.gen_bool(0.5) { 0.02 } else { 0.0 },
    };
    for id in 2..=n_buses {
        let anchor = rng.gen_range(1..id);
        branches.push(line(&mut rng, id, anchor));
    }
    if n_buses >= 4 {
        // one redundant tie to exercise meshed topologies
        let a = rng.gen_range(1..=n_buses);
        let b = 1 + (a + rng.gen_range(1..n_buses) - 1) % n_buses;
        if a != b
            && !branches
                .iter()
                .any(|br| (br.from == a && br.to == b) || (br.from == b && br.to == a))
        {
            branches.push(line(&mut rng, a, b));
        }
    }
    let mut loads = Vec::new();
    for id in 2..=n_buses {
        let model = match rng.gen_range(0..4) {
            0 => LoadModel::Pq(PqParams {
                p: rng.gen_range(0.1..0.6),
                q: rng.gen_range(-0.2..0.3),
            }),
            1 => LoadModel::Zip(ZipParams {
                p0: rng.gen_range(0.05..0.4),
                q0: rng.gen_range(-0.1..0.15),
                i_p: rng.gen_range(-0.2..0.3),
                i_q: rng.gen_range(-0.1..0.15),
                g_z: rng.gen_range(-0.2..0.3),
                b_z: rng.gen_range(-0.3..0.1),
            }),
            2 => LoadModel::Big(BigParams {
                alpha_r: rng.gen_range(0.1..0.7),
                alpha_i: rng.gen_range(-0.25..0.25),
                g_b: rng.gen_range(-0.25..0.4),
                b_b: rng.gen_range(-0.4..0.15),
            }),
            _ => LoadModel::Y(YParams {
                g: rng.gen_range(0.05..0.5),
                b: rng.gen_range(-0.35..0.15),
            }),
        };
        loads.push(crate::network::LoadEntry { bus: id, model });
    }
    validate_case(GridCase {
        buses,
        branches,
        generators: vec![Generator {
            bus: 1,
            p_min: 0.0,
            p_max: 20.0,
            q_min: -20.0,
            q_max: 20.0,
            cost: CostPoly(0.0, 1.0, 0.0),
        }],
        loads,
    })
    .expect("random case validates")
}
