//! Aggregated load models and their classification.
//!
//! Four model families are supported, all expressed in per unit at a bus
//! voltage `V = v_r + j v_i`:
//!
//! * **PQ** — constant complex power; the drawn current is
//!   `I = (p - jq) V / |V|^2`.
//! * **ZIP** — powers polynomial in the voltage magnitude,
//!   `P = p0 + i_p |V| + g_z |V|^2` (and the analogous `Q`), converted to
//!   currents through the PQ expression.
//! * **BIG** — currents affine in the rectangular voltage,
//!   `I_r = alpha_r + g_b v_r - b_b v_i`, `I_i = alpha_i + g_b v_i + b_b v_r`.
//! * **Y** — a fixed admittance `g + jb`, i.e. a ZIP with impedance terms
//!   only.
//!
//! A model is *power-type* at a voltage when every partial derivative of its
//! absorbed power with respect to the voltage components is non-positive
//! (the optimizer then favors the highest feasible voltage), and
//! *impedance-type* when a sensitivity is positive (the optimizer favors the
//! lowest feasible voltage). [`classify`] evaluates those conditions and
//! [`mpt_margin`] reduces the real-power side to a single scalar whose sign
//! decides the type.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum voltage magnitude at which PQ and ZIP currents are evaluated;
/// below this the `1/|V|^2` conversion is considered collapsed.
pub const VOLTAGE_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    /// |V| fell at or below [`VOLTAGE_EPS`] while evaluating a PQ or ZIP load.
    #[error("voltage collapse: |V| = {mag:.3e} <= {VOLTAGE_EPS:.0e}")]
    VoltageCollapse { mag: f64 },
    /// Zero nominal voltage passed to [`equivalent_admittance`].
    #[error("zero nominal voltage")]
    ZeroVoltage,
}

/// Rectangular bus voltage, per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingVoltage {
    pub v_r: f64,
    pub v_i: f64,
}

impl OperatingVoltage {
    pub fn new(v_r: f64, v_i: f64) -> Self {
        Self { v_r, v_i }
    }

    /// 1 + j0, the default classification point.
    pub fn nominal() -> Self {
        Self { v_r: 1.0, v_i: 0.0 }
    }

    pub fn mag_sq(&self) -> f64 {
        self.v_r * self.v_r + self.v_i * self.v_i
    }

    pub fn mag(&self) -> f64 {
        self.mag_sq().sqrt()
    }
}

/// Constant-power parameters (absorbed p, q).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PqParams {
    pub p: f64,
    pub q: f64,
}

/// ZIP parameters: constant power, constant current, and impedance terms of
/// the absorbed-power polynomials in |V|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipParams {
    pub p0: f64,
    pub q0: f64,
    #[serde(rename = "ip")]
    pub i_p: f64,
    #[serde(rename = "iq")]
    pub i_q: f64,
    #[serde(rename = "g")]
    pub g_z: f64,
    #[serde(rename = "b")]
    pub b_z: f64,
}

/// BIG parameters: constant current sources plus conductance/susceptance
/// sensitivities. The currents are affine in the rectangular voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BigParams {
    pub alpha_r: f64,
    pub alpha_i: f64,
    #[serde(rename = "g")]
    pub g_b: f64,
    #[serde(rename = "b")]
    pub b_b: f64,
}

/// Constant admittance g + jb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YParams {
    pub g: f64,
    pub b: f64,
}

/// Tagged union over the supported aggregated load models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "lowercase")]
pub enum LoadModel {
    Pq(PqParams),
    Zip(ZipParams),
    Big(BigParams),
    Y(YParams),
}

/// Model kind without parameters; used for fitting and report labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pq,
    Zip,
    Big,
    Y,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Pq => "pq",
            ModelKind::Zip => "zip",
            ModelKind::Big => "big",
            ModelKind::Y => "y",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pq" => Ok(ModelKind::Pq),
            "zip" => Ok(ModelKind::Zip),
            "big" => Ok(ModelKind::Big),
            "y" => Ok(ModelKind::Y),
            other => Err(format!(
                "unknown model kind `{other}` (expected pq|zip|big|y)"
            )),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl LoadModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            LoadModel::Pq(_) => ModelKind::Pq,
            LoadModel::Zip(_) => ModelKind::Zip,
            LoadModel::Big(_) => ModelKind::Big,
            LoadModel::Y(_) => ModelKind::Y,
        }
    }
}

/// Drawn currents, absorbed powers, and power gradients of a load at one
/// voltage. Currents use the convention that current drawn into the load is
/// positive, so `p = v_r i_r + v_i i_i` and `q = v_i i_r - v_r i_i` hold for
/// every model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoadEvaluation {
    pub i_r: f64,
    pub i_i: f64,
    pub p: f64,
    pub q: f64,
    /// (dP/dv_r, dP/dv_i)
    pub d_p: [f64; 2],
    /// (dQ/dv_r, dQ/dv_i)
    pub d_q: [f64; 2],
}

/// Power-type or impedance-type verdict for one power component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadClass {
    PowerType,
    ImpedanceType,
}

/// Joint verdict over real and reactive conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointClass {
    PowerType,
    ImpedanceType,
    Mixed,
}

/// Classification result at one evaluation voltage.
///
/// `p_class` is power-type iff every entry of `p_margins` is <= 0; the
/// margins are the evaluated left-hand sides of the sensitivity conditions
/// (one per condition, two for BIG). The verdict is voltage-dependent, so
/// the evaluation point is reported alongside it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub p_class: LoadClass,
    pub q_class: LoadClass,
    pub joint: JointClass,
    pub p_margins: Vec<f64>,
    pub q_margins: Vec<f64>,
    pub at: OperatingVoltage,
}

fn guard_voltage(v: OperatingVoltage) -> Result<(), LoadError> {
    let mag = v.mag();
    if mag <= VOLTAGE_EPS {
        Err(LoadError::VoltageCollapse { mag })
    } else {
        Ok(())
    }
}

/// Evaluate currents, powers, and power gradients of `model` at `v`.
///
/// PQ and ZIP evaluation fails with [`LoadError::VoltageCollapse`] when
/// |V| <= [`VOLTAGE_EPS`]; BIG and Y are polynomial and evaluate anywhere.
pub fn eval(model: &LoadModel, v: OperatingVoltage) -> Result<LoadEvaluation, LoadError> {
    let (u, w) = (v.v_r, v.v_i);
    let m = v.mag_sq();
    match model {
        LoadModel::Pq(pq) => {
            guard_voltage(v)?;
            let f = RationalForm::over_mag_sq(pq.p, pq.q, u, w);
            Ok(LoadEvaluation {
                i_r: f.i_r,
                i_i: f.i_i,
                p: pq.p,
                q: pq.q,
                d_p: [0.0, 0.0],
                d_q: [0.0, 0.0],
            })
        }
        LoadModel::Zip(z) => {
            guard_voltage(v)?;
            let s = m.sqrt();
            let p = z.p0 + z.i_p * s + z.g_z * m;
            let q = z.q0 + z.i_q * s + z.b_z * m;
            let f0 = RationalForm::over_mag_sq(z.p0, z.q0, u, w);
            let f1 = RationalForm::over_mag(z.i_p, z.i_q, u, w);
            // impedance part: same current as the admittance (g_z, -b_z)
            let i_r = f0.i_r + f1.i_r + z.g_z * u + z.b_z * w;
            let i_i = f0.i_i + f1.i_i + z.g_z * w - z.b_z * u;
            let dp = z.i_p / s + 2.0 * z.g_z;
            let dq = z.i_q / s + 2.0 * z.b_z;
            Ok(LoadEvaluation {
                i_r,
                i_i,
                p,
                q,
                d_p: [dp * u, dp * w],
                d_q: [dq * u, dq * w],
            })
        }
        LoadModel::Big(b) => {
            let i_r = b.alpha_r + b.g_b * u - b.b_b * w;
            let i_i = b.alpha_i + b.g_b * w + b.b_b * u;
            Ok(LoadEvaluation {
                i_r,
                i_i,
                p: b.alpha_r * u + b.alpha_i * w + b.g_b * m,
                q: b.alpha_r * w - b.alpha_i * u - b.b_b * m,
                d_p: [b.alpha_r + 2.0 * b.g_b * u, b.alpha_i + 2.0 * b.g_b * w],
                d_q: [-b.alpha_i - 2.0 * b.b_b * u, b.alpha_r - 2.0 * b.b_b * w],
            })
        }
        LoadModel::Y(y) => Ok(LoadEvaluation {
            i_r: y.g * u - y.b * w,
            i_i: y.g * w + y.b * u,
            p: y.g * m,
            q: -y.b * m,
            d_p: [2.0 * y.g * u, 2.0 * y.g * w],
            d_q: [-2.0 * y.b * u, -2.0 * y.b * w],
        }),
    }
}

/// Classify `model` at voltage `v` per the maximum-power-transfer
/// sensitivity conditions. See the module docs for the margin expressions.
pub fn classify(model: &LoadModel, v: OperatingVoltage) -> ClassificationReport {
    let (u, w) = (v.v_r, v.v_i);
    let s = v.mag();
    let (p_margins, q_margins) = match model {
        // zero sensitivities satisfy <= 0 with zero margin
        LoadModel::Pq(_) => (vec![0.0], vec![0.0]),
        LoadModel::Zip(z) => (vec![z.i_p + 2.0 * z.g_z * s], vec![z.i_q + 2.0 * z.b_z * s]),
        LoadModel::Big(b) => (
            vec![b.alpha_r + 2.0 * b.g_b * u, b.alpha_i + 2.0 * b.g_b * w],
            vec![-b.alpha_i - 2.0 * b.b_b * u, b.alpha_r - 2.0 * b.b_b * w],
        ),
        // a Y load is a ZIP with impedance terms only (g_z = g, b_z = -b)
        LoadModel::Y(y) => (vec![2.0 * y.g * s], vec![-2.0 * y.b * s]),
    };
    let class_of = |margins: &[f64]| {
        if margins.iter().all(|&m| m <= 0.0) {
            LoadClass::PowerType
        } else {
            LoadClass::ImpedanceType
        }
    };
    let p_class = class_of(&p_margins);
    let q_class = class_of(&q_margins);
    let joint = match (p_class, q_class) {
        (LoadClass::PowerType, LoadClass::PowerType) => JointClass::PowerType,
        (LoadClass::ImpedanceType, LoadClass::ImpedanceType) => JointClass::ImpedanceType,
        _ => JointClass::Mixed,
    };
    ClassificationReport {
        p_class,
        q_class,
        joint,
        p_margins,
        q_margins,
        at: v,
    }
}

/// Largest real-power condition expression of `model` at `v`.
///
/// Non-positive iff the model is power-type in P at that voltage; this is
/// the maximum-power-transfer metric reduced to a single scalar.
pub fn mpt_margin(model: &LoadModel, v: OperatingVoltage) -> f64 {
    classify(model, v)
        .p_margins
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Admittance that absorbs exactly (p, q) at `v_nom`: g = p/|V|^2,
/// b = -q/|V|^2.
pub fn equivalent_admittance(
    p: f64,
    q: f64,
    v_nom: OperatingVoltage,
) -> Result<YParams, LoadError> {
    let m = v_nom.mag_sq();
    if m == 0.0 {
        return Err(LoadError::ZeroVoltage);
    }
    Ok(YParams {
        g: p / m,
        b: -q / m,
    })
}

// ---------------------------------------------------------------------------
// Current derivatives used by the power-flow Jacobian and the OPF Hessian.
// ---------------------------------------------------------------------------

/// 2x2 Jacobian of the drawn currents: rows (i_r, i_i), columns (v_r, v_i).
pub(crate) fn current_jacobian(
    model: &LoadModel,
    v: OperatingVoltage,
) -> Result<[[f64; 2]; 2], LoadError> {
    let (u, w) = (v.v_r, v.v_i);
    match model {
        LoadModel::Pq(pq) => {
            guard_voltage(v)?;
            Ok(RationalForm::over_mag_sq(pq.p, pq.q, u, w).jac)
        }
        LoadModel::Zip(z) => {
            guard_voltage(v)?;
            let f0 = RationalForm::over_mag_sq(z.p0, z.q0, u, w);
            let f1 = RationalForm::over_mag(z.i_p, z.i_q, u, w);
            Ok([
                [
                    f0.jac[0][0] + f1.jac[0][0] + z.g_z,
                    f0.jac[0][1] + f1.jac[0][1] + z.b_z,
                ],
                [
                    f0.jac[1][0] + f1.jac[1][0] - z.b_z,
                    f0.jac[1][1] + f1.jac[1][1] + z.g_z,
                ],
            ])
        }
        // affine models: constant blocks [[g, -b], [b, g]]
        LoadModel::Big(b) => Ok([[b.g_b, -b.b_b], [b.b_b, b.g_b]]),
        LoadModel::Y(y) => Ok([[y.g, -y.b], [y.b, y.g]]),
    }
}

/// Hessians of the drawn currents with respect to (v_r, v_i): one symmetric
/// 2x2 matrix for i_r and one for i_i. Zero for the affine models.
pub(crate) fn current_hessians(
    model: &LoadModel,
    v: OperatingVoltage,
) -> Result<([[f64; 2]; 2], [[f64; 2]; 2]), LoadError> {
    let (u, w) = (v.v_r, v.v_i);
    match model {
        LoadModel::Pq(pq) => {
            guard_voltage(v)?;
            let f = RationalForm::over_mag_sq(pq.p, pq.q, u, w);
            Ok((f.hess_r, f.hess_i))
        }
        LoadModel::Zip(z) => {
            guard_voltage(v)?;
            let f0 = RationalForm::over_mag_sq(z.p0, z.q0, u, w);
            let f1 = RationalForm::over_mag(z.i_p, z.i_q, u, w);
            Ok((add2(f0.hess_r, f1.hess_r), add2(f0.hess_i, f1.hess_i)))
        }
        LoadModel::Big(_) | LoadModel::Y(_) => Ok(([[0.0; 2]; 2], [[0.0; 2]; 2])),
    }
}

fn add2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

/// Value, Jacobian, and Hessians of the current pair
///
/// ```text
/// i_r = (a u + b w) / d,   i_i = (a w - b u) / d
/// ```
///
/// for the two denominators that occur in the models: d = u^2 + w^2 (the
/// constant-power conversion) and d = sqrt(u^2 + w^2) (the constant-current
/// ZIP term).
pub(crate) struct RationalForm {
    pub i_r: f64,
    pub i_i: f64,
    /// rows (i_r, i_i), columns (u, w)
    pub jac: [[f64; 2]; 2],
    pub hess_r: [[f64; 2]; 2],
    pub hess_i: [[f64; 2]; 2],
}

impl RationalForm {
    /// d = u^2 + w^2.
    pub(crate) fn over_mag_sq(a: f64, b: f64, u: f64, w: f64) -> Self {
        let m = u * u + w * w;
        let m2 = m * m;
        let m3 = m2 * m;
        let gr = a * u + b * w;
        let gi = a * w - b * u;
        let jac = [
            [(a * m - 2.0 * u * gr) / m2, (b * m - 2.0 * w * gr) / m2],
            [(-b * m - 2.0 * u * gi) / m2, (a * m - 2.0 * w * gi) / m2],
        ];
        // for f = g/m with g linear in (u, w):
        //   f_uu = (-4 u g_u - 2 g)/m^2 + 8 u^2 g/m^3, etc.
        let hess = |g: f64, g_u: f64, g_w: f64| {
            let uu = (-4.0 * u * g_u - 2.0 * g) / m2 + 8.0 * u * u * g / m3;
            let uw = (-2.0 * g_u * w - 2.0 * g_w * u) / m2 + 8.0 * u * w * g / m3;
            let ww = (-4.0 * w * g_w - 2.0 * g) / m2 + 8.0 * w * w * g / m3;
            [[uu, uw], [uw, ww]]
        };
        RationalForm {
            i_r: gr / m,
            i_i: gi / m,
            jac,
            hess_r: hess(gr, a, b),
            hess_i: hess(gi, -b, a),
        }
    }

    /// d = sqrt(u^2 + w^2).
    pub(crate) fn over_mag(a: f64, b: f64, u: f64, w: f64) -> Self {
        let m = u * u + w * w;
        let s = m.sqrt();
        let s3 = s * m;
        let s5 = s3 * m;
        let gr = a * u + b * w;
        let gi = a * w - b * u;
        let jac = [
            [a / s - gr * u / s3, b / s - gr * w / s3],
            [-b / s - gi * u / s3, a / s - gi * w / s3],
        ];
        let hess = |g: f64, g_u: f64, g_w: f64| {
            let uu = (-2.0 * g_u * u - g) / s3 + 3.0 * g * u * u / s5;
            let uw = (-g_u * w - g_w * u) / s3 + 3.0 * g * u * w / s5;
            let ww = (-2.0 * g_w * w - g) / s3 + 3.0 * g * w * w / s5;
            [[uu, uw], [uw, ww]]
        };
        RationalForm {
            i_r: gr / s,
            i_i: gi / s,
            jac,
            hess_r: hess(gr, a, b),
            hess_i: hess(gi, -b, a),
        }
    }
}

/// Derivatives of the constant-power current pair with respect to the power
/// parameters (a, b) = (p, q), plus the mixed second derivatives against
/// (u, w). Used for generator injections inside the OPF, where p and q are
/// optimization variables.
pub(crate) struct PqParamDerivatives {
    /// d i_r / d(p, q) = (u/m, w/m)
    pub di_r: [f64; 2],
    /// d i_i / d(p, q) = (w/m, -u/m)
    pub di_i: [f64; 2],
    /// d/d(u, w) of di_r/dp
    pub d2i_r_dp: [f64; 2],
    /// d/d(u, w) of di_r/dq
    pub d2i_r_dq: [f64; 2],
    pub d2i_i_dp: [f64; 2],
    pub d2i_i_dq: [f64; 2],
}

pub(crate) fn pq_param_derivatives(u: f64, w: f64) -> PqParamDerivatives {
    let m = u * u + w * w;
    let m2 = m * m;
    let duu = (m - 2.0 * u * u) / m2; // d(u/m)/du
    let duw = -2.0 * u * w / m2; // d(u/m)/dw = d(w/m)/du
    let dww = (m - 2.0 * w * w) / m2; // d(w/m)/dw
    PqParamDerivatives {
        di_r: [u / m, w / m],
        di_i: [w / m, -u / m],
        d2i_r_dp: [duu, duw],
        d2i_r_dq: [duw, dww],
        d2i_i_dp: [duw, dww],
        d2i_i_dq: [-duu, -duw],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn v(v_r: f64, v_i: f64) -> OperatingVoltage {
        OperatingVoltage::new(v_r, v_i)
    }

    // first-segment parameters of the bundled feeder reconstruction,
    // reused across tests as known inputs
    fn zip_l2() -> LoadModel {
        LoadModel::Zip(ZipParams {
            p0: 1.1392,
            q0: -0.19632,
            i_p: 0.4767,
            i_q: 0.15877,
            g_z: -0.16338,
            b_z: -0.50372,
        })
    }

    fn zip_l3() -> LoadModel {
        LoadModel::Zip(ZipParams {
            p0: 0.98408,
            q0: 0.076938,
            i_p: 0.70154,
            i_q: 0.22081,
            g_z: 0.42845,
            b_z: -0.36053,
        })
    }

    fn big_l2() -> LoadModel {
        LoadModel::Big(BigParams {
            alpha_r: 1.5775,
            alpha_i: 0.031136,
            g_b: -0.10372,
            b_b: -0.49365,
        })
    }

    fn big_l4() -> LoadModel {
        LoadModel::Big(BigParams {
            alpha_r: 0.65358,
            alpha_i: -0.13531,
            g_b: 0.43166,
            b_b: -0.19968,
        })
    }

    #[test]
    fn pq_currents_at_unit_voltage() {
        let model = LoadModel::Pq(PqParams {
            p: 1.4499,
            q: 0.44594,
        });
        let e = eval(&model, v(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(e.i_r, 1.4499, epsilon = 1e-12);
        assert_abs_diff_eq!(e.i_i, -0.44594, epsilon = 1e-12);
        assert_eq!(e.d_p, [0.0, 0.0]);
        assert_eq!(e.d_q, [0.0, 0.0]);
    }

    #[test]
    fn zero_big_model_is_inert() {
        let model = LoadModel::Big(BigParams {
            alpha_r: 0.0,
            alpha_i: 0.0,
            g_b: 0.0,
            b_b: 0.0,
        });
        let e = eval(&model, v(0.83, -0.21)).unwrap();
        assert_eq!((e.i_r, e.i_i, e.p, e.q), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(e.d_p, [0.0, 0.0]);
        assert_eq!(e.d_q, [0.0, 0.0]);
    }

    #[test]
    fn zip_power_is_the_polynomial_sum() {
        // p0 + i_p + g_z at |V| = 1
        let e = eval(&zip_l3(), v(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(e.p, 2.11407, epsilon = 1e-9);
    }

    #[test]
    fn big_currents_and_power() {
        let e = eval(&big_l4(), v(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(e.i_r, 1.08524, epsilon = 1e-9);
        assert_abs_diff_eq!(e.i_i, -0.33499, epsilon = 1e-9);
        assert_abs_diff_eq!(e.p, 1.08524, epsilon = 1e-9);
    }

    #[test]
    fn voltage_collapse_guard() {
        let pq = LoadModel::Pq(PqParams { p: 1.0, q: 0.0 });
        assert!(matches!(
            eval(&pq, v(5e-5, 0.0)),
            Err(LoadError::VoltageCollapse { .. })
        ));
        // affine models evaluate anywhere
        let yl = LoadModel::Y(YParams { g: 1.0, b: 0.0 });
        assert!(eval(&yl, v(0.0, 0.0)).is_ok());
    }

    #[test]
    fn complex_power_identity_all_models() {
        let models = [
            LoadModel::Pq(PqParams { p: 0.7, q: -0.3 }),
            zip_l2(),
            big_l2(),
            LoadModel::Y(YParams { g: 0.5, b: -0.2 }),
        ];
        let voltages = [v(1.0, 0.0), v(0.93, 0.12), v(-0.4, 1.1), v(0.6, -0.8)];
        for model in &models {
            for &vv in &voltages {
                let e = eval(model, vv).unwrap();
                let p = vv.v_r * e.i_r + vv.v_i * e.i_i;
                let q = vv.v_i * e.i_r - vv.v_r * e.i_i;
                assert_abs_diff_eq!(p, e.p, epsilon = 1e-12);
                assert_abs_diff_eq!(q, e.q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn classification_margins_first_segment() {
        // hand evaluation: i_p + 2 g_z |V| and alpha_r + 2 g_b v_r
        let r = classify(&zip_l2(), v(1.0, 0.0));
        assert_abs_diff_eq!(r.p_margins[0], 0.14994, epsilon = 1e-9);
        assert_eq!(r.p_class, LoadClass::ImpedanceType);

        let r = classify(&big_l4(), v(1.0, 0.0));
        assert_abs_diff_eq!(r.p_margins[0], 1.5169, epsilon = 1e-9);
        assert_eq!(r.p_class, LoadClass::ImpedanceType);

        assert_abs_diff_eq!(mpt_margin(&big_l2(), v(1.0, 0.0)), 1.37006, epsilon = 1e-9);
    }

    #[test]
    fn pq_is_always_power_type() {
        let model = LoadModel::Pq(PqParams { p: -2.0, q: 5.0 });
        for &vv in &[v(1.0, 0.0), v(0.5, 0.5), v(-1.0, 0.3)] {
            let r = classify(&model, vv);
            assert_eq!(r.joint, JointClass::PowerType);
            assert!(r.p_margins.iter().chain(&r.q_margins).all(|&m| m == 0.0));
            assert_eq!(mpt_margin(&model, vv), 0.0);
        }
    }

    #[test]
    fn pure_conductance_is_impedance_type() {
        let model = LoadModel::Y(YParams { g: 0.5, b: 0.0 });
        let r = classify(&model, v(1.0, 0.0));
        assert_abs_diff_eq!(r.p_margins[0], 1.0, epsilon = 1e-15);
        assert_eq!(r.p_class, LoadClass::ImpedanceType);
    }

    #[test]
    fn equivalent_admittance_matches_powers() {
        let y = equivalent_admittance(1.0, 0.0, v(1.0, 0.0)).unwrap();
        assert_eq!((y.g, y.b), (1.0, 0.0));

        let y = equivalent_admittance(2.0868, 0.64185, v(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(y.g, 2.0868, epsilon = 1e-12);
        assert_abs_diff_eq!(y.b, -0.64185, epsilon = 1e-12);

        assert_eq!(
            equivalent_admittance(1.0, 1.0, v(0.0, 0.0)),
            Err(LoadError::ZeroVoltage)
        );
    }

    #[test]
    fn equivalent_admittance_round_trip() {
        for &(p, q, vr, vi) in &[
            (1.3, -0.4, 1.02, -0.05),
            (0.2, 0.9, 0.7, 0.7),
            (-0.5, 0.1, 1.1, 0.2),
        ] {
            let vv = v(vr, vi);
            let y = equivalent_admittance(p, q, vv).unwrap();
            let e = eval(&LoadModel::Y(y), vv).unwrap();
            assert_abs_diff_eq!(e.p, p, epsilon = 1e-12);
            assert_abs_diff_eq!(e.q, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn zip_degenerations() {
        let vv = v(0.91, 0.33);
        // constant-power-only ZIP equals PQ
        let z = LoadModel::Zip(ZipParams {
            p0: 0.8,
            q0: 0.25,
            i_p: 0.0,
            i_q: 0.0,
            g_z: 0.0,
            b_z: 0.0,
        });
        let pq = LoadModel::Pq(PqParams { p: 0.8, q: 0.25 });
        let (a, b) = (eval(&z, vv).unwrap(), eval(&pq, vv).unwrap());
        assert_abs_diff_eq!(a.i_r, b.i_r, epsilon = 1e-14);
        assert_abs_diff_eq!(a.i_i, b.i_i, epsilon = 1e-14);
        assert_abs_diff_eq!(a.p, b.p, epsilon = 1e-14);

        // impedance-only ZIP equals Y(g_z, -b_z)
        let z = LoadModel::Zip(ZipParams {
            p0: 0.0,
            q0: 0.0,
            i_p: 0.0,
            i_q: 0.0,
            g_z: 0.6,
            b_z: -0.2,
        });
        let yl = LoadModel::Y(YParams { g: 0.6, b: 0.2 });
        let (a, b) = (eval(&z, vv).unwrap(), eval(&yl, vv).unwrap());
        assert_abs_diff_eq!(a.i_r, b.i_r, epsilon = 1e-14);
        assert_abs_diff_eq!(a.i_i, b.i_i, epsilon = 1e-14);
        assert_abs_diff_eq!(a.q, b.q, epsilon = 1e-14);

        // BIG without sensitivities is a constant-current source
        let bg = LoadModel::Big(BigParams {
            alpha_r: 0.4,
            alpha_i: -0.1,
            g_b: 0.0,
            b_b: 0.0,
        });
        let e = eval(&bg, vv).unwrap();
        assert_eq!((e.i_r, e.i_i), (0.4, -0.1));
    }

    #[test]
    fn power_gradients_match_finite_differences() {
        let models = [
            LoadModel::Pq(PqParams { p: 1.1, q: -0.4 }),
            zip_l2(),
            zip_l3(),
            big_l2(),
            LoadModel::Y(YParams { g: 0.8, b: 0.3 }),
        ];
        let h = 1e-6;
        for model in &models {
            for &(vr, vi) in &[(1.0, 0.0), (0.85, 0.35), (-0.6, 1.05), (0.5, -0.5)] {
                let e = eval(model, v(vr, vi)).unwrap();
                let pr = |dv_r: f64, dv_i: f64| eval(model, v(vr + dv_r, vi + dv_i)).unwrap();
                let dp_dr = (pr(h, 0.0).p - pr(-h, 0.0).p) / (2.0 * h);
                let dp_di = (pr(0.0, h).p - pr(0.0, -h).p) / (2.0 * h);
                let dq_dr = (pr(h, 0.0).q - pr(-h, 0.0).q) / (2.0 * h);
                let dq_di = (pr(0.0, h).q - pr(0.0, -h).q) / (2.0 * h);
                assert_relative_eq!(e.d_p[0], dp_dr, epsilon = 1e-7, max_relative = 1e-5);
                assert_relative_eq!(e.d_p[1], dp_di, epsilon = 1e-7, max_relative = 1e-5);
                assert_relative_eq!(e.d_q[0], dq_dr, epsilon = 1e-7, max_relative = 1e-5);
                assert_relative_eq!(e.d_q[1], dq_di, epsilon = 1e-7, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn current_jacobian_matches_finite_differences() {
        let models = [
            LoadModel::Pq(PqParams { p: 1.1, q: -0.4 }),
            zip_l3(),
            big_l4(),
            LoadModel::Y(YParams { g: 0.8, b: 0.3 }),
        ];
        let h = 1e-6;
        for model in &models {
            for &(vr, vi) in &[(1.0, 0.0), (0.85, 0.35), (0.7, -0.6)] {
                let jac = current_jacobian(model, v(vr, vi)).unwrap();
                let cur = |dv_r: f64, dv_i: f64| {
                    let e = eval(model, v(vr + dv_r, vi + dv_i)).unwrap();
                    (e.i_r, e.i_i)
                };
                let (irp, iip) = cur(h, 0.0);
                let (irm, iim) = cur(-h, 0.0);
                assert_relative_eq!(
                    jac[0][0],
                    (irp - irm) / (2.0 * h),
                    epsilon = 1e-7,
                    max_relative = 1e-5
                );
                assert_relative_eq!(
                    jac[1][0],
                    (iip - iim) / (2.0 * h),
                    epsilon = 1e-7,
                    max_relative = 1e-5
                );
                let (irp, iip) = cur(0.0, h);
                let (irm, iim) = cur(0.0, -h);
                assert_relative_eq!(
                    jac[0][1],
                    (irp - irm) / (2.0 * h),
                    epsilon = 1e-7,
                    max_relative = 1e-5
                );
                assert_relative_eq!(
                    jac[1][1],
                    (iip - iim) / (2.0 * h),
                    epsilon = 1e-7,
                    max_relative = 1e-5
                );
            }
        }
    }

    #[test]
    fn current_hessians_match_finite_differences() {
        let models = [LoadModel::Pq(PqParams { p: 1.1, q: -0.4 }), zip_l2()];
        let h = 1e-5;
        for model in &models {
            for &(vr, vi) in &[(1.0, 0.0), (0.9, 0.3)] {
                let (hr, hi) = current_hessians(model, v(vr, vi)).unwrap();
                let jac = |dv_r: f64, dv_i: f64| {
                    current_jacobian(model, v(vr + dv_r, vi + dv_i)).unwrap()
                };
                for (col, (dr, di)) in [(0, (h, 0.0)), (1, (0.0, h))] {
                    let jp = jac(dr, di);
                    let jm = jac(-dr, -di);
                    assert_relative_eq!(
                        hr[0][col],
                        (jp[0][0] - jm[0][0]) / (2.0 * h),
                        epsilon = 1e-5,
                        max_relative = 1e-4
                    );
                    assert_relative_eq!(
                        hr[1][col],
                        (jp[0][1] - jm[0][1]) / (2.0 * h),
                        epsilon = 1e-5,
                        max_relative = 1e-4
                    );
                    assert_relative_eq!(
                        hi[0][col],
                        (jp[1][0] - jm[1][0]) / (2.0 * h),
                        epsilon = 1e-5,
                        max_relative = 1e-4
                    );
                    assert_relative_eq!(
                        hi[1][col],
                        (jp[1][1] - jm[1][1]) / (2.0 * h),
                        epsilon = 1e-5,
                        max_relative = 1e-4
                    );
                }
            }
        }
    }

    #[test]
    fn mpt_margin_sign_agrees_with_classification() {
        let models = [
            LoadModel::Pq(PqParams { p: 1.0, q: 0.2 }),
            zip_l2(),
            zip_l3(),
            big_l2(),
            big_l4(),
            LoadModel::Y(YParams { g: -0.4, b: 0.1 }),
            LoadModel::Zip(ZipParams {
                p0: 1.0,
                q0: 0.1,
                i_p: -0.5,
                i_q: -0.1,
                g_z: 0.1,
                b_z: 0.02,
            }),
        ];
        for model in &models {
            for &(vr, vi) in &[(1.0, 0.0), (1.04, -0.1), (0.8, 0.25)] {
                let vv = v(vr, vi);
                let margin = mpt_margin(model, vv);
                let report = classify(model, vv);
                assert_eq!(margin <= 0.0, report.p_class == LoadClass::PowerType);
            }
        }
    }

    #[test]
    fn load_model_json_round_trip() {
        let model = zip_l2();
        let text = serde_json::to_string(&model).unwrap();
        assert!(text.contains("\"model\":\"zip\""));
        assert!(text.contains("\"ip\""));
        let back: LoadModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }
}
