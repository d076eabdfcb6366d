//! Load-model parameter fitting from voltage/current measurement series,
//! with optimal time segmentation.
//!
//! PQ and ZIP parameters are fitted in the power domain (their governing
//! equations are polynomials in |V|), BIG parameters in the current domain
//! (affine in the rectangular voltage). Characterization error is always
//! reported in the current domain so the model kinds are comparable:
//!
//! ```text
//! rms = sqrt(mean |I_meas - I_model(V)|^2) / mean |I_meas|
//! ```
//!
//! [`segment_fit`] finds the contiguous K-segmentation minimizing the total
//! squared current residual by exact dynamic programming over prefix costs,
//! breaking ties toward the leftmost boundary set.

use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::loads::{self, BigParams, LoadModel, ModelKind, OperatingVoltage, PqParams, ZipParams};
use crate::network::BusId;
use nalgebra::{DMatrix, DVector};

/// One timestamped per-unit sample: bus voltage and drawn current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementSample {
    pub t: f64,
    pub v_r: f64,
    pub v_i: f64,
    pub i_r: f64,
    pub i_i: f64,
}

impl MeasurementSample {
    pub fn voltage(&self) -> OperatingVoltage {
        OperatingVoltage::new(self.v_r, self.v_i)
    }

    /// Absorbed (p, q) implied by the sample.
    pub fn powers(&self) -> (f64, f64) {
        (
            self.v_r * self.i_r + self.v_i * self.i_i,
            self.v_i * self.i_r - self.v_r * self.i_i,
        )
    }
}

/// A measurement series at one bus, timestamps strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementSeries {
    pub bus: BusId,
    pub samples: Vec<MeasurementSample>,
}

/// Inner split indices dividing a series into K contiguous segments
/// (`boundaries.len() == K - 1`; segment k covers `[b_{k-1}, b_k)`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segmentation {
    pub boundaries: Vec<usize>,
}

impl Segmentation {
    /// Half-open sample ranges of all segments for a series of length `n`.
    pub fn ranges(&self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.boundaries.len() + 1);
        let mut start = 0;
        for &b in &self.boundaries {
            out.push((start, b));
            start = b;
        }
        out.push((start, n));
        out
    }
}

/// Fitted parameters and normalized RMS current error for one segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentFit {
    pub start: usize,
    pub end: usize,
    pub model: LoadModel,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub segments: Vec<SegmentFit>,
    /// Average of the per-segment normalized RMS errors.
    pub total_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("empty measurement series")]
    EmptySeries,
    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),
    #[error("series of {len} samples cannot hold {k} segments of >= {min_len}")]
    TooShort {
        len: usize,
        k: usize,
        min_len: usize,
    },
    #[error("mean measured current magnitude is zero")]
    ZeroCurrentNormalization,
    #[error(transparent)]
    Load(#[from] loads::LoadError),
}

/// Constant-power fit: the mean of the per-sample absorbed powers.
pub fn fit_pq(samples: &[MeasurementSample]) -> Result<PqParams, FitError> {
    if samples.is_empty() {
        return Err(FitError::EmptySeries);
    }
    let n = samples.len() as f64;
    let (sum_p, sum_q) = samples
        .iter()
        .map(MeasurementSample::powers)
        .fold((0.0, 0.0), |acc, (p, q)| (acc.0 + p, acc.1 + q));
    Ok(PqParams {
        p: sum_p / n,
        q: sum_q / n,
    })
}

fn distinct_count(values: impl Iterator<Item = f64>, tol: f64) -> usize {
    let mut sorted: Vec<f64> = values.collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut count = 0;
    let mut last = f64::NEG_INFINITY;
    for v in sorted {
        if v - last > tol {
            count += 1;
            last = v;
        }
    }
    count
}

/// ZIP fit: two independent least squares of the absorbed powers against
/// the basis (1, |V|, |V|^2). Requires three distinct voltage magnitudes.
pub fn fit_zip(samples: &[MeasurementSample]) -> Result<ZipParams, FitError> {
    if samples.is_empty() {
        return Err(FitError::EmptySeries);
    }
    if distinct_count(samples.iter().map(|s| s.voltage().mag()), 1e-9) < 3 {
        return Err(FitError::RankDeficient(
            "need >= 3 distinct voltage magnitudes for a ZIP fit".into(),
        ));
    }
    Ok(fit_zip_unchecked(samples))
}

fn fit_zip_unchecked(samples: &[MeasurementSample]) -> ZipParams {
    let n = samples.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut bp = DVector::zeros(n);
    let mut bq = DVector::zeros(n);
    for (k, s) in samples.iter().enumerate() {
        let mag = s.voltage().mag();
        a[(k, 0)] = 1.0;
        a[(k, 1)] = mag;
        a[(k, 2)] = mag * mag;
        let (p, q) = s.powers();
        bp[k] = p;
        bq[k] = q;
    }
    let tp = linalg::lstsq(&a, &bp);
    let tq = linalg::lstsq(&a, &bq);
    ZipParams {
        p0: tp[0],
        i_p: tp[1],
        g_z: tp[2],
        q0: tq[0],
        i_q: tq[1],
        b_z: tq[2],
    }
}

/// BIG fit: one stacked least squares over the real and imaginary current
/// equations in (alpha_r, alpha_i, g_b, b_b). Requires two distinct voltage
/// phasors.
pub fn fit_big(samples: &[MeasurementSample]) -> Result<BigParams, FitError> {
    if samples.is_empty() {
        return Err(FitError::EmptySeries);
    }
    let distinct_phasors = {
        let mut seen: Vec<(f64, f64)> = Vec::new();
        for s in samples {
            if !seen
                .iter()
                .any(|&(vr, vi)| (vr - s.v_r).abs() <= 1e-9 && (vi - s.v_i).abs() <= 1e-9)
            {
                seen.push((s.v_r, s.v_i));
            }
        }
        seen.len()
    };
    if distinct_phasors < 2 {
        return Err(FitError::RankDeficient(
            "need >= 2 distinct voltage phasors for a BIG fit".into(),
        ));
    }
    Ok(fit_big_unchecked(samples))
}

fn fit_big_unchecked(samples: &[MeasurementSample]) -> BigParams {
    let n = samples.len();
    let mut a = DMatrix::zeros(2 * n, 4);
    let mut b = DVector::zeros(2 * n);
    for (k, s) in samples.iter().enumerate() {
        // i_r = alpha_r + g_b v_r - b_b v_i
        a[(2 * k, 0)] = 1.0;
        a[(2 * k, 2)] = s.v_r;
        a[(2 * k, 3)] = -s.v_i;
        b[2 * k] = s.i_r;
        // i_i = alpha_i + g_b v_i + b_b v_r
        a[(2 * k + 1, 1)] = 1.0;
        a[(2 * k + 1, 2)] = s.v_i;
        a[(2 * k + 1, 3)] = s.v_r;
        b[2 * k + 1] = s.i_i;
    }
    let t = linalg::lstsq(&a, &b);
    BigParams {
        alpha_r: t[0],
        alpha_i: t[1],
        g_b: t[2],
        b_b: t[3],
    }
}

/// Normalized RMS current error of `model` against the samples:
/// sqrt(mean |I_meas - I_model|^2) / mean |I_meas|.
pub fn rms_error(samples: &[MeasurementSample], model: &LoadModel) -> Result<f64, FitError> {
    if samples.is_empty() {
        return Err(FitError::EmptySeries);
    }
    let mut sq_sum = 0.0;
    let mut mag_sum = 0.0;
    for s in samples {
        let e = loads::eval(model, s.voltage())?;
        let dr = s.i_r - e.i_r;
        let di = s.i_i - e.i_i;
        sq_sum += dr * dr + di * di;
        mag_sum += (s.i_r * s.i_r + s.i_i * s.i_i).sqrt();
    }
    let n = samples.len() as f64;
    let norm = mag_sum / n;
    if norm == 0.0 {
        return Err(FitError::ZeroCurrentNormalization);
    }
    Ok((sq_sum / n).sqrt() / norm)
}

/// Squared current residual of `model` over the samples (unnormalized).
fn sse(samples: &[MeasurementSample], model: &LoadModel) -> Result<f64, FitError> {
    let mut total = 0.0;
    for s in samples {
        let e = loads::eval(model, s.voltage())?;
        let dr = s.i_r - e.i_r;
        let di = s.i_i - e.i_i;
        total += dr * dr + di * di;
    }
    Ok(total)
}

/// Fit one segment in the kind's own domain. Rank-deficient windows fall
/// back to the minimum-norm least-squares solution so segmentation costs
/// are always defined; the standalone `fit_*` entry points keep their
/// strict rank errors.
fn fit_segment(samples: &[MeasurementSample], kind: ModelKind) -> Result<LoadModel, FitError> {
    if samples.is_empty() {
        return Err(FitError::EmptySeries);
    }
    Ok(match kind {
        ModelKind::Pq => LoadModel::Pq(fit_pq(samples)?),
        ModelKind::Zip => LoadModel::Zip(fit_zip_unchecked(samples)),
        ModelKind::Big => LoadModel::Big(fit_big_unchecked(samples)),
        ModelKind::Y => {
            // admittance matching the mean absorbed powers at the mean
            // squared voltage; present so sweeps can request the kind
            let pq = fit_pq(samples)?;
            let vm_sq =
                samples.iter().map(|s| s.voltage().mag_sq()).sum::<f64>() / samples.len() as f64;
            LoadModel::Y(crate::loads::YParams {
                g: pq.p / vm_sq,
                b: -pq.q / vm_sq,
            })
        }
    })
}

/// Optimal K-segmentation of `series` for one model kind.
///
/// Boundaries minimize the total squared current residual over all
/// contiguous K-segmentations with segments of at least `min_len` samples
/// (exact dynamic program); parameters are refit per returned segment. Ties
/// resolve to the leftmost boundary set.
pub fn segment_fit(
    series: &MeasurementSeries,
    k: usize,
    kind: ModelKind,
    min_len: usize,
) -> Result<(Segmentation, FitResult), FitError> {
    let n = series.samples.len();
    let min_len = min_len.max(1);
    if k == 0 || k * min_len > n {
        return Err(FitError::TooShort { len: n, k, min_len });
    }
    let samples = &series.samples;

    let mut window_cost = vec![vec![f64::NAN; n + 1]; n];
    for i in 0..n {
        for j in (i + min_len)..=n {
            let window = &samples[i..j];
            window_cost[i][j] = sse(window, &fit_segment(window, kind)?)?;
        }
    }

    // suffix DP: best[j][c] = minimal cost of samples[j..] in c segments;
    // reconstructing forward then yields the leftmost optimum
    let mut best = vec![vec![f64::INFINITY; k + 1]; n + 1];
    best[n][0] = 0.0;
    for c in 1..=k {
        // a segment starting at j must leave room for c-1 more segments
        for j in (0..=n.saturating_sub(c * min_len)).rev() {
            let mut b = f64::INFINITY;
            let last_end = n - (c - 1) * min_len;
            for t in (j + min_len)..=last_end {
                let tail = best[t][c - 1];
                if tail.is_finite() {
                    let v = window_cost[j][t] + tail;
                    if v < b {
                        b = v;
                    }
                }
            }
            best[j][c] = b;
        }
    }

    // forward reconstruction: at each step take the smallest split that
    // attains the optimal suffix cost
    let mut boundaries = Vec::with_capacity(k - 1);
    let mut pos = 0;
    for c in (2..=k).rev() {
        let target = best[pos][c];
        let last_end = n - (c - 1) * min_len;
        let mut chosen = None;
        for t in (pos + min_len)..=last_end {
            if window_cost[pos][t] + best[t][c - 1] <= target {
                chosen = Some(t);
                break;
            }
        }
        let t = chosen.expect("dp reconstruction: no split attains the optimum");
        boundaries.push(t);
        pos = t;
    }

    let segmentation = Segmentation { boundaries };
    let mut segments = Vec::with_capacity(k);
    let mut rms_sum = 0.0;
    for (start, end) in segmentation.ranges(n) {
        let window = &samples[start..end];
        let model = fit_segment(window, kind)?;
        let rms = rms_error(window, &model)?;
        rms_sum += rms;
        segments.push(SegmentFit {
            start,
            end,
            model,
            rms,
        });
    }
    let total_rms = rms_sum / k as f64;
    Ok((
        segmentation,
        FitResult {
            segments,
            total_rms,
        },
    ))
}
