//! File formats: JSON case files, JSON segmented cases, and measurement
//! CSV.
//!
//! Case files carry top-level keys `buses`, `branches`, `generators`,
//! `loads`; load entries hold a `model` tag (pq|zip|big|y) plus a flat
//! `params` object. Measurement files are CSV with the exact header
//! `t,v_r,v_i,i_r,i_i`. All numbers are per unit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::fit::{MeasurementSample, MeasurementSeries};
use crate::harness::SegmentedCase;
use crate::loads::{LoadModel, ModelKind};
use crate::network::{validate_case, BusId, CaseError, GridCase, ValidatedCase};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
    #[error(transparent)]
    Validation(#[from] CaseError),
    #[error("{0}")]
    Schema(String),
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

/// Parse and validate a JSON case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<ValidatedCase, IoError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let case: GridCase = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(validate_case(case)?)
}

/// Parse a measurement CSV. The bus id is taken from trailing digits of
/// the file stem unless `bus` is given.
pub fn load_measurements(
    path: impl AsRef<Path>,
    bus: Option<BusId>,
) -> Result<MeasurementSeries, IoError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let bus = bus.unwrap_or_else(|| bus_from_stem(path));
    parse_measurements(&text, bus).map_err(|detail| IoError::Parse {
        path: path.display().to_string(),
        detail,
    })
}

fn bus_from_stem(path: &Path) -> BusId {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().unwrap_or(0)
}

const MEASUREMENT_HEADER: [&str; 5] = ["t", "v_r", "v_i", "i_r", "i_i"];

pub fn parse_measurements(text: &str, bus: BusId) -> Result<MeasurementSeries, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.len() != MEASUREMENT_HEADER.len() {
        return Err(format!(
            "expected header `{}`, found {} columns",
            MEASUREMENT_HEADER.join(","),
            headers.len()
        ));
    }
    for (got, want) in headers.iter().zip(MEASUREMENT_HEADER) {
        if got != want {
            return Err(format!("unexpected column `{got}` (expected `{want}`)"));
        }
    }
    let mut samples = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let line = row + 2; // 1-based, after the header
        let field = |idx: usize| -> Result<f64, String> {
            record
                .get(idx)
                .ok_or_else(|| {
                    format!("line {line}: missing column `{}`", MEASUREMENT_HEADER[idx])
                })?
                .parse::<f64>()
                .map_err(|_| {
                    format!(
                        "line {line}: column `{}` is not a number: `{}`",
                        MEASUREMENT_HEADER[idx],
                        record.get(idx).unwrap_or("")
                    )
                })
        };
        let sample = MeasurementSample {
            t: field(0)?,
            v_r: field(1)?,
            v_i: field(2)?,
            i_r: field(3)?,
            i_i: field(4)?,
        };
        if sample.t <= last_t {
            return Err(format!(
                "line {line}: timestamps must be strictly increasing"
            ));
        }
        if sample.voltage().mag() == 0.0 {
            return Err(format!("line {line}: zero voltage magnitude"));
        }
        last_t = sample.t;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err("no samples".into());
    }
    Ok(MeasurementSeries { bus, samples })
}

/// Serialize a series back to the canonical CSV layout.
pub fn measurements_to_csv(series: &MeasurementSeries) -> String {
    let mut out = String::from("t,v_r,v_i,i_r,i_i\n");
    for s in &series.samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.t, s.v_r, s.v_i, s.i_r, s.i_i
        ));
    }
    out
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentedCaseJson {
    base: GridCase,
    families: BTreeMap<ModelKind, Vec<BTreeMap<BusId, LoadModel>>>,
}

/// Parse and validate a segmented case: a base network plus per-segment
/// load parameter families keyed by model kind.
pub fn load_segmented(path: impl AsRef<Path>) -> Result<SegmentedCase, IoError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    parse_segmented(&text).map_err(|e| match e {
        IoError::Parse { detail, .. } => IoError::Parse {
            path: path.display().to_string(),
            detail,
        },
        other => other,
    })
}

pub fn parse_segmented(text: &str) -> Result<SegmentedCase, IoError> {
    let raw: SegmentedCaseJson = serde_json::from_str(text).map_err(|e| IoError::Parse {
        path: String::new(),
        detail: e.to_string(),
    })?;
    let base = validate_case(raw.base)?;
    SegmentedCase::new(base, raw.families).map_err(IoError::Schema)
}

pub fn segmented_to_json(seg: &SegmentedCase) -> String {
    #[derive(serde::Serialize)]
    struct Out<'a> {
        base: &'a GridCase,
        families: &'a BTreeMap<ModelKind, Vec<BTreeMap<BusId, LoadModel>>>,
    }
    serde_json::to_string_pretty(&Out {
        base: seg.base.case(),
        families: seg.families(),
    })
    .expect("segmented case serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loads::PqParams;

    const MINIMAL_CASE: &str = r#"{
        "buses": [
            {"id": 1, "kind": "slack", "v_min": 0.94, "v_max": 1.06},
            {"id": 2, "kind": "load"}
        ],
        "branches": [{"from": 1, "to": 2, "r": 0.01, "x": 0.05, "b_sh": 0.0}],
        "generators": [{"bus": 1, "p_min": 0.0, "p_max": 5.0, "q_min": -5.0, "q_max": 5.0}],
        "loads": [{"bus": 2, "model": "pq", "params": {"p": 1.4499, "q": 0.44594}}]
    }"#;

    #[test]
    fn minimal_case_parses() {
        let case: GridCase = serde_json::from_str(MINIMAL_CASE).unwrap();
        let v = validate_case(case).unwrap();
        assert_eq!(v.n_buses(), 2);
        // omitted bounds and cost take the documented defaults
        assert_eq!(v.buses()[1].v_min, 0.94);
        assert_eq!(v.buses()[1].v_max, 1.06);
        assert_eq!(v.generators()[0].cost.c1(), 1.0);
        assert_eq!(
            v.loads()[0].model,
            LoadModel::Pq(PqParams {
                p: 1.4499,
                q: 0.44594
            })
        );
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let text = MINIMAL_CASE.replace("\"r\": 0.01", "\"rr\": 0.01");
        let err = serde_json::from_str::<GridCase>(&text)
            .unwrap_err()
            .to_string();
        assert!(err.contains("rr"), "{err}");
    }

    #[test]
    fn measurement_header_typo_names_the_column() {
        let text = "t,vr,v_i,i_r,i_i\n0,1,0,1,0\n";
        let err = parse_measurements(text, 1).unwrap_err();
        assert!(err.contains("vr"), "{err}");
        assert!(err.contains("v_r"), "{err}");
    }

    #[test]
    fn measurements_round_trip() {
        let text = "t,v_r,v_i,i_r,i_i\n0,1.0,0.0,1.5,-0.4\n900,0.99,0.01,1.52,-0.41\n";
        let series = parse_measurements(text, 4).unwrap();
        assert_eq!(series.bus, 4);
        assert_eq!(series.samples.len(), 2);
        let back = measurements_to_csv(&series);
        let again = parse_measurements(&back, 4).unwrap();
        assert_eq!(series, again);
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let text = "t,v_r,v_i,i_r,i_i\n0,1,0,1,0\n0,1,0,1,0\n";
        let err = parse_measurements(text, 1).unwrap_err();
        assert!(err.contains("strictly increasing"), "{err}");
    }

    #[test]
    fn bus_id_from_file_stem() {
        assert_eq!(bus_from_stem(Path::new("/data/bus7.csv")), 7);
        assert_eq!(bus_from_stem(Path::new("feeder_12.csv")), 12);
        assert_eq!(bus_from_stem(Path::new("two_day.csv")), 0);
    }
}
