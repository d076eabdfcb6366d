//! Command-line front end: power flow, OPF, fitting, classification, and
//! the cross-model comparison experiments.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use loadflow::fit;
use loadflow::harness::{experiment_gap, experiment_sweep, FreezeMode, GapOptions, ReportFormat};
use loadflow::io;
use loadflow::loads::{self, ModelKind, OperatingVoltage};
use loadflow::opf::{self, OpfOptions};
use loadflow::pf::{self, PfOptions};

#[derive(Parser)]
#[command(
    name = "loadflow",
    version,
    about = "Steady-state grid analysis under interchangeable aggregated load models"
)]
struct Cli {
    /// Output format for results and reports.
    #[arg(long, global = true, value_enum, default_value_t = Output::Json)]
    output: Output,

    /// Write the result to a file instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum FreezeArg {
    Both,
    VoltagesOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the AC power flow of a case at flat dispatch.
    Pf {
        #[arg(long)]
        case: PathBuf,
        /// Residual infinity-norm threshold.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 30)]
        max_iter: usize,
    },
    /// Solve the AC optimal power flow of a case.
    Opf {
        #[arg(long)]
        case: PathBuf,
        /// KKT infinity-norm threshold.
        #[arg(long, default_value_t = 1e-6)]
        kkt_tol: f64,
        #[arg(long, default_value_t = 400)]
        max_iter: usize,
    },
    /// Fit load-model parameters to a measurement series, optionally with
    /// optimal segmentation.
    Fit {
        #[arg(long)]
        measurements: PathBuf,
        /// pq, zip, or big.
        #[arg(long)]
        model: String,
        /// Number of contiguous segments.
        #[arg(long, default_value_t = 1)]
        segments: usize,
        /// Minimum samples per segment.
        #[arg(long, default_value_t = 4)]
        min_len: usize,
        /// Bus id override (default: digits in the file name).
        #[arg(long)]
        bus: Option<usize>,
    },
    /// Classify every load of a case as power-type or impedance-type.
    Classify {
        #[arg(long)]
        case: PathBuf,
        /// Evaluation voltage as "vr,vi" (default 1,0).
        #[arg(long, value_name = "VR,VI")]
        at_voltage: Option<String>,
    },
    /// One OPF per (segment, model kind) over a segmented case.
    Sweep {
        #[arg(long)]
        segmented: PathBuf,
        /// Comma-separated model kinds, e.g. pq,zip,big.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<String>,
        #[arg(long, default_value_t = 1e-6)]
        kkt_tol: f64,
    },
    /// Impose one model's OPF setpoints on a power flow under another
    /// model and report the additional generation per segment.
    Gap {
        #[arg(long)]
        segmented: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, value_enum, default_value_t = FreezeArg::Both)]
        freeze: FreezeArg,
        #[arg(long, default_value_t = 1e-6)]
        kkt_tol: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(clean) => {
            if !clean {
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn parse_kind(s: &str) -> Result<ModelKind> {
    s.parse::<ModelKind>().map_err(|e| anyhow::anyhow!(e))
}

/// Returns whether the run was error-free (exit code 0).
fn run(cli: Cli) -> Result<bool> {
    let mut clean = true;
    let bytes = match &cli.command {
        Command::Pf {
            case,
            tol,
            max_iter,
        } => {
            let case = io::load_case(case)?;
            let options = PfOptions {
                tol: *tol,
                max_iter: *max_iter,
                ..Default::default()
            };
            let sol = pf::solve_pf(&case, &options)?;
            match cli.output {
                Output::Json => to_json(&sol)?,
                Output::Csv => {
                    let mut out = String::from("bus,v_r,v_i,v_mag\n");
                    for (i, bus) in case.buses().iter().enumerate() {
                        let v = sol.v[i];
                        out.push_str(&format!("{},{},{},{}\n", bus.id, v.v_r, v.v_i, v.mag()));
                    }
                    out.into_bytes()
                }
            }
        }
        Command::Opf {
            case,
            kkt_tol,
            max_iter,
        } => {
            let case = io::load_case(case)?;
            let options = OpfOptions {
                kkt_tol: *kkt_tol,
                max_iter: *max_iter,
                ..Default::default()
            };
            let sol = opf::solve_opf(&case, &options)?;
            match cli.output {
                Output::Json => to_json(&sol)?,
                Output::Csv => {
                    // the voltage table; dispatch and multipliers live in
                    // the json form
                    let mut out = String::from("bus,v_r,v_i,v_mag,bind\n");
                    for (i, bus) in case.buses().iter().enumerate() {
                        let v = sol.x.v[i];
                        out.push_str(&format!(
                            "{},{},{},{},{}\n",
                            bus.id,
                            v.v_r,
                            v.v_i,
                            v.mag(),
                            format!("{:?}", sol.bound_activity.v_mag[i]).to_lowercase()
                        ));
                    }
                    out.into_bytes()
                }
            }
        }
        Command::Fit {
            measurements,
            model,
            segments,
            min_len,
            bus,
        } => {
            let kind = parse_kind(model)?;
            if kind == ModelKind::Y {
                bail!("fit supports pq, zip, and big models");
            }
            let series = io::load_measurements(measurements, *bus)?;
            let (segmentation, result) = fit::segment_fit(&series, *segments, kind, *min_len)?;
            match cli.output {
                Output::Json => {
                    #[derive(serde::Serialize)]
                    struct FitOut<'a> {
                        bus: usize,
                        segmentation: &'a fit::Segmentation,
                        result: &'a fit::FitResult,
                    }
                    to_json(&FitOut {
                        bus: series.bus,
                        segmentation: &segmentation,
                        result: &result,
                    })?
                }
                Output::Csv => {
                    let mut out = String::from("segment,start,end,model,params,rms\n");
                    for (k, seg) in result.segments.iter().enumerate() {
                        out.push_str(&format!(
                            "{},{},{},{},{},{}\n",
                            k,
                            seg.start,
                            seg.end,
                            seg.model.kind(),
                            params_kv(&seg.model),
                            seg.rms
                        ));
                    }
                    out.into_bytes()
                }
            }
        }
        Command::Classify { case, at_voltage } => {
            let case = io::load_case(case)?;
            let v = match at_voltage {
                Some(text) => parse_voltage(text)?,
                None => OperatingVoltage::nominal(),
            };
            #[derive(serde::Serialize)]
            struct Row {
                bus: usize,
                model: loadflow::LoadModel,
                mpt_margin: f64,
                report: loads::ClassificationReport,
            }
            let rows: Vec<Row> = case
                .loads()
                .iter()
                .map(|l| Row {
                    bus: l.bus,
                    model: l.model,
                    mpt_margin: loads::mpt_margin(&l.model, v),
                    report: loads::classify(&l.model, v),
                })
                .collect();
            match cli.output {
                Output::Json => to_json(&rows)?,
                Output::Csv => {
                    let mut out = String::from("bus,model,p_class,q_class,joint,mpt_margin\n");
                    for row in &rows {
                        out.push_str(&format!(
                            "{},{},{:?},{:?},{:?},{}\n",
                            row.bus,
                            row.model.kind(),
                            row.report.p_class,
                            row.report.q_class,
                            row.report.joint,
                            row.mpt_margin
                        ));
                    }
                    out.into_bytes()
                }
            }
        }
        Command::Sweep {
            segmented,
            kinds,
            kkt_tol,
        } => {
            let seg_case = io::load_segmented(segmented)?;
            let kinds = kinds
                .iter()
                .map(|k| parse_kind(k))
                .collect::<Result<Vec<_>>>()?;
            if kinds.is_empty() {
                bail!("--kinds must name at least one model kind");
            }
            let options = OpfOptions {
                kkt_tol: *kkt_tol,
                ..Default::default()
            };
            let report = experiment_sweep(&seg_case, &kinds, &options);
            clean = !report.has_errors();
            report.emit(report_format(cli.output))
        }
        Command::Gap {
            segmented,
            from,
            to,
            freeze,
            kkt_tol,
        } => {
            let seg_case = io::load_segmented(segmented)?;
            let options = GapOptions {
                opf: OpfOptions {
                    kkt_tol: *kkt_tol,
                    ..Default::default()
                },
                pf: PfOptions::default(),
                freeze: match freeze {
                    FreezeArg::Both => FreezeMode::Both,
                    FreezeArg::VoltagesOnly => FreezeMode::VoltagesOnly,
                },
            };
            let report = experiment_gap(&seg_case, parse_kind(from)?, parse_kind(to)?, &options);
            clean = !report.has_errors();
            report.emit(report_format(cli.output))
        }
    };

    match &cli.out {
        Some(path) => {
            std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        None => {
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(clean)
}

fn report_format(output: Output) -> ReportFormat {
    match output {
        Output::Json => ReportFormat::Json,
        Output::Csv => ReportFormat::Csv,
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn parse_voltage(text: &str) -> Result<OperatingVoltage> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("--at-voltage expects \"vr,vi\", got `{text}`");
    }
    let v_r: f64 = parts[0]
        .parse()
        .with_context(|| format!("bad v_r `{}`", parts[0]))?;
    let v_i: f64 = parts[1]
        .parse()
        .with_context(|| format!("bad v_i `{}`", parts[1]))?;
    Ok(OperatingVoltage::new(v_r, v_i))
}

fn params_kv(model: &loadflow::LoadModel) -> String {
    use loadflow::LoadModel::*;
    match model {
        Pq(p) => format!("p={};q={}", p.p, p.q),
        Zip(z) => {
            format!(
                "p0={};q0={};ip={};iq={};g={};b={}",
                z.p0, z.q0, z.i_p, z.i_q, z.g_z, z.b_z
            )
        }
        Big(b) => {
            format!(
                "alpha_r={};alpha_i={};g={};b={}",
                b.alpha_r, b.alpha_i, b.g_b, b.b_b
            )
        }
        Y(y) => format!("g={};b={}", y.g, y.b),
    }
}
