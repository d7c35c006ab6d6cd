use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use roagp::assessment::{prepare_system, run_assessment_streaming, AssessmentConfig, ResumePoint};
use roagp::dae::microgrid::Disturbance;
use roagp::export::{
    read_snapshot, write_log_header, write_log_rows, write_roa_csv, write_snapshot,
    write_trajectory_csv, OutputHeader,
};
use roagp::model::ModelSpec;
use roagp::Error;
use sha2::{Digest, Sha256};

use crate::{AssessArgs, SimulateArgs, ValidateArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Code {
    Runtime = 1,
    Config = 2,
    Divergence = 3,
    Unstable = 4,
    Validation = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
}

impl Failure {
    fn new(code: Code, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_)
            | Error::Json(_)
            | Error::ModelInfeasible(_)
            | Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. } => Code::Config,
            Error::TrajectoryAborted { .. } | Error::TrajectoryDiverged { .. } => Code::Divergence,
            Error::UnstableEquilibrium => Code::Unstable,
            _ => Code::Runtime,
        };
        Failure::new(code, e.to_string())
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn read_config(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::new(Code::Config, format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> std::result::Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(Code::Runtime, format!("{}: {e}", path.display())))
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(Code::Runtime, format!("{}: {e}", path.display()))
}

fn in_file(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

/// SHA-256 over the config files and the effective command-line overrides.
fn config_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn effective_disturbance(
    args: &SimulateArgs,
    spec: &ModelSpec,
) -> std::result::Result<Option<Disturbance>, Failure> {
    if args.no_disturbance {
        return Ok(None);
    }
    let overridden = args.branch.is_some()
        || args.time.is_some()
        || args.scale.is_some()
        || args.clear_after.is_some();
    let mut d = match (spec.disturbance().cloned(), overridden) {
        (Some(d), _) => d,
        (None, false) => return Ok(None),
        (None, true) => match (args.branch, args.time) {
            (Some(branch), Some(time)) => Disturbance {
                branch,
                time,
                scale: 0.0,
                clear_after: 0.1,
            },
            _ => {
                return Err(Failure::new(
                    Code::Config,
                    "--branch and --time are required when the model has no disturbance",
                ))
            }
        },
    };
    if let Some(b) = args.branch {
        d.branch = b;
    }
    if let Some(t) = args.time {
        d.time = t;
    }
    if let Some(s) = args.scale {
        d.scale = s;
    }
    if let Some(c) = args.clear_after {
        d.clear_after = c;
    }
    Ok(Some(d))
}

pub fn simulate(args: &SimulateArgs) -> CmdResult {
    if [args.dt, args.t_end, args.xi]
        .iter()
        .any(|v| !v.is_finite() || *v <= 0.0)
    {
        return Err(Failure::new(
            Code::Config,
            "--dt, --t-end and --xi must be positive",
        ));
    }
    let text = read_config(&args.model)?;
    let spec = ModelSpec::from_json(&text).map_err(in_file(&args.model))?;
    let disturbance = effective_disturbance(args, &spec)?;
    let flags = format!(
        "simulate t_end={} dt={} xi={} disturbance={:?} deviation={}",
        args.t_end, args.dt, args.xi, disturbance, args.deviation
    );
    let header = OutputHeader::new(config_hash(&[text.as_bytes(), flags.as_bytes()]), args.seed);

    let sim = spec.simulate(disturbance.as_ref(), args.dt, args.t_end, args.xi)?;
    let states = if args.deviation {
        sim.trajectory.samples.clone()
    } else {
        sim.absolute_states()
    };
    let mut w = create(&args.out)?;
    let times: Vec<f64> = sim.trajectory.times().collect();
    write_trajectory_csv(&mut w, &header, &times, &states)?;
    w.flush().map_err(io_failure(&args.out))?;

    let tr = &sim.trajectory;
    println!(
        "{} samples, final deviation {:.3e} ({} xi = {:e})",
        tr.samples.len(),
        tr.final_norm,
        if tr.converged { "within" } else { "outside" },
        args.xi
    );
    if !tr.converged {
        log::warn!("trajectory did not settle within xi by t = {}", args.t_end);
    }
    Ok(())
}

pub fn assess(args: &AssessArgs) -> CmdResult {
    let model_text = read_config(&args.model)?;
    let assess_text = read_config(&args.assess)?;
    let spec = ModelSpec::from_json(&model_text).map_err(in_file(&args.model))?;
    let mut config = AssessmentConfig::from_json(&assess_text).map_err(in_file(&args.assess))?;
    if let Some(s) = args.steps {
        config.max_steps = s;
    }
    if let Some(d) = args.delta {
        config.delta = d;
    }
    let resume = match &args.resume {
        Some(path) => {
            let text = read_config(path)?;
            let snap = read_snapshot(&text).map_err(in_file(path))?;
            Some(ResumePoint::from_snapshot(snap).map_err(in_file(path))?)
        }
        None => None,
    };
    let flags = format!(
        "assess steps={} delta={} resume_from={:?}",
        config.max_steps,
        config.delta,
        resume.as_ref().map(|r| r.iteration)
    );
    let header = OutputHeader::new(
        config_hash(&[
            model_text.as_bytes(),
            assess_text.as_bytes(),
            flags.as_bytes(),
        ]),
        args.seed,
    );

    let system = spec.build()?;
    let n = prepare_system(&system)?.n();
    config.validate(n).map_err(in_file(&args.assess))?;

    fs::create_dir_all(&args.out).map_err(io_failure(&args.out))?;
    let log_path = args.out.join("log.csv");
    let mut log = create(&log_path)?;
    write_log_header(&mut log, &header, n)?;

    let mut written = 0usize;
    let last = run_assessment_streaming(&system, &config, resume, |est, attempts| {
        write_log_rows(&mut log, attempts, args.timing)?;
        if est.iteration > 0 {
            let mut w = BufWriter::new(File::create(
                args.out.join(format!("roa_iter_{:04}.csv", est.iteration)),
            )?);
            write_roa_csv(&mut w, &header, est)?;
            w.flush()?;
            written += 1;
            log::info!(
                "iteration {}: {} members, level {:.6e}",
                est.iteration,
                est.members().count(),
                est.v_hat_max
            );
        }
        Ok(())
    })?;
    log.flush().map_err(io_failure(&log_path))?;

    let snap_path = args.out.join("snapshot.json");
    let mut w = create(&snap_path)?;
    write_snapshot(&mut w, &header, &last.to_snapshot())?;
    w.flush().map_err(io_failure(&snap_path))?;
    println!(
        "{written} estimates written to {}, last iteration {}",
        args.out.display(),
        last.iteration
    );
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> CmdResult {
    let text = read_config(&args.model)?;
    let spec = ModelSpec::from_json(&text).map_err(in_file(&args.model))?;
    let report = spec.validation_report();
    for c in &report {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed: Vec<_> = report.iter().filter(|c| !c.passed).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        let list: Vec<_> = failed
            .iter()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        Err(Failure::new(
            Code::Validation,
            format!("{} check(s) failed: {}", failed.len(), list.join("; ")),
        ))
    }
}
