//! CSV and JSON writers for run artifacts.
//!
//! Every file opens with `# tool`, `# config_hash` and `# seed` lines. The JSON
//! snapshot carries the same fields under `meta` instead.

use std::io::Write;

use nalgebra::DVector;
use serde_json::json;

use crate::assessment::{AssessmentSnapshot, AttemptRecord, RoaEstimate};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputHeader {
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
}

impl OutputHeader {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        OutputHeader {
            tool: format!("roagp {}", env!("CARGO_PKG_VERSION")),
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn write_comment<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# tool: {}", self.tool)?;
        writeln!(w, "# config_hash: {}", self.config_hash)?;
        writeln!(w, "# seed: {}", self.seed)?;
        Ok(())
    }

    pub fn meta(&self) -> serde_json::Value {
        json!({ "tool": self.tool, "config_hash": self.config_hash, "seed": self.seed })
    }
}

/// C `%.15g`.
pub fn fmt_g15(v: f64) -> String {
    const P: i32 = 15;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn state_columns(n: usize) -> String {
    (1..=n).map(|i| format!(",x_{i}")).collect()
}

pub fn write_trajectory_csv<W: Write>(
    w: &mut W,
    header: &OutputHeader,
    times: &[f64],
    states: &[DVector<f64>],
) -> Result<()> {
    header.write_comment(w)?;
    let n = states.first().map_or(0, |s| s.len());
    writeln!(w, "t{}", state_columns(n))?;
    for (t, x) in times.iter().zip(states) {
        write!(w, "{}", fmt_g15(*t))?;
        for v in x.iter() {
            write!(w, ",{}", fmt_g15(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// One row per grid point; `y_axis` is 0 on one-axis domains.
pub fn write_roa_csv<W: Write>(w: &mut W, header: &OutputHeader, est: &RoaEstimate) -> Result<()> {
    header.write_comment(w)?;
    writeln!(w, "step,x_axis,y_axis,mu,sigma,member")?;
    for g in &est.grid {
        let y = g.coords.get(1).copied().unwrap_or(0.0);
        writeln!(
            w,
            "{},{},{},{},{},{}",
            est.iteration,
            fmt_g15(g.coords[0]),
            fmt_g15(y),
            fmt_g15(g.mu),
            fmt_g15(g.sigma),
            u8::from(g.member)
        )?;
    }
    Ok(())
}

pub fn write_log_header<W: Write>(w: &mut W, header: &OutputHeader, n: usize) -> Result<()> {
    header.write_comment(w)?;
    writeln!(w, "step{},accepted,v_hat,wall_ms", state_columns(n))?;
    Ok(())
}

/// `v_hat` is empty for rejected samples, `wall_ms` unless `timing` is set.
pub fn write_log_rows<W: Write>(w: &mut W, records: &[AttemptRecord], timing: bool) -> Result<()> {
    for r in records {
        write!(w, "{}", r.iteration)?;
        for v in &r.point {
            write!(w, ",{}", fmt_g15(*v))?;
        }
        let v_hat = r.v_hat.map(fmt_g15).unwrap_or_default();
        let wall = if timing {
            fmt_g15(r.wall_ms)
        } else {
            String::new()
        };
        writeln!(w, ",{},{v_hat},{wall}", u8::from(r.accepted))?;
    }
    Ok(())
}

pub fn write_snapshot<W: Write>(
    w: &mut W,
    header: &OutputHeader,
    snapshot: &AssessmentSnapshot,
) -> Result<()> {
    let mut snapshot = snapshot.clone();
    snapshot.meta = Some(header.meta());
    serde_json::to_writer(&mut *w, &snapshot)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_snapshot(text: &str) -> Result<AssessmentSnapshot> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| crate::Error::InvalidConfig(format!("snapshot: {}: {}", e.path(), e.inner())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessment::GridEval;
    use crate::gp::{KernelSpec, WindowState};

    #[test]
    fn g15_matches_printf() {
        let cases = [
            (1.0, "1"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333333333"),
            (376.99111843077515, "376.991118430775"),
            (-2.5e-7, "-2.5e-07"),
            (1e15, "1e+15"),
            (123456789012345.0, "123456789012345"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (9.9999999999999999, "10"),
            (1e300, "1e+300"),
            (-0.0, "-0"),
        ];
        for (v, s) in cases {
            assert_eq!(fmt_g15(v), s, "{v:e}");
        }
    }

    #[test]
    fn g15_parses_back_within_precision() {
        for v in [
            std::f64::consts::PI,
            -1.0e-300,
            6.02214076e23,
            0.5050167084168057,
        ] {
            let back: f64 = fmt_g15(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 1e-14);
        }
    }

    fn header() -> OutputHeader {
        OutputHeader {
            tool: "roagp test".into(),
            config_hash: "abc".into(),
            seed: 7,
        }
    }

    #[test]
    fn trajectory_layout() {
        let mut out = Vec::new();
        let states = vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![0.5, 0.25]),
        ];
        write_trajectory_csv(&mut out, &header(), &[0.0, 0.01], &states).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "# tool: roagp test\n# config_hash: abc\n# seed: 7\nt,x_1,x_2\n0,1,2\n0.01,0.5,0.25\n"
        );
    }

    #[test]
    fn roa_layout() {
        let est = RoaEstimate {
            iteration: 3,
            step: 3,
            delta: 0.9,
            beta: 1.6,
            v_hat_max: 1.0,
            grid: vec![
                GridEval {
                    coords: vec![-1.0, 2.0],
                    mu: 0.5,
                    sigma: 0.1,
                    member: true,
                },
                GridEval {
                    coords: vec![0.5],
                    mu: 3.0,
                    sigma: 1.0,
                    member: false,
                },
            ],
        };
        let mut out = Vec::new();
        write_roa_csv(&mut out, &header(), &est).unwrap();
        let text = String::from_utf8(out).unwrap();
        let body: Vec<_> = text.lines().skip(3).collect();
        assert_eq!(
            body,
            [
                "step,x_axis,y_axis,mu,sigma,member",
                "3,-1,2,0.5,0.1,1",
                "3,0.5,0,3,1,0"
            ]
        );
    }

    #[test]
    fn log_layout() {
        let recs = vec![
            AttemptRecord {
                iteration: 1,
                grid_index: 4,
                point: vec![0.5, -1.0],
                accepted: false,
                v_hat: None,
                wall_ms: 12.5,
            },
            AttemptRecord {
                iteration: 1,
                grid_index: 2,
                point: vec![0.25, 0.0],
                accepted: true,
                v_hat: Some(0.125),
                wall_ms: 3.0,
            },
        ];
        let mut out = Vec::new();
        write_log_header(&mut out, &header(), 2).unwrap();
        write_log_rows(&mut out, &recs, false).unwrap();
        write_log_rows(&mut out, &recs[1..], true).unwrap();
        let text = String::from_utf8(out).unwrap();
        let body: Vec<_> = text.lines().skip(3).collect();
        assert_eq!(
            body,
            [
                "step,x_1,x_2,accepted,v_hat,wall_ms",
                "1,0.5,-1,0,,",
                "1,0.25,0,1,0.125,",
                "1,0.25,0,1,0.125,3"
            ]
        );
    }

    #[test]
    fn snapshot_round_trip_is_bitwise() {
        let mut s = WindowState::initial(4, 2, KernelSpec::default()).unwrap();
        for i in 0..6 {
            let x = [0.1 * i as f64, (i as f64).sin()];
            s = s.push(&x, 1.0 / (1.0 + i as f64)).unwrap();
        }
        let snap = AssessmentSnapshot {
            window: s.to_snapshot(),
            iteration: 6,
            excluded: vec![3, 9],
            meta: None,
        };
        let mut out = Vec::new();
        write_snapshot(&mut out, &header(), &snap).unwrap();
        let text = String::from_utf8(out).unwrap();
        let back = read_snapshot(&text).unwrap();
        assert_eq!(back.meta.as_ref().unwrap()["seed"], 7);
        let restored = WindowState::from_snapshot(back.window.clone()).unwrap();
        for (a, b) in restored.alpha().iter().zip(s.alpha().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in restored.c().iter().zip(s.c().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let mut again = Vec::new();
        write_snapshot(&mut again, &header(), &back).unwrap();
        assert_eq!(String::from_utf8(again).unwrap(), text);
    }

    #[test]
    fn snapshot_errors_name_the_key() {
        let err = read_snapshot(r#"{"step": 1}"#).unwrap_err().to_string();
        assert!(err.contains("iteration"), "{err}");
    }
}
