//! Plain-text pulse tables.
//!
//! ```text
//! # comment
//! eta 0.05533
//! omega00 1884955.5921538759
//! # N_B | M_P | phases (units of pi) | durations (units of 1/(2 Omega00))
//! 2 | 3 | 0.1 0.2 0.3 | 4 4 3.5
//! ```
//!
//! `eta` and `omega00` lines are optional and apply to every following row.
//! Numbers are written in shortest round-trip form, so write → read → write is
//! byte-identical.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fock::SidebandParams;
use crate::step_gate::PulseSequence;

/// Reference step-pulse table for η = 0.05533.
pub const TABLE_ONE: &str = "\
# Composite step pulses, eta = 0.05533
eta 0.05533
# N_B | M_P | phases (units of pi) | durations (units of 1/(2 Omega00))
2 | 9 | 0.867 0.725 0.791 0.960 0.325 0.391 1.870 1.370 1.264 | 4.000 4.000 3.904 4.000 4.000 4.000 3.720 4.000 4.000
2 | 10 | 1.013 1.125 1.028 0.637 0.888 0.397 0.086 1.854 1.664 1.433 | 4.000 4.000 4.000 4.000 4.000 1.542 4.000 3.334 4.000 3.149
2 | 11 | 1.715 1.333 1.520 1.477 1.045 1.152 0.740 0.922 0.763 0.398 0.696 | 3.987 3.874 3.394 3.338 3.786 3.568 3.999 2.575 3.862 4.000 3.999
3 | 8 | 1.588 1.663 0.000 1.622 1.755 1.508 1.714 1.562 | 6.000 6.000 6.000 4.829 2.653 4.479 5.400 4.097
3 | 9 | 1.107 0.927 1.108 0.986 1.161 0.857 1.136 1.042 0.981 | 4.055 5.448 4.218 3.791 4.513 4.907 4.983 5.466 2.659
3 | 10 | 1.107 0.875 1.321 1.562 0.098 0.302 1.974 0.340 0.720 1.359 | 3.677 5.311 6.000 3.712 6.000 5.992 4.828 5.114 3.760 3.498
4 | 10 | 1.640 0.006 1.952 1.921 1.784 1.897 1.902 1.982 1.693 0.000 | 2.365 4.099 4.716 1.680 3.983 5.863 4.654 4.994 4.455 5.243
4 | 11 | 2.000 1.841 1.895 1.771 0.000 0.428 0.225 0.581 0.322 0.203 0.166 | 1.656 5.097 5.998 6.000 6.000 5.008 2.548 5.621 4.105 6.000 6.000
4 | 14 | 1.147 1.463 1.757 0.001 0.634 0.750 0.401 2.000 0.036 1.037 0.407 0.306 0.562 0.539 | 5.830 5.999 5.643 3.863 5.829 5.114 3.353 5.205 5.755 0.127 3.499 3.799 5.216 4.155
";

pub fn table_one() -> Vec<PulseSequence> {
    parse_pulse_table(TABLE_ONE).expect("bundled table parses")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        context: "pulse table",
        line,
        message: message.into(),
    }
}

fn parse_numbers(field: &str, line: usize, what: &str) -> Result<Vec<f64>> {
    field
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(line, format!("bad {what} value `{tok}`")))
        })
        .collect()
}

pub fn parse_pulse_table(text: &str) -> Result<Vec<PulseSequence>> {
    let mut sideband = SidebandParams::experiment();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("eta ") {
            let eta = rest.trim().parse().map_err(|_| parse_err(line_no, "bad eta"))?;
            sideband = SidebandParams::new(eta, sideband.omega00).map_err(|e| parse_err(line_no, e.to_string()))?;
            continue;
        }
        if let Some(rest) = line.strip_prefix("omega00 ") {
            let w = rest.trim().parse().map_err(|_| parse_err(line_no, "bad omega00"))?;
            sideband = SidebandParams::new(sideband.eta, w).map_err(|e| parse_err(line_no, e.to_string()))?;
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(line_no, format!("expected 4 `|`-separated fields, found {}", fields.len())));
        }
        let n_b: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad N_B `{}`", fields[0])))?;
        let m_p: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad M_P `{}`", fields[1])))?;
        let phases = parse_numbers(fields[2], line_no, "phase")?;
        let durations = parse_numbers(fields[3], line_no, "duration")?;
        if phases.len() != m_p || durations.len() != m_p {
            return Err(parse_err(
                line_no,
                format!("M_P = {m_p} but {} phases and {} durations", phases.len(), durations.len()),
            ));
        }
        let seq = PulseSequence::new(n_b, phases, durations, sideband).map_err(|e| parse_err(line_no, e.to_string()))?;
        out.push(seq);
    }
    Ok(out)
}

pub fn write_pulse_table(seqs: &[PulseSequence]) -> String {
    let mut out = String::new();
    out.push_str("# N_B | M_P | phases (units of pi) | durations (units of 1/(2 Omega00))\n");
    let mut current: Option<SidebandParams> = None;
    for seq in seqs {
        if current != Some(*seq.sideband()) {
            let sb = seq.sideband();
            let _ = writeln!(out, "eta {}", sb.eta);
            let _ = writeln!(out, "omega00 {}", sb.omega00);
            current = Some(*sb);
        }
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "{} | {} | {} | {}",
            seq.n_b_target(),
            seq.len(),
            join(seq.phases_pi()),
            join(seq.durations())
        );
    }
    out
}
