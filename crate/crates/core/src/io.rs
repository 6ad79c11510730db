//! Line-oriented text files for detection events and triple coincidences.
//!
//! Both formats start with `#` comment lines (free-form metadata), then a
//! column header, then one record per line:
//!
//! ```text
//! party,port,time_ns
//! A,+,6.182
//! ```
//!
//! ```text
//! pulse_index,alice_slot,alice_port,bob_slot,bob_port,truth
//! 17,0,+,0,-,genuine
//! ```
//!
//! Times are printed with three decimals, which is exact at picosecond
//! resolution. Slots are 0 (early), 1 (central), 2 (late).

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::hardware::{SessionLog, TripleCoincidence, Truth};
use crate::quantum::{PortLabel, TimeSlot};

pub const EVENT_HEADER: &str = "party,port,time_ns";
pub const COINCIDENCE_HEADER: &str = "pulse_index,alice_slot,alice_port,bob_slot,bob_port,truth";

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing column header {0:?}")]
    MissingHeader(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn line_err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Line {
        line,
        message: message.into(),
    }
}

pub fn write_comments<W: Write>(out: &mut W, lines: &[(String, String)]) -> io::Result<()> {
    for (k, v) in lines {
        writeln!(out, "# {k}: {v}")?;
    }
    Ok(())
}

/// Metadata describing how a session was produced.
pub fn session_metadata(log: &SessionLog) -> Vec<(String, String)> {
    let p = &log.params;
    let mut m = vec![
        ("n_pulses".to_string(), log.n_pulses.to_string()),
        ("seed".to_string(), log.seed.to_string()),
        ("pulse_rate_hz".to_string(), p.pulse_rate.to_string()),
        ("pulse_fwhm_s".to_string(), p.pulse_fwhm.to_string()),
        ("delta_t_s".to_string(), p.delta_t.to_string()),
        ("pair_prob".to_string(), p.pair_prob.to_string()),
        ("separation_prob".to_string(), p.separation_prob.to_string()),
        ("analyzer_loss_db".to_string(), p.analyzer_loss_db.to_string()),
        ("channel_loss_db".to_string(), p.channel_loss_db.to_string()),
        ("detector_efficiency".to_string(), p.detector_efficiency.to_string()),
        ("dark_rate_hz".to_string(), p.dark_rate.to_string()),
        ("jitter_sigma_s".to_string(), p.jitter_sigma.to_string()),
        ("coincidence_window_s".to_string(), p.coincidence_window.to_string()),
        ("phi".to_string(), log.phases.phi.to_string()),
        ("alpha".to_string(), log.phases.alpha.to_string()),
        ("beta".to_string(), log.phases.beta.to_string()),
    ];
    m.push((
        "attack".to_string(),
        log.attack.map_or_else(|| "none".to_string(), |a| a.to_string()),
    ));
    m
}

fn format_ns(time_ps: u64) -> String {
    format!("{}.{:03}", time_ps / 1000, time_ps % 1000)
}

/// Writes the session metadata, `extra` comment lines and every event in
/// time order.
pub fn write_events<W: Write>(out: &mut W, log: &SessionLog, extra: &[(String, String)]) -> io::Result<()> {
    write_comments(out, extra)?;
    write_comments(out, &session_metadata(log))?;
    writeln!(out, "{EVENT_HEADER}")?;
    for e in &log.events {
        writeln!(out, "{},{},{}", e.party.symbol(), e.port.symbol(), format_ns(e.time_ps))?;
    }
    Ok(())
}

fn truth_name(t: Truth) -> &'static str {
    match t {
        Truth::Genuine => "genuine",
        Truth::Accidental => "accidental",
    }
}

pub fn write_coincidences<W: Write>(
    out: &mut W,
    coincidences: &[TripleCoincidence],
    extra: &[(String, String)],
) -> io::Result<()> {
    write_comments(out, extra)?;
    writeln!(out, "{COINCIDENCE_HEADER}")?;
    for c in coincidences {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.pulse_index,
            c.alice.0.index(),
            c.alice.1.symbol(),
            c.bob.0.index(),
            c.bob.1.symbol(),
            truth_name(c.truth)
        )?;
    }
    Ok(())
}

fn parse_slot(s: &str, line: usize) -> Result<TimeSlot, ParseError> {
    s.parse::<u8>()
        .ok()
        .and_then(|i| TimeSlot::new(i).ok())
        .ok_or_else(|| line_err(line, format!("bad slot {s:?}, expected 0, 1 or 2")))
}

fn parse_port(s: &str, line: usize) -> Result<PortLabel, ParseError> {
    match s {
        "+" => Ok(PortLabel::Plus),
        "-" => Ok(PortLabel::Minus),
        _ => Err(line_err(line, format!("bad port {s:?}, expected + or -"))),
    }
}

/// Reads a coincidence file. Comment and blank lines are skipped; the column
/// header must precede the first record. Line numbers in errors are 1-based.
pub fn read_coincidences<R: BufRead>(input: R) -> Result<Vec<TripleCoincidence>, ParseError> {
    let mut out = Vec::new();
    let mut seen_header = false;
    for (i, line) in input.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != COINCIDENCE_HEADER {
                return Err(line_err(n, format!("expected header {COINCIDENCE_HEADER:?}")));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(line_err(n, format!("expected 6 fields, found {}", f.len())));
        }
        let pulse_index = f[0]
            .parse::<u64>()
            .map_err(|_| line_err(n, format!("bad pulse index {:?}", f[0])))?;
        let truth = match f[5] {
            "genuine" => Truth::Genuine,
            "accidental" => Truth::Accidental,
            t => return Err(line_err(n, format!("bad truth label {t:?}"))),
        };
        out.push(TripleCoincidence {
            pulse_index,
            alice: (parse_slot(f[1], n)?, parse_port(f[2], n)?),
            bob: (parse_slot(f[3], n)?, parse_port(f[4], n)?),
            truth,
        });
    }
    if !seen_header {
        return Err(ParseError::MissingHeader(COINCIDENCE_HEADER));
    }
    Ok(out)
}
