//! Command-line front end: configuration, subcommands and output files.

pub mod config;
pub mod output;

use std::f64::consts::TAU;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use tbqkd::adversary::attach_to_session;
use tbqkd::analysis::{
    bell_significance, detector_pair_label, distance_scan, fit_fringe, fit_fringe_column, fringe_scan,
    percent_1dp, qber_from_counts, run_exchange, visibility_from_extremes, visibility_to_qber, EnergyBasisColumn,
    FringePoint, TimeBasisTable, DETECTOR_PAIRS, MEASURED_ENERGY_BASIS, MEASURED_TIME_BASIS, MEASURED_VISIBILITY_SIGMA,
};
use tbqkd::hardware::{extract_coincidences, run_session, Party};
use tbqkd::io::{read_coincidences, write_coincidences, write_events};
use tbqkd::protocol::{estimate_qber, sift, split_coincidences, KeyBit, QberReport};
use tbqkd::{EveStrategy, PortLabel};

use config::Experiment;
use output::{flush, Cell, Format, OutDir, Provenance, Table};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "tbqkd", version, about = "Time-bin entanglement QKD simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one session; write the event log, coincidences and a summary.
    Simulate,
    /// Sift a coincidence file into keys and per-basis error rates.
    Sift {
        /// Defaults to `<out-dir>/coincidences.csv`.
        #[arg(long)]
        coincidences: Option<PathBuf>,
    },
    /// Scan Bob's analyzer phase over one period and fit the fringes.
    FringeScan {
        #[arg(long)]
        points: Option<usize>,
    },
    /// Full exchange under an intercept-resend attack.
    Eve {
        /// `time`, `energy` or `random:<p_time>`; overrides the config.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Full exchange at each added overall loss.
    DistanceScan {
        /// Comma-separated total added losses in dB.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        losses: Option<Vec<f64>>,
    },
    /// Time- and energy-basis tables with QBERs and Bell significance, from
    /// stored coincidences and fringe scans or from the built-in laboratory
    /// counts.
    Tables {
        #[arg(long)]
        coincidences: Option<PathBuf>,
        /// A fringe file written by `fringe-scan` (CSV).
        #[arg(long)]
        fringe: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sift { .. } => "sift",
            Command::FringeScan { .. } => "fringe-scan",
            Command::Eve { .. } => "eve",
            Command::DistanceScan { .. } => "distance-scan",
            Command::Tables { .. } => "tables",
        }
    }
}

struct Ctx {
    exp: Experiment,
    out: OutDir,
    prov: Provenance,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut exp = Experiment::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        exp.seed = seed;
    }
    if let Some(dir) = cli.global.out_dir {
        exp.out_dir = dir;
    }
    let out = OutDir::create(&exp.out_dir, cli.global.format).map_err(io_err(&exp.out_dir))?;
    let prov = Provenance {
        command: cli.command.name(),
        config_sha256: exp.config_hash(),
        seed: exp.seed,
    };
    let ctx = Ctx { exp, out, prov };
    match cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Sift { coincidences } => sift_cmd(&ctx, coincidences),
        Command::FringeScan { points } => fringe_cmd(&ctx, points),
        Command::Eve { strategy } => eve_cmd(&ctx, strategy),
        Command::DistanceScan { losses } => distance_cmd(&ctx, losses),
        Command::Tables { coincidences, fringe } => tables_cmd(&ctx, coincidences, fringe),
    }
}

fn write_table(ctx: &Ctx, stem: &str, table: &Table) -> Result<PathBuf, CliError> {
    let path = ctx.out.path(stem);
    ctx.out.table(stem, table, &ctx.prov).map_err(io_err(&path))
}

fn simulate(ctx: &Ctx) -> Result<(), CliError> {
    let hw = ctx.exp.hardware()?;
    let log = match &ctx.exp.eve {
        Some(s) => attach_to_session(&hw, &ctx.exp.phases, s, ctx.exp.n_pulses, ctx.exp.seed).map_err(runtime)?,
        None => run_session(&hw, &ctx.exp.phases, ctx.exp.n_pulses, ctx.exp.seed).map_err(runtime)?,
    };
    let coincidences = extract_coincidences(&log);
    let comments = ctx.prov.comments();

    let (path, mut w) = ctx.out.writer("events.csv").map_err(io_err(&ctx.out.root))?;
    write_events(&mut w, &log, &comments).and_then(|_| flush(w)).map_err(io_err(&path))?;
    let (path, mut w) = ctx.out.writer("coincidences.csv").map_err(io_err(&ctx.out.root))?;
    write_coincidences(&mut w, &coincidences, &comments)
        .and_then(|_| flush(w))
        .map_err(io_err(&path))?;

    let duration = log.duration_s();
    let accidental = coincidences.iter().filter(|c| c.truth == tbqkd::hardware::Truth::Accidental).count();
    let mut t = Table::new(&[
        "duration_s",
        "pair_prob",
        "singles_a_plus_hz",
        "singles_a_minus_hz",
        "singles_b_plus_hz",
        "singles_b_minus_hz",
        "photon_singles_mean_hz",
        "coincidences",
        "coincidence_rate_hz",
        "accidental_fraction",
    ]);
    let singles = |p, port| log.singles_rate(p, port, false);
    t.push(vec![
        duration.into(),
        hw.pair_prob.into(),
        singles(Party::Alice, PortLabel::Plus).into(),
        singles(Party::Alice, PortLabel::Minus).into(),
        singles(Party::Bob, PortLabel::Plus).into(),
        singles(Party::Bob, PortLabel::Minus).into(),
        log.mean_photon_singles_rate().into(),
        coincidences.len().into(),
        (coincidences.len() as f64 / duration).into(),
        (!coincidences.is_empty())
            .then(|| accidental as f64 / coincidences.len() as f64)
            .into(),
    ]);
    write_table(ctx, "summary", &t)?;

    println!("simulated {duration:.3} s ({} pulses), pair_prob {:.6}", log.n_pulses, hw.pair_prob);
    for (party, port) in [
        (Party::Alice, PortLabel::Plus),
        (Party::Alice, PortLabel::Minus),
        (Party::Bob, PortLabel::Plus),
        (Party::Bob, PortLabel::Minus),
    ] {
        println!(
            "singles {}{}: {:.1} Hz ({:.1} Hz from photons)",
            party.symbol(),
            port.symbol(),
            singles(party, port),
            log.singles_rate(party, port, true)
        );
    }
    println!(
        "coincidences: {} ({:.2} Hz), accidental fraction {}",
        coincidences.len(),
        coincidences.len() as f64 / duration,
        if coincidences.is_empty() {
            "n/a".to_string()
        } else {
            format!("{:.4}", accidental as f64 / coincidences.len() as f64)
        }
    );
    Ok(())
}

fn key_table(key: &[KeyBit]) -> Table {
    let mut t = Table::new(&["event_id", "basis", "bit"]);
    for k in key {
        t.push(vec![k.event_id.into(), k.basis.name().into(), u64::from(k.value).into()]);
    }
    t
}

fn qber_rows(t: &mut Table, prefix: Vec<Cell>, reports: &[(&str, QberReport)]) {
    for (name, r) in reports {
        let mut row = prefix.clone();
        row.extend([
            Cell::from(*name),
            r.n_sifted.into(),
            r.n_errors.into(),
            r.qber.into(),
            r.std_err.into(),
        ]);
        t.push(row);
    }
}

fn sift_cmd(ctx: &Ctx, input: Option<PathBuf>) -> Result<(), CliError> {
    let path = input.unwrap_or_else(|| ctx.out.path("coincidences.csv"));
    let file = fs::File::open(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let coincidences =
        read_coincidences(BufReader::new(file)).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let (a, b) = split_coincidences(&coincidences);
    let out = sift(a, b).map_err(runtime)?;
    let est = estimate_qber(&out.alice_key, &out.bob_key, ctx.exp.sample_fraction, ctx.exp.seed).map_err(runtime)?;

    write_table(ctx, "alice_key", &key_table(&out.alice_key))?;
    write_table(ctx, "bob_key", &key_table(&out.bob_key))?;
    let mut t = Table::new(&["basis", "n_sifted", "n_errors", "qber", "std_err"]);
    qber_rows(
        &mut t,
        vec![],
        &[("time", est.time), ("energy", est.energy), ("total", est.total())],
    );
    write_table(ctx, "qber", &t)?;

    let mut text = String::new();
    for (k, v) in ctx.prov.comments() {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    for m in &out.transcript {
        text.push_str(&format!("{m}\n"));
    }
    let tpath = ctx.out.path("transcript.txt");
    fs::write(&tpath, text).map_err(io_err(&tpath))?;
    let bpath = ctx.out.path("transcript.bin");
    fs::write(&bpath, out.transcript_bytes()).map_err(io_err(&bpath))?;

    println!(
        "{} coincidences -> {} sifted bits ({} discarded)",
        coincidences.len(),
        out.alice_key.len(),
        out.discarded.len()
    );
    for r in [est.time, est.energy] {
        match r.qber {
            Some(q) => println!("{} basis: QBER {:.2}% ({}/{})", r.basis, 100.0 * q, r.n_errors, r.n_sifted),
            None => println!("{} basis: QBER undefined (no bits)", r.basis),
        }
    }
    Ok(())
}

fn fringe_cmd(ctx: &Ctx, points: Option<usize>) -> Result<(), CliError> {
    let n = points.unwrap_or(ctx.exp.phase_points);
    if n < 4 {
        return Err(CliError::Usage(format!("fringe-scan needs at least 4 phase points, got {n}")));
    }
    let hw = ctx.exp.hardware()?;
    let grid: Vec<f64> = (0..n).map(|k| TAU * k as f64 / n as f64).collect();
    let rows = fringe_scan(&hw, &ctx.exp.phases, &grid, ctx.exp.n_pulses, ctx.exp.seed).map_err(runtime)?;

    let mut t = Table::new(&["phase_rad", "detector_pair", "counts"]);
    for r in &rows {
        for (col, pair) in DETECTOR_PAIRS.iter().enumerate() {
            t.push(vec![r.phase.into(), detector_pair_label(*pair).into(), r.counts[col].into()]);
        }
    }
    write_table(ctx, "fringe", &t)?;

    let mut f = Table::new(&[
        "detector_pair",
        "visibility",
        "visibility_err",
        "offset",
        "amplitude",
        "phase0_rad",
        "residual_rms",
        "clamped",
        "qber",
    ]);
    for (col, pair) in DETECTOR_PAIRS.iter().enumerate() {
        let label = detector_pair_label(*pair);
        match fit_fringe_column(&rows, col) {
            Ok(fit) => {
                println!("{label}: visibility {:.2}% +- {:.2}%", 100.0 * fit.visibility, 100.0 * fit.visibility_err);
                f.push(vec![
                    label.into(),
                    fit.visibility.into(),
                    fit.visibility_err.into(),
                    fit.offset.into(),
                    fit.amplitude.into(),
                    fit.phase0.into(),
                    fit.residual_rms.into(),
                    Cell::from(if fit.clamped { "true" } else { "false" }),
                    visibility_to_qber(fit.visibility).into(),
                ]);
            }
            Err(e) => {
                println!("{label}: no fit ({e})");
                let mut row = vec![Cell::from(label)];
                row.extend(std::iter::repeat_n(Cell::Missing, 8));
                f.push(row);
            }
        }
    }
    write_table(ctx, "fringe_fit", &f)?;
    Ok(())
}

fn eve_cmd(ctx: &Ctx, strategy: Option<String>) -> Result<(), CliError> {
    let strategy = match strategy {
        Some(s) => s.parse::<EveStrategy>().map_err(|e| CliError::Usage(e.to_string()))?,
        None => ctx
            .exp
            .eve
            .ok_or_else(|| CliError::Usage("no strategy: pass --strategy or set eve_strategy".into()))?,
    };
    let hw = ctx.exp.hardware()?;
    let r = run_exchange(&hw, &ctx.exp.phases, Some(&strategy), ctx.exp.n_pulses, ctx.exp.seed).map_err(runtime)?;
    let mut t = Table::new(&["strategy", "basis", "n_sifted", "n_errors", "qber", "std_err"]);
    qber_rows(
        &mut t,
        vec![strategy.to_string().into()],
        &[("time", r.qber.time), ("energy", r.qber.energy), ("total", r.qber.total())],
    );
    write_table(ctx, "eve", &t)?;
    for rep in [r.qber.time, r.qber.energy] {
        if let Some(q) = rep.qber {
            println!("{strategy}: {} basis QBER {:.2}% over {} bits", rep.basis, 100.0 * q, rep.n_sifted);
        }
    }
    Ok(())
}

fn distance_cmd(ctx: &Ctx, losses: Option<Vec<f64>>) -> Result<(), CliError> {
    let losses = losses.unwrap_or_else(|| ctx.exp.losses_db.clone());
    if losses.is_empty() {
        return Err(CliError::Usage("distance-scan needs at least one loss value".into()));
    }
    if let Some(l) = losses.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(CliError::Usage(format!("losses must be finite and non-negative, got {l}")));
    }
    let hw = ctx.exp.hardware()?;
    let rows = distance_scan(&hw, &ctx.exp.phases, &losses, ctx.exp.n_pulses, ctx.exp.seed).map_err(runtime)?;
    let mut t = Table::new(&["loss_db", "qber_time", "qber_energy", "qber_total", "n_sifted", "rate_hz"]);
    for r in &rows {
        t.push(vec![
            r.loss_db.into(),
            r.qber_time.into(),
            r.qber_energy.into(),
            r.qber_total.into(),
            r.n_sifted.into(),
            r.rate_hz.into(),
        ]);
        println!(
            "{:>5.1} dB: QBER {} , {:.1} Hz sifted",
            r.loss_db,
            r.qber_total.map_or("n/a".into(), |q| format!("{:.2}%", 100.0 * q)),
            r.rate_hz
        );
    }
    write_table(ctx, "distance", &t)?;
    Ok(())
}

/// Reads the long-format fringe file written by `fringe-scan`.
fn read_fringe(path: &Path) -> Result<Vec<(PortLabel, PortLabel, FringePoint)>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let bad = |line: usize, msg: String| CliError::Runtime(format!("{}: line {line}: {msg}", path.display()));
    let mut out = Vec::new();
    let mut header = false;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(io_err(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            if line != "phase_rad,detector_pair,counts" {
                return Err(bad(n, "expected header phase_rad,detector_pair,counts".into()));
            }
            header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(n, format!("expected 3 fields, found {}", f.len())));
        }
        let phase = f[0].parse::<f64>().map_err(|_| bad(n, format!("bad phase {:?}", f[0])))?;
        let pair = *DETECTOR_PAIRS
            .iter()
            .find(|p| detector_pair_label(**p) == f[1])
            .ok_or_else(|| bad(n, format!("bad detector pair {:?}", f[1])))?;
        let counts = f[2].parse::<u64>().map_err(|_| bad(n, format!("bad count {:?}", f[2])))?;
        out.push((
            pair.0,
            pair.1,
            FringePoint {
                phase_setting: phase,
                counts,
                duration: 1.0,
            },
        ));
    }
    if !header {
        return Err(bad(0, "missing header".into()));
    }
    Ok(out)
}

fn tables_cmd(ctx: &Ctx, coincidences: Option<PathBuf>, fringe: Option<PathBuf>) -> Result<(), CliError> {
    let table1 = match &coincidences {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let c = read_coincidences(BufReader::new(file))
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            TimeBasisTable::from_coincidences(&c)
        }
        None => MEASURED_TIME_BASIS,
    };
    let columns = ["row", "++", "+-", "-+", "--", "mean"];
    let mut t1 = Table::new(&columns);
    for (label, row) in TimeBasisTable::ROW_LABELS.iter().zip(table1.counts) {
        let mut cells = vec![Cell::from(*label)];
        cells.extend(row.iter().map(|&v| Cell::from(v)));
        cells.push(Cell::Missing);
        t1.push(cells);
    }
    let q = table1.qber();
    let mean = table1.mean_qber();
    let mut qrow = vec![Cell::from("qber")];
    qrow.extend(q.iter().map(|x| Cell::from(x.map(|(q, _)| q))));
    qrow.push(mean.into());
    t1.push(qrow);
    let mut erow = vec![Cell::from("qber_std_err")];
    erow.extend(q.iter().map(|x| Cell::from(x.map(|(_, e)| e))));
    erow.push(Cell::Missing);
    t1.push(erow);
    let mut prow = vec![Cell::from("qber_percent")];
    prow.extend(q.iter().map(|x| Cell::from(x.map(|(q, _)| percent_1dp(q)))));
    prow.push(mean.map(percent_1dp).into());
    t1.push(prow);
    write_table(ctx, "table1", &t1)?;

    // (column, visibility error)
    let columns2: Vec<(EnergyBasisColumn, Option<f64>)> = match &fringe {
        Some(path) => {
            let points = read_fringe(path)?;
            DETECTOR_PAIRS
                .iter()
                .map(|&(a, b)| {
                    let pts: Vec<FringePoint> =
                        points.iter().filter(|(x, y, _)| (*x, *y) == (a, b)).map(|(_, _, p)| *p).collect();
                    let max = pts.iter().map(|p| p.counts).max().unwrap_or(0) as f64;
                    let min = pts.iter().map(|p| p.counts).min().unwrap_or(0) as f64;
                    let fit = fit_fringe(&pts).ok();
                    (
                        EnergyBasisColumn {
                            max,
                            min,
                            fitted_visibility: fit.map(|f| f.visibility),
                        },
                        fit.map(|f| f.visibility_err),
                    )
                })
                .collect()
        }
        None => MEASURED_ENERGY_BASIS
            .iter()
            .zip(MEASURED_VISIBILITY_SIGMA)
            .map(|(c, s)| (*c, Some(s)))
            .collect(),
    };
    let mut t2 = Table::new(&[
        "detector_pair",
        "visibility",
        "visibility_err",
        "max",
        "min",
        "extreme_visibility",
        "qber_from_visibility",
        "qber_from_extremes",
        "qber_percent",
    ]);
    for (pair, (col, err)) in DETECTOR_PAIRS.iter().zip(&columns2) {
        let qv = col.fitted_visibility.map(visibility_to_qber);
        let qe = qber_from_counts(col.max, col.min).ok().map(|(q, _)| q);
        t2.push(vec![
            detector_pair_label(*pair).into(),
            col.fitted_visibility.into(),
            (*err).into(),
            col.max.into(),
            col.min.into(),
            (col.max + col.min > 0.0).then(|| visibility_from_extremes(col.max, col.min)).into(),
            qv.into(),
            qe.into(),
            qe.or(qv).map(percent_1dp).into(),
        ]);
    }
    write_table(ctx, "table2", &t2)?;

    let vis: Vec<(f64, f64)> = columns2
        .iter()
        .filter_map(|(c, e)| Some((c.fitted_visibility?, (*e)?)))
        .collect();
    match bell_significance(&vis) {
        Ok(r) => {
            let mut b = Table::new(&["v_mean", "v_sigma", "v_spread", "threshold", "sigmas"]);
            b.push(vec![r.v_mean.into(), r.v_sigma.into(), r.v_spread.into(), r.threshold.into(), r.sigmas.into()]);
            write_table(ctx, "bell", &b)?;
            println!(
                "mean visibility {:.1}% +- {:.1}%: {:.1} standard deviations above 1/sqrt(2)",
                100.0 * r.v_mean,
                100.0 * r.v_sigma,
                r.sigmas
            );
        }
        Err(e) => println!("no Bell estimate: {e}"),
    }
    if let Some(m) = mean {
        println!("mean time-basis QBER {:.1}%", percent_1dp(m));
    }
    Ok(())
}
