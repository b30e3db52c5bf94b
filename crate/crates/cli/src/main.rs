//! `twomode` — typicality reports, scaling scans, moment-polynomial dumps
//! and single-run interference patterns for the two-mode N-boson system.
//!
//! Mode and kernel descriptors use a compact `name:key=val,...` grammar:
//!
//! * modes:  `planewave:q=1`
//!           `gaussian:d=10,sigma=1,t=50`   (Gaussians at -d/2 and d/2)
//!           `tabulated:path=modes.txt`     (5 columns: r re_a im_a re_b im_b)
//! * kernel: `c2:x=0.13`
//!           `c3:x1=0.1,x2=0.27`
//!           `comb:x1=0.1,x2=0.2,x3=0.35`   (general delta comb, k = count+1)
//!
//! Exit codes: 0 success (typicality: verdict "typical"), 1 error,
//! 2 verdict "not typical". Set `TWOMODE_THREADS` to pin the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use twomode_core::correlations::correlation_curve;
use twomode_core::modes::convolution_profile;
use twomode_core::montecarlo::{empirical_C2, scaling_scan, simulate_pattern, stream_rng};
use twomode_core::poly::{moment_sum, rat_to_f64};
use twomode_core::typicality::analyze;
use twomode_core::{Error, KernelSpec, ModePair, SystemParams, Verdict};

const SCHEMA_TYPICALITY: &str = "twomode.typicality/1";
const SCHEMA_SCAN: &str = "twomode.scan/1";
const SCHEMA_SCAN_FIT: &str = "twomode.scan-fit/1";
const SCHEMA_MOMENTS: &str = "twomode.moments/1";
const SCHEMA_PATTERN: &str = "twomode.pattern/1";
const SCHEMA_PATTERN_FIT: &str = "twomode.pattern-fit/1";
const SCHEMA_CURVE: &str = "twomode.curve/1";

#[derive(Parser)]
#[command(
    name = "twomode",
    version,
    about = "Typicality analysis of k-particle observables in a two-mode Bose system",
    after_help = "Descriptors use name:key=val,... — see the crate docs.\n\
                  Exit codes: 0 ok/typical, 1 error, 2 not typical."
)]
struct Cli {
    /// Master seed for every stochastic subcommand.
    #[arg(long, global = true, default_value_t = 24601)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether the observable concentrates; writes a JSON report.
    Typicality {
        /// Mode descriptor, e.g. planewave:q=1
        #[arg(long)]
        modes: String,
        /// Kernel descriptor, e.g. c2:x=0.13
        #[arg(long)]
        kernel: String,
        /// Report file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact-trace relative-fluctuation scan of C_2 along n = N^alpha.
    Scan {
        #[arg(long, default_value = "planewave:q=1")]
        modes: String,
        /// Offset of the two-point correlation C_2(x).
        #[arg(long, default_value_t = 0.25)]
        x: f64,
        #[arg(long)]
        alpha: f64,
        /// Comma-separated even particle numbers, e.g. 1024,2048,4096
        #[arg(long)]
        n_grid: String,
        /// CSV path; the slope summary goes to <output>.fit.json.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Dump the exact moment-sum polynomial for (k, m) as JSON.
    Moments {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulate one measurement run and fit the interference fringes.
    Pattern {
        #[arg(long, default_value = "planewave:q=1")]
        modes: String,
        /// Particle number N (even).
        #[arg(long)]
        n_particles: u64,
        /// Subspace dimension n (odd, <= N+1).
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Histogram CSV path; the fit goes to <output>.fit.json.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact vs leading-order correlation curve over an x grid (CSV).
    Curve {
        #[arg(long, default_value = "planewave:q=1")]
        modes: String,
        #[arg(long)]
        n_particles: u64,
        #[arg(long)]
        dim: usize,
        /// Comma-separated offsets x.
        #[arg(long)]
        x_grid: String,
        /// Also evaluate one sampled random state per point.
        #[arg(long, default_value_t = false)]
        with_run: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_descriptor(desc: &str) -> Result<(String, BTreeMap<String, String>), Error> {
    let (name, rest) = desc.split_once(':').unwrap_or((desc, ""));
    if name.is_empty() {
        return Err(Error::Parse(format!("empty descriptor name in {desc:?}")));
    }
    let mut kv = BTreeMap::new();
    for part in rest.split(',').filter(|p| !p.is_empty()) {
        let (key, val) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=val, got {part:?}")))?;
        if kv.insert(key.to_string(), val.to_string()).is_some() {
            return Err(Error::Parse(format!("duplicate key {key:?} in {desc:?}")));
        }
    }
    Ok((name.to_string(), kv))
}

fn take_f64(kv: &mut BTreeMap<String, String>, key: &str) -> Result<f64, Error> {
    let raw = kv
        .remove(key)
        .ok_or_else(|| Error::Parse(format!("missing key {key:?}")))?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("bad number {raw:?} for key {key:?}")))
}

fn reject_leftovers(kv: &BTreeMap<String, String>, desc: &str) -> Result<(), Error> {
    if let Some(key) = kv.keys().next() {
        return Err(Error::Parse(format!("unknown key {key:?} in {desc:?}")));
    }
    Ok(())
}

fn parse_modes(desc: &str) -> Result<ModePair, Error> {
    let (name, mut kv) = parse_descriptor(desc)?;
    let modes = match name.as_str() {
        "planewave" => {
            let q = take_f64(&mut kv, "q")?;
            if q.fract() != 0.0 || q < 1.0 || q > u32::MAX as f64 {
                return Err(Error::Parse(format!("q must be a positive integer, got {q}")));
            }
            ModePair::plane_wave(q as u32)?
        }
        "gaussian" => {
            let d = take_f64(&mut kv, "d")?;
            let sigma = take_f64(&mut kv, "sigma")?;
            let t = take_f64(&mut kv, "t")?;
            ModePair::far_field_gaussian(-d / 2.0, d / 2.0, sigma, t)?
        }
        "tabulated" => {
            let path = kv
                .remove("path")
                .ok_or_else(|| Error::Parse("missing key \"path\"".into()))?;
            ModePair::load_tabulated(Path::new(&path))?
        }
        other => {
            return Err(Error::Parse(format!(
                "unknown mode family {other:?} (expected planewave, gaussian or tabulated)"
            )))
        }
    };
    reject_leftovers(&kv, desc)?;
    Ok(modes)
}

fn parse_kernel(desc: &str) -> Result<KernelSpec, Error> {
    let (name, mut kv) = parse_descriptor(desc)?;
    let offsets = match name.as_str() {
        "c2" => vec![take_f64(&mut kv, "x")?],
        "c3" => vec![take_f64(&mut kv, "x1")?, take_f64(&mut kv, "x2")?],
        "comb" => {
            let mut offsets = Vec::new();
            for i in 1.. {
                let key = format!("x{i}");
                if !kv.contains_key(&key) {
                    break;
                }
                offsets.push(take_f64(&mut kv, &key)?);
            }
            if offsets.is_empty() {
                return Err(Error::Parse("comb kernel needs x1=... offsets".into()));
            }
            offsets
        }
        other => {
            return Err(Error::Parse(format!(
                "unknown kernel family {other:?} (expected c2, c3 or comb)"
            )))
        }
    };
    reject_leftovers(&kv, desc)?;
    Ok(KernelSpec::delta_comb(offsets)?)
}

fn parse_u64_list(raw: &str) -> Result<Vec<u64>, Error> {
    let list: Result<Vec<u64>, _> = raw.split(',').map(|tok| tok.trim().parse()).collect();
    let list = list.map_err(|_| Error::Parse(format!("bad integer list {raw:?}")))?;
    if list.is_empty() {
        return Err(Error::Parse("empty grid".into()));
    }
    Ok(list)
}

fn parse_f64_list(raw: &str) -> Result<Vec<f64>, Error> {
    let list: Result<Vec<f64>, _> = raw.split(',').map(|tok| tok.trim().parse()).collect();
    list.map_err(|_| Error::Parse(format!("bad number list {raw:?}")))
}

fn write_text(path: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => fs::write(p, text).map_err(Error::from),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(Error::from)
        }
    }
}

/// Sibling path for the JSON summary of a CSV artifact.
fn fit_path(base: &Option<PathBuf>) -> Option<PathBuf> {
    base.as_ref().map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(".fit.json");
        PathBuf::from(s)
    })
}

fn cmd_typicality(
    modes: &str,
    kernel: &str,
    output: &Option<PathBuf>,
) -> Result<Verdict, Error> {
    let modes = parse_modes(modes)?;
    let kernel = parse_kernel(kernel)?;
    let report = analyze(&kernel, &modes)?;
    let mut doc = serde_json::to_value(&report).expect("report serializes");
    doc["schema"] = json!(SCHEMA_TYPICALITY);
    if matches!(modes, ModePair::FarFieldGaussian { .. }) {
        let profile = convolution_profile(&modes)?;
        doc["suppression_exponent"] = json!(profile.suppression_exponent());
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("json renders");
    text.push('\n');
    write_text(output, &text)?;
    Ok(report.verdict)
}

fn cmd_scan(
    modes: &str,
    x: f64,
    alpha: f64,
    n_grid: &str,
    output: &Option<PathBuf>,
) -> Result<(), Error> {
    let modes = parse_modes(modes)?;
    let grid = parse_u64_list(n_grid)?;
    let scan = scaling_scan(&modes, x, alpha, &grid)?;
    let mut csv = format!("# schema: {SCHEMA_SCAN}\nN,n,alpha,mean,var,relfluct,stderr\n");
    for p in &scan.points {
        csv.push_str(&format!(
            "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            p.n_particles, p.subspace_dim, alpha, p.mean, p.variance, p.rel_fluct, p.stderr
        ));
    }
    write_text(output, &csv)?;
    let fit = json!({
        "schema": SCHEMA_SCAN_FIT,
        "alpha": alpha,
        "x": x,
        "slope": scan.slope,
        "slope_stderr": scan.slope_stderr,
        "points": scan.points.len(),
    });
    let mut text = serde_json::to_string_pretty(&fit).expect("json renders");
    text.push('\n');
    write_text(&fit_path(output), &text)
}

fn cmd_moments(k: usize, m: usize, output: &Option<PathBuf>) -> Result<(), Error> {
    let poly = moment_sum(k, m)?;
    let terms: Vec<serde_json::Value> = poly
        .terms()
        .map(|(&(p, q), c)| {
            json!({
                "n_particles_power": p,
                "dim_power": q,
                "coefficient": c.to_string(),
                "coefficient_f64": rat_to_f64(c),
            })
        })
        .collect();
    let doc = json!({
        "schema": SCHEMA_MOMENTS,
        "k": k,
        "m": m,
        "terms": terms,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json renders");
    text.push('\n');
    write_text(output, &text)
}

fn cmd_pattern(
    modes: &str,
    n_particles: u64,
    dim: usize,
    bins: usize,
    seed: u64,
    output: &Option<PathBuf>,
) -> Result<(), Error> {
    let modes = parse_modes(modes)?;
    let params = SystemParams::new(n_particles, dim)?;
    let mut rng = stream_rng(seed, 0);
    let run = simulate_pattern(&params, &modes, bins, &mut rng)?;
    let mut csv = format!("# schema: {SCHEMA_PATTERN}\nbin_center,counts\n");
    for (center, count) in run.bin_centers.iter().zip(&run.counts) {
        csv.push_str(&format!("{center},{count}\n"));
    }
    write_text(output, &csv)?;
    let fit = json!({
        "schema": SCHEMA_PATTERN_FIT,
        "V": run.fit.visibility,
        "phi": run.fit.phi,
        "period": run.fit.period,
        "chi2": run.fit.chi2,
        "seed": seed,
    });
    let mut text = serde_json::to_string_pretty(&fit).expect("json renders");
    text.push('\n');
    write_text(&fit_path(output), &text)?;
    // Smoke-check the empirical pair correlation machinery on the run; the
    // result is cheap and callers can rebuild it from the positions.
    let grid: Vec<f64> = (0..bins).map(|i| i as f64 / bins as f64).collect();
    let _ = empirical_C2(&run.positions, &grid)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_curve(
    modes: &str,
    n_particles: u64,
    dim: usize,
    x_grid: &str,
    with_run: bool,
    seed: u64,
    output: &Option<PathBuf>,
) -> Result<(), Error> {
    let modes = parse_modes(modes)?;
    let params = SystemParams::new(n_particles, dim)?;
    let xs = parse_f64_list(x_grid)?;
    let state = if with_run {
        let mut rng = stream_rng(seed, 0);
        Some(twomode_core::montecarlo::sample_state(&params, &mut rng))
    } else {
        None
    };
    let curve = correlation_curve(&modes, &params, &xs, state.as_ref())?;
    let mut csv = format!("# schema: {SCHEMA_CURVE}\nx,exact_trace,leading_formula,run_expectation\n");
    for p in &curve {
        let run = p
            .run_expectation
            .map(|v| format!("{v:.12e}"))
            .unwrap_or_default();
        csv.push_str(&format!(
            "{},{:.12e},{:.12e},{run}\n",
            p.x, p.exact_trace, p.leading_formula
        ));
    }
    write_text(output, &csv)
}

fn run(cli: &Cli) -> Result<Verdict, Error> {
    match &cli.command {
        Command::Typicality { modes, kernel, output } => cmd_typicality(modes, kernel, output),
        Command::Scan { modes, x, alpha, n_grid, output } => {
            cmd_scan(modes, *x, *alpha, n_grid, output).map(|()| Verdict::Typical)
        }
        Command::Moments { k, m, output } => {
            cmd_moments(*k, *m, output).map(|()| Verdict::Typical)
        }
        Command::Pattern { modes, n_particles, dim, bins, output } => {
            cmd_pattern(modes, *n_particles, *dim, *bins, cli.seed, output)
                .map(|()| Verdict::Typical)
        }
        Command::Curve { modes, n_particles, dim, x_grid, with_run, output } => {
            cmd_curve(modes, *n_particles, *dim, x_grid, *with_run, cli.seed, output)
                .map(|()| Verdict::Typical)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("TWOMODE_THREADS") {
        match threads.parse::<usize>() {
            Ok(count) if count > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(count).build_global();
            }
            _ => {
                eprintln!("error: TWOMODE_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(1);
            }
        }
    }
    match run(&cli) {
        Ok(Verdict::Typical) => ExitCode::SUCCESS,
        Ok(Verdict::NotTypical) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
