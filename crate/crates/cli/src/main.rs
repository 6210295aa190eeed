//! `lorentz-lens`: batch driver for tracing, synthesis, blinding and
//! reconstruction on the built-in scenarios.

mod config;
mod output;
mod reconstruct;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lorentz_lens::dnsynth::{
    blind, gliding_window, BlindedView, LiveProbe, BLINDED_SCHEMA, TRUTH_SCHEMA,
};
use lorentz_lens::flow::{
    gliding_geodesic_deviation, trace_broken, trace_gliding, FlowOptions, TimeDirection,
};
use lorentz_lens::geometry::{BoundaryCovector, CovectorClass, ManifoldModel};
use lorentz_lens::lens::{
    lens_differential, lens_inverse, lens_map, phase_coords, symplectic_residual,
};
use lorentz_lens::recon::{
    check_conformal_relation, equation_residuals, log_conformal_ratio, null_covectors,
    RelationReport,
};
use lorentz_lens::scenarios::{make_conformal_variant, Scenario};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use config::{interior_grid, RunConfig, DEFAULT_CONFIG};
use output::{columns, float, floats, OutDir, Svg};
use reconstruct::{
    attach_truth_deltas, breaches, estimate, read_blinded, TruthCapability, RECON_SCHEMA,
};

#[derive(Parser, Debug)]
#[command(
    name = "lorentz-lens",
    version,
    about = "Broken null bicharacteristics, lens relations and boundary reconstruction"
)]
struct Cli {
    /// Run configuration (TOML); the built-in cylinder config when omitted.
    #[arg(long, global = true, env = "LLENS_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "LLENS_JOBS")]
    jobs: Option<usize>,
    /// Seed for randomized probes (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Exit nonzero when any acceptance threshold is breached.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Admissibility of the scenario on a boundary grid.
    Check,
    /// Broken trajectories with their reflection events.
    Trace,
    /// Gliding rays from the glancing directions over U.
    Glide,
    /// Lens relation tables for the probe sources.
    Lens,
    /// Blinded measurements over V plus the truth sidecar.
    Synth,
    /// Reconstruction from the blinded measurements.
    Reconstruct {
        /// Blinded view (defaults to OUT/blinded.json).
        #[arg(long)]
        blinded: Option<PathBuf>,
        /// Truth sidecar for the delta step (defaults to OUT/truth.json).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Gauge invariance of the measurements and the conformal-factor relation.
    GaugeTest,
    /// Human-readable summary of the artifacts in OUT.
    Report,
    /// Print the built-in configuration.
    DefaultConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()?;
    }
    if matches!(cli.command, Command::DefaultConfig) {
        print!("{DEFAULT_CONFIG}");
        return Ok(ExitCode::SUCCESS);
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse(DEFAULT_CONFIG)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out_path = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
    let scenario = cfg.scenario.build().context("building scenario")?;
    let mut out = OutDir::open(&out_path)?;
    let ok = match &cli.command {
        Command::Check => check(&cfg, &scenario, &mut out)?,
        Command::Trace => trace(&cfg, &scenario, &mut out)?,
        Command::Glide => glide(&cfg, &scenario, &mut out)?,
        Command::Lens => lens(&cfg, &scenario, &mut out)?,
        Command::Synth => synth(&cfg, &scenario, &mut out)?,
        Command::Reconstruct { blinded, truth } => {
            let blinded = blinded.clone().unwrap_or_else(|| out.path("blinded.json"));
            let truth = truth.clone().unwrap_or_else(|| out.path("truth.json"));
            run_reconstruct(&cfg, &scenario, &mut out, &blinded, truth)?
        }
        Command::GaugeTest => gauge_test(&cfg, &scenario, &mut out)?,
        Command::Report => report(&mut out)?,
        Command::DefaultConfig => unreachable!(),
    };
    out.finish()?;
    Ok(if ok || !cli.strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

/// Boundary grid covering both regions in time and the whole angle range.
fn boundary_grid(cfg: &RunConfig) -> Vec<Vec<f64>> {
    let (u, v) = (&cfg.regions.u, &cfg.regions.v);
    let t0 = u.lo[0].min(v.lo[0]);
    let t1 = u.hi[0].max(v.hi[0]);
    let ts: Vec<f64> = (0..5).map(|i| t0 + (t1 - t0) * i as f64 / 4.0).collect();
    let angles: Vec<f64> = (0..32)
        .map(|i| std::f64::consts::TAU * i as f64 / 32.0)
        .collect();
    let mut out = vec![];
    for &t in &ts {
        if cfg.dim() == 3 {
            out.extend(angles.iter().map(|a| vec![t, *a]));
        } else {
            for k in 1..8 {
                let polar = 0.4 + (std::f64::consts::PI - 0.8) * k as f64 / 8.0;
                out.extend(angles.iter().step_by(2).map(|a| vec![t, polar, *a]));
            }
        }
    }
    out
}

fn check(cfg: &RunConfig, s: &Scenario, out: &mut OutDir) -> Result<bool> {
    let report = s.model.check_admissibility(&boundary_grid(cfg), 8);
    out.write_json(
        "admissibility.json",
        "lorentz-lens/admissibility@1",
        &report,
    )?;
    println!(
        "{}: admissibility {} on {} boundary points, min II = {}",
        s.name,
        if report.pass { "pass" } else { "FAIL" },
        report.points.len(),
        report.min_second_fundamental_form
    );
    Ok(report.pass)
}

fn hyperbolic_sources(cfg: &RunConfig, model: &ManifoldModel) -> Vec<BoundaryCovector> {
    cfg.sources()
        .into_iter()
        .filter_map(|(x, xi)| model.classify_covector(&x, &xi).ok())
        .filter(|b| b.class == CovectorClass::Hyperbolic)
        .collect()
}

fn trace_sources(cfg: &RunConfig, model: &ManifoldModel) -> Result<Vec<BoundaryCovector>> {
    if cfg.trace.sources.is_empty() {
        let all = hyperbolic_sources(cfg, model);
        let step = (all.len() / 8).max(1);
        return Ok(all.into_iter().step_by(step).take(8).collect());
    }
    cfg.trace
        .sources
        .iter()
        .map(|s| Ok(model.classify_covector(&s.x, &s.xi)?))
        .collect()
}

/// Plane used for plots of interior points: the spatial disc for n = 3,
/// the first two spatial axes for n = 4.
fn spatial(x: &[f64]) -> [f64; 2] {
    [x[1], x[2]]
}

fn trace(cfg: &RunConfig, s: &Scenario, out: &mut OutDir) -> Result<bool> {
    let n = cfg.dim();
    let m = n - 1;
    let sources = trace_sources(cfg, &s.model)?;
    let opts = cfg.flow_options().recording();
    let trajs: Vec<_> = sources
        .par_iter()
        .map(|src| trace_broken(&s.model, src, &cfg.window(), &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut header: Vec<String> = vec!["traj_id".into(), "arc_id".into(), "s".into()];
    header.extend(columns("x", n));
    header.extend(columns("xi", n));
    header.push("p_residual".into());
    let mut rows = vec![];
    let mut ev_rows = vec![];
    let mut worst_shell: f64 = 0.0;
    let radius = s.model.boundary.radius;
    let mut svg = Svg::new([-1.1 * radius, -1.1 * radius], [1.1 * radius, 1.1 * radius]);
    let circle: Vec<[f64; 2]> = (0..=128)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 128.0;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    svg.polyline(&circle, 5);
    for (id, tr) in trajs.iter().enumerate() {
        worst_shell = worst_shell.max(tr.max_shell());
        for (a, arc) in tr.arcs.iter().enumerate() {
            for smp in &arc.samples {
                let mut r = vec![id.to_string(), a.to_string(), float(smp.s)];
                r.extend(floats(&smp.x));
                r.extend(floats(&smp.xi));
                r.push(float(smp.p_residual));
                rows.push(r);
            }
            let pts: Vec<[f64; 2]> = arc.samples.iter().map(|p| spatial(&p.x)).collect();
            svg.polyline(&pts, id);
        }
        for (k, ev) in tr.events.iter().enumerate() {
            let mut r = vec![id.to_string(), (k + 1).to_string(), float(ev.s)];
            r.extend(floats(&ev.covector.base));
            r.extend(floats(&ev.covector.covec));
            r.extend([
                float(ev.normal),
                float(ev.tau),
                float(ev.a_integral),
                float(ev.shell_at_hit),
            ]);
            ev_rows.push(r);
            svg.dot(spatial(&ev.point), id);
        }
    }
    out.write_csv(
        "trajectories.csv",
        "lorentz-lens/trajectories@1",
        &header,
        &rows,
    )?;
    let mut ev_header: Vec<String> = vec!["traj_id".into(), "k".into(), "s".into()];
    ev_header.extend(columns("xb", m));
    ev_header.extend(columns("eta", m));
    ev_header.extend(["xi_n", "tau", "a_integral", "shell_at_hit"].map(String::from));
    out.write_csv("events.csv", "lorentz-lens/events@1", &ev_header, &ev_rows)?;
    out.write(
        "trajectories.svg",
        "lorentz-lens/svg@1",
        svg.render("broken trajectories").as_bytes(),
    )?;
    let ok = worst_shell <= cfg.tolerances.shell;
    println!(
        "{} trajectories, {} events, max shell residual {worst_shell:e}",
        trajs.len(),
        ev_rows.len()
    );
    Ok(ok)
}

/// Future glancing covectors at a boundary point (both for n = 3, a ring for n = 4).
fn glancing_sources(model: &ManifoldModel, xb: &[f64]) -> Vec<BoundaryCovector> {
    let cometric = model
        .boundary_metric(xb)
        .try_inverse()
        .expect("Lorentzian boundary metric");
    let t = model.boundary_timelike(xb);
    null_covectors(&cometric, 6)
        .into_iter()
        .map(|v| if v.dot(&t) > 0.0 { -v } else { v })
        .filter_map(|v| model.classify_covector(xb, v.as_slice()).ok())
        .filter(|b| b.class == CovectorClass::Glancing)
        .collect()
}

#[derive(Serialize)]
struct GlideSummary {
    rays: usize,
    max_geodesic_deviation: f64,
}

fn glide(cfg: &RunConfig, s: &Scenario, out: &mut OutDir) -> Result<bool> {
    let m = cfg.dim() - 1;
    let sources: Vec<BoundaryCovector> = interior_grid(&cfg.regions.u, &cfg.recon.cone_counts)
        .iter()
        .flat_map(|xb| glancing_sources(&s.model, xb))
        .collect();
    let tol = cfg.flow_options().tol;
    let results: Vec<_> = sources
        .par_iter()
        .map(|src| {
            let w = gliding_window(src.base[0] + cfg.trace.glide_t, cfg.trace.glide_ds);
            let ray = trace_gliding(&s.model, src, &w, TimeDirection::Forward, tol)?;
            let dev = gliding_geodesic_deviation(&s.model, src, &w, tol)?;
            Ok((ray, dev))
        })
        .collect::<Result<Vec<_>, lorentz_lens::flow::FlowError>>()?;
    let mut header: Vec<String> = vec!["ray_id".into(), "s".into()];
    header.extend(columns("xb", m));
    header.extend(columns("eta", m));
    let mut rows = vec![];
    let p = m - 1;
    let mut svg = Svg::fitted(results.iter().flat_map(|(r, _)| {
        r.samples
            .iter()
            .map(move |g| [lorentz_lens::geometry::wrap_angle(g.base[p]), g.base[0]])
    }));
    let mut worst: f64 = 0.0;
    for (id, (ray, dev)) in results.iter().enumerate() {
        worst = worst.max(*dev);
        for g in &ray.samples {
            let mut r = vec![id.to_string(), float(g.s)];
            r.extend(floats(&g.base));
            r.extend(floats(&g.covec));
            rows.push(r);
        }
        let pts: Vec<[f64; 2]> = ray
            .samples
            .iter()
            .map(|g| [lorentz_lens::geometry::wrap_angle(g.base[p]), g.base[0]])
            .collect();
        svg.broken_polyline(&pts, 3.0, id);
    }
    out.write_csv("gliding.csv", "lorentz-lens/gliding@1", &header, &rows)?;
    out.write(
        "gliding.svg",
        "lorentz-lens/svg@1",
        svg.render("gliding rays (angle, t)").as_bytes(),
    )?;
    out.write_json(
        "glide.json",
        "lorentz-lens/glide-summary@1",
        &GlideSummary {
            rays: results.len(),
            max_geodesic_deviation: worst,
        },
    )?;
    println!(
        "{} gliding rays, max deviation from boundary null geodesics {worst:e}",
        results.len()
    );
    Ok(worst <= 1e-8)
}

fn lens(cfg: &RunConfig, s: &Scenario, out: &mut OutDir) -> Result<bool> {
    let m = cfg.dim() - 1;
    let chart = s.model.chart();
    let sources = hyperbolic_sources(cfg, &s.model);
    let opts = cfg.flow_options();
    let precise = FlowOptions::precise();
    let jobs: Vec<(usize, usize)> = (0..sources.len())
        .flat_map(|i| (1..=cfg.trace.lens_orders).map(move |k| (i, k)))
        .collect();
    let rows: Vec<Option<Vec<String>>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let src = &sources[i];
            let sample = lens_map(&s.model, src, k, &opts).ok()?;
            let back = lens_inverse(&s.model, &sample.target, k, &opts).ok()?;
            let mut d = chart.wrapped_diff(&back.target.base, &src.base);
            d.extend(back.target.covec.iter().zip(&src.covec).map(|(a, b)| a - b));
            let roundtrip = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let symplectic = lens_differential(&s.model, src, k, 1e-4, &precise)
                .map(|j| symplectic_residual(&j))
                .unwrap_or(f64::NAN);
            let mut r = vec![i.to_string(), k.to_string()];
            r.extend(floats(&phase_coords(src)));
            r.extend(floats(&phase_coords(&sample.target)));
            r.extend([
                float(sample.flight),
                float(sample.arrival_tau),
                float(roundtrip),
                float(symplectic),
            ]);
            Some(r)
        })
        .collect();
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    let rows: Vec<Vec<String>> = rows.into_iter().flatten().collect();
    let mut header: Vec<String> = vec!["source_id".into(), "k".into()];
    header.extend(columns("xb", m));
    header.extend(columns("xi", m));
    header.extend(columns("yb", m));
    header.extend(columns("eta", m));
    header.extend(
        [
            "flight",
            "arrival_tau",
            "roundtrip_residual",
            "symplectic_residual",
        ]
        .map(String::from),
    );
    out.write_csv("lens.csv", "lorentz-lens/lens@1", &header, &rows)?;
    let sym_col = header.len() - 1;
    let worst = rows
        .iter()
        .filter_map(|r| r[sym_col].parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    println!(
        "{} lens samples ({skipped} skipped near glancing), max symplectic residual {worst:e}",
        rows.len()
    );
    Ok(worst <= 1e-5)
}

fn live_view(
    cfg: &RunConfig,
    model: &ManifoldModel,
) -> Result<(BlindedView, lorentz_lens::dnsynth::TruthSidecar)> {
    let probe = LiveProbe::new(
        model,
        cfg.regions.u.clone(),
        cfg.regions.v.clone(),
        cfg.window(),
        cfg.flow_options(),
    )?;
    Ok(blind(&probe, &cfg.sources())?)
}

fn synth(cfg: &RunConfig, s: &Scenario, out: &mut OutDir) -> Result<bool> {
    let (view, truth) = live_view(cfg, &s.model)?;
    out.write_json("blinded.json", BLINDED_SCHEMA, &view)?;
    out.write_json("truth.json", TRUTH_SCHEMA, &truth)?;
    let hits: usize = view.probes.iter().map(|p| p.hits.len()).sum();
    println!("{} probes, {hits} hits over V", view.probes.len());
    Ok(true)
}

fn run_reconstruct(
    cfg: &RunConfig,
    s: &Scenario,
    out: &mut OutDir,
    blinded: &std::path::Path,
    truth: PathBuf,
) -> Result<bool> {
    let view = read_blinded(blinded)?;
    let mut rec = estimate(cfg, &view, &s.model)?;
    attach_truth_deltas(&mut rec, TruthCapability::grant(truth))?;
    rec.summary.breaches = breaches(cfg, &rec);
    out.write_json("reconstruction.json", RECON_SCHEMA, &rec)?;
    let sm = &rec.summary;
    println!(
        "{} probes, {} weak-lens groups, {}/{} recoverable points, cone residual {:e}",
        sm.probes,
        sm.weak_lens_groups,
        sm.recoverable_points,
        sm.scanned_points,
        sm.max_cone_residual
    );
    if sm.truth_available {
        println!(
            "truth deltas: cone {:e}, metric {:e}, one-form {:e}",
            sm.max_cone_delta.unwrap_or(f64::NAN),
            sm.max_metric_delta.unwrap_or(f64::NAN),
            sm.max_one_form_delta.unwrap_or(f64::NAN)
        );
    } else {
        println!("truth sidecar absent: deltas not computed");
    }
    for b in &sm.breaches {
        eprintln!("breach: {b}");
    }
    Ok(sm.breaches.is_empty())
}

#[derive(Serialize, Deserialize)]
struct GaugeSummary {
    records: usize,
    max_relative_dq: f64,
    relation: RelationReport,
    broken_max_gap: f64,
    broken_flagged: bool,
    equation_residual: f64,
}

fn gauge_test(cfg: &RunConfig, s: &Scenario, out: &mut OutDir) -> Result<bool> {
    let (u, v) = (&cfg.regions.u, &cfg.regions.v);
    let g = &cfg.gauge;
    let variant = make_conformal_variant(s, g.c, g.transition, u, v, g.psi.clone(), false)?;
    let broken = make_conformal_variant(s, g.c, g.transition, u, v, None, true)?;
    let (first, _) = live_view(cfg, &s.model)?;
    let (second, _) = live_view(cfg, &variant.model)?;
    let (third, _) = live_view(cfg, &broken.model)?;
    let base = s.model.clone();
    let h = move |x: &[f64]| -> DMatrix<f64> { base.boundary_metric(x) };
    let tol = cfg.tolerances.match_tol;
    let relation = check_conformal_relation(&first, &second, &h, tol, 1e-6)?;
    let broken_rel = check_conformal_relation(&first, &third, &h, tol, 1e-6)?;
    let phi = |x: &[f64]| log_conformal_ratio(&s.model, &variant.model, x);
    let eq = equation_residuals(&second, &h, &phi)
        .into_iter()
        .fold(0.0, f64::max);
    let mut rows = vec![];
    let mut worst: f64 = 0.0;
    for (i, (p1, p2)) in first.probes.iter().zip(&second.probes).enumerate() {
        for (j, (a, b)) in p1.hits.iter().zip(&p2.hits).enumerate() {
            let rel = (a.q() - b.q()).norm() / a.q().norm();
            worst = worst.max(rel);
            let r = relation.rows.iter().find(|r| r.probe == i && r.hit == j);
            rows.push(vec![
                i.to_string(),
                j.to_string(),
                float(a.q_re),
                float(a.q_im),
                float(b.q_re),
                float(b.q_im),
                float(rel),
                float(r.map_or(f64::NAN, |r| r.d_first)),
                float(r.map_or(f64::NAN, |r| r.d_second)),
            ]);
        }
    }
    let header: Vec<String> = [
        "probe",
        "hit",
        "q_re",
        "q_im",
        "q_gauge_re",
        "q_gauge_im",
        "relative_dq",
        "d_first",
        "d_second",
    ]
    .map(String::from)
    .to_vec();
    out.write_csv("gauge.csv", "lorentz-lens/gauge@1", &header, &rows)?;
    let summary = GaugeSummary {
        records: rows.len(),
        max_relative_dq: worst,
        relation: relation.clone(),
        broken_max_gap: broken_rel.max_gap,
        broken_flagged: broken_rel.flagged,
        equation_residual: eq,
    };
    out.write_json("gauge.json", "lorentz-lens/gauge-summary@1", &summary)?;
    println!(
        "{} records, max |ΔQ|/|Q| {worst:e}, relation gap {:e}, broken variant gap {:e} ({})",
        rows.len(),
        relation.max_gap,
        broken_rel.max_gap,
        if broken_rel.flagged {
            "flagged"
        } else {
            "not flagged"
        }
    );
    Ok(worst <= 1e-6 && !relation.flagged && broken_rel.flagged)
}

fn report(out: &mut OutDir) -> Result<bool> {
    let mut text = String::new();
    let read = |name: &str| -> Option<serde_json::Value> {
        std::fs::read_to_string(out.path(name))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
    };
    if let Some(a) = read("admissibility.json") {
        text += &format!(
            "admissibility: pass={} min II={}\n",
            a["pass"], a["min_second_fundamental_form"]
        );
    }
    if let Some(g) = read("glide.json") {
        text += &format!(
            "gliding: {} rays, max deviation {}\n",
            g["rays"], g["max_geodesic_deviation"]
        );
    }
    if let Some(b) = read("blinded.json") {
        let probes = b["probes"].as_array().map_or(0, |p| p.len());
        text += &format!("blinded view: {probes} probes\n");
    }
    if let Some(g) = read("gauge.json") {
        text += &format!(
            "gauge: {} records, max |dQ|/|Q| {}, relation gap {}, broken gap {} flagged={}\n",
            g["records"],
            g["max_relative_dq"],
            g["relation"]["max_gap"],
            g["broken_max_gap"],
            g["broken_flagged"]
        );
    }
    if let Some(r) = read("reconstruction.json") {
        let s = &r["summary"];
        text += &format!(
            "reconstruction: {}/{} recoverable points, {} weak-lens groups, cone residual {}\n",
            s["recoverable_points"],
            s["scanned_points"],
            s["weak_lens_groups"],
            s["max_cone_residual"]
        );
        text += &format!(
            "  truth deltas: cone {}, metric {}, one-form {}, uniform branches {}\n",
            s["max_cone_delta"],
            s["max_metric_delta"],
            s["max_one_form_delta"],
            s["uniform_branches"]
        );
        text += &format!("  determinant identity gap {}\n", s["max_determinant_gap"]);
        if let Some(b) = s["breaches"].as_array() {
            for x in b {
                text += &format!("  breach: {}\n", x.as_str().unwrap_or(""));
            }
        }
    }
    if text.is_empty() {
        text = "no artifacts found\n".into();
    }
    print!("{text}");
    out.write("report.txt", "lorentz-lens/report@1", text.as_bytes())?;
    Ok(true)
}
