//! One function per command. Each writes its artifacts into the output
//! directory and returns whether every check it ran passed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use confspace::families::{random_correlation, random_smooth_observable, Trig};
use confspace::functionals::{apply_ltilde, apply_ltilde_closed, bogoliubov, TestFunction};
use confspace::generators::{check_duality, EvalPath};
use confspace::hierarchy::{compare_to_simulation, integrate, write_csv_header, HierarchyState, IntegrateOptions};
use confspace::models::build_spec;
use confspace::numeric::{fmt17, Moments};
use confspace::rng::stream_rng;
use confspace::simulator::{estimate_correlations, run, write_snapshots_csv, Initial, Trajectory};
use confspace::{ConfigFn, Error, Point, Window};

use crate::config::{Command, RunConfig, ThetaSpec};
use crate::suites::{run_suite, Check, SUITES};
use crate::CliError;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_report(dir: &Path, header: &[String], checks: &[Check]) -> Result<bool, CliError> {
    let mut f = create(dir, "report.txt")?;
    for line in header {
        writeln!(f, "{line}")?;
    }
    for c in checks {
        writeln!(f, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
    }
    let ok = checks.iter().all(|c| c.passed);
    if !checks.is_empty() {
        writeln!(f, "{}", if ok { "ALL PASS" } else { "SOME CHECKS FAILED" })?;
    }
    f.flush()?;
    Ok(ok)
}

/// Runs `cfg` (with its seed already resolved) and writes artifacts to `out`.
pub fn execute(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    cfg.check_sections()?;
    std::fs::create_dir_all(out)?;
    let mut echo = cfg.clone();
    echo.output_dir = Some(out.to_path_buf());
    let mut f = create(out, "run.json")?;
    serde_json::to_writer_pretty(&mut f, &echo).map_err(std::io::Error::other)?;
    writeln!(f)?;
    f.flush()?;
    match cfg.command {
        Command::Validate => validate(cfg, out),
        Command::Simulate => simulate(cfg, out),
        Command::Hierarchy => hierarchy(cfg, out),
        Command::Functional => functional(cfg, out),
        Command::Duality => duality(cfg, out),
        Command::Crosscheck => crosscheck(cfg, out),
    }
}

fn seed(cfg: &RunConfig) -> u64 {
    cfg.seed.expect("checked by check_sections")
}

pub const DEFAULT_VALIDATE_SEED: u64 = 20_240_601;

fn validate(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let seed = cfg.seed.unwrap_or(DEFAULT_VALIDATE_SEED);
    let section = cfg.validate.clone().unwrap_or_default();
    let name = section.suite.as_deref().unwrap_or("all");
    let names: Vec<&str> = if name == "all" { SUITES.to_vec() } else { vec![name] };
    if !names.iter().all(|n| SUITES.contains(n)) {
        return Err(CliError::Config(format!("unknown suite {name:?}; expected one of {SUITES:?} or \"all\"")));
    }
    let mut checks = Vec::new();
    for n in names {
        for mut c in run_suite(n, &section.params, seed)? {
            c.name = format!("[{n}] {}", c.name);
            checks.push(c);
        }
    }
    let mut f = create(out, "checks.csv")?;
    writeln!(f, "check,passed,detail")?;
    for c in &checks {
        writeln!(f, "\"{}\",{},\"{}\"", c.name, c.passed, c.detail.replace('"', "'"))?;
    }
    f.flush()?;
    write_report(out, &[format!("validate suite={name} seed={seed}")], &checks)
}

fn correlation_rows<W: Write>(f: &mut W, trajs: &[Trajectory], window: &Window, times: &[f64], bins: usize) -> Result<(), CliError> {
    writeln!(f, "time,kind,bin_center,value,std_err")?;
    for &t in times {
        let c = estimate_correlations(trajs, window, t, bins)?;
        for (kind, list) in [("k1", &c.k1_grid), ("k2", &c.k2_radial)] {
            for b in list {
                writeln!(f, "{},{kind},{},{},{}", fmt17(t), fmt17(b.center), fmt17(b.value), fmt17(b.std_err))?;
            }
        }
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let (window, model, section) = (cfg.window()?, cfg.model()?, cfg.sim()?);
    let sim = section.to_sim(window, model, seed(cfg));
    let trajs = run(&sim)?;

    let mut f = create(out, "snapshots.csv")?;
    write_snapshots_csv(&mut f, &trajs, window.dim())?;
    f.flush()?;

    let mut f = create(out, "mean_count.csv")?;
    writeln!(f, "time,mean_count,std_err")?;
    for &t in &sim.snapshot_times {
        let mut m = Moments::default();
        for tr in &trajs {
            m.push(tr.snapshot_at(t).map_or(0, |c| c.len()) as f64);
        }
        writeln!(f, "{},{},{}", fmt17(t), fmt17(m.mean), fmt17(m.std_error()))?;
    }
    f.flush()?;

    let mut f = create(out, "events.csv")?;
    writeln!(f, "replica,initial_count,final_count,births,deaths,hops,rejected_thinning,cap_saturations,count_time_integral")?;
    for tr in &trajs {
        let e = &tr.event_counts;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            tr.replica,
            tr.initial_count,
            tr.final_config.len(),
            e.births,
            e.deaths,
            e.hops,
            e.rejected_thinning,
            e.cap_saturations,
            fmt17(tr.count_time_integral)
        )?;
    }
    f.flush()?;

    if trajs.len() >= 2 && !sim.snapshot_times.is_empty() {
        let mut f = create(out, "correlations.csv")?;
        correlation_rows(&mut f, &trajs, window, &sim.snapshot_times, section.bins)?;
        f.flush()?;
    }
    let saturated: u64 = trajs.iter().map(|t| t.event_counts.cap_saturations).sum();
    let header = vec![
        format!("simulate model={} replicas={} seed={}", model.model_id(), trajs.len(), seed(cfg)),
        format!("boundary={:?} (periodic windows use minimum-image distances)", window.boundary()),
        format!("particle cap saturations={saturated}"),
    ];
    write_report(out, &header, &[])
}

fn hierarchy_start(cfg: &RunConfig) -> Result<HierarchyState, CliError> {
    let h = cfg.hierarchy()?;
    Ok(HierarchyState::poisson(cfg.window()?, h.order, h.layout.clone(), h.initial_density)?)
}

fn hierarchy(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let (window, model, h) = (cfg.window()?, cfg.model()?, cfg.hierarchy()?);
    let integ = cfg.integrator()?.build(window, cfg.seed)?;
    let dynamics = build_spec(model, window)?;
    let s0 = hierarchy_start(cfg)?;
    let opts = IntegrateOptions { t_end: h.t_end, dt: h.dt, output_times: h.output_times.clone(), closure: h.closure };
    let res = integrate(&s0, &dynamics, &integ, &opts)?;

    let mut f = create(out, "hierarchy.csv")?;
    write_csv_header(&mut f, s0.order_n())?;
    s0.write_csv_rows(&mut f)?;
    for s in res.outputs.iter().filter(|s| s.time() > s0.time()) {
        s.write_csv_rows(&mut f)?;
    }
    if !res.outputs.last().is_some_and(|s| s.time() == res.state.time()) {
        res.state.write_csv_rows(&mut f)?;
    }
    f.flush()?;

    let mut header = vec![
        format!("hierarchy model={} order={} closure={:?}", model.model_id(), h.order, h.closure),
        format!("steps={} final_time={} mean_k1={}", res.steps, fmt17(res.state.time()), fmt17(res.state.mean_density())),
        format!("closure_clamps={} negative_steps={}", res.closure_clamps, res.negative_steps),
    ];
    header.extend(res.warnings.iter().map(|w| format!("warning: {w}")));
    if let Some(e) = &res.abort {
        header.push(format!("aborted: {e}"));
    }
    write_report(out, &header, &[])?;
    match res.abort {
        Some(e) => Err(e.into()),
        None => Ok(true),
    }
}

fn theta_of(spec: &ThetaSpec, window: &Window, seed: Option<u64>) -> Result<TestFunction, CliError> {
    Ok(match spec {
        ThetaSpec::Constant { value } => TestFunction::constant(*value, window),
        ThetaSpec::Bump { center, width, scale } => {
            let bump = TestFunction::bump(window, Point::new(center)?, *width)?;
            TestFunction::zero(window).plus_scaled(*scale, &bump)
        }
        ThetaSpec::Trig { offset, amplitude, modes } => {
            let t = Trig::random(&mut stream_rng(seed.expect("checked"), 0xf0), window, *offset, *amplitude, *modes);
            TestFunction::new(t.to_fn(), window.clone(), t.sup_bound())?
        }
    })
}

fn functional(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let (window, model, section) = (cfg.window()?, cfg.model()?, cfg.functional()?);
    let integ = cfg.integrator()?.build(window, cfg.seed)?;
    let dynamics = build_spec(model, window)?;
    let theta = theta_of(&section.theta, window, cfg.seed)?;
    let k = ConfigFn::coherent_const(section.density);
    let b = bogoliubov(&k, &theta, &integ)?;
    let mass = integ.line_integral(0, |x, _| Ok(theta.eval(x)))?;
    let generic = apply_ltilde(&dynamics, &k, &theta, &integ)?;
    let closed = match apply_ltilde_closed(model, &k, &theta, &integ) {
        Ok(v) => Some(v),
        Err(Error::UnknownModel(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let mut f = create(out, "functional.csv")?;
    writeln!(f, "quantity,value,std_error")?;
    writeln!(f, "bogoliubov,{},{}", fmt17(b.value), fmt17(b.std_error))?;
    writeln!(f, "poisson_reference,{},{}", fmt17((section.density * mass.value).exp()), fmt17(0.0))?;
    writeln!(f, "ltilde_generic,{},{}", fmt17(generic.value), fmt17(generic.std_error))?;
    if let Some(c) = &closed {
        writeln!(f, "ltilde_closed,{},{}", fmt17(c.value), fmt17(c.std_error))?;
    }
    f.flush()?;
    let header = vec![format!("functional model={} density={}", model.model_id(), section.density)];
    let checks: Vec<Check> = closed
        .iter()
        .map(|c| {
            let sigma = generic.sigma_distance(c);
            let rel = generic.relative_difference(c);
            Check {
                name: "closed vs generic L~".into(),
                passed: sigma <= 3.0 || rel <= 1e-8,
                detail: format!("{sigma:.2} combined sigma, relative {rel:.3e}"),
            }
        })
        .collect();
    write_report(out, &header, &checks)
}

fn duality(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let (window, model, section) = (cfg.window()?, cfg.model()?, cfg.duality()?);
    let isec = cfg.integrator()?;
    let integ = isec.build(window, cfg.seed)?;
    let dynamics = build_spec(model, window)?;
    let mut rng = stream_rng(seed(cfg), 0xd0);
    let mut f = create(out, "duality.csv")?;
    writeln!(f, "trial,lhs,lhs_std_error,rhs,rhs_std_error,sigma_distance,relative_difference")?;
    let mut checks = Vec::new();
    for t in 0..section.trials {
        let g = random_smooth_observable(&mut rng, window, section.g_order, 1.0);
        let k = random_correlation(&mut rng, window, section.k_order, section.pair_amplitude);
        let r = check_duality(&dynamics, &g, &k, &integ, EvalPath::Product)?;
        writeln!(
            f,
            "{t},{},{},{},{},{},{}",
            fmt17(r.lhs.value),
            fmt17(r.lhs.std_error),
            fmt17(r.rhs.value),
            fmt17(r.rhs.std_error),
            fmt17(r.sigma_distance),
            fmt17(r.relative_difference)
        )?;
        let passed = if isec.is_stochastic() { r.sigma_distance <= section.max_sigma } else { r.relative_difference <= section.max_relative };
        checks.push(Check {
            name: format!("duality trial {t}"),
            passed,
            detail: format!("lhs {:.6e} rhs {:.6e}; {:.2} sigma; relative {:.3e}", r.lhs.value, r.rhs.value, r.sigma_distance, r.relative_difference),
        });
    }
    f.flush()?;
    write_report(out, &[format!("duality model={} seed={}", model.model_id(), seed(cfg))], &checks)
}

fn crosscheck(cfg: &RunConfig, out: &Path) -> Result<bool, CliError> {
    let (window, model, section, h) = (cfg.window()?, cfg.model()?, cfg.sim()?, cfg.hierarchy()?);
    let max_z = cfg.crosscheck.as_ref().map_or(4.0, |c| c.max_abs_z);
    if let Initial::Poisson { z } = section.initial {
        if z != h.initial_density {
            return Err(CliError::Config(format!("sim initial intensity {z} differs from hierarchy initial_density {}", h.initial_density)));
        }
    } else {
        return Err(CliError::Config("crosscheck needs a Poisson initial state".into()));
    }
    let sim = section.to_sim(window, model, seed(cfg));
    let trajs = run(&sim)?;
    let integ = cfg.integrator()?.build(window, cfg.seed)?;
    let dynamics = build_spec(model, window)?;
    let s0 = hierarchy_start(cfg)?;
    let t_end = sim.snapshot_times.iter().copied().fold(0.0, f64::max);
    let opts = IntegrateOptions { t_end, dt: h.dt, output_times: sim.snapshot_times.clone(), closure: h.closure };
    let res = integrate(&s0, &dynamics, &integ, &opts)?;
    if let Some(e) = res.abort {
        return Err(e.into());
    }
    let mut f = create(out, "crosscheck.csv")?;
    writeln!(f, "time,bin_center,hierarchy,simulated,std_err,z")?;
    let mut checks = Vec::new();
    for state in &res.outputs {
        let corr = estimate_correlations(&trajs, window, state.time(), section.bins)?;
        let rep = compare_to_simulation(state, &corr)?;
        let hv = state.density_slabs(section.bins)?;
        for ((b, z), v) in corr.k1_grid.iter().zip(&rep.z_scores).zip(&hv) {
            writeln!(f, "{},{},{},{},{},{}", fmt17(state.time()), fmt17(b.center), fmt17(*v), fmt17(b.value), fmt17(b.std_err), fmt17(*z))?;
        }
        checks.push(Check {
            name: format!("k1 at t={}", state.time()),
            passed: rep.max_abs_z < max_z,
            detail: format!(
                "max |z| {:.2}, mean |z| {:.2}; hierarchy mean {:.5}, simulated mean {:.5}",
                rep.max_abs_z, rep.mean_abs_z, rep.hierarchy_mean, rep.simulated_mean
            ),
        });
    }
    f.flush()?;
    let header = vec![format!("crosscheck model={} replicas={} seed={}", model.model_id(), trajs.len(), seed(cfg))];
    write_report(out, &header, &checks)
}
