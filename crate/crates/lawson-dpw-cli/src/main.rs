//! `lawson-dpw`: command-line front end. Machine-readable JSON goes to
//! stdout, human summaries to stderr.
//!
//! Exit codes: 0 ok, 2 usage or input, 3 numeric failure, 4 no convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C64;
use serde_json::json;

use lawson_dpw::checks::{junit_xml, run_checks, CheckConfig};
use lawson_dpw::fuchsian::{
    check_symmetric, coordinates_us, make_normal_form, make_us, modulus_u, parabolic_structure, stability,
    FuchsianSystem, StabilityClass, LINE_TOL,
};
use lawson_dpw::loopalg::eigenvalues_tracefree;
use lawson_dpw::monodromy::{monodromy_of, monodromy_rep, LoopSet, MonodromyRep, TransportOptions};
use lawson_dpw::potential::{
    check_nilpotent_residue, check_quadric, check_symmetries, first_order_seed, genus_of_t, residue_form, t_of_genus,
    unit_circle_samples, PotentialCoefficients,
};
use lawson_dpw::solver::{area_series, continue_with, verify_solution, ClosingConfig, SolveResult};
use lawson_dpw::surface::{
    clifford_torus_mesh, export_obj, great_sphere_mesh, load_obj, numeric_area, reconstruct_surface, ObjHeader,
    SurfaceMesh, SurfaceOptions,
};
use lawson_dpw::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "lawson-dpw", version, about = "Fuchsian systems and the DPW construction of the Lawson surfaces")]
struct Cli {
    /// Worker threads for residual, Jacobian and mesh evaluation.
    #[arg(long, global = true, env = "LAWSON_DPW_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stability, modulus, (u, s) coordinates and symmetry of a Fuchsian system.
    Moduli(ModuliArgs),
    /// Monodromy matrices and traces.
    Monodromy(MonodromyArgs),
    /// Potential coefficient files.
    #[command(subcommand)]
    Potential(PotentialCmd),
    /// Solves the monodromy problem by continuation in t.
    Solve(SolveArgs),
    /// Area series and, optionally, the area of a mesh.
    Area(AreaArgs),
    /// Reconstructs the compact surface and writes an OBJ mesh.
    Surface(SurfaceArgs),
    /// Seeded randomized invariant suites.
    Check(CheckArgs),
}

#[derive(Args)]
struct ModuliArgs {
    /// FuchsianSystem JSON to analyse.
    input: Option<PathBuf>,
    /// Write the system ∇^{u,s} with this u instead of reading one.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    u: Option<C64>,
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true, default_value = "0")]
    s: C64,
    #[arg(long, default_value_t = 0.125)]
    rho: f64,
    /// Output path for the generated system.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail on systems that are not stable instead of reporting the lenient modulus.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct MonodromyArgs {
    /// FuchsianSystem JSON, or potential coefficients with `--lambda`.
    input: PathBuf,
    /// Spectral parameter at which a coefficient file is evaluated.
    #[arg(long, value_parser = parse_complex, allow_hyphen_values = true)]
    lambda: Option<C64>,
    #[arg(long, default_value_t = 1e-12)]
    rtol: f64,
}

#[derive(Subcommand)]
enum PotentialCmd {
    /// Validates quadric, nilpotency, symmetry and residue eigenvalues.
    Check {
        coeffs: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Writes the first-order seed.
    Seed {
        #[arg(long)]
        t: f64,
        #[arg(long = "N", default_value_t = 6)]
        n: i32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, conflicts_with = "t", required_unless_present = "t")]
    genus: Option<u32>,
    #[arg(long)]
    t: Option<f64>,
    /// Laurent truncation; defaults grow with t.
    #[arg(long = "N")]
    n: Option<i32>,
    #[arg(long, default_value = "coeffs.json")]
    out: PathBuf,
    /// Continuation trace CSV; defaults to the output path with `.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// ClosingConfig JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Starting angle of the continuation.
    #[arg(long, default_value_t = 0.01)]
    t_start: f64,
}

#[derive(Args)]
struct AreaArgs {
    #[arg(long)]
    t: f64,
    /// OBJ mesh whose area is compared with the series.
    #[arg(long)]
    mesh: Option<PathBuf>,
}

#[derive(Args)]
struct SurfaceArgs {
    /// Solved coefficients.
    #[arg(long, required_unless_present = "fixture")]
    coeffs: Option<PathBuf>,
    /// Writes a closed-form test mesh instead: `clifford` or `sphere`.
    #[arg(long, conflicts_with = "coeffs")]
    fixture: Option<String>,
    /// Refinement level; each level halves the mesh spacing.
    #[arg(long, default_value_t = 0)]
    refine: u32,
    #[arg(long, default_value = "mesh.obj")]
    out: PathBuf,
    /// CSV row `t,area_mesh,area_series`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Only suites whose name contains this string.
    #[arg(long)]
    filter: Option<String>,
    /// Multiplies every upper-bound tolerance.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
    /// JUnit XML report path.
    #[arg(long)]
    junit: Option<PathBuf>,
}

/// Exit with this code after the report has been printed.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn parse_complex(s: &str) -> Result<C64, String> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || format!("cannot parse `{s}` as a complex number (use 1.5, -2i, 0.3+0.4i or 0.3,0.4)");
    if let Some((a, b)) = s.split_once(',') {
        return Ok(C64::new(a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?));
    }
    let Some(body) = s.strip_suffix('i') else {
        return s.parse::<f64>().map(|x| C64::new(x, 0.0)).map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len()).rev().find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        x => x.parse().map_err(|_| bad())?,
    };
    Ok(C64::new(re.parse().map_err(|_| bad())?, im))
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| anyhow!(Error::Input(format!("{}: {e}", path.display()))))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| anyhow!(Error::Io(format!("{}: {e}", path.display()))))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| anyhow!(Error::Input(format!("{}: {e}", path.display()))))
}

fn load_system(path: &Path) -> anyhow::Result<FuchsianSystem> {
    let raw: FuchsianSystem = parse_json(path)?;
    Ok(FuchsianSystem::new(raw.punctures, raw.residues, raw.rho, 1e-8)?)
}

fn load_coeffs(path: &Path) -> anyhow::Result<PotentialCoefficients> {
    Ok(PotentialCoefficients::from_json(&read(path)?)?)
}

fn print(v: &serde_json::Value) {
    use std::io::Write;
    // A closed pipe downstream is not an error of ours.
    let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(v).expect("json"));
}

fn cjson(z: C64) -> serde_json::Value {
    json!([z.re, z.im])
}

fn fmt_c(z: C64) -> String {
    let r = |x: f64| {
        let y = (x * 1e9).round() / 1e9;
        if y == 0.0 { 0.0 } else { y }
    };
    if r(z.im) == 0.0 {
        format!("{}", r(z.re))
    } else {
        format!("{}{:+}i", r(z.re), r(z.im))
    }
}

fn cmd_moduli(a: ModuliArgs) -> anyhow::Result<()> {
    let sys = match (&a.input, a.u) {
        (Some(p), None) => load_system(p)?,
        (None, Some(u)) => {
            let sys = if a.s == C64::new(0.0, 0.0) { make_normal_form(u, a.rho)? } else { make_us(u, a.s, a.rho)? };
            if let Some(out) = &a.out {
                write(out, &serde_json::to_string_pretty(&sys)?)?;
            }
            sys
        }
        _ => bail!(Error::Input("give either an input file or --u".into())),
    };
    let par = parabolic_structure(&sys)?;
    let class = stability(&par, LINE_TOL);
    let modulus = modulus_u(&sys, a.strict)?;
    let (symmetric, _, _) = check_symmetric(&sys);
    let mut report = json!({
        "stability": format!("{class:?}"),
        "modulus": modulus,
        "rho": sys.rho,
        "symmetric": symmetric,
    });
    match class {
        StabilityClass::Stable => {
            let (u, s, _) = coordinates_us(&sys)?;
            report["u"] = cjson(u);
            report["s"] = cjson(s);
            eprintln!("stable, u={}, s={}", fmt_c(u), fmt_c(s));
        }
        StabilityClass::StrictlySemistable => eprintln!("strictly semistable, u\u{2192}{modulus} (lenient)"),
        StabilityClass::Unstable => eprintln!("unstable"),
    }
    print(&report);
    Ok(())
}

fn rep_json(rep: &MonodromyRep, relation: [usize; 4]) -> serde_json::Value {
    json!({
        "matrices": rep.m.iter().map(|m| m.m.iter().map(|z| cjson(*z)).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "traces": rep.m.iter().map(|m| cjson(m.trace())).collect::<Vec<_>>(),
        "relation": relation,
        "relation_defect": rep.relation_defect(relation),
    })
}

fn cmd_monodromy(a: MonodromyArgs) -> anyhow::Result<()> {
    let text = read(&a.input)?;
    let (rep, relation) = match a.lambda {
        Some(lam) => {
            let co = PotentialCoefficients::from_json(&text)?;
            let loops = LoopSet::p_chart();
            (monodromy_of(&residue_form(&co, lam)?, &loops, &TransportOptions::with_rtol(a.rtol))?, loops.relation)
        }
        None => {
            let sys = load_system(&a.input)?;
            (monodromy_rep(&sys)?, LoopSet::of(sys.punctures.normalization).relation)
        }
    };
    let report = rep_json(&rep, relation);
    eprintln!("relation defect {:.3e}", report["relation_defect"].as_f64().unwrap_or(f64::NAN));
    print(&report);
    Ok(())
}

fn cmd_potential(c: PotentialCmd) -> anyhow::Result<()> {
    match c {
        PotentialCmd::Seed { t, n, out } => {
            let co = first_order_seed(t, n)?;
            write(&out, &co.to_json())?;
            eprintln!("seed at t={t} with N={n} written to {}", out.display());
            Ok(())
        }
        PotentialCmd::Check { coeffs, tol } => {
            let co = load_coeffs(&coeffs)?;
            let quadric = check_quadric(&co);
            let nilpotent = check_nilpotent_residue(&co)?;
            let (delta, tau) = check_symmetries(&co);
            let mut ev = 0.0f64;
            for lam in unit_circle_samples(16) {
                for r in &residue_form(&co, lam)?.residues {
                    ev = ev.max((eigenvalues_tracefree(r)?.0 - co.t).norm());
                }
            }
            let ok = [quadric, nilpotent, delta, tau, ev].iter().all(|x| *x <= tol);
            print(&json!({
                "t": co.t, "N": co.n, "tol": tol, "valid": ok,
                "quadric": quadric, "nilpotency": nilpotent,
                "delta_symmetry": delta, "tau_symmetry": tau, "residue_eigenvalues": ev,
            }));
            eprintln!("quadric {quadric:.2e}, nilpotency {nilpotent:.2e}, symmetry {:.2e}, eigenvalues {ev:.2e}", delta.max(tau));
            if !ok {
                bail!(Error::QuadricViolation(quadric.max(nilpotent).max(delta).max(tau).max(ev)));
            }
            Ok(())
        }
    }
}

fn write_trace(path: &Path, rows: &[(f64, f64, usize)]) -> anyhow::Result<()> {
    let mut s = String::from("t,residual,iterations\n");
    for (t, r, i) in rows {
        s += &format!("{t},{r:e},{i}\n");
    }
    write(path, &s)
}

fn cmd_solve(a: SolveArgs) -> anyhow::Result<()> {
    let t = match (a.genus, a.t) {
        (Some(g), _) => t_of_genus(g)?,
        (None, Some(t)) => t,
        (None, None) => bail!(Error::Input("give --genus or --t".into())),
    };
    if !(t > 0.0 && t <= 0.25) {
        bail!(Error::InvalidAngle(t));
    }
    let mut cfg: ClosingConfig = match &a.config {
        Some(p) => parse_json(p)?,
        None => ClosingConfig::default(),
    };
    if a.n.is_some() {
        cfg.truncation = a.n;
    }
    if let Some(tol) = a.tol {
        cfg.newton_tol = tol;
    }
    if let Some(step) = a.step {
        cfg.continuation_step = step;
    }
    let trace_path = a.trace.clone().unwrap_or_else(|| a.out.with_extension("trace.csv"));
    let mut rows = Vec::new();
    let mut last: Option<SolveResult> = None;
    let t0 = a.t_start.min(t);
    let res = continue_with(t0, t, &cfg, |s| {
        eprintln!("t {:.5} residual {:.2e} iterations {}", s.coeffs.t, s.residual_norm, s.newton_iterations);
        rows.push((s.coeffs.t, s.residual_norm, s.newton_iterations));
        last = Some(s.clone());
    });
    write_trace(&trace_path, &rows)?;
    if let Err(e) = res {
        if let Some(s) = &last {
            eprintln!("reached t = {} before failing; trace in {}", s.coeffs.t, trace_path.display());
        }
        return Err(e.into());
    }
    let sol = last.expect("continuation returns at least one solution");
    write(&a.out, &sol.coeffs.to_json())?;
    let v = verify_solution(&sol.coeffs, &cfg)?;
    print(&json!({
        "t": sol.coeffs.t, "N": sol.coeffs.n, "residual": sol.residual_norm,
        "iterations": sol.newton_iterations, "steps": rows.len(), "verification": v,
        "out": a.out, "trace": trace_path,
    }));
    Ok(())
}

fn cmd_area(a: AreaArgs) -> anyhow::Result<()> {
    if !(0.0..=0.25).contains(&a.t) {
        bail!(Error::InvalidAngle(a.t));
    }
    let series = area_series(a.t);
    let mut report = json!({ "t": a.t, "area_series": series });
    eprintln!("area series {series:.5}");
    if let Some(p) = &a.mesh {
        let (mesh, _) = load_obj(p)?;
        let area = numeric_area(&mesh);
        let gap = (area - series).abs() / area;
        report["area_mesh"] = json!(area);
        report["relative_gap"] = json!(gap);
        eprintln!("mesh area {area:.5}, relative gap {gap:.2e}");
    }
    print(&report);
    Ok(())
}

fn cmd_surface(a: SurfaceArgs) -> anyhow::Result<()> {
    if let Some(name) = &a.fixture {
        let n = 256usize << a.refine.min(3);
        let (mesh, header): (SurfaceMesh, ObjHeader) = match name.as_str() {
            "clifford" => (clifford_torus_mesh(n), ObjHeader { t: 0.25, genus: 1, area: 2.0 * std::f64::consts::PI.powi(2) }),
            "sphere" => (great_sphere_mesh(n / 2), ObjHeader { t: 0.0, genus: 0, area: 4.0 * std::f64::consts::PI }),
            other => bail!(Error::Input(format!("unknown fixture `{other}`"))),
        };
        export_obj(&mesh, &a.out, &header)?;
        print(&json!({ "fixture": name, "area_mesh": numeric_area(&mesh), "euler_characteristic": mesh.euler_characteristic(), "out": a.out }));
        return Ok(());
    }
    let co = load_coeffs(a.coeffs.as_deref().expect("clap requires coeffs"))?;
    genus_of_t(co.t)?;
    let opts = SurfaceOptions::default().refined(a.refine);
    let rec = reconstruct_surface(&co, &opts)?;
    export_obj(&rec.mesh, &a.out, &ObjHeader { t: rec.t, genus: rec.genus, area: rec.area })?;
    let series = area_series(rec.t);
    if let Some(csv) = &a.csv {
        write(csv, &format!("t,area_mesh,area_series\n{},{},{}\n", rec.t, rec.area, series))?;
    }
    eprintln!(
        "genus {} (chi {}), area {:.6} vs series {:.6}, cone angle {:.5} vs {:.5}",
        rec.genus,
        rec.euler_characteristic,
        rec.area,
        series,
        rec.cone_angle,
        4.0 * std::f64::consts::PI * rec.t
    );
    print(&json!({
        "t": rec.t, "genus": rec.genus, "area_mesh": rec.area, "area_coarse": rec.area_coarse,
        "area_fine": rec.area_fine, "area_series": series, "half_dirichlet_energy": rec.half_energy,
        "cone_angle": rec.cone_angle, "euler_characteristic": rec.euler_characteristic,
        "boundary_edges": rec.boundary_edges, "vertices": rec.mesh.vertices.len(),
        "triangles": rec.mesh.triangles.len(), "out": a.out,
    }));
    Ok(())
}

fn cmd_check(a: CheckArgs) -> anyhow::Result<()> {
    let cfg = CheckConfig { seed: a.seed, tolerance_scale: a.tolerance_scale };
    let records = run_checks(a.filter.as_deref(), &cfg)?;
    if let Some(p) = &a.junit {
        write(p, &junit_xml(&records))?;
    }
    for r in &records {
        eprintln!("{} {}::{} = {:.3e} (bound {:.1e})", if r.passed { "pass" } else { "FAIL" }, r.suite, r.name, r.value, r.tol);
    }
    let failed = records.iter().filter(|r| !r.passed).count();
    print(&json!({ "seed": a.seed, "passed": records.len() - failed, "failed": failed, "records": records }));
    if failed > 0 {
        bail!(Exit(3));
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(Exit(c)) = e.downcast_ref::<Exit>() {
        return *c;
    }
    match e.downcast_ref::<Error>().map(Error::class) {
        Some(ErrorClass::Numeric) => 3,
        Some(ErrorClass::NoConvergence) => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(Error::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    match cli.cmd {
        Cmd::Moduli(a) => cmd_moduli(a),
        Cmd::Monodromy(a) => cmd_monodromy(a),
        Cmd::Potential(c) => cmd_potential(c),
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Area(a) => cmd_area(a),
        Cmd::Surface(a) => cmd_surface(a),
        Cmd::Check(a) => cmd_check(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<Exit>().is_none() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
