//! Seeded randomized invariant suites over the algebraic and numeric
//! layers, reported as pass/fail records with the measured worst case.
//!
//! Each record compares a measured value to a bound. Upper bounds are
//! multiplied by [`CheckConfig::tolerance_scale`], so a tiny scale turns
//! every nonzero error into a reported failure.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuchsian::{
    coordinates_us, gauge_unstable_to_fuchsian, make_higgs, make_normal_form, make_us, parabolic_structure, stability,
    unstable_connection_form, verify_unstable_gauge, StabilityClass, UnstableFamilyPoint,
};
use crate::loopalg::{c, eigenvalues_tracefree, re, Matrix2c, C64};
use crate::monodromy::{monodromy_of, monodromy_rep, unitarize, FnConnection, LoopSet, MonodromyRep};
use crate::potential::{check_nilpotent_residue, check_quadric, first_order_seed, residue_form, unit_circle_samples};

/// Suite names accepted by [`run_checks`].
pub const SUITES: [&str; 5] = ["fuchsian", "unstable", "monodromy", "unitarize", "potential"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub seed: u64,
    pub tolerance_scale: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig { seed: 7, tolerance_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Passes when `value ≤ tol`.
    AtMost,
    /// Passes when `value > tol`.
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub tol: f64,
    pub passed: bool,
    pub seconds: f64,
}

struct Recorder<'a> {
    suite: &'static str,
    cfg: &'a CheckConfig,
    out: Vec<CheckRecord>,
    clock: std::time::Instant,
}

impl Recorder<'_> {
    fn at_most(&mut self, name: &str, value: f64, tol: f64) {
        let tol = tol * self.cfg.tolerance_scale;
        self.push(name, value, Bound::AtMost, tol, value <= tol);
    }

    fn above(&mut self, name: &str, value: f64, tol: f64) {
        self.push(name, value, Bound::Above, tol, value > tol);
    }

    fn push(&mut self, name: &str, value: f64, bound: Bound, tol: f64, passed: bool) {
        let seconds = self.clock.elapsed().as_secs_f64();
        self.clock = std::time::Instant::now();
        self.out.push(CheckRecord { suite: self.suite.into(), name: name.into(), value, bound, tol, passed, seconds });
    }
}

fn cplx(rng: &mut ChaCha8Rng, r: f64) -> C64 {
    c(rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn polar(rng: &mut ChaCha8Rng, r: std::ops::Range<f64>) -> C64 {
    C64::from_polar(rng.gen_range(r), rng.gen_range(-PI..PI))
}

/// A modulus away from the excluded values 0, 1.
fn modulus(rng: &mut ChaCha8Rng, r: f64, margin: f64) -> C64 {
    loop {
        let u = cplx(rng, r);
        if u.norm() > margin && (u - 1.0).norm() > margin {
            return u;
        }
    }
}

fn random_sl2(rng: &mut ChaCha8Rng, r: f64, max_norm: f64) -> Matrix2c {
    loop {
        let g = Matrix2c { m: [cplx(rng, r), cplx(rng, r), cplx(rng, r), cplx(rng, r)] };
        if g.det().norm() > 0.2 {
            let g = g.scale(g.det().sqrt().inv());
            if g.norm() < max_norm {
                return g;
            }
        }
    }
}

fn random_su2(rng: &mut ChaCha8Rng) -> Matrix2c {
    let x: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (a, b) = (c(x[0] / n, x[1] / n), c(x[2] / n, x[3] / n));
    Matrix2c::new(a, -b.conj(), b, a.conj())
}

fn fuchsian_suite(rng: &mut ChaCha8Rng, rec: &mut Recorder) -> Result<()> {
    let (mut sum, mut ev) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (u, rho) = (modulus(rng, 3.0, 0.05), rng.gen_range(0.01..0.49));
        let s = make_normal_form(u, rho)?;
        sum = sum.max(s.residues.iter().fold(Matrix2c::zero(), |a, b| a + *b).norm());
        for a in &s.residues {
            ev = ev.max((eigenvalues_tracefree(a)?.0 - rho).norm());
        }
    }
    rec.at_most("normal_form_residue_sum", sum, 0.0);
    rec.at_most("normal_form_eigenvalues", ev, 1e-12);
    let mut det = 0.0f64;
    for _ in 0..50 {
        let u = modulus(rng, 3.0, 0.05);
        let z = loop {
            let z = cplx(rng, 3.0);
            if [-1.0, 0.0, 1.0].iter().all(|p| (z - p).norm() > 0.1) {
                break z;
            }
        };
        let rhs = -(u - u * u * u) / (z - z * z * z);
        det = det.max((make_higgs(u).form(z).det() - rhs).norm() / (1.0 + rhs.norm()));
    }
    rec.at_most("higgs_determinant_identity", det, 1e-10);
    let mut trip = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let (u, s, rho) = (modulus(rng, 3.0, 0.1), cplx(rng, 3.0), rng.gen_range(0.02..0.24));
        let sys = make_us(u, s, rho)?;
        if stability(&parabolic_structure(&sys)?, 1e-4) != StabilityClass::Stable {
            continue;
        }
        let g = random_sl2(rng, 1.5, 6.0);
        let (u1, s1, _) = coordinates_us(&sys.conjugate(&g))?;
        trip = trip.max((u1 - u).norm() / (1.0 + u.norm())).max((s1 - s).norm() / (1.0 + s.norm()));
        done += 1;
    }
    rec.at_most("us_round_trip", trip, 1e-9);
    Ok(())
}

fn unstable_suite(rng: &mut ChaCha8Rng, rec: &mut Recorder) -> Result<()> {
    let grid: Vec<C64> = (0..24).map(|k| C64::from_polar(0.4 + 0.5 * (k % 4) as f64, 0.3 + 0.7 * k as f64)).collect();
    let (mut gauge, mut ident) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < 50 {
        let e = C64::from_polar(10f64.powf(rng.gen_range(-3.0..0.0)), rng.gen_range(-PI..PI));
        let pt = UnstableFamilyPoint { e, c0: cplx(rng, 1.0), rho: rng.gen_range(0.01..0.24) };
        let Ok((u0, s0)) = gauge_unstable_to_fuchsian(&pt) else { continue };
        let Ok(dev) = verify_unstable_gauge(&pt, &grid) else { continue };
        gauge = gauge.max(dev);
        let rhs = re(1.0 - 4.0 * pt.rho) + (pt.c0 - 1.0) * e;
        ident = ident.max(((u0 + 1.0) * s0 - rhs).norm() / (1.0 + rhs.norm()));
        done += 1;
    }
    rec.at_most("gauge_matches_fuchsian_form", gauge, 1e-9);
    rec.at_most("u_plus_one_s_identity", ident, 1e-10);
    Ok(())
}

fn monodromy_suite(rng: &mut ChaCha8Rng, rec: &mut Recorder) -> Result<()> {
    let (mut ev, mut rel) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let u = loop {
            let u = polar(rng, 0.3..2.0);
            if (u - 1.0).norm() > 0.2 {
                break u;
            }
        };
        let s = polar(rng, 0.0..0.5);
        let rho = rng.gen_range(0.01..0.25);
        let rep = monodromy_rep(&make_us(u, s, rho)?)?;
        let e = C64::from_polar(1.0, 2.0 * PI * rho);
        for m in &rep.m {
            let (a, b) = m.eigenvalues();
            ev = ev.max(((a - e).norm() + (b - e.conj()).norm()).min((a - e.conj()).norm() + (b - e).norm()));
        }
        rel = rel.max(rep.relation_defect(LoopSet::z_chart().relation));
    }
    rec.at_most("local_eigenvalues", ev, 1e-7);
    rec.at_most("loop_relation", rel, 1e-7);
    Ok(())
}

fn unitarize_suite(rng: &mut ChaCha8Rng, rec: &mut Recorder) -> Result<()> {
    let (mut resid, mut metric, mut absent) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..100 {
        let rep = MonodromyRep { m: std::array::from_fn(|_| random_su2(rng)) };
        let g = random_sl2(rng, 1.5, 4.0);
        let r = unitarize(&rep.conjugate(&g.inverse()), 1e-8);
        resid = resid.max(r.residual);
        match r.metric {
            Some(h) => {
                let gg = g.adjoint() * g;
                let gg = gg.scale(re(1.0 / gg.det().re.sqrt()));
                metric = metric.max((h.h - gg).norm() / gg.norm());
            }
            None => absent += 1,
        }
    }
    rec.at_most("su2_reps_detected", absent as f64, 0.0);
    rec.at_most("su2_reps_residual", resid, 1e-10);
    rec.at_most("recovered_metric", metric, 1e-6);
    let pt = UnstableFamilyPoint { e: re(0.0), c0: c(0.3, 0.2), rho: 0.15 };
    let conn = FnConnection { f: move |z| unstable_connection_form(&pt, z).unwrap_or(Matrix2c::zero()), poles: vec![re(-1.0), re(0.0), re(1.0)] };
    let r = unitarize(&monodromy_of(&conn, &LoopSet::z_chart(), &Default::default())?, 1e-8);
    rec.above("unstable_e0_absent", if r.is_present() { 0.0 } else { r.residual }, 1e-3);
    Ok(())
}

fn potential_suite(rng: &mut ChaCha8Rng, rec: &mut Recorder) -> Result<()> {
    let (mut quad, mut nil, mut ev) = (0.0f64, 0.0f64, 0.0f64);
    let mut ts = vec![0.02, 1.0 / 6.0, 0.25];
    ts.extend((0..5).map(|_| rng.gen_range(0.005..0.25)));
    for t in ts {
        let seed = first_order_seed(t, 6)?;
        quad = quad.max(check_quadric(&seed));
        nil = nil.max(check_nilpotent_residue(&seed)?);
        for lam in unit_circle_samples(16) {
            for a in &residue_form(&seed, lam)?.residues {
                ev = ev.max((eigenvalues_tracefree(a)?.0 - t).norm());
            }
        }
    }
    // Exact in exact arithmetic; the bound is a few ulps of t².
    rec.at_most("seed_quadric", quad, 1e-16);
    rec.at_most("seed_nilpotency", nil, 1e-16);
    rec.at_most("seed_residue_eigenvalues", ev, 1e-10);
    Ok(())
}

/// Runs one suite by name.
pub fn run_suite(name: &str, cfg: &CheckConfig) -> Result<Vec<CheckRecord>> {
    let idx = SUITES.iter().position(|s| *s == name).ok_or_else(|| Error::Input(format!("unknown suite `{name}`")))?;
    if !(cfg.tolerance_scale > 0.0) {
        return Err(Error::Input("tolerance scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(idx as u64));
    let mut rec = Recorder { suite: SUITES[idx], cfg, out: Vec::new(), clock: std::time::Instant::now() };
    match idx {
        0 => fuchsian_suite(&mut rng, &mut rec)?,
        1 => unstable_suite(&mut rng, &mut rec)?,
        2 => monodromy_suite(&mut rng, &mut rec)?,
        3 => unitarize_suite(&mut rng, &mut rec)?,
        _ => potential_suite(&mut rng, &mut rec)?,
    }
    Ok(rec.out)
}

/// Runs every suite whose name contains `filter` (all when `None`).
pub fn run_checks(filter: Option<&str>, cfg: &CheckConfig) -> Result<Vec<CheckRecord>> {
    let names: Vec<&str> = SUITES.iter().copied().filter(|s| filter.map_or(true, |f| s.contains(f))).collect();
    if names.is_empty() {
        return Err(Error::Input(format!("no suite matches `{}`", filter.unwrap_or(""))));
    }
    let mut out = Vec::new();
    for n in names {
        out.extend(run_suite(n, cfg)?);
    }
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// JUnit-style XML report.
pub fn junit_xml(records: &[CheckRecord]) -> String {
    let mut suites: Vec<&str> = records.iter().map(|r| r.suite.as_str()).collect();
    suites.dedup();
    let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<testsuites>\n");
    for suite in suites {
        let rs: Vec<&CheckRecord> = records.iter().filter(|r| r.suite == suite).collect();
        let failures = rs.iter().filter(|r| !r.passed).count();
        s += &format!("  <testsuite name=\"{}\" tests=\"{}\" failures=\"{failures}\">\n", xml_escape(suite), rs.len());
        for r in rs {
            s += &format!("    <testcase classname=\"{}\" name=\"{}\" time=\"{:.3}\"", xml_escape(suite), xml_escape(&r.name), r.seconds);
            if r.passed {
                s += "/>\n";
            } else {
                let op = match r.bound {
                    Bound::AtMost => "<=",
                    Bound::Above => ">",
                };
                s += &format!(">\n      <failure message=\"{} not {} {:e}\"/>\n    </testcase>\n", xml_escape(&format!("{:e}", r.value)), xml_escape(op), r.tol);
            }
        }
        s += "  </testsuite>\n";
    }
    s + "</testsuites>\n"
}
