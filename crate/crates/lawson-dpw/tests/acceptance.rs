//! Acceptance run: one line per criterion, `PASS` or `FAIL`, with the
//! measured values. Criteria 8 and 9 are stretch goals; their failure is
//! reported but does not fail the run.

use std::f64::consts::PI;
use std::time::Instant;

use lawson_dpw::checks::{run_suite, CheckConfig, CheckRecord};
use lawson_dpw::solver::{
    area_series, continue_from, continue_in_t, parameter_derivative, relative_distance, seed_derivative,
    verify_solution, ClosingConfig, SolveResult, Verification,
};
use lawson_dpw::surface::{reconstruct_surface, Reconstruction, SurfaceOptions};
use lawson_dpw::Error;

const STRETCH: [usize; 2] = [8, 9];

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: impl Into<String>) -> Line {
    Line { pass, detail: detail.into() }
}

fn suite(name: &str, budget: f64) -> Line {
    let clock = Instant::now();
    match run_suite(name, &CheckConfig::default()) {
        Ok(records) => {
            let secs = clock.elapsed().as_secs_f64();
            let failed: Vec<&CheckRecord> = records.iter().filter(|r| !r.passed).collect();
            let values: Vec<String> = records.iter().map(|r| format!("{} {:.1e}", r.name, r.value)).collect();
            let pass = failed.is_empty() && secs < budget;
            line(pass, format!("{}; {:.2} s (budget {budget} s)", values.join(", "), secs))
        }
        Err(e) => line(false, format!("suite error: {e}")),
    }
}

fn verified(v: &Verification) -> bool {
    v.unitarize_residual < 1e-7 && v.missing_metrics == 0 && v.eigenvalue_deviation < 1e-8
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs()
}

fn small_t(path: &[SolveResult], cfg: &ClosingConfig, secs: f64) -> Line {
    let Some(sol) = path.iter().find(|s| (s.coeffs.t - 0.02).abs() < 1e-12) else {
        return line(false, "continuation did not reach t = 0.02");
    };
    let v = match verify_solution(&sol.coeffs, cfg) {
        Ok(v) => v,
        Err(e) => return line(false, format!("verification error: {e}")),
    };
    let Some(d) = parameter_derivative(&path[..2]) else { return line(false, "fewer than two solutions") };
    let dd = relative_distance(&d, &seed_derivative(sol.coeffs.n));
    let pass = sol.residual_norm < 1e-8 && v.unitarize_residual < 1e-7 && v.missing_metrics == 0 && dd < 0.05 && secs < 600.0;
    line(
        pass,
        format!(
            "residual {:.2e}, max unitarize residual {:.2e} ({} missing), derivative distance {:.2}%, {:.1} s",
            sol.residual_norm,
            v.unitarize_residual,
            v.missing_metrics,
            100.0 * dd,
            secs
        ),
    )
}

fn surface_at(sol: &SolveResult) -> Result<(Reconstruction, f64), Error> {
    let clock = Instant::now();
    let rec = reconstruct_surface(&sol.coeffs, &SurfaceOptions::default())?;
    Ok((rec, clock.elapsed().as_secs_f64()))
}

/// Result of continuing to `t_end`: the accepted path and, on a stall,
/// the error.
fn extend(path: &[SolveResult], t_end: f64, cfg: &ClosingConfig) -> (Vec<SolveResult>, Option<Error>, f64) {
    let clock = Instant::now();
    let mut seen = path.to_vec();
    let res = continue_from(path.to_vec(), t_end, cfg, |s| {
        if s.coeffs.t > seen.last().map_or(0.0, |l| l.coeffs.t) {
            seen.push(s.clone());
        }
    });
    let secs = clock.elapsed().as_secs_f64();
    match res {
        Ok(p) => (p, None, secs),
        Err(e) => (seen, Some(e), secs),
    }
}

fn main() {
    let mut lines: Vec<(usize, &str, Line)> = Vec::new();
    let mut emit = |n: usize, title: &'static str, l: Line| {
        let tag = if l.pass { "PASS" } else { "FAIL" };
        let stretch = if STRETCH.contains(&n) { " [stretch]" } else { "" };
        println!("criterion {n:>2} {tag}{stretch}: {title}: {}", l.detail);
        lines.push((n, title, l));
    };

    emit(1, "moduli identities", suite("fuchsian", 5.0));
    emit(2, "unstable-family gauge", suite("unstable", 10.0));
    emit(3, "monodromy conjugacy", suite("monodromy", 30.0));
    emit(4, "unitarization oracle", suite("unitarize", 30.0));
    emit(5, "seed admissibility", suite("potential", 30.0));

    let cfg = ClosingConfig::default();
    let clock = Instant::now();
    let base = continue_in_t(0.01, 0.02, &cfg);
    let secs = clock.elapsed().as_secs_f64();
    let base = match base {
        Ok(p) => p,
        Err(e) => {
            emit(6, "small-t solve", line(false, format!("continuation failed: {e}")));
            Vec::new()
        }
    };
    if !base.is_empty() {
        emit(6, "small-t solve", small_t(&base, &cfg, secs));
    }

    let smallest = base.last().cloned();
    let small_surface = smallest.as_ref().map(surface_at);
    match &small_surface {
        Some(Ok((rec, secs))) => {
            let series = area_series(rec.t);
            let gap = rel(rec.area, series);
            emit(
                7,
                "area series at t = 0.02",
                line(
                    gap < 1e-3 && rec.boundary_edges == 0,
                    format!(
                        "mesh area {:.6} (levels {:.6}, {:.6}) vs series {series:.6}, relative gap {gap:.2e}, chi {}, {:.0} s",
                        rec.area, rec.area_coarse, rec.area_fine, rec.euler_characteristic, secs
                    ),
                ),
            );
        }
        Some(Err(e)) => emit(7, "area series at t = 0.02", line(false, format!("reconstruction failed: {e}"))),
        None => emit(7, "area series at t = 0.02", line(false, "no solution at t = 0.02")),
    }

    let (path, stall, secs8) = if base.is_empty() { (Vec::new(), None, 0.0) } else { extend(&base, 1.0 / 6.0, &cfg) };
    let at_sixth = path.last().filter(|s| (s.coeffs.t - 1.0 / 6.0).abs() < 1e-12 && stall.is_none()).cloned();
    match (&at_sixth, &stall) {
        (Some(sol), _) => match surface_at(sol) {
            Ok((rec, secs)) => {
                let gap = rel(rec.area, 21.9147);
                emit(
                    8,
                    "genus 2",
                    line(
                        gap < 5e-3 && rec.euler_characteristic == -2 && secs8 + secs < 3600.0,
                        format!(
                            "reached t = 1/6, mesh area {:.6} vs 21.9147, relative gap {gap:.2e}, chi {}, {:.0} s",
                            rec.area,
                            rec.euler_characteristic,
                            secs8 + secs
                        ),
                    ),
                );
            }
            Err(e) => emit(8, "genus 2", line(false, format!("reconstruction failed: {e}"))),
        },
        (None, stall) => {
            let last = path.last();
            let tmax = last.map_or(0.0, |s| s.coeffs.t);
            let ok = last.and_then(|s| verify_solution(&s.coeffs, &cfg).ok()).is_some_and(|v| verified(&v));
            let is_underflow = matches!(stall, Some(Error::StepUnderflow(_)));
            emit(
                8,
                "genus 2",
                line(
                    is_underflow && tmax >= 0.1 && ok,
                    format!("continuation stalled ({}); downgraded: max t {tmax:.5}, invariants {}", stall.as_ref().map_or("none".into(), |e| e.to_string()), if ok { "pass" } else { "fail" }),
                ),
            );
        }
    }

    if let Some(sol) = &at_sixth {
        let (path, stall, secs9) = extend(std::slice::from_ref(sol), 0.25, &cfg);
        let last = path.last().expect("nonempty path");
        if stall.is_none() && (last.coeffs.t - 0.25).abs() < 1e-12 {
            match surface_at(last) {
                Ok((rec, secs)) => {
                    let target = 2.0 * PI * PI;
                    let gap = rel(rec.area, target);
                    emit(
                        9,
                        "Clifford torus",
                        line(
                            gap < 2e-3 && rec.euler_characteristic == 0,
                            format!(
                                "reached t = 1/4, mesh area {:.6} vs 2pi^2 = {target:.6}, relative gap {gap:.2e}, chi {}, {:.0} s",
                                rec.area,
                                rec.euler_characteristic,
                                secs9 + secs
                            ),
                        ),
                    );
                }
                Err(e) => emit(9, "Clifford torus", line(false, format!("reconstruction failed: {e}"))),
            }
        } else {
            emit(
                9,
                "Clifford torus",
                line(false, format!("continuation stalled at t = {:.5} ({})", last.coeffs.t, stall.map_or("none".into(), |e| e.to_string()))),
            );
        }
    } else {
        emit(9, "Clifford torus", line(false, "t = 1/6 was not reached"));
    }

    match &small_surface {
        Some(Ok((rec, _))) => {
            let want = 4.0 * PI * rec.t;
            let gap = rel(rec.cone_angle, want);
            emit(10, "cone angle", line(gap < 0.02, format!("t = {}, estimate {:.6} vs 4 pi t = {want:.6}, relative error {gap:.2e}", rec.t, rec.cone_angle)));
        }
        _ => emit(10, "cone angle", line(false, "no reconstruction at the smallest t")),
    }

    let passed = lines.iter().filter(|l| l.2.pass).count();
    let hard_fail: Vec<usize> = lines.iter().filter(|l| !l.2.pass && !STRETCH.contains(&l.0)).map(|l| l.0).collect();
    println!("acceptance: {passed}/{} criteria pass", lines.len());
    if !hard_fail.is_empty() {
        println!("acceptance: required criteria failing: {hard_fail:?}");
        std::process::exit(1);
    }
}
