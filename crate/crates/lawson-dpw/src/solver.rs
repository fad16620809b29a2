//! The monodromy problem for the symmetric potential: find `(a, b, c)`
//! at angle `t` whose monodromy is unitarizable on the unit λ-circle and
//! abelian at the Sym points, by Levenberg–Marquardt in a reduced chart
//! and predictor–corrector continuation in `t`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::loopalg::{c, eigenvalues_tracefree, LaurentScalar, C64};
use crate::monodromy::{monodromy_of, unitarize, LoopSet, MonodromyRep, TransportOptions};
use crate::potential::{check_quadric, first_order_seed, residue_form, PotentialCoefficients};

/// Riemann zeta at 3.
pub const ZETA3: f64 = 1.2020569031595943;

/// `8π(1 − ln2·t − (9/4)ζ(3)t³)`, the area expansion to order t⁴.
pub fn area_series(t: f64) -> f64 {
    8.0 * PI * (1.0 - std::f64::consts::LN_2 * t - 2.25 * ZETA3 * t.powi(3))
}

/// Default Laurent truncation for angle `t`. The coefficients decay more
/// slowly as `t` grows, and the least-squares floor of the overdetermined
/// residual must stay well below the Newton tolerance. N grows from 6 at
/// t = 0.02 to 18 at t = 1/6, then steeply to 34, which holds up to t = 1/4.
/// Beyond 34 the trailing coefficients drop below the transport noise and
/// the Jacobian loses rank.
pub fn default_truncation(t: f64) -> i32 {
    ((4.0 + 82.0 * t + 200.0 * (t - 0.17).max(0.0)).ceil() as i32).clamp(5, 34)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosingConfig {
    /// Minimal number of trace samples `λ_j = e^{iπ(j−½)/m}`, j = 1..m, on
    /// the upper half circle (real coefficients make the lower half the
    /// complex conjugate). The effective count is `max(samples, N + 2)`.
    pub samples: usize,
    /// Points where the monodromy must be abelian.
    pub sym_points: Vec<C64>,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub continuation_step: f64,
    /// Truncation N; `None` picks [`default_truncation`].
    pub truncation: Option<i32>,
    pub transport_rtol: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
}

impl Default for ClosingConfig {
    fn default() -> Self {
        ClosingConfig {
            samples: 8,
            sym_points: vec![c(0.0, 1.0)],
            newton_tol: 1e-8,
            max_iter: 60,
            continuation_step: 0.01,
            truncation: None,
            transport_rtol: 1e-12,
            fd_step: 1e-7,
        }
    }
}

impl ClosingConfig {
    pub fn truncation_for(&self, t: f64) -> i32 {
        self.truncation.unwrap_or_else(|| default_truncation(t))
    }

    /// The trace sample points for truncation `n`.
    pub fn lambda_samples(&self, n: i32) -> Vec<C64> {
        let m = self.samples.max((n + 2) as usize);
        (1..=m).map(|j| C64::from_polar(1.0, PI * (j as f64 - 0.5) / m as f64)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.newton_tol <= 0.0 || self.transport_rtol <= 0.0 || self.fd_step <= 0.0 {
            return Err(Error::Input("closing configuration needs positive tolerances and samples".into()));
        }
        if self.sym_points.iter().any(|l| l.norm() == 0.0) {
            return Err(Error::Input("Sym point at lambda = 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub coeffs: PotentialCoefficients,
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub continuation_trace: Vec<(f64, f64)>,
}

/// Power series square root with positive constant term.
pub fn series_sqrt(f: &[f64]) -> Result<Vec<f64>> {
    if f.is_empty() || f[0] <= 0.0 {
        return Err(Error::EliminationSingular);
    }
    let mut g = vec![0.0; f.len()];
    g[0] = f[0].sqrt();
    for k in 1..f.len() {
        let s: f64 = (1..k).map(|i| g[i] * g[k - i]).sum();
        g[k] = (f[k] - s) / (2.0 * g[0]);
    }
    Ok(g)
}

/// Chart on the constraint set. The unknowns are the real coefficients
/// `b_e`, e = −1..N. The rest follows:
/// - `c_e = (−1)^{e+1} b_e`, so `c₋₁ = b₋₁` (nilpotency);
/// - `λa = √(λ²(b² + c² − t²))` as a power series with `a₋₁ > 0`, which
///   solves the quadric on exponents −2..N−1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymChart {
    pub t: f64,
    pub n: i32,
}

impl SymChart {
    pub fn dim(&self) -> usize {
        (self.n + 2) as usize
    }

    pub fn unpack(&self, p: &[f64]) -> Result<PotentialCoefficients> {
        if p.len() != self.dim() {
            return Err(Error::Input(format!("chart expects {} parameters, got {}", self.dim(), p.len())));
        }
        let cc: Vec<f64> = p.iter().enumerate().map(|(i, b)| if i % 2 == 0 { *b } else { -*b }).collect();
        let b = LaurentScalar::from_real(-1, p);
        let cl = LaurentScalar::from_real(-1, &cc);
        let s = &(&b * &b) + &(&cl * &cl);
        // λ²(b² + c² − t²) as a power series, constant term first
        let mut f: Vec<f64> = (0..self.dim()).map(|k| s.coeff(k as i32 - 2).re).collect();
        f[2] -= self.t * self.t;
        let g = series_sqrt(&f)?;
        Ok(PotentialCoefficients { t: self.t, n: self.n, a: LaurentScalar::from_real(-1, &g), b, c: cl })
    }

    /// The b coefficients, zero-padded or truncated to the chart's N.
    pub fn pack(&self, co: &PotentialCoefficients) -> Vec<f64> {
        (0..self.dim()).map(|k| co.b.coeff(k as i32 - 1).re).collect()
    }
}

fn rep_at(co: &PotentialCoefficients, lam: C64, opts: &TransportOptions) -> Result<MonodromyRep> {
    monodromy_of(&residue_form(co, lam)?, &LoopSet::p_chart(), opts)
}

const TRACE_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (2, 3)];

/// Residual vector at the given trace samples: `Im tr(M_u M_v)` for the
/// three pairs at each sample, then the real and imaginary parts of the
/// commutators `[M_u, M_v]` at each Sym point.
pub fn closing_residual_at(co: &PotentialCoefficients, lams: &[C64], cfg: &ClosingConfig) -> Result<Vec<f64>> {
    let opts = TransportOptions::with_rtol(cfg.transport_rtol);
    let traces: Vec<Vec<f64>> = lams
        .par_iter()
        .map(|&lam| {
            let rep = rep_at(co, lam, &opts)?;
            Ok(TRACE_PAIRS.iter().map(|&(u, v)| (rep.m[u] * rep.m[v]).trace().im).collect())
        })
        .collect::<Result<_>>()?;
    let syms: Vec<Vec<f64>> = cfg
        .sym_points
        .par_iter()
        .map(|&lam| {
            let rep = rep_at(co, lam, &opts)?;
            let mut out = Vec::with_capacity(24);
            for &(u, v) in &TRACE_PAIRS {
                let k = rep.m[u].commutator(&rep.m[v]);
                out.extend(k.m.iter().map(|z| z.re));
                out.extend(k.m.iter().map(|z| z.im));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(traces.into_iter().chain(syms).flatten().collect())
}

/// Residual at the configuration's samples for the coefficients' own N.
pub fn closing_residual(co: &PotentialCoefficients, cfg: &ClosingConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    closing_residual_at(co, &cfg.lambda_samples(co.n), cfg)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Lm {
    params: Vec<f64>,
    residual: f64,
    iterations: usize,
}

/// Levenberg–Marquardt on `r(p)` with a forward-difference Jacobian.
fn levenberg_marquardt(
    chart: &SymChart,
    p0: Vec<f64>,
    lams: &[C64],
    cfg: &ClosingConfig,
) -> Result<Lm> {
    let eval = |p: &[f64]| -> Result<Vec<f64>> { closing_residual_at(&chart.unpack(p)?, lams, cfg) };
    let mut p = p0;
    let mut r = eval(&p)?;
    let mut rn = norm(&r);
    if !rn.is_finite() {
        return Err(Error::Input("seed residual is not finite".into()));
    }
    let mut mu = -1.0f64;
    for it in 0..cfg.max_iter {
        if rn < cfg.newton_tol {
            return Ok(Lm { params: p, residual: rn, iterations: it });
        }
        let scale = p.iter().fold(chart.t, |m, x| m.max(x.abs()));
        let cols: Vec<Vec<f64>> = (0..p.len())
            .into_par_iter()
            .map(|i| {
                let h = cfg.fd_step * p[i].abs().max(1e-3 * scale);
                let mut q = p.clone();
                q[i] += h;
                Ok(eval(&q)?.iter().zip(&r).map(|(a, b)| (a - b) / h).collect())
            })
            .collect::<Result<_>>()?;
        let jac = DMatrix::from_fn(r.len(), p.len(), |i, j| cols[j][i]);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let dmax = jtj.diagonal().max();
        if !(dmax > 0.0) {
            return Err(Error::JacobianSingular);
        }
        // Marquardt scaling: μ is relative to the diagonal of JᵀJ.
        if mu < 0.0 {
            mu = 1e-3;
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..p.len() {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12 * dmax);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&g))) else {
                mu *= 4.0;
                continue;
            };
            let q: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            if let Ok(rq) = eval(&q) {
                let qn = norm(&rq);
                if qn < rn {
                    p = q;
                    r = rq;
                    rn = qn;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved {
            return Err(Error::NoConvergence { iterations: it + 1, residual: rn });
        }
    }
    if rn < cfg.newton_tol && cfg.max_iter > 0 {
        return Ok(Lm { params: p, residual: rn, iterations: cfg.max_iter });
    }
    Err(Error::NoConvergence { iterations: cfg.max_iter, residual: rn })
}

/// Solves the closing conditions at `t` starting from `seed` (re-expressed
/// in the chart at the configured truncation). A solution is accepted only
/// if the residual at twice the samples stays below `10·newton_tol`.
pub fn solve_at_t(t: f64, seed: &PotentialCoefficients, cfg: &ClosingConfig) -> Result<SolveResult> {
    if !(t > 0.0 && t <= 0.25) {
        return Err(Error::InvalidAngle(t));
    }
    cfg.validate()?;
    let chart = SymChart { t, n: cfg.truncation_for(t) };
    let lams = cfg.lambda_samples(chart.n);
    let lm = levenberg_marquardt(&chart, chart.pack(seed), &lams, cfg)?;
    let coeffs = chart.unpack(&lm.params)?;
    let fine = ClosingConfig { samples: 2 * lams.len(), ..cfg.clone() };
    let check = norm(&closing_residual_at(&coeffs, &fine.lambda_samples(chart.n), cfg)?);
    if check >= 10.0 * cfg.newton_tol {
        return Err(Error::NoConvergence { iterations: lm.iterations, residual: check });
    }
    Ok(SolveResult { coeffs, residual_norm: lm.residual, newton_iterations: lm.iterations, continuation_trace: vec![(t, lm.residual)] })
}

fn padded(p: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| p.get(i).copied().unwrap_or(0.0)).collect()
}

/// Predictor–corrector continuation from the first-order seed at
/// `t_start` to `t_end`. The predictor extrapolates chart parameters
/// linearly from the last two solutions. Failed steps halve the step,
/// three successes in a row double it, and a step below 1e−4 gives
/// `StepUnderflow`. Returns every accepted solution in order.
pub fn continue_in_t(t_start: f64, t_end: f64, cfg: &ClosingConfig) -> Result<Vec<SolveResult>> {
    continue_with(t_start, t_end, cfg, |_| {})
}

/// [`continue_in_t`] with a callback on each accepted solution.
pub fn continue_with(
    t_start: f64,
    t_end: f64,
    cfg: &ClosingConfig,
    mut on_step: impl FnMut(&SolveResult),
) -> Result<Vec<SolveResult>> {
    for t in [t_start, t_end] {
        if !(t > 0.0 && t <= 0.25) {
            return Err(Error::InvalidAngle(t));
        }
    }
    let seed = first_order_seed(t_start, cfg.truncation_for(t_start))?;
    let first = solve_at_t(t_start, &seed, cfg)?;
    on_step(&first);
    continue_from(vec![first], t_end, cfg, on_step)
}

/// Extends an accepted continuation path (at least one solution, in order)
/// to `t_end`, returning the whole path.
pub fn continue_from(
    mut out: Vec<SolveResult>,
    t_end: f64,
    cfg: &ClosingConfig,
    mut on_step: impl FnMut(&SolveResult),
) -> Result<Vec<SolveResult>> {
    if !(t_end > 0.0 && t_end <= 0.25) {
        return Err(Error::InvalidAngle(t_end));
    }
    let t_start = out.last().ok_or_else(|| Error::Input("empty continuation path".into()))?.coeffs.t;
    let floor = 1e-4;
    let dir = if t_end >= t_start { 1.0 } else { -1.0 };
    let mut trace: Vec<(f64, f64)> = out.iter().map(|s| (s.coeffs.t, s.residual_norm)).collect();
    let mut step = cfg.continuation_step.abs().max(floor);
    let mut streak = 0;
    while (t_end - out.last().unwrap().coeffs.t) * dir > 1e-14 {
        let last = out.last().unwrap();
        let t0 = last.coeffs.t;
        let t1 = if (t_end - t0).abs() <= step { t_end } else { t0 + dir * step };
        let n1 = cfg.truncation_for(t1);
        let dim = (n1 + 2) as usize;
        let p0 = padded(&SymChart { t: t0, n: last.coeffs.n }.pack(&last.coeffs), dim);
        let pred = match out.len() {
            1 => p0.iter().map(|x| x * t1 / t0).collect(),
            k => {
                let prev = &out[k - 2];
                let tp = prev.coeffs.t;
                let pp = padded(&SymChart { t: tp, n: prev.coeffs.n }.pack(&prev.coeffs), dim);
                p0.iter().zip(&pp).map(|(a, b)| a + (a - b) * (t1 - t0) / (t0 - tp)).collect::<Vec<f64>>()
            }
        };
        let guess = SymChart { t: t1, n: n1 }.unpack(&pred);
        match guess.and_then(|g| solve_at_t(t1, &g, cfg)) {
            Ok(mut sol) => {
                trace.push((t1, sol.residual_norm));
                sol.continuation_trace = trace.clone();
                on_step(&sol);
                out.push(sol);
                streak += 1;
                if streak >= 3 {
                    step *= 2.0;
                    streak = 0;
                }
            }
            Err(e) if matches!(e.class(), crate::error::ErrorClass::Input) => return Err(e),
            Err(_) => {
                streak = 0;
                step /= 2.0;
                if step < floor {
                    return Err(Error::StepUnderflow(t0));
                }
            }
        }
    }
    Ok(out)
}

/// A-posteriori checks on a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// Largest `unitarize` residual over the samples.
    pub unitarize_residual: f64,
    /// Number of samples where no metric was found.
    pub missing_metrics: usize,
    /// Largest deviation of residue eigenvalues from ±t.
    pub eigenvalue_deviation: f64,
    pub quadric_deviation: f64,
    /// Largest `|Im tr M_k|` over samples and loops.
    pub trace_imaginary: f64,
}

/// Unitarizes the monodromy at `2·samples` points of the whole unit circle
/// and checks the residue eigenvalues there.
pub fn verify_solution(co: &PotentialCoefficients, cfg: &ClosingConfig) -> Result<Verification> {
    let opts = TransportOptions::with_rtol(cfg.transport_rtol);
    let m = cfg.lambda_samples(co.n).len();
    let lams: Vec<C64> = (0..2 * m).map(|j| C64::from_polar(1.0, PI * (j as f64 + 0.5) / m as f64)).collect();
    let per: Vec<(f64, bool, f64, f64)> = lams
        .par_iter()
        .map(|&lam| {
            let form = residue_form(co, lam)?;
            let mut ev = 0.0f64;
            for a in &form.residues {
                let (mu, _) = eigenvalues_tracefree(a)?;
                ev = ev.max((mu - co.t).norm());
            }
            let rep = monodromy_of(&form, &LoopSet::p_chart(), &opts)?;
            let u = unitarize(&rep, 1e-8);
            let im = rep.m.iter().map(|x| x.trace().im.abs()).fold(0.0, f64::max);
            Ok((u.residual, u.is_present(), ev, im))
        })
        .collect::<Result<_>>()?;
    Ok(Verification {
        unitarize_residual: per.iter().map(|x| x.0).fold(0.0, f64::max),
        missing_metrics: per.iter().filter(|x| !x.1).count(),
        eigenvalue_deviation: per.iter().map(|x| x.2).fold(0.0, f64::max),
        quadric_deviation: check_quadric(co),
        trace_imaginary: per.iter().map(|x| x.3).fold(0.0, f64::max),
    })
}

/// `d(b coefficients)/dt` at t = 0, on exponents −1..N. The coefficients
/// vanish at t = 0, so `b(t)/t = ḃ(0) + O(t)`; the two smallest-t
/// solutions are combined linearly to cancel the O(t) term.
pub fn parameter_derivative(sols: &[SolveResult]) -> Option<Vec<f64>> {
    let mut v: Vec<&SolveResult> = sols.iter().collect();
    v.sort_by(|x, y| x.coeffs.t.total_cmp(&y.coeffs.t));
    let (s1, s2) = (v.first()?, v.get(1)?);
    let (t1, t2) = (s1.coeffs.t, s2.coeffs.t);
    let n = s1.coeffs.n.max(s2.coeffs.n) + 2;
    Some(
        (0..n)
            .map(|k| {
                let q1 = s1.coeffs.b.coeff(k - 1).re / t1;
                let q2 = s2.coeffs.b.coeff(k - 1).re / t2;
                (t2 * q1 - t1 * q2) / (t2 - t1)
            })
            .collect(),
    )
}

/// First-order derivative of the b coefficients from the printed seed:
/// `ḃ = −(λ⁻¹ + λ)/(2√2)` on exponents −1..N.
pub fn seed_derivative(n: i32) -> Vec<f64> {
    let k = -1.0 / (2.0 * std::f64::consts::SQRT_2);
    (0..n + 2).map(|i| if i == 0 || i == 2 { k } else { 0.0 }).collect()
}

/// Relative ℓ² distance between two coefficient vectors (zero-padded).
pub fn relative_distance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().max(y.len());
    let g = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let d: f64 = (0..n).map(|i| (g(x, i) - g(y, i)).powi(2)).sum();
    (d / (0..n).map(|i| g(y, i).powi(2)).sum::<f64>()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::check_nilpotent_residue;
    use std::f64::consts::SQRT_2;

    #[test]
    fn area_series_values() {
        assert!((area_series(0.0) - 25.13274).abs() < 1e-5);
        // 8π(1 − 0.17328680 − 0.04225981) = 8π·0.78445339
        assert!((area_series(0.25) - 19.71546).abs() < 1e-5);
        assert!((area_series(1.0 / 6.0) - 21.91460).abs() < 1e-5);
        let t: f64 = 0.02;
        let printed = 8.0 * PI * (1.0 - 0.693147 * t - 2.704628 * t.powi(3));
        assert!((area_series(t) - printed).abs() < 1e-6);
    }

    #[test]
    fn sqrt_series() {
        // (1 + x)² = 1 + 2x + x²
        let g = series_sqrt(&[1.0, 2.0, 1.0, 0.0]).unwrap();
        assert!(g.iter().zip([1.0, 1.0, 0.0, 0.0]).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(series_sqrt(&[0.0, 1.0]), Err(Error::EliminationSingular));
    }

    #[test]
    fn chart_reproduces_seed_and_round_trips() {
        let t = 0.05;
        let seed = first_order_seed(t, 4).unwrap();
        let ch = SymChart { t, n: 4 };
        let p = ch.pack(&seed);
        assert_eq!(p.len(), 6);
        let co = ch.unpack(&p).unwrap();
        for e in -1..=4 {
            assert!((co.a.coeff(e) - seed.a.coeff(e)).norm() < 1e-15);
            assert!((co.c.coeff(e) - seed.c.coeff(e)).norm() < 1e-15);
        }
        assert_eq!(ch.pack(&co), p);
    }

    #[test]
    fn chart_output_satisfies_constraints() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let ch = SymChart { t: 0.1, n: 5 };
        for _ in 0..100 {
            let mut p: Vec<f64> = (0..ch.dim()).map(|_| rng.gen_range(-0.02..0.02)).collect();
            p[0] = -rng.gen_range(0.03..0.1);
            let co = ch.unpack(&p).unwrap();
            assert_eq!(ch.pack(&co), p);
            assert!(check_nilpotent_residue(&co).unwrap() < 1e-15);
            let q = crate::potential::quadric_polynomial(&co);
            for e in -2..ch.n {
                assert!(q.coeff(e).norm() < 1e-15, "{e}");
            }
        }
    }

    #[test]
    fn seed_residual_small_and_negative_control() {
        let t = 0.01;
        let cfg = ClosingConfig { truncation: Some(3), ..Default::default() };
        let seed = SymChart { t, n: 3 }.unpack(&SymChart { t, n: 3 }.pack(&first_order_seed(t, 3).unwrap())).unwrap();
        let r0 = norm(&closing_residual(&seed, &cfg).unwrap());
        assert!(r0 > 0.0 && r0 < 10.0 * t * t, "{r0}");
        let mut broken = seed.clone();
        broken.c.coeffs[2] += c(0.5 * t, 0.0);
        let r1 = norm(&closing_residual(&broken, &cfg).unwrap());
        assert!(r1 > 10.0 * r0, "{r0} {r1}");
    }

    #[test]
    fn zero_iterations_is_no_convergence() {
        let cfg = ClosingConfig { max_iter: 0, truncation: Some(3), ..Default::default() };
        let seed = first_order_seed(0.01, 3).unwrap();
        assert!(matches!(solve_at_t(0.01, &seed, &cfg), Err(Error::NoConvergence { .. })));
        assert!(matches!(solve_at_t(0.3, &seed, &cfg), Err(Error::InvalidAngle(_))));
    }

    #[test]
    fn small_t_solve_converges() {
        let t = 0.01;
        let cfg = ClosingConfig::default();
        let sol = solve_at_t(t, &first_order_seed(t, 6).unwrap(), &cfg).unwrap();
        assert!(sol.residual_norm < 1e-8);
        // stays close to the first-order data
        let b = sol.coeffs.b.coeff(-1).re / t;
        assert!((b + 1.0 / (2.0 * SQRT_2)).abs() < 0.05);
        assert!(relative_distance(&SymChart { t, n: 6 }.pack(&sol.coeffs).iter().map(|x| x / t).collect::<Vec<_>>(), &seed_derivative(6)) < 0.05);
        let v = verify_solution(&sol.coeffs, &cfg).unwrap();
        assert!(v.unitarize_residual < 1e-7 && v.missing_metrics == 0, "{v:?}");
        assert!(v.eigenvalue_deviation < 1e-8, "{v:?}");
    }
}
