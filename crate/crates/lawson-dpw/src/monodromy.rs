//! Parallel transport, monodromy representations and the unitarizability
//! test.
//!
//! Transport uses the right action: Φ solves `dΦ = Φ·ξ(z)dz` with Φ = Id at
//! the start, so concatenated paths multiply in path order on the right.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuchsian::{FuchsianSystem, Normalization};
use crate::loopalg::{c, re, HermitianMetric, LaurentMatrix, Matrix2c, C64, I};

/// A meromorphic connection form `ξ(z)dz` on the sphere.
pub trait Connection: Sync {
    /// The dz-coefficient at `z`.
    fn form(&self, z: C64) -> Matrix2c;
    /// Finite poles; paths must keep away from them.
    fn poles(&self) -> Vec<C64>;
    /// `offset·ξ(center + offset)`, which stays finite as the offset shrinks
    /// toward a simple pole at `center`. Implementations with known
    /// residues should avoid forming `center + offset`.
    fn form_offset(&self, center: C64, offset: C64) -> Matrix2c {
        self.form(center + offset) * offset
    }
}

fn residue_sum_offset(points: &[Option<C64>; 4], residues: &[Matrix2c; 4], center: C64, offset: C64) -> Matrix2c {
    let mut acc = Matrix2c::zero();
    for (a, p) in residues.iter().zip(points.iter()) {
        if let Some(p) = p {
            // the centre is given in floating point; treat a near match as the pole
            if (*p - center).norm() <= 1e-12 * (1.0 + p.norm()) {
                acc += *a;
            } else {
                acc += a.scale(offset / (center - p + offset));
            }
        }
    }
    acc
}

impl Connection for FuchsianSystem {
    fn form(&self, z: C64) -> Matrix2c {
        FuchsianSystem::form(self, z)
    }
    fn poles(&self) -> Vec<C64> {
        self.punctures.points.iter().flatten().copied().collect()
    }
    fn form_offset(&self, center: C64, offset: C64) -> Matrix2c {
        residue_sum_offset(&self.punctures.points, &self.residues, center, offset)
    }
}

/// A closure-backed connection, handy for forms that are not Fuchsian
/// systems in the strict sense.
pub struct FnConnection<F: Fn(C64) -> Matrix2c + Sync> {
    pub f: F,
    pub poles: Vec<C64>,
}

impl<F: Fn(C64) -> Matrix2c + Sync> Connection for FnConnection<F> {
    fn form(&self, z: C64) -> Matrix2c {
        (self.f)(z)
    }
    fn poles(&self) -> Vec<C64> {
        self.poles.clone()
    }
}

/// Residues that depend on λ through Laurent polynomials, frozen at λ₀.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaSystem {
    pub punctures: crate::fuchsian::PunctureSet,
    pub residues: [LaurentMatrix; 4],
}

impl LambdaSystem {
    pub fn at(&self, lam: C64) -> Result<ResidueForm> {
        let mut res = [Matrix2c::zero(); 4];
        for k in 0..4 {
            res[k] = self.residues[k].eval(lam)?;
        }
        Ok(ResidueForm { points: self.punctures.points, residues: res })
    }
}

/// `Σ A_k dz/(z − z_k)` over the finite punctures, without validation.
#[derive(Debug, Clone)]
pub struct ResidueForm {
    pub points: [Option<C64>; 4],
    pub residues: [Matrix2c; 4],
}

impl Connection for ResidueForm {
    fn form(&self, z: C64) -> Matrix2c {
        let mut acc = Matrix2c::zero();
        for (a, p) in self.residues.iter().zip(self.points.iter()) {
            if let Some(p) = p {
                acc += a.scale((z - p).inv());
            }
        }
        acc
    }
    fn poles(&self) -> Vec<C64> {
        self.points.iter().flatten().copied().collect()
    }
    fn form_offset(&self, center: C64, offset: C64) -> Matrix2c {
        residue_sum_offset(&self.points, &self.residues, center, offset)
    }
}

/// Path pieces, each parametrized by s ∈ [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line { from: C64, to: C64 },
    /// `center + radius·e^{i(start + sweep·s)}`.
    Arc { center: C64, radius: f64, start: f64, sweep: f64 },
    /// `center + e^{u}·e^{iθ}` with u running from `ln r_from` to `ln r_to`;
    /// integrates smoothly arbitrarily close to a simple pole at `center`.
    LogRay { center: C64, angle: f64, r_from: f64, r_to: f64 },
    /// `center + e^{u + iψ}` with (u, ψ) moving linearly; the polar analogue
    /// of a line, used for mesh edges near a puncture.
    Spiral { center: C64, u_from: f64, u_to: f64, psi_from: f64, psi_to: f64 },
}

impl Segment {
    pub fn point(&self, s: f64) -> C64 {
        match *self {
            Segment::Line { from, to } => from + (to - from) * s,
            Segment::Arc { center, radius, start, sweep } => center + C64::from_polar(radius, start + sweep * s),
            Segment::LogRay { center, angle, r_from, r_to } => {
                let u = r_from.ln() + (r_to.ln() - r_from.ln()) * s;
                center + C64::from_polar(u.exp(), angle)
            }
            Segment::Spiral { center, .. } => center + self.offset(s),
        }
    }

    /// Centre and `d(offset)/ds / offset` for the polar segments.
    fn polar(&self) -> Option<(C64, C64)> {
        match *self {
            Segment::LogRay { center, r_from, r_to, .. } => Some((center, re(r_to.ln() - r_from.ln()))),
            Segment::Spiral { center, u_from, u_to, psi_from, psi_to } => {
                Some((center, c(u_to - u_from, psi_to - psi_from)))
            }
            _ => None,
        }
    }

    fn offset(&self, s: f64) -> C64 {
        match *self {
            Segment::LogRay { angle, r_from, r_to, .. } => {
                let u = r_from.ln() + (r_to.ln() - r_from.ln()) * s;
                C64::from_polar(u.exp(), angle)
            }
            Segment::Spiral { u_from, u_to, psi_from, psi_to, .. } => {
                C64::from_polar((u_from + (u_to - u_from) * s).exp(), psi_from + (psi_to - psi_from) * s)
            }
            _ => self.point(s),
        }
    }

    pub fn derivative(&self, s: f64) -> C64 {
        match *self {
            Segment::Line { from, to } => to - from,
            Segment::Arc { radius, start, sweep, .. } => {
                I * sweep * C64::from_polar(radius, start + sweep * s)
            }
            Segment::LogRay { angle, r_from, r_to, .. } => {
                let du = r_to.ln() - r_from.ln();
                let u = r_from.ln() + du * s;
                C64::from_polar(u.exp(), angle) * du
            }
            Segment::Spiral { u_from, u_to, psi_from, psi_to, .. } => {
                self.offset(s) * c(u_to - u_from, psi_to - psi_from)
            }
        }
    }

    pub fn start(&self) -> C64 {
        self.point(0.0)
    }

    pub fn end(&self) -> C64 {
        self.point(1.0)
    }

    pub fn reversed(&self) -> Segment {
        match *self {
            Segment::Line { from, to } => Segment::Line { from: to, to: from },
            Segment::Arc { center, radius, start, sweep } => {
                Segment::Arc { center, radius, start: start + sweep, sweep: -sweep }
            }
            Segment::LogRay { center, angle, r_from, r_to } => {
                Segment::LogRay { center, angle, r_from: r_to, r_to: r_from }
            }
            Segment::Spiral { center, u_from, u_to, psi_from, psi_to } => {
                Segment::Spiral { center, u_from: u_to, u_to: u_from, psi_from: psi_to, psi_to: psi_from }
            }
        }
    }

    fn min_distance(&self, poles: &[C64]) -> f64 {
        if poles.is_empty() {
            return f64::INFINITY;
        }
        if let Segment::Line { from, to } = *self {
            let d = to - from;
            return poles
                .iter()
                .map(|p| {
                    let t = if d.norm_sqr() == 0.0 {
                        0.0
                    } else {
                        (((p - from) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0)
                    };
                    (from + d * t - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
        }
        let n = 512;
        (0..=n)
            .map(|i| {
                let z = self.point(i as f64 / n as f64);
                poles.iter().map(|p| (z - p).norm()).fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    pub rtol: f64,
    pub atol: f64,
    pub min_pole_distance: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions { rtol: 1e-10, atol: 1e-12, min_pole_distance: 1e-3 }
    }
}

impl TransportOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        TransportOptions { rtol, atol: rtol * 1e-2, ..Default::default() }
    }
}

// Dormand–Prince 5(4) tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn lin(terms: &[(f64, &Matrix2c)]) -> Matrix2c {
    let mut m = [C64::default(); 4];
    for (w, k) in terms {
        for e in 0..4 {
            m[e] += k.m[e] * *w;
        }
    }
    Matrix2c { m }
}

/// Integrates `Y' = Y·G(s)` from `s0` to `s1` starting at `y`; `h` carries the
/// step size between calls.
fn dopri<G: Fn(f64) -> Matrix2c>(
    g: &G,
    mut y: Matrix2c,
    s0: f64,
    s1: f64,
    h: &mut f64,
    opts: &TransportOptions,
) -> Result<Matrix2c> {
    let span = s1 - s0;
    if span == 0.0 {
        return Ok(y);
    }
    let dir = span.signum();
    let mut s = s0;
    let mut hh = if *h > 0.0 { h.min(span.abs()) } else { span.abs() * 0.01 };
    let hmin = span.abs() * 1e-13;
    let mut k1 = y * g(s);
    let mut steps = 0usize;
    while (s1 - s) * dir > 0.0 {
        if hh > (s1 - s).abs() {
            hh = (s1 - s).abs();
        }
        let hs = hh * dir;
        let y2 = y + lin(&[(A21 * hs, &k1)]);
        let k2 = y2 * g(s + C2 * hs);
        let y3 = y + lin(&[(A31 * hs, &k1), (A32 * hs, &k2)]);
        let k3 = y3 * g(s + C3 * hs);
        let y4 = y + lin(&[(A41 * hs, &k1), (A42 * hs, &k2), (A43 * hs, &k3)]);
        let k4 = y4 * g(s + C4 * hs);
        let y5 = y + lin(&[(A51 * hs, &k1), (A52 * hs, &k2), (A53 * hs, &k3), (A54 * hs, &k4)]);
        let k5 = y5 * g(s + C5 * hs);
        let y6 = y + lin(&[(A61 * hs, &k1), (A62 * hs, &k2), (A63 * hs, &k3), (A64 * hs, &k4), (A65 * hs, &k5)]);
        let k6 = y6 * g(s + hs);
        let ynew = y + lin(&[(B1 * hs, &k1), (B3 * hs, &k3), (B4 * hs, &k4), (B5 * hs, &k5), (B6 * hs, &k6)]);
        let k7 = ynew * g(s + hs);
        let err = lin(&[(E1 * hs, &k1), (E3 * hs, &k3), (E4 * hs, &k4), (E5 * hs, &k5), (E6 * hs, &k6), (E7 * hs, &k7)]);
        let mut en: f64 = 0.0;
        for e in 0..4 {
            let sc = opts.atol + opts.rtol * y.m[e].norm().max(ynew.m[e].norm());
            en = en.max(err.m[e].norm() / sc);
        }
        if !en.is_finite() {
            return Err(Error::StepFailure(s));
        }
        if en <= 1.0 {
            s += hs;
            y = ynew;
            k1 = k7;
            *h = hh;
        }
        let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        hh *= if en <= 1.0 { fac } else { fac.min(1.0) };
        if hh < hmin {
            return Err(Error::StepFailure(s));
        }
        steps += 1;
        if steps > 2_000_000 {
            return Err(Error::StepFailure(s));
        }
    }
    Ok(y)
}

fn check_path<Cn: Connection + ?Sized>(conn: &Cn, path: &[Segment], opts: &TransportOptions) -> Result<()> {
    let poles = conn.poles();
    for seg in path {
        if seg.polar().is_some() {
            continue;
        }
        let d = seg.min_distance(&poles);
        if d <= opts.min_pole_distance {
            return Err(Error::PathTooClose(d));
        }
    }
    Ok(())
}

fn segment_generator<Cn: Connection + ?Sized>(conn: &Cn, seg: &Segment, s: f64) -> Matrix2c {
    match seg.polar() {
        Some((center, rate)) => conn.form_offset(center, seg.offset(s)) * rate,
        None => conn.form(seg.point(s)) * seg.derivative(s),
    }
}

/// Transport along a path of segments; returns Φ(end) with Φ(start) = Id.
pub fn parallel_transport<Cn: Connection + ?Sized>(
    conn: &Cn,
    path: &[Segment],
    opts: &TransportOptions,
) -> Result<Matrix2c> {
    transport_from(conn, path, Matrix2c::identity(), opts)
}

/// Transport starting from an arbitrary initial value.
pub fn transport_from<Cn: Connection + ?Sized>(
    conn: &Cn,
    path: &[Segment],
    y0: Matrix2c,
    opts: &TransportOptions,
) -> Result<Matrix2c> {
    check_path(conn, path, opts)?;
    let mut y = y0;
    for seg in path {
        let g = |s: f64| segment_generator(conn, seg, s);
        let mut h = 0.0;
        y = dopri(&g, y, 0.0, 1.0, &mut h, opts)?;
    }
    Ok(y)
}

/// Values of Φ along one segment at the given parameters (ascending in s).
pub fn transport_samples<Cn: Connection + ?Sized>(
    conn: &Cn,
    seg: &Segment,
    y0: Matrix2c,
    stops: &[f64],
    opts: &TransportOptions,
) -> Result<Vec<Matrix2c>> {
    check_path(conn, std::slice::from_ref(seg), opts)?;
    let g = |s: f64| segment_generator(conn, seg, s);
    let mut out = Vec::with_capacity(stops.len());
    let mut y = y0;
    let mut s = 0.0;
    let mut h = 0.0;
    for &t in stops {
        y = dopri(&g, y, s, t, &mut h, opts)?;
        s = t;
        out.push(y);
    }
    Ok(out)
}

/// A standard loop: straight segment from the basepoint to the circle of
/// the given radius about the puncture, the circle counterclockwise, and
/// back. For the puncture at ∞ (`None`) the circle is `|z| = radius`
/// traversed clockwise, entered radially.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub basepoint: C64,
    pub puncture: Option<C64>,
    pub radius: f64,
}

impl LoopSpec {
    pub fn segments(&self) -> Vec<Segment> {
        let (line, arc) = match self.puncture {
            Some(p) => {
                let dir = (self.basepoint - p) / (self.basepoint - p).norm();
                let q = p + dir * self.radius;
                let arc = Segment::Arc { center: p, radius: self.radius, start: dir.arg(), sweep: 2.0 * PI };
                (Segment::Line { from: self.basepoint, to: q }, arc)
            }
            None => {
                let ang = self.basepoint.arg();
                let q = C64::from_polar(self.radius, ang);
                let arc = Segment::Arc { center: C64::default(), radius: self.radius, start: ang, sweep: -2.0 * PI };
                (Segment::Line { from: self.basepoint, to: q }, arc)
            }
        };
        vec![line, arc, line.reversed()]
    }

    /// Transport around the loop: `T·A·T⁻¹` with T the entry segment.
    pub fn monodromy<Cn: Connection + ?Sized>(&self, conn: &Cn, opts: &TransportOptions) -> Result<Matrix2c> {
        let segs = self.segments();
        let t = parallel_transport(conn, &segs[..1], opts)?;
        let a = parallel_transport(conn, &segs[1..2], opts)?;
        Ok(t * a * t.inverse())
    }
}

/// Basepoint, loops and the relation order for one puncture chart.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopSet {
    pub loops: Vec<LoopSpec>,
    /// Indices `[a, b, c, d]` with `M_a M_b M_c M_d = Id`.
    pub relation: [usize; 4],
}

impl LoopSet {
    /// Z-chart: basepoint 2i, radius 0.2 about −1, 0, 1, and the circle of
    /// radius 3 about ∞. Counterclockwise order is −1, 0, 1 seen from
    /// below the basepoint, giving `M₁M₂M₃M₄ = Id` for right-action transport.
    pub fn z_chart() -> Self {
        let b = c(0.0, 2.0);
        let mut loops: Vec<LoopSpec> =
            [-1.0, 0.0, 1.0].iter().map(|&p| LoopSpec { basepoint: b, puncture: Some(re(p)), radius: 0.2 }).collect();
        loops.push(LoopSpec { basepoint: b, puncture: None, radius: 3.0 });
        LoopSet { loops, relation: [0, 1, 2, 3] }
    }

    /// P-chart: basepoint 0, radius 0.4; the punctures lie counterclockwise
    /// in the order p₁, p₃, p₂, p₄.
    pub fn p_chart() -> Self {
        let loops = crate::fuchsian::p_punctures()
            .iter()
            .map(|&p| LoopSpec { basepoint: re(0.0), puncture: Some(p), radius: 0.4 })
            .collect();
        LoopSet { loops, relation: [0, 2, 1, 3] }
    }

    pub fn of(n: Normalization) -> Self {
        match n {
            Normalization::Z => Self::z_chart(),
            Normalization::P => Self::p_chart(),
        }
    }
}

/// Four monodromies with determinant one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonodromyRep {
    pub m: [Matrix2c; 4],
}

impl MonodromyRep {
    /// `‖M_a M_b M_c M_d − Id‖` for the chart's relation order.
    pub fn relation_defect(&self, order: [usize; 4]) -> f64 {
        let p = self.m[order[0]] * self.m[order[1]] * self.m[order[2]] * self.m[order[3]];
        (p - Matrix2c::identity()).norm()
    }

    pub fn conjugate(&self, g: &Matrix2c) -> Self {
        let gi = g.inverse();
        MonodromyRep { m: self.m.map(|x| *g * x * gi) }
    }
}

/// Monodromy of any connection along a loop set.
pub fn monodromy_of<Cn: Connection + ?Sized>(conn: &Cn, set: &LoopSet, opts: &TransportOptions) -> Result<MonodromyRep> {
    let mut m = [Matrix2c::identity(); 4];
    for (k, lp) in set.loops.iter().enumerate() {
        // trace-free forms have det-one transport; remove round-off drift
        let mk = lp.monodromy(conn, opts)?;
        m[k] = mk * (re(1.0) / mk.det().sqrt());
    }
    Ok(MonodromyRep { m })
}

/// Tolerance used by [`monodromy_rep`]. Monodromies of non-unitary
/// systems can have norms in the thousands, and products amplify
/// transport errors by about that factor squared.
pub const REP_RTOL: f64 = 1e-12;

/// Monodromy of a Fuchsian system along the standard loops of its chart.
pub fn monodromy_rep(sys: &FuchsianSystem) -> Result<MonodromyRep> {
    monodromy_of(sys, &LoopSet::of(sys.punctures.normalization), &TransportOptions::with_rtol(REP_RTOL))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitarizationResult {
    pub metric: Option<HermitianMetric>,
    /// `Σ_k ‖M_k* H M_k − H‖²_F` at the best H found.
    pub residual: f64,
}

impl UnitarizationResult {
    pub fn is_present(&self) -> bool {
        self.metric.is_some()
    }
}


fn metric_from_params(x: &Vector3<f64>) -> Matrix2c {
    let l = Matrix2c::new(re(x[0].exp()), C64::default(), c(x[1], x[2]), re((-x[0]).exp()));
    l * l.adjoint()
}

fn residual_vector(rep: &MonodromyRep, x: &Vector3<f64>) -> Vec<f64> {
    let h = metric_from_params(x);
    let mut out = Vec::with_capacity(32);
    for m in &rep.m {
        let d = m.adjoint() * h * *m - h;
        for z in d.m {
            out.push(z.re);
            out.push(z.im);
        }
    }
    out
}

/// Levenberg–Marquardt over `H = L L*`, L lower-triangular with det 1.
fn polish(rep: &MonodromyRep, mut x: Vector3<f64>, iters: usize) -> (Vector3<f64>, f64) {
    let mut r = residual_vector(rep, &x);
    let mut f: f64 = r.iter().map(|v| v * v).sum();
    let mut mu = 1e-3;
    for _ in 0..iters {
        if f < 1e-30 {
            break;
        }
        let n = r.len();
        let mut jac = DMatrix::<f64>::zeros(n, 3);
        for j in 0..3 {
            let step = 1e-7 * (1.0 + x[j].abs());
            let mut xp = x;
            xp[j] += step;
            let rp = residual_vector(rep, &xp);
            for i in 0..n {
                jac[(i, j)] = (rp[i] - r[i]) / step;
            }
        }
        let rv = nalgebra::DVector::from_vec(r.clone());
        let jtj: Matrix3<f64> = (jac.transpose() * &jac).fixed_view::<3, 3>(0, 0).into_owned();
        let jtr: Vector3<f64> = (jac.transpose() * rv).fixed_view::<3, 1>(0, 0).into_owned();
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj;
            for d in 0..3 {
                a[(d, d)] += mu * (1.0 + jtj[(d, d)]);
            }
            let Some(dx) = a.lu().solve(&(-jtr)) else {
                mu *= 10.0;
                continue;
            };
            let xn = x + dx;
            let rn = residual_vector(rep, &xn);
            let fnew: f64 = rn.iter().map(|v| v * v).sum();
            if fnew.is_finite() && fnew < f {
                x = xn;
                r = rn;
                let gain = f - fnew;
                f = fnew;
                mu = (mu * 0.3).max(1e-12);
                improved = gain > 1e-32;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (x, f)
}

fn params_from_metric(h: &Matrix2c) -> Option<Vector3<f64>> {
    // H = L L* with L lower-triangular: L11 = sqrt(h11), L21 = h21 / L11
    let h11 = h.m[0].re;
    if h11 <= 0.0 || h.det().re <= 0.0 {
        return None;
    }
    let l11 = h11.sqrt();
    let l21 = h.m[2] / l11;
    Some(Vector3::new(l11.ln(), l21.re, l21.im))
}

/// Hermitian solution of the linear equations `M_k* H M_k = H` belonging to
/// the smallest singular value.
pub fn linear_metric(rep: &MonodromyRep) -> Matrix2c {
    let basis = [
        Matrix2c::from_real(1.0, 0.0, 0.0, 0.0),
        Matrix2c::from_real(0.0, 0.0, 0.0, 1.0),
        Matrix2c::from_real(0.0, 1.0, 1.0, 0.0),
        Matrix2c::new(re(0.0), I, -I, re(0.0)),
    ];
    let mut a = DMatrix::<f64>::zeros(32, 4);
    for (k, m) in rep.m.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let x = m.adjoint() * *b * *m - *b;
            for e in 0..4 {
                a[(8 * k + 2 * e, j)] = x.m[e].re;
                a[(8 * k + 2 * e + 1, j)] = x.m[e].im;
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let kmin = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc })
        .0;
    let v = vt.row(kmin);
    let h = (0..4).fold(Matrix2c::zero(), |acc, j| acc + basis[j] * v[j]);
    if h.trace().re < 0.0 {
        -h
    } else {
        h
    }
}

/// Searches for a positive-definite Hermitian H with det 1 and
/// `M_k* H M_k = H`: a linear-algebra seed, then Levenberg–Marquardt from the
/// seed, from Id and from 8 seeded random starts. Present iff the best
/// residual is below `tol·Σ‖M_k‖²`.
pub fn unitarize(rep: &MonodromyRep, tol: f64) -> UnitarizationResult {
    let scale: f64 = rep.m.iter().map(|m| m.norm().powi(2)).sum();
    let mut starts = Vec::new();
    let h = linear_metric(rep);
    if h.det().re > 0.0 {
        if let Some(x) = params_from_metric(&h.scale(re(1.0 / h.det().re.sqrt()))) {
            starts.push(x);
        }
    }
    starts.push(Vector3::zeros());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..8 {
        starts.push(Vector3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)));
    }
    let mut best = (Vector3::zeros(), f64::INFINITY);
    for x0 in starts {
        let (x, f) = polish(rep, x0, 200);
        if f < best.1 {
            best = (x, f);
        }
        if best.1 < 1e-28 * scale.max(1.0) {
            break;
        }
    }
    let h = metric_from_params(&best.0);
    let metric = if best.1 < tol * scale { HermitianMetric::normalized(h).ok() } else { None };
    UnitarizationResult { metric, residual: best.1 }
}

/// Whether the four monodromies share an eigenvector.
pub fn is_reducible_rep(rep: &MonodromyRep, tol: f64) -> bool {
    let scalar = |m: &Matrix2c| (m.m[1].norm() + m.m[2].norm() + (m.m[0] - m.m[3]).norm()) < tol * (1.0 + m.norm());
    let Some(first) = rep.m.iter().find(|m| !scalar(m)) else {
        return true;
    };
    let (e1, e2) = first.eigenvalues();
    [first.eigenvector(e1), first.eigenvector(e2)].iter().any(|v| {
        rep.m.iter().all(|m| {
            let w = m.apply(*v);
            // component of Mv orthogonal to v
            let proj = v[0].conj() * w[0] + v[1].conj() * w[1];
            let perp = [w[0] - v[0] * proj, w[1] - v[1] * proj];
            (perp[0].norm_sqr() + perp[1].norm_sqr()).sqrt() < tol * (1.0 + m.norm())
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuchsian::{make_normal_form, make_reducible, make_us, mobius_change};

    fn mclose(a: Matrix2c, b: Matrix2c, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn diagonal_loop_is_exponential() {
        let sys = make_reducible(1, -1, 0.125).unwrap();
        let rep = monodromy_rep(&sys).unwrap();
        let w = C64::from_polar(1.0, 2.0 * PI * 0.125);
        assert!(mclose(rep.m[1], Matrix2c::diag(w, w.conj()), 1e-9));
    }

    #[test]
    fn reducible_reps_are_diagonal() {
        let sys = make_reducible(-1, -1, 0.125).unwrap();
        let rep = monodromy_rep(&sys).unwrap();
        let w = C64::from_polar(1.0, 2.0 * PI * 0.125);
        let expect = [w.conj(), w, w.conj(), w];
        for k in 0..4 {
            assert!(mclose(rep.m[k], Matrix2c::diag(expect[k], expect[k].conj()), 1e-9), "{k}");
        }
        assert!(is_reducible_rep(&rep, 1e-8));
    }

    #[test]
    fn trivial_paths() {
        let sys = make_us(c(2.0, 0.5), re(1.0), 0.125).unwrap();
        let p = Segment::Line { from: c(0.3, 1.0), to: c(0.3, 1.0) };
        assert_eq!(parallel_transport(&sys, &[p], &Default::default()).unwrap(), Matrix2c::identity());
        let seg = Segment::Line { from: c(0.3, 1.0), to: c(-2.0, 0.7) };
        let m = parallel_transport(&sys, &[seg, seg.reversed()], &Default::default()).unwrap();
        assert!(mclose(m, Matrix2c::identity(), 1e-9));
        let close = Segment::Line { from: c(-0.5, 1e-4), to: c(0.5, 1e-4) };
        assert!(matches!(parallel_transport(&sys, &[close], &Default::default()), Err(Error::PathTooClose(_))));
    }

    #[test]
    fn stable_system_traces_and_relation() {
        let sys = make_us(re(2.0), re(1.0), 0.125).unwrap();
        let rep = monodromy_rep(&sys).unwrap();
        for m in &rep.m {
            assert!((m.trace() - 2.0f64.sqrt()).norm() < 1e-7);
            // det cancels to ~ε‖M‖² in double precision
            assert!((m.det() - 1.0).norm() < 1e-12 * m.norm().powi(2).max(1e3));
        }
        assert!(!is_reducible_rep(&rep, 1e-6));
    }

    #[test]
    fn infinity_loop_matches_big_circle() {
        let sys = make_normal_form(c(0.4, 1.3), 0.17).unwrap();
        let set = LoopSet::z_chart();
        let rep = monodromy_of(&sys, &set, &Default::default()).unwrap();
        // a loop around ∞ counterclockwise is a clockwise circle of radius 3
        let b = c(0.0, 2.0);
        let up = Segment::Line { from: b, to: c(0.0, 3.0) };
        let arc = Segment::Arc { center: re(0.0), radius: 3.0, start: PI / 2.0, sweep: -2.0 * PI };
        let m4 = parallel_transport(&sys, &[up, arc, up.reversed()], &Default::default()).unwrap();
        assert!(mclose(m4, rep.m[3], 1e-8));
    }

    #[test]
    fn p_chart_relation() {
        let sys = mobius_change(&make_us(c(0.4, 1.3), re(0.3), 0.2).unwrap(), Normalization::P);
        let rep = monodromy_rep(&sys).unwrap();
        assert!(rep.relation_defect(LoopSet::p_chart().relation) < 1e-8);
        for m in &rep.m {
            assert!((m.trace() - 2.0 * (2.0 * PI * 0.2).cos()).norm() < 1e-8);
        }
    }

    #[test]
    fn homotopy_invariance() {
        let sys = make_us(c(-0.7, 0.4), c(0.2, 0.1), 0.21).unwrap();
        let a = LoopSpec { basepoint: c(0.0, 2.0), puncture: Some(re(0.0)), radius: 0.2 };
        let b = LoopSpec { radius: 0.45, ..a };
        let o = TransportOptions::default();
        assert!(mclose(a.monodromy(&sys, &o).unwrap(), b.monodromy(&sys, &o).unwrap(), 1e-8));
    }

    #[test]
    fn log_ray_reaches_close_to_pole() {
        let sys = make_reducible(-1, 1, 0.1).unwrap();
        // diagonal: Φ(r) = diag((r/r0)^{±ρσ}) along the ray from r0 to r
        let seg = Segment::LogRay { center: re(0.0), angle: 1.0, r_from: 0.5, r_to: 1e-30 };
        let m = parallel_transport(&sys, &[seg], &Default::default()).unwrap();
        // residues at −1 and 1 contribute a little; compare to the local model only loosely
        let local = (1e-30f64 / 0.5).powf(0.1);
        assert!((m.m[0].norm() / local - 1.0).abs() < 0.1);
    }

    #[test]
    fn spiral_agrees_with_lines_and_survives_tiny_radii() {
        let sys = make_normal_form(c(2.0, 0.5), 0.2).unwrap();
        let center = re(0.0);
        let (a, b) = (c(0.3, 0.2), c(-0.1, 0.45));
        let seg = Segment::Spiral {
            center,
            u_from: a.norm().ln(),
            u_to: b.norm().ln(),
            psi_from: a.arg(),
            psi_to: b.arg(),
        };
        let opts = TransportOptions::with_rtol(1e-12);
        let m1 = parallel_transport(&sys, &[seg], &opts).unwrap();
        let m2 = parallel_transport(&sys, &[Segment::Line { from: a, to: b }], &opts).unwrap();
        assert!(mclose(m1, m2, 1e-9));
        let deep = Segment::Spiral { center, u_from: -0.5, u_to: -90.0, psi_from: 0.3, psi_to: 1.1 };
        let m = parallel_transport(&sys, &[deep], &opts).unwrap();
        assert!(m.is_finite() && (m.det() - 1.0).norm() < 1e-8);
    }

    #[test]
    fn unitarize_identity_and_conjugated() {
        let u1 = Matrix2c::new(c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.8), c(0.6, 0.0));
        let u2 = Matrix2c::new(C64::from_polar(1.0, 0.7), re(0.0), re(0.0), C64::from_polar(1.0, -0.7));
        let u3 = u1 * u2;
        let u4 = (u1 * u2 * u3).inverse();
        let rep = MonodromyRep { m: [u1, u2, u3, u4] };
        let r = unitarize(&rep, 1e-8);
        assert!(r.residual < 1e-20);
        assert!(mclose(r.metric.unwrap().h, Matrix2c::identity(), 1e-8));
        let g = Matrix2c::new(c(1.2, 0.3), c(0.5, -0.4), c(-0.2, 0.1), c(0.9, 0.2));
        let rep2 = rep.conjugate(&g.inverse());
        let r2 = unitarize(&rep2, 1e-8);
        let h = r2.metric.unwrap().h;
        let gg = g.adjoint() * g;
        let gg = gg.scale(re(1.0 / gg.det().re.sqrt()));
        assert!(mclose(h, gg, 1e-6 * gg.norm()));
    }

    #[test]
    fn random_stable_systems_relation_and_eigenvalues() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut worst = (0.0f64, 0.0f64);
        for _ in 0..20 {
            let u = loop {
                let u = C64::from_polar(rng.gen_range(0.3..2.0), rng.gen_range(-PI..PI));
                if (u - 1.0).norm() > 0.2 {
                    break u;
                }
            };
            let s = C64::from_polar(rng.gen_range(0.0..0.5), rng.gen_range(-PI..PI));
            let rho = rng.gen_range(0.01..0.25);
            let rep = monodromy_rep(&make_us(u, s, rho).unwrap()).unwrap();
            let e = C64::from_polar(1.0, 2.0 * PI * rho);
            for m in &rep.m {
                let (a, b) = m.eigenvalues();
                let d = ((a - e).norm() + (b - e.conj()).norm()).min((a - e.conj()).norm() + (b - e).norm());
                worst.0 = worst.0.max(d);
            }
            worst.1 = worst.1.max(rep.relation_defect(LoopSet::z_chart().relation));
        }
        assert!(worst.0 < 1e-7 && worst.1 < 1e-7, "{worst:?}");
    }

    #[test]
    fn unstable_family_at_e_zero_is_not_unitarizable() {
        use crate::fuchsian::{unstable_connection_form, UnstableFamilyPoint};
        let pt = UnstableFamilyPoint { e: re(0.0), c0: c(0.3, 0.2), rho: 0.15 };
        let conn = FnConnection { f: move |z| unstable_connection_form(&pt, z).unwrap(), poles: vec![re(-1.0), re(0.0), re(1.0)] };
        let rep = monodromy_of(&conn, &LoopSet::z_chart(), &Default::default()).unwrap();
        let r = unitarize(&rep, 1e-8);
        assert!(r.metric.is_none() && r.residual > 1e-3, "{}", r.residual);
    }
}
