//! DPW reconstruction of the minimal immersion into S³ ≅ SU(2), the
//! stitched compact mesh, its area and cone angles, and OBJ export.
//!
//! The holomorphic frame Φ(z, λ) is transported on a loop of λ-samples.
//! With H(λ) the unitarizing metric of the monodromy and C = H^{1/2}, the
//! loop `CΦ` is split as `F·B` with F unitary on |λ| = 1 and B holomorphic
//! in the unit disk. The split comes from the block Toeplitz system of the
//! Fourier coefficients of `W = Φ*HΦ = B*B`. The immersion is
//! `f = F(λ₋)F(λ₊)⁻¹` at the Sym points λ∓ = ∓i.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuchsian::{p_punctures, symmetry_matrices, PunctureSet};
use crate::loopalg::{c, re, HermitianMetric, Matrix2c, C64, I};
use crate::monodromy::{monodromy_of, Connection, transport_from, unitarize, LoopSet, ResidueForm, Segment, TransportOptions};
use crate::potential::{eta_minus1, genus_of_t, residue_form, residues_of_values, PotentialCoefficients};

/// Sym points `(λ₋, λ₊)`.
pub const SYM_POINTS: [C64; 2] = [C64 { re: 0.0, im: -1.0 }, C64 { re: 0.0, im: 1.0 }];

/// Largest tolerated `‖F*F − Id‖` of a Sym-point frame.
pub const UNITARITY_TOL: f64 = 1e-7;

/// Vertices closer than this are identified when stitching.
pub const STITCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceOptions {
    /// Number K of λ-samples on the unit circle (even).
    pub loop_samples: usize,
    /// Fourier order L of the Toeplitz system.
    pub fourier_order: usize,
    /// Rings between a puncture and radius `NEAR_RADIUS`, uniform in `|z − p|^{2t}`.
    pub near_rings: usize,
    /// Rings from `NEAR_RADIUS` to the far edge of the region.
    pub far_rings: usize,
    /// Angular subdivisions of a region.
    pub sectors: usize,
    pub transport_rtol: f64,
    pub unitarize_tol: f64,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        SurfaceOptions {
            // 64/20 loses unitarity near the punctures at t = 1/4.
            loop_samples: 96,
            fourier_order: 30,
            near_rings: 24,
            far_rings: 6,
            sectors: 6,
            transport_rtol: 1e-11,
            unitarize_tol: 1e-8,
        }
    }
}

impl SurfaceOptions {
    /// The same options with every mesh resolution multiplied by `2^k`.
    pub fn refined(&self, k: u32) -> Self {
        let f = 1usize << k;
        SurfaceOptions {
            near_rings: self.near_rings * f,
            far_rings: self.far_rings * f,
            sectors: self.sectors * f,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.loop_samples < 8 || self.loop_samples % 2 != 0 || 2 * self.fourier_order + 1 > self.loop_samples {
            return Err(Error::Input("loop_samples must be even and exceed 2·fourier_order".into()));
        }
        if self.near_rings < 2 || self.far_rings < 1 || self.sectors < 2 {
            return Err(Error::Input("mesh resolution too small".into()));
        }
        Ok(())
    }
}

/// Hermitian square root of a positive matrix with determinant one.
fn sqrt_det_one(h: &Matrix2c) -> Matrix2c {
    let s = (h.trace().re + 2.0).sqrt();
    (*h + Matrix2c::identity()).scale(re(1.0 / s))
}

/// Unit quaternion `[[α, −β̄], [β, ᾱ]]` as `(Re α, Im α, Re β, Im β)`.
pub fn su2_to_r4(m: &Matrix2c) -> [f64; 4] {
    let (a, b) = ((m.m[0] + m.m[3].conj()) * 0.5, (m.m[2] - m.m[1].conj()) * 0.5);
    [a.re, a.im, b.re, b.im]
}

pub fn r4_to_su2(x: &[f64; 4]) -> Matrix2c {
    let (a, b) = (c(x[0], x[1]), c(x[2], x[3]));
    Matrix2c::new(a, -b.conj(), b, a.conj())
}

/// `f = F₋·F₊⁻¹` as a point of S³.
pub fn sym_point_immersion(f_minus: &Matrix2c, f_plus: &Matrix2c) -> Result<[f64; 4]> {
    let dev = f_minus.unitarity_defect().max(f_plus.unitarity_defect());
    if !(dev <= UNITARITY_TOL) {
        return Err(Error::NonUnitary(dev));
    }
    let f = *f_minus * f_plus.adjoint();
    let dev = f.unitarity_defect().max((f.det() - 1.0).norm());
    if !(dev <= UNITARITY_TOL) {
        return Err(Error::NonUnitary(dev));
    }
    Ok(su2_to_r4(&f))
}

/// Per-λ data of a solved potential: connection forms on the sample loop
/// (followed by the Sym points), unitarizing metrics, and the unitary
/// local monodromies at the Sym points.
pub struct Unitarizer {
    pub t: f64,
    pub opts: SurfaceOptions,
    /// `K` samples `e^{iπ(2j+1)/K}` followed by λ₋, λ₊.
    pub lams: Vec<C64>,
    forms: Vec<ResidueForm>,
    /// Unitarizing metrics (determinant one) at the samples.
    pub metrics: Vec<Matrix2c>,
    /// `C = H^{1/2}` at λ₋, λ₊ from the interpolated metric.
    pub c_sym: [Matrix2c; 2],
    /// `C M_k C⁻¹` at λ₋, λ₊ for the P-chart loops.
    pub u_sym: [[Matrix2c; 4]; 2],
    /// Largest unitarity defect among `u_sym`.
    pub sym_defect: f64,
}

impl Unitarizer {
    pub fn new(coeffs: &PotentialCoefficients, opts: &SurfaceOptions) -> Result<Self> {
        opts.validate()?;
        let k = opts.loop_samples;
        let mut lams: Vec<C64> = (0..k).map(|j| C64::from_polar(1.0, PI * (2 * j + 1) as f64 / k as f64)).collect();
        lams.extend_from_slice(&SYM_POINTS);
        let forms = lams.iter().map(|&l| residue_form(coeffs, l)).collect::<Result<Vec<_>>>()?;
        let topts = TransportOptions::with_rtol(opts.transport_rtol);
        let reps = forms
            .par_iter()
            .map(|f| monodromy_of(f, &LoopSet::p_chart(), &topts))
            .collect::<Result<Vec<_>>>()?;
        let mut metrics = Vec::with_capacity(k);
        for (j, rep) in reps[..k].iter().enumerate() {
            match unitarize(rep, opts.unitarize_tol).metric {
                Some(h) => metrics.push(h.h),
                None => return Err(Error::MissingUnitarization(j)),
            }
        }
        let mut c_sym = [Matrix2c::identity(); 2];
        let mut u_sym = [[Matrix2c::identity(); 4]; 2];
        let mut sym_defect = 0.0f64;
        for s in 0..2 {
            let h = HermitianMetric::normalized(fourier_eval(&fourier(&metrics, &lams[..k], k / 2 - 1), SYM_POINTS[s]))?;
            let cm = sqrt_det_one(&h.h);
            let ci = cm.inverse();
            for (l, m) in reps[k + s].m.iter().enumerate() {
                let u = cm * *m * ci;
                sym_defect = sym_defect.max(u.unitarity_defect());
                u_sym[s][l] = u;
            }
            c_sym[s] = cm;
        }
        Ok(Unitarizer { t: coeffs.t, opts: *opts, lams, forms, metrics, c_sym, u_sym, sym_defect })
    }

    /// Transports the frame along `path` for every λ, starting at `start`.
    pub fn transport(&self, path: &[Segment], start: &[Matrix2c]) -> Result<Vec<Matrix2c>> {
        let topts = TransportOptions::with_rtol(self.opts.transport_rtol);
        self.forms.iter().zip(start).map(|(f, y0)| transport_from(f, path, *y0, &topts)).collect()
    }

    /// Iwasawa data of a frame given at all λ of [`Unitarizer::lams`].
    pub fn iwasawa(&self, phi: &[Matrix2c]) -> Result<IwasawaPoint> {
        let k = self.opts.loop_samples;
        let l = self.opts.fourier_order;
        let w: Vec<Matrix2c> = (0..k).map(|j| phi[j].adjoint() * self.metrics[j] * phi[j]).collect();
        let wn = fourier(&w, &self.lams[..k], 2 * l);
        let nb = l + 1;
        let mut a = DMatrix::<C64>::zeros(2 * nb, 2 * nb);
        for n in 0..nb {
            for m in 0..nb {
                let blk = wn[(n as isize - m as isize + 2 * l as isize) as usize];
                for (e, v) in blk.m.iter().enumerate() {
                    a[(2 * n + e / 2, 2 * m + e % 2)] = *v;
                }
            }
        }
        let mut rhs = DMatrix::<C64>::zeros(2 * nb, 2);
        rhs[(0, 0)] = re(1.0);
        rhs[(1, 1)] = re(1.0);
        let z = a.lu().solve(&rhs).ok_or_else(|| Error::Iwasawa("singular Toeplitz system".into()))?;
        let zm: Vec<Matrix2c> = (0..nb)
            .map(|m| Matrix2c::new(z[(2 * m, 0)], z[(2 * m, 1)], z[(2 * m + 1, 0)], z[(2 * m + 1, 1)]))
            .collect();
        let z0i = zm[0].inverse();
        let z0i = (z0i + z0i.adjoint()).scale(re(0.5));
        if !(z0i.m[0].re > 0.0 && z0i.det().re > 0.0) {
            return Err(Error::Iwasawa("factor not positive".into()));
        }
        let b0 = HermitianMetric { h: z0i }.cholesky_upper();
        let mut frames = [Matrix2c::identity(); 2];
        for s in 0..2 {
            let lam = SYM_POINTS[s];
            let mut zs = Matrix2c::zero();
            let mut p = re(1.0);
            for zmat in &zm {
                zs += zmat.scale(p);
                p *= lam;
            }
            frames[s] = self.c_sym[s] * phi[k + s] * zs * b0.adjoint();
        }
        Ok(IwasawaPoint { b0, frames })
    }

    /// Immersion at a frame given at all λ.
    pub fn immersion(&self, phi: &[Matrix2c]) -> Result<[f64; 4]> {
        let iw = self.iwasawa(phi)?;
        sym_point_immersion(&iw.frames[0], &iw.frames[1])
    }

    /// The isometry `x ↦ U(λ₋)·x·U(λ₊)⁻¹` of the loop around P-chart puncture `k`.
    pub fn loop_isometry(&self, k: usize) -> Isometry {
        Isometry { left: self.u_sym[0][k], right: self.u_sym[1][k] }
    }
}

/// Fourier coefficients `X_n = (1/K)Σ_j X(λ_j)λ_j^{−n}` for `|n| ≤ order`,
/// indexed from `−order`.
fn fourier(x: &[Matrix2c], lams: &[C64], order: usize) -> Vec<Matrix2c> {
    let k = lams.len() as f64;
    (0..=2 * order)
        .map(|i| {
            let n = i as i32 - order as i32;
            x.iter().zip(lams).fold(Matrix2c::zero(), |acc, (m, l)| acc + m.scale(l.powi(-n) / k))
        })
        .collect()
}

fn fourier_eval(coef: &[Matrix2c], lam: C64) -> Matrix2c {
    let order = (coef.len() / 2) as i32;
    coef.iter().enumerate().fold(Matrix2c::zero(), |acc, (i, m)| acc + m.scale(lam.powi(i as i32 - order)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IwasawaPoint {
    /// `B(0)`: upper triangular with positive diagonal.
    pub b0: Matrix2c,
    /// Unitary frames `F(λ₋), F(λ₊)`.
    pub frames: [Matrix2c; 2],
}

/// Area density of the immersion with respect to `dx dy` at `z`:
/// `4‖B(0)·η₋₁(z)·B(0)⁻¹‖²`.
pub fn area_density(coeffs: &PotentialCoefficients, b0: &Matrix2c, z: C64) -> Result<f64> {
    let xi = *b0 * eta_minus1(coeffs, z)? * b0.inverse();
    Ok(4.0 * xi.norm().powi(2))
}

/// `|z − p|²` times [`area_density`] at `z = p + offset`, finite as the
/// offset shrinks toward the puncture `p`.
pub fn area_density_offset(coeffs: &PotentialCoefficients, b0: &Matrix2c, p: C64, offset: C64) -> f64 {
    let res = residues_of_values(coeffs.a.coeff(-1), coeffs.b.coeff(-1), coeffs.c.coeff(-1));
    let form = ResidueForm { points: PunctureSet::p_chart().points, residues: res };
    let xi = *b0 * form.form_offset(p, offset) * b0.inverse();
    4.0 * xi.norm().powi(2)
}

/// Isometry `x ↦ L·x·R⁻¹` of S³ ≅ SU(2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isometry {
    pub left: Matrix2c,
    pub right: Matrix2c,
}

impl Isometry {
    pub fn identity() -> Self {
        Isometry { left: Matrix2c::identity(), right: Matrix2c::identity() }
    }

    pub fn apply(&self, x: &[f64; 4]) -> [f64; 4] {
        su2_to_r4(&(self.left * r4_to_su2(x) * self.right.adjoint()))
    }

    pub fn compose(&self, o: &Isometry) -> Isometry {
        Isometry { left: self.left * o.left, right: self.right * o.right }
    }

    /// The 4×4 real matrix, row-major.
    pub fn matrix(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for j in 0..4 {
            let mut e = [0.0; 4];
            e[j] = 1.0;
            let col = self.apply(&e);
            for i in 0..4 {
                out[i][j] = col[i];
            }
        }
        out
    }

    fn distance(&self, o: &Isometry) -> f64 {
        let (a, b) = (self.matrix(), o.matrix());
        (0..16).map(|e| (a[e / 4][e % 4] - b[e / 4][e % 4]).abs()).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// The fundamental region and its sixteen images

/// Rings up to this distance from the puncture are graded in `|z − p|^{2t}`.
pub const NEAR_RADIUS: f64 = 0.5;

/// Weight of the radial distance in the ring grading.
const RING_SLOPE: f64 = 2.0;

/// Interior reference point of the template region, used as the root of the
/// transport tree in every image.
const HUB: C64 = C64 { re: 0.554_327_719_506_772, im: 0.229_610_059_419_340_4 };

/// Angle (seen from p₀) of the point of the unit circle at distance ρ from p₀.
fn psi_arc(rho: f64) -> f64 {
    -FRAC_PI_4 - (rho / 2.0).min(1.0).asin()
}

/// The template region `{|z| ≤ 1, 0 ≤ arg z ≤ π/4}` in polar coordinates
/// `(u, ψ)`, `z = p₀ + e^{u + iψ}`, about its corner p₀ = e^{iπ/4}. Vertex 0
/// is the corner itself.
#[derive(Debug, Clone)]
struct Template {
    polar: Vec<(f64, f64)>,
    /// `|z − p₀|^{2t}`, the ring grading.
    sigma: Vec<f64>,
    triangles: Vec<[usize; 3]>,
    /// `rows[i][j]`; row 0 is the corner.
    rows: Vec<Vec<usize>>,
    near: usize,
}

impl Template {
    fn new(t: f64, near: usize, far: usize, sectors: usize) -> Self {
        let mut polar = vec![(f64::NEG_INFINITY, -0.75 * PI)];
        let mut sigma = vec![0.0];
        let mut rows = vec![vec![0; sectors + 1]];
        let uc = NEAR_RADIUS.ln();
        // rings uniform in g(ρ) = ρ^{2t} + RING_SLOPE·ρ: graded in σ at the
        // puncture, roughly uniform in ρ away from it
        let g = |u: f64| (2.0 * t * u).exp() + RING_SLOPE * u.exp();
        let g_top = g(uc);
        for i in 1..=near {
            let target = g_top * i as f64 / near as f64;
            let (mut lo, mut hi) = (target.ln() / (2.0 * t) - 50.0, uc);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let u = if i == near { uc } else { 0.5 * (lo + hi) };
            let s = (2.0 * t * u).exp();
            let top = psi_arc(u.exp());
            let row = (0..=sectors)
                .map(|j| {
                    polar.push((u, -0.75 * PI + (top + 0.75 * PI) * j as f64 / sectors as f64));
                    sigma.push(s);
                    polar.len() - 1
                })
                .collect();
            rows.push(row);
        }
        // far rows interpolate between the outer ring and the far edge, whose
        // vertices include the region corner z = 1
        let p0 = C64::from_polar(1.0, FRAC_PI_4);
        let ring: Vec<C64> = rows[near].iter().map(|&v| p0 + C64::from_polar(polar[v].0.exp(), polar[v].1)).collect();
        let theta_end = ring[sectors].arg();
        let corner_j = ((sectors as f64 / (1.0 + theta_end)).round() as usize).clamp(1, sectors - 1);
        let edge = |j: usize| -> C64 {
            if j <= corner_j {
                re(j as f64 / corner_j as f64)
            } else {
                C64::from_polar(1.0, theta_end * (j - corner_j) as f64 / (sectors - corner_j) as f64)
            }
        };
        for k in 1..=far {
            let row = (0..=sectors)
                .map(|j| {
                    if j == sectors {
                        return rows[near][sectors];
                    }
                    let z = ring[j] + (edge(j) - ring[j]) * (k as f64 / far as f64);
                    let o = z - p0;
                    polar.push((o.norm().ln(), o.arg()));
                    sigma.push(o.norm().powf(2.0 * t));
                    polar.len() - 1
                })
                .collect();
            rows.push(row);
        }
        let mut triangles = Vec::new();
        for j in 0..sectors {
            triangles.push([0, rows[1][j], rows[1][j + 1]]);
        }
        for i in 1..rows.len() - 1 {
            for j in 0..sectors {
                let (a, b, cc, d) = (rows[i][j], rows[i + 1][j], rows[i + 1][j + 1], rows[i][j + 1]);
                for tri in [[a, b, cc], [a, cc, d]] {
                    if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                        triangles.push(tri);
                    }
                }
            }
        }
        Template { polar, sigma, triangles, rows, near }
    }

    /// Conformal coordinate `(z − p₀)^{2t}` in which the immersion is
    /// smooth at the corner.
    fn zeta(&self, t: f64, v: usize) -> C64 {
        if v == 0 {
            return C64::default();
        }
        let (u, psi) = self.polar[v];
        C64::from_polar((2.0 * t * u).exp(), 2.0 * t * psi)
    }
}

/// One of the sixteen images of the template under the group generated by
/// `z ↦ iz`, `z ↦ z̄` and `z ↦ 1/z̄`: the map is `z ↦ i^k·z` or `i^k·z̄`,
/// followed by `z ↦ 1/z̄` for `outer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub k: u8,
    pub conj: bool,
    pub outer: bool,
}

impl Region {
    pub fn all() -> Vec<Region> {
        let mut out = Vec::with_capacity(16);
        for outer in [false, true] {
            for conj in [false, true] {
                for k in 0..4 {
                    out.push(Region { k, conj, outer });
                }
            }
        }
        out
    }

    /// The puncture at the region's corner.
    pub fn puncture(&self) -> C64 {
        let p0 = C64::from_polar(1.0, FRAC_PI_4);
        let q = if self.conj { p0.conj() } else { p0 } * I.powi(self.k as i32);
        nearest_puncture(q).1
    }

    /// Polar coordinates in the integration plane: the z-plane for inner
    /// regions, the w = 1/z plane for outer ones.
    fn plane_polar(&self, (u, psi): (f64, f64)) -> (f64, f64) {
        let mut psi = if self.conj { -psi } else { psi } + FRAC_PI_2 * self.k as f64;
        if self.outer {
            psi = -psi;
        }
        (u, psi)
    }

    fn plane_center(&self) -> C64 {
        let q = self.puncture();
        if self.outer {
            nearest_puncture(q.conj()).1
        } else {
            q
        }
    }

    /// Orientation relative to the template.
    fn reverses(&self) -> bool {
        self.conj != self.outer
    }
}

fn nearest_puncture(z: C64) -> (usize, C64) {
    let pts = p_punctures();
    let k = (0..4).min_by(|&a, &b| (pts[a] - z).norm().total_cmp(&(pts[b] - z).norm())).unwrap();
    (k, pts[k])
}

/// Polynomial extrapolation to 0 of samples `(x_i, y_i)` (Neville).
fn extrapolate<const D: usize>(xs: &[f64], ys: &[[f64; D]]) -> [f64; D] {
    let mut p: Vec<[f64; D]> = ys.to_vec();
    let n = xs.len();
    for m in 1..n {
        for i in 0..n - m {
            let (x0, x1) = (xs[i], xs[i + m]);
            for d in 0..D {
                p[i][d] = (x1 * p[i][d] - x0 * p[i + 1][d]) / (x1 - x0);
            }
        }
    }
    p[0]
}

fn sub4(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let d = sub4(a, b);
    dot4(&d, &d).sqrt()
}

fn normalize4(a: &[f64; 4]) -> [f64; 4] {
    let n = dot4(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n, a[3] / n]
}

/// One ring of vertices at grading σ about a puncture: its polyline length
/// and the vertex where it meets a fixed ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSample {
    pub sigma: f64,
    pub length: f64,
    pub ray_point: [f64; 4],
}

/// Total angle about a point from rings covering `1/multiplicity` of a
/// neighbourhood: the ratio of ring-length increments to radial increments,
/// extrapolated to σ = 0.
pub fn cone_angle(rings: &[RingSample], multiplicity: f64) -> Result<f64> {
    if rings.len() < 2 {
        return Err(Error::InsufficientSamples);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for w in rings.windows(2) {
        let dr = dist4(&w[1].ray_point, &w[0].ray_point);
        if dr == 0.0 {
            return Err(Error::InsufficientSamples);
        }
        xs.push(0.5 * (w[0].sigma + w[1].sigma));
        ys.push([(w[1].length - w[0].length) / dr]);
    }
    Ok(multiplicity * extrapolate(&xs, &ys)[0])
}

/// The immersion on the sphere cut along the four rays from the punctures
/// to ∞, as sixteen unstitched region meshes.
#[derive(Debug, Clone)]
pub struct Piece {
    pub t: f64,
    pub vertices: Vec<[f64; 4]>,
    /// Conformal coordinate of each vertex within its region.
    pub zeta: Vec<C64>,
    pub triangles: Vec<[usize; 3]>,
    /// Isometries of the loops around the four P-chart punctures.
    pub generators: [Isometry; 4],
    /// Rings about p₀ in the template region, innermost first.
    pub rings: Vec<RingSample>,
}

/// Reconstructs the immersion on the cut sphere.
pub fn reconstruct_piece(coeffs: &PotentialCoefficients, opts: &SurfaceOptions) -> Result<Piece> {
    let un = Unitarizer::new(coeffs, opts)?;
    reconstruct_with(&un, opts)
}

/// [`reconstruct_piece`] with a precomputed [`Unitarizer`]; only the mesh
/// resolution of `opts` is used.
pub fn reconstruct_with(un: &Unitarizer, opts: &SurfaceOptions) -> Result<Piece> {
    opts.validate()?;
    let t = un.t;
    let tpl = Template::new(t, opts.near_rings, opts.far_rings, opts.sectors);
    let (_, tau) = symmetry_matrices();
    let tau_inv = tau.inverse();
    let nl = un.lams.len();
    let hub_polar = {
        let o = HUB - C64::from_polar(1.0, FRAC_PI_4);
        (o.norm().ln(), o.arg())
    };
    let regions = Region::all();
    let per_region: Vec<Vec<[f64; 4]>> = regions
        .par_iter()
        .map(|reg| -> Result<Vec<[f64; 4]>> {
            let q = reg.plane_center();
            let (uh, ph) = reg.plane_polar(hub_polar);
            let hub = q + C64::from_polar(uh.exp(), ph);
            let (root, start, right) = if reg.outer {
                let wc = hub / hub.norm();
                let pre = un.transport(&[Segment::Line { from: C64::default(), to: wc.conj() }], &vec![Matrix2c::identity(); nl])?;
                let start: Vec<Matrix2c> = pre.iter().map(|m| *m * tau_inv).collect();
                (Segment::Line { from: wc, to: hub }, start, tau)
            } else {
                (Segment::Line { from: C64::default(), to: hub }, vec![Matrix2c::identity(); nl], Matrix2c::identity())
            };
            let at_hub = un.transport(&[root], &start)?;
            let spiral = |a: (f64, f64), b: (f64, f64)| Segment::Spiral { center: q, u_from: a.0, u_to: b.0, psi_from: a.1, psi_to: b.1 };
            let mut phi: Vec<Option<Vec<Matrix2c>>> = vec![None; tpl.polar.len()];
            let near = tpl.near;
            for j in 0..tpl.rows[near].len() {
                let v = tpl.rows[near][j];
                let pv = reg.plane_polar(tpl.polar[v]);
                phi[v] = Some(un.transport(&[spiral((uh, ph), pv)], &at_hub)?);
                let chain: Vec<usize> = (1..near).rev().chain(near + 1..tpl.rows.len()).collect();
                let mut prev = v;
                for i in chain {
                    let from = if i == near + 1 { v } else { prev };
                    let to = tpl.rows[i][j];
                    if phi[to].is_none() {
                        let seg = spiral(reg.plane_polar(tpl.polar[from]), reg.plane_polar(tpl.polar[to]));
                        let y0 = phi[from].clone().expect("parent transported first");
                        phi[to] = Some(un.transport(&[seg], &y0)?);
                    }
                    prev = to;
                }
            }
            phi.into_iter()
                .enumerate()
                .map(|(v, p)| match p {
                    None if v == 0 => Ok([f64::NAN; 4]),
                    None => Err(Error::Input("template vertex missed by the transport tree".into())),
                    Some(p) => {
                        let p: Vec<Matrix2c> = p.into_iter().map(|m| m * right).collect();
                        un.immersion(&p)
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let generators = std::array::from_fn(|k| un.loop_isometry(k));
    // corner values: extrapolated along the middle column of the inner,
    // unreflected region at each puncture, then projected onto the fixed
    // set of the loop isometry there
    let jm = opts.sectors / 2;
    let nfit = tpl.near.min(4);
    let mut corners = [[0.0; 4]; 4];
    for (r, reg) in regions.iter().enumerate() {
        if reg.conj || reg.outer {
            continue;
        }
        let xs: Vec<f64> = (1..=nfit).map(|i| tpl.sigma[tpl.rows[i][jm]]).collect();
        let ys: Vec<[f64; 4]> = (1..=nfit).map(|i| per_region[r][tpl.rows[i][jm]]).collect();
        let x = extrapolate(&xs, &ys);
        let (kp, _) = nearest_puncture(reg.puncture());
        corners[kp] = fixed_projection(&generators[kp], &normalize4(&x), t)?;
    }
    let rings = (1..=tpl.near.min(6))
        .map(|i| {
            let row = &tpl.rows[i];
            let length = row.windows(2).map(|w| dist4(&per_region[0][w[0]], &per_region[0][w[1]])).sum();
            RingSample { sigma: tpl.sigma[row[jm]], length, ray_point: per_region[0][row[jm]] }
        })
        .collect();

    let nv = tpl.polar.len();
    let mut vertices = Vec::with_capacity(nv * 16);
    let mut zeta = Vec::with_capacity(nv * 16);
    let mut triangles = Vec::with_capacity(tpl.triangles.len() * 16);
    for (r, reg) in regions.iter().enumerate() {
        let base = vertices.len();
        for v in 0..nv {
            vertices.push(if v == 0 { corners[nearest_puncture(reg.puncture()).0] } else { per_region[r][v] });
            zeta.push(tpl.zeta(t, v));
        }
        for tri in &tpl.triangles {
            let tri = if reg.reverses() { [tri[0], tri[2], tri[1]] } else { *tri };
            triangles.push(tri.map(|v| v + base));
        }
    }
    Ok(Piece { t, vertices, zeta, triangles, generators, rings })
}

/// Averages `x` over the cyclic group generated by `g` and renormalizes.
fn fixed_projection(g: &Isometry, x: &[f64; 4], t: f64) -> Result<[f64; 4]> {
    let mut acc = *x;
    let mut y = g.apply(x);
    let mut power = *g;
    let mut n = 1;
    while power.distance(&Isometry::identity()) > 1e-7 {
        for d in 0..4 {
            acc[d] += y[d];
        }
        y = g.apply(&y);
        power = power.compose(g);
        n += 1;
        if n > 100_000 {
            return Err(Error::NonCompactAngle(t));
        }
    }
    if dot4(&acc, &acc).sqrt() < 1e-3 * n as f64 {
        return Err(Error::Input("loop isometry has no fixed point near the corner".into()));
    }
    Ok(normalize4(&acc))
}

impl Piece {
    /// `∫|∇f|²` over the piece in the regions' conformal coordinates; twice
    /// the area for a conformal immersion.
    pub fn dirichlet_energy(&self) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let mut e = 0.0;
                for s in 0..3 {
                    let (o, a, b) = (tri[s], tri[(s + 1) % 3], tri[(s + 2) % 3]);
                    let (ea, eb) = (self.zeta[a] - self.zeta[o], self.zeta[b] - self.zeta[o]);
                    let cross = (ea.conj() * eb).im.abs();
                    if cross > 0.0 {
                        let cot = (ea.conj() * eb).re / cross;
                        let d = dist4(&self.vertices[a], &self.vertices[b]);
                        e += 0.5 * cot * d * d;
                    }
                }
                e
            })
            .sum()
    }

    pub fn mesh(&self) -> SurfaceMesh {
        stitch(&self.vertices, &self.triangles, STITCH_TOL, 1)
    }

    pub fn cone_angle(&self) -> Result<f64> {
        cone_angle(&self.rings, 4.0)
    }
}

// ---------------------------------------------------------------------------
// Meshes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 4]>,
    pub triangles: Vec<[usize; 3]>,
    pub symmetry_order: usize,
}

/// Identifies vertices within `tol`, drops the triangles that degenerate
/// and the vertices no triangle uses.
pub fn stitch(points: &[[f64; 4]], tris: &[[usize; 3]], tol: f64, symmetry_order: usize) -> SurfaceMesh {
    let key = |x: &[f64; 4]| x.map(|c| (c / tol).floor() as i64);
    let mut grid: HashMap<[i64; 4], Vec<usize>> = HashMap::new();
    let mut reps: Vec<[f64; 4]> = Vec::new();
    let mut map = vec![usize::MAX; points.len()];
    for (i, x) in points.iter().enumerate() {
        let k = key(x);
        let mut found = None;
        'search: for off in 0..81 {
            let mut kk = k;
            let mut o = off;
            for d in kk.iter_mut() {
                *d += (o % 3) as i64 - 1;
                o /= 3;
            }
            if let Some(list) = grid.get(&kk) {
                for &r in list {
                    if dist4(&reps[r], x) <= tol {
                        found = Some(r);
                        break 'search;
                    }
                }
            }
        }
        map[i] = match found {
            Some(r) => r,
            None => {
                reps.push(*x);
                grid.entry(k).or_default().push(reps.len() - 1);
                reps.len() - 1
            }
        };
    }
    let triangles: Vec<[usize; 3]> = tris
        .iter()
        .map(|t| t.map(|v| map[v]))
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();
    let mut used = vec![usize::MAX; reps.len()];
    let mut vertices = Vec::new();
    for t in &triangles {
        for &v in t {
            if used[v] == usize::MAX {
                used[v] = vertices.len();
                vertices.push(reps[v]);
            }
        }
    }
    let triangles = triangles.into_iter().map(|t| t.map(|v| used[v])).collect();
    SurfaceMesh { vertices, triangles, symmetry_order }
}

impl SurfaceMesh {
    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for s in 0..3 {
                let (a, b) = (t[s], t[(s + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Edges with exactly one incident triangle.
    pub fn boundary_edges(&self) -> usize {
        self.edge_counts().values().filter(|&&n| n == 1).count()
    }

    /// Edges with more than two incident triangles.
    pub fn nonmanifold_edges(&self) -> usize {
        self.edge_counts().values().filter(|&&n| n > 2).count()
    }

    pub fn max_norm_defect(&self) -> f64 {
        self.vertices.iter().map(|v| (dot4(v, v).sqrt() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Sum of the flat triangle areas of the mesh embedded in ℝ⁴.
pub fn numeric_area(mesh: &SurfaceMesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let (a, b) = (sub4(&mesh.vertices[t[1]], &mesh.vertices[t[0]]), sub4(&mesh.vertices[t[2]], &mesh.vertices[t[0]]));
            let (aa, bb, ab) = (dot4(&a, &a), dot4(&b, &b), dot4(&a, &b));
            0.5 * (aa * bb - ab * ab).max(0.0).sqrt()
        })
        .sum()
}

/// Richardson extrapolation of a second-order area across one halving of
/// the edge length.
pub fn richardson_area(coarse: f64, fine: f64) -> f64 {
    fine + (fine - coarse) / 3.0
}

/// All elements of the group generated by `generators`.
pub fn generate_group(generators: &[Isometry], t: f64) -> Result<Vec<Isometry>> {
    let mut elems = vec![Isometry::identity()];
    let mut frontier = vec![Isometry::identity()];
    while let Some(g) = frontier.pop() {
        for h in generators {
            let x = h.compose(&g);
            if !elems.iter().any(|e| e.distance(&x) < 1e-6) {
                if elems.len() >= 4096 {
                    return Err(Error::NonCompactAngle(t));
                }
                elems.push(x);
                frontier.push(x);
            }
        }
    }
    Ok(elems)
}

/// Applies the group generated by the loop isometries to the piece and
/// stitches coincident vertices.
pub fn extend_by_symmetry(piece: &SurfaceMesh, generators: &[Isometry], t: f64) -> Result<SurfaceMesh> {
    genus_of_t(t)?;
    let group = generate_group(generators, t)?;
    let nv = piece.vertices.len();
    let mut pts = Vec::with_capacity(nv * group.len());
    let mut tris = Vec::with_capacity(piece.triangles.len() * group.len());
    for (n, g) in group.iter().enumerate() {
        pts.extend(piece.vertices.iter().map(|v| g.apply(v)));
        tris.extend(piece.triangles.iter().map(|tr| tr.map(|v| v + n * nv)));
    }
    Ok(stitch(&pts, &tris, STITCH_TOL, group.len()))
}

/// Extended mesh and measurements of a solved potential.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub t: f64,
    pub genus: u32,
    /// Stitched compact mesh at the refined resolution.
    pub mesh: SurfaceMesh,
    pub area_coarse: f64,
    pub area_fine: f64,
    /// Richardson extrapolation of the two mesh areas.
    pub area: f64,
    /// `∫|∇f|²/2` on the refined piece times the symmetry order.
    pub half_energy: f64,
    pub cone_angle: f64,
    pub euler_characteristic: i64,
    pub boundary_edges: usize,
}

/// Reconstructs the compact surface at `opts` and one refinement level
/// above it.
pub fn reconstruct_surface(coeffs: &PotentialCoefficients, opts: &SurfaceOptions) -> Result<Reconstruction> {
    let genus = genus_of_t(coeffs.t)?;
    let un = Unitarizer::new(coeffs, opts)?;
    let coarse = reconstruct_with(&un, opts)?;
    let fine = reconstruct_with(&un, &opts.refined(1))?;
    let coarse_mesh = extend_by_symmetry(&coarse.mesh(), &coarse.generators, coeffs.t)?;
    let mesh = extend_by_symmetry(&fine.mesh(), &fine.generators, coeffs.t)?;
    let (area_coarse, area_fine) = (numeric_area(&coarse_mesh), numeric_area(&mesh));
    Ok(Reconstruction {
        t: coeffs.t,
        genus,
        area_coarse,
        area_fine,
        area: richardson_area(area_coarse, area_fine),
        half_energy: 0.5 * fine.dirichlet_energy() * mesh.symmetry_order as f64,
        cone_angle: fine.cone_angle()?,
        euler_characteristic: mesh.euler_characteristic(),
        boundary_edges: mesh.boundary_edges(),
        mesh,
    })
}

// ---------------------------------------------------------------------------
// Fixtures

/// The great sphere `x₄ = 0` as a subdivided octahedron with `n` segments
/// per octahedron edge.
pub fn great_sphere_mesh(n: usize) -> SurfaceMesh {
    let n = n.max(1);
    let corners: [[f64; 3]; 6] = [[1., 0., 0.], [-1., 0., 0.], [0., 1., 0.], [0., -1., 0.], [0., 0., 1.], [0., 0., -1.]];
    let faces = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]];
    let mut pts = Vec::new();
    let mut tris = Vec::new();
    for f in faces {
        let (a, b, cc) = (corners[f[0]], corners[f[1]], corners[f[2]]);
        let mut index = vec![vec![0usize; n + 1]; n + 1];
        for i in 0..=n {
            for j in 0..=n - i {
                let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                let p: Vec<f64> = (0..3).map(|d| a[d] * (1.0 - u - v) + b[d] * u + cc[d] * v).collect();
                index[i][j] = pts.len();
                pts.push(normalize4(&[p[0], p[1], p[2], 0.0]));
            }
        }
        for i in 0..n {
            for j in 0..n - i {
                tris.push([index[i][j], index[i + 1][j], index[i][j + 1]]);
                if j + 1 < n - i {
                    tris.push([index[i + 1][j], index[i + 1][j + 1], index[i][j + 1]]);
                }
            }
        }
    }
    stitch(&pts, &tris, 1e-9, 1)
}

/// The Clifford torus `(e^{iu}, e^{iv})/√2` on an `n × n` grid.
pub fn clifford_torus_mesh(n: usize) -> SurfaceMesh {
    let n = n.max(3);
    let s = FRAC_1_SQRT_2;
    let mut vertices = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (u, v) = (2.0 * PI * i as f64 / n as f64, 2.0 * PI * j as f64 / n as f64);
            vertices.push([s * u.cos(), s * u.sin(), s * v.cos(), s * v.sin()]);
        }
    }
    let id = |i: usize, j: usize| (i % n) * n + j % n;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    SurfaceMesh { vertices, triangles, symmetry_order: 1 }
}

// ---------------------------------------------------------------------------
// OBJ export

/// C's `%.9g`.
pub fn format_g9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.8e}", x);
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-4..9).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (8 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Values recorded in the OBJ comment header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjHeader {
    pub t: f64,
    pub genus: u32,
    pub area: f64,
}

/// The pole among `±e_k` farthest from every vertex, as (axis, sign).
fn choose_pole(mesh: &SurfaceMesh) -> (usize, f64) {
    let mut best = (3, 1.0, f64::NEG_INFINITY);
    for axis in (0..4).rev() {
        for sign in [1.0, -1.0] {
            let d = mesh.vertices.iter().map(|v| 1.0 - sign * v[axis]).fold(f64::INFINITY, f64::min);
            if d > best.2 {
                best = (axis, sign, d);
            }
        }
    }
    (best.0, best.1)
}

/// Rotation taking the pole `sign·e_axis` to `e₄`: a signed swap of two
/// coordinates, composed with a sign flip to keep the orientation.
fn to_pole_frame(v: &[f64; 4], axis: usize, sign: f64) -> [f64; 4] {
    let mut w = *v;
    if axis != 3 {
        w.swap(axis, 3);
        w[axis] = -w[axis];
    }
    w[3] *= sign;
    if sign < 0.0 {
        w[0] = -w[0];
    }
    w
}

/// Stereographic projection from `e₄` after rotating the farthest
/// coordinate pole to `e₄`.
pub fn project_mesh(mesh: &SurfaceMesh) -> Result<Vec<[f64; 3]>> {
    let (axis, sign) = choose_pole(mesh);
    let mut out = Vec::with_capacity(mesh.vertices.len());
    for v in &mesh.vertices {
        let w = to_pole_frame(v, axis, sign);
        let den = 1.0 - w[3];
        if den.abs() < 1e-6 {
            return Err(Error::Input("mesh passes through every coordinate pole".into()));
        }
        out.push([w[0] / den, w[1] / den, w[2] / den]);
    }
    Ok(out)
}

pub fn export_obj(mesh: &SurfaceMesh, path: &Path, header: &ObjHeader) -> Result<()> {
    let pts = project_mesh(mesh)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# lawson surface mesh (stereographic projection of S^3)")?;
    writeln!(f, "# t {}", format_g9(header.t))?;
    writeln!(f, "# genus {}", header.genus)?;
    writeln!(f, "# area {}", format_g9(header.area))?;
    writeln!(f, "# symmetry_order {}", mesh.symmetry_order)?;
    for p in &pts {
        writeln!(f, "v {} {} {}", format_g9(p[0]), format_g9(p[1]), format_g9(p[2]))?;
    }
    for t in &mesh.triangles {
        writeln!(f, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads an OBJ file written by [`export_obj`] (or any triangle OBJ whose
/// vertices are a stereographic image of S³) back onto S³, together with
/// the header fields it finds.
pub fn load_obj(path: &Path) -> Result<(SurfaceMesh, Option<ObjHeader>)> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let (mut t, mut genus, mut area, mut order) = (None, None, None, 1usize);
    for (n, line) in text.lines().enumerate() {
        let bad = || Error::Input(format!("{}:{}: malformed line", path.display(), n + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let p: Vec<f64> = it.map(|s| s.parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
                if p.len() < 3 {
                    return Err(bad());
                }
                let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                let d = 1.0 + r2;
                vertices.push([2.0 * p[0] / d, 2.0 * p[1] / d, 2.0 * p[2] / d, (r2 - 1.0) / d]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|s| s.split('/').next().unwrap_or("").parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                if idx.len() != 3 || idx.iter().any(|&i| i == 0) {
                    return Err(bad());
                }
                triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            Some("#") => match (it.next(), it.next()) {
                (Some("t"), Some(v)) => t = v.parse().ok(),
                (Some("genus"), Some(v)) => genus = v.parse().ok(),
                (Some("area"), Some(v)) => area = v.parse().ok(),
                (Some("symmetry_order"), Some(v)) => order = v.parse().unwrap_or(1),
                _ => {}
            },
            _ => {}
        }
    }
    if triangles.iter().flatten().any(|&i| i >= vertices.len()) {
        return Err(Error::Input(format!("{}: face index out of range", path.display())));
    }
    let header = match (t, genus, area) {
        (Some(t), Some(genus), Some(area)) => Some(ObjHeader { t, genus, area }),
        _ => None,
    };
    Ok((SurfaceMesh { vertices, triangles, symmetry_order: order }, header))
}
