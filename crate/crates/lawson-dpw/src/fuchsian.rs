//! Fuchsian systems on the 4-punctured sphere, their parabolic structures
//! and the coordinates (u, s) on the moduli space.
//!
//! Two puncture charts are used. The Z-chart puts the punctures at
//! z = (−1, 0, 1, ∞), the P-chart at the fourth roots of −1,
//! p = (e^{iπ/4}, −e^{iπ/4}, e^{3iπ/4}, −e^{3iπ/4}).

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loopalg::{c, eigenvalues_tracefree, is_nilpotent, re, Matrix2c, C64, I};

/// Chordal distance below which two projective lines count as equal.
pub const LINE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    Z,
    P,
}

/// A point of ℂ ∪ {∞}; `None` is ∞ (serialized as JSON `null`).
pub type Point = Option<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PunctureSet {
    pub normalization: Normalization,
    #[serde(with = "points_serde")]
    pub points: [Point; 4],
}

mod points_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &[Point; 4], s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Option<[f64; 2]>> = p.iter().map(|q| q.map(|z| [z.re, z.im])).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<[Point; 4], D::Error> {
        let v: [Option<[f64; 2]>; 4] = Deserialize::deserialize(d)?;
        Ok(v.map(|q| q.map(|p| c(p[0], p[1]))))
    }
}

impl PunctureSet {
    pub fn z_chart() -> Self {
        PunctureSet {
            normalization: Normalization::Z,
            points: [Some(re(-1.0)), Some(re(0.0)), Some(re(1.0)), None],
        }
    }

    pub fn p_chart() -> Self {
        let w = c(FRAC_1_SQRT_2, FRAC_1_SQRT_2);
        PunctureSet { normalization: Normalization::P, points: [Some(w), Some(-w), Some(w * I), Some(-w * I)] }
    }

    pub fn of(n: Normalization) -> Self {
        match n {
            Normalization::Z => Self::z_chart(),
            Normalization::P => Self::p_chart(),
        }
    }

    /// Smallest distance from `z` to a finite puncture.
    pub fn distance(&self, z: C64) -> f64 {
        self.points.iter().flatten().map(|p| (z - p).norm()).fold(f64::INFINITY, f64::min)
    }
}

/// The P-chart punctures as plain complex numbers.
pub fn p_punctures() -> [C64; 4] {
    PunctureSet::p_chart().points.map(|p| p.unwrap())
}

/// `d + Σ A_k dz/(z − z_k)` with the residue at ∞ stored as `A₄ = −(A₁+A₂+A₃)`
/// in the Z-chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuchsianSystem {
    pub punctures: PunctureSet,
    pub residues: [Matrix2c; 4],
    pub rho: f64,
}

impl FuchsianSystem {
    /// Validated constructor: distinct punctures, trace-free residues with
    /// eigenvalues ±ρ, vanishing residue sum and a non-resonant weight.
    pub fn new(punctures: PunctureSet, residues: [Matrix2c; 4], rho: f64, tol: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 0.5) {
            return Err(Error::InvalidWeight(rho));
        }
        let pts = punctures.points;
        for i in 0..4 {
            for j in 0..i {
                let same = match (pts[i], pts[j]) {
                    (None, None) => true,
                    (Some(a), Some(b)) => (a - b).norm() < tol,
                    _ => false,
                };
                if same {
                    return Err(Error::DegeneratePunctures);
                }
            }
        }
        let sum = residues.iter().fold(Matrix2c::zero(), |acc, a| acc + *a).norm();
        if sum > tol {
            return Err(Error::ResidueSumNonzero(sum));
        }
        for a in &residues {
            let (mu, _) = eigenvalues_tracefree(a)?;
            if (mu - rho).norm() > tol.sqrt().max(tol) * (1.0 + a.norm()) {
                return Err(Error::Input(format!("residue eigenvalue {mu} differs from rho = {rho}")));
            }
        }
        Ok(FuchsianSystem { punctures, residues, rho })
    }

    /// The dz-coefficient of the connection form at `z`.
    pub fn form(&self, z: C64) -> Matrix2c {
        let mut acc = Matrix2c::zero();
        for (a, p) in self.residues.iter().zip(self.punctures.points.iter()) {
            if let Some(p) = p {
                acc += a.scale((z - p).inv());
            }
        }
        acc
    }

    /// `g A_k g⁻¹` for every residue.
    pub fn conjugate(&self, g: &Matrix2c) -> Self {
        let gi = g.inverse();
        let mut out = self.clone();
        for a in out.residues.iter_mut() {
            *a = *g * *a * gi;
        }
        out
    }
}

/// Normal-form residues with weight ρ and modulus u (Z-chart).
pub fn normal_form_residues(u: C64, rho: f64) -> [Matrix2c; 4] {
    let r = re(rho);
    let z = C64::default();
    [
        Matrix2c::new(-r, r * u * 2.0, z, r),
        Matrix2c::new(-r, z, -r * 2.0, r),
        Matrix2c::new(r, z, r * 2.0, -r),
        Matrix2c::new(r, -r * u * 2.0, z, -r),
    ]
}

fn check_modulus(u: C64) -> Result<()> {
    if u.norm() < 1e-12 || (u - 1.0).norm() < 1e-12 || !u.is_finite() {
        return Err(Error::BadModulus(format!("{u}")));
    }
    Ok(())
}

fn check_weight(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 0.5) {
        return Err(Error::InvalidWeight(rho));
    }
    Ok(())
}

pub fn make_normal_form(u: C64, rho: f64) -> Result<FuchsianSystem> {
    make_us(u, re(0.0), rho)
}

/// Strongly parabolic Higgs field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiggsField {
    pub residues: [Matrix2c; 4],
    pub punctures: PunctureSet,
}

impl HiggsField {
    pub fn form(&self, z: C64) -> Matrix2c {
        let mut acc = Matrix2c::zero();
        for (a, p) in self.residues.iter().zip(self.punctures.points.iter()) {
            if let Some(p) = p {
                acc += a.scale((z - p).inv());
            }
        }
        acc
    }
}

/// The Higgs field Ψ^u in the Z-chart.
pub fn make_higgs(u: C64) -> HiggsField {
    let o = re(1.0);
    let z = C64::default();
    HiggsField {
        residues: [
            Matrix2c::new(-u, u * u, -o, u),
            Matrix2c::new(z, z, o - u, z),
            Matrix2c::new(u, -u, u, -u),
            Matrix2c::new(z, u - u * u, z, z),
        ],
        punctures: PunctureSet::z_chart(),
    }
}

/// `∇^{u,s} = ∇^u + sΨ^u`.
pub fn make_us(u: C64, s: C64, rho: f64) -> Result<FuchsianSystem> {
    check_modulus(u)?;
    check_weight(rho)?;
    let a = normal_form_residues(u, rho);
    let h = make_higgs(u).residues;
    let residues = [0, 1, 2, 3].map(|k| a[k] + h[k].scale(s));
    Ok(FuchsianSystem { punctures: PunctureSet::z_chart(), residues, rho })
}

/// Diagonal system `σ diag(ρ, −ρ)` at −1, 0 (σ = 1), 1.
pub fn make_reducible(sigma_m1: i32, sigma_1: i32, rho: f64) -> Result<FuchsianSystem> {
    if ![-1, 1].contains(&sigma_m1) || ![-1, 1].contains(&sigma_1) || (sigma_m1, sigma_1) == (1, 1) {
        return Err(Error::InvalidSigns);
    }
    check_weight(rho)?;
    let d = Matrix2c::diag(re(rho), re(-rho));
    let a1 = d * sigma_m1 as f64;
    let a3 = d * sigma_1 as f64;
    let a4 = -(a1 + d + a3);
    Ok(FuchsianSystem { punctures: PunctureSet::z_chart(), residues: [a1, d, a3, a4], rho })
}

/// Symmetric system determined by its first residue: `A₃ = D⁻¹A₁D`,
/// `A₂ = C D⁻¹ A₁ D C⁻¹`, `A₄ = D⁻¹A₂D` with `D = diag(i, −i)` and
/// `C = [[0, i], [i, 0]]`.
pub fn make_symmetric(a1: Matrix2c, rho: f64) -> Result<FuchsianSystem> {
    let (d, cm) = symmetry_matrices();
    let di = d.inverse_sl2();
    let ci = cm.inverse_sl2();
    let a3 = di * a1 * d;
    let a2 = cm * di * a1 * d * ci;
    let a4 = di * a2 * d;
    FuchsianSystem::new(PunctureSet::z_chart(), [a1, a2, a3, a4], rho, 1e-9)
}

/// `(D, C) = (diag(i, −i), [[0, i], [i, 0]])`.
pub fn symmetry_matrices() -> (Matrix2c, Matrix2c) {
    let z = C64::default();
    (Matrix2c::diag(I, -I), Matrix2c::new(z, I, I, z))
}

/// Quasiparabolic lines and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ParabolicStructure {
    pub lines: [[C64; 2]; 4],
    pub rho: f64,
}

/// The +ρ eigenline of each residue.
pub fn parabolic_structure(sys: &FuchsianSystem) -> Result<ParabolicStructure> {
    let mut lines = [[C64::default(); 2]; 4];
    for (k, a) in sys.residues.iter().enumerate() {
        if a.norm() < 1e-12 {
            return Err(Error::DegenerateResidue(k));
        }
        let (mu, _) = eigenvalues_tracefree(a)?;
        lines[k] = a.eigenvector(mu);
    }
    Ok(ParabolicStructure { lines, rho: sys.rho })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityClass {
    Stable,
    StrictlySemistable,
    Unstable,
}

fn bracket(v: &[C64; 2], w: &[C64; 2]) -> C64 {
    v[0] * w[1] - v[1] * w[0]
}

/// Fubini–Study chordal distance of two projective lines.
pub fn line_distance(v: &[C64; 2], w: &[C64; 2]) -> f64 {
    let nv = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let nw = (w[0].norm_sqr() + w[1].norm_sqr()).sqrt();
    bracket(v, w).norm() / (nv * nw)
}

/// Stable iff the four lines are pairwise distinct; Fuchsian input is
/// never classified as unstable.
pub fn stability(par: &ParabolicStructure, tol: f64) -> StabilityClass {
    for i in 0..4 {
        for j in 0..i {
            if line_distance(&par.lines[i], &par.lines[j]) < tol {
                return StabilityClass::StrictlySemistable;
            }
        }
    }
    StabilityClass::Stable
}

/// A value of ℂ ∪ {∞}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Modulus {
    Finite(C64),
    Infinity,
}

impl Modulus {
    pub fn finite(self) -> Option<C64> {
        match self {
            Modulus::Finite(z) => Some(z),
            Modulus::Infinity => None,
        }
    }
}

impl std::fmt::Display for Modulus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modulus::Finite(z) if z.im.abs() < 1e-12 => write!(f, "{}", fmt_num(z.re)),
            Modulus::Finite(z) => write!(f, "{}{:+}i", fmt_num(z.re), fmt_num(z.im)),
            Modulus::Infinity => write!(f, "inf"),
        }
    }
}

fn fmt_num(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

/// Cross-ratio of the four lines in the order that sends the normal-form
/// lines (u,1), (0,1), (1,1), (1,0) to u.
pub fn line_cross_ratio(lines: &[[C64; 2]; 4]) -> Modulus {
    let num = bracket(&lines[0], &lines[1]) * bracket(&lines[2], &lines[3]);
    let den = bracket(&lines[0], &lines[3]) * bracket(&lines[2], &lines[1]);
    if den.norm() < 1e-14 * (1.0 + num.norm()) {
        Modulus::Infinity
    } else {
        Modulus::Finite(num / den)
    }
}

/// The modulus map. In strict mode non-stable input is an error; the
/// lenient mode returns the line cross-ratio, which extends u continuously
/// to the reducible systems.
pub fn modulus_u(sys: &FuchsianSystem, strict: bool) -> Result<Modulus> {
    let par = parabolic_structure(sys)?;
    if strict && stability(&par, LINE_TOL) != StabilityClass::Stable {
        return Err(Error::NotStable);
    }
    Ok(line_cross_ratio(&par.lines))
}

/// Makes the largest-modulus entry have argument in (−π/2, π/2].
pub fn normalize_sign(g: Matrix2c) -> Matrix2c {
    let mut best = g.m[0];
    for z in g.m {
        if z.norm() > best.norm() * (1.0 + 1e-12) {
            best = z;
        }
    }
    let arg = best.arg();
    if arg > std::f64::consts::FRAC_PI_2 + 1e-12 || arg <= -std::f64::consts::FRAC_PI_2 + 1e-12 {
        -g
    } else {
        g
    }
}

/// Coordinates of a stable Z-chart system: `(u, s, g)` with
/// `g⁻¹ A_k g = A_k^u + s Ψ_k`.
pub fn coordinates_us(sys: &FuchsianSystem) -> Result<(C64, C64, Matrix2c)> {
    let par = parabolic_structure(sys)?;
    if stability(&par, LINE_TOL) != StabilityClass::Stable {
        return Err(Error::NotStable);
    }
    let u = line_cross_ratio(&par.lines).finite().ok_or(Error::NotStable)?;
    let [_, v2, v3, v4] = par.lines;
    // g = [α v4 | β v2] with α v4 + β v2 = v3 sends (1,0), (0,1), (1,1)
    // to the lines at z4, z2, z3
    let det = bracket(&v4, &v2);
    let alpha = bracket(&v3, &v2) / det;
    let beta = bracket(&v4, &v3) / det;
    let g = Matrix2c::new(alpha * v4[0], beta * v2[0], alpha * v4[1], beta * v2[1]);
    let g = normalize_sign(g.scale(g.det().sqrt().inv()));
    let gi = g.inverse_sl2();
    let a = normal_form_residues(u, sys.rho);
    let h = make_higgs(u).residues;
    let mut num = C64::default();
    let mut den = 0.0;
    for k in 0..4 {
        let diff = gi * sys.residues[k] * g - a[k];
        for e in 0..4 {
            num += h[k].m[e].conj() * diff.m[e];
            den += h[k].m[e].norm_sqr();
        }
    }
    Ok((u, num / den, g))
}

fn null_dim(m: &DMatrix<C64>, tol: f64) -> usize {
    let n = m.ncols();
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max).max(1.0);
    n - sv.iter().filter(|s| **s > tol * smax).count()
}

fn higgs_rows(par: &ParabolicStructure) -> Vec<Vec<C64>> {
    // unknowns: entries of Ψ_k at index 4k + e (row-major)
    let mut rows = Vec::new();
    for e in 0..4 {
        let mut r = vec![C64::default(); 16];
        for k in 0..4 {
            r[4 * k + e] = re(1.0);
        }
        rows.push(r);
    }
    for (k, l) in par.lines.iter().enumerate() {
        for row in 0..2 {
            let mut r = vec![C64::default(); 16];
            r[4 * k + 2 * row] = l[0];
            r[4 * k + 2 * row + 1] = l[1];
            rows.push(r);
        }
        let mut r = vec![C64::default(); 16];
        r[4 * k] = re(1.0);
        r[4 * k + 3] = re(1.0);
        rows.push(r);
    }
    rows
}

fn rows_to_matrix(rows: &[Vec<C64>]) -> DMatrix<C64> {
    DMatrix::from_fn(rows.len(), 16, |i, j| rows[i][j])
}

/// Dimension of the space of strongly parabolic Higgs fields, from the
/// linear conditions `ΣΨ_k = 0`, `Ψ_k L_k = 0`, `tr Ψ_k = 0`.
pub fn higgs_space_dim(par: &ParabolicStructure) -> usize {
    null_dim(&rows_to_matrix(&higgs_rows(par)), 1e-9)
}

/// Puncture permutations (0-based) of δ(z) = −1/z and τ(z) = (1−z)/(z+1)
/// on the Z-chart; the P-chart maps δ(z) = −z and τ(z) = 1/z induce the
/// same permutations.
pub const DELTA_PERM: [usize; 4] = [2, 3, 0, 1];
pub const TAU_PERM: [usize; 4] = [3, 2, 1, 0];

/// As [`higgs_space_dim`], restricted to fields with
/// `Ψ_{π(j)} = D⁻¹Ψ_j D` and `Ψ_{σ(j)} = C⁻¹Ψ_j C`.
pub fn symmetric_higgs_space_dim(par: &ParabolicStructure, d: &Matrix2c, cm: &Matrix2c) -> usize {
    let mut rows = higgs_rows(par);
    for (g, perm) in [(d, DELTA_PERM), (cm, TAU_PERM)] {
        let gi = g.inverse();
        for j in 0..4 {
            // linear map Ψ_j ↦ g⁻¹Ψ_j g, entry by entry
            for e in 0..4 {
                let mut r = vec![C64::default(); 16];
                r[4 * perm[j] + e] += re(1.0);
                let (i, k) = (e / 2, e % 2);
                for a in 0..2 {
                    for b in 0..2 {
                        r[4 * j + 2 * a + b] -= gi.m[2 * i + a] * g.m[2 * b + k];
                    }
                }
                rows.push(r);
            }
        }
    }
    null_dim(&rows_to_matrix(&rows), 1e-9)
}

/// Solves `X A_{π(j)} = A_j X` for all j; returns a determinant-one solution
/// when the solution space is nontrivial.
fn conjugator(res: &[Matrix2c; 4], perm: [usize; 4], tol: f64) -> Option<Matrix2c> {
    let mut m = DMatrix::<C64>::zeros(16, 4);
    for j in 0..4 {
        let a = res[perm[j]];
        let b = res[j];
        // (X a − b X)_{ik} = Σ_l X_il a_lk − b_il X_lk
        for i in 0..2 {
            for k in 0..2 {
                let row = 4 * j + 2 * i + k;
                for l in 0..2 {
                    m[(row, 2 * i + l)] += a.m[2 * l + k];
                    m[(row, 2 * l + k)] -= b.m[2 * i + l];
                }
            }
        }
    }
    let scale = res.iter().map(|a| a.norm()).fold(0.0, f64::max).max(1e-300);
    let svd = m.svd(false, true);
    let vt = svd.v_t?;
    let null: Vec<Matrix2c> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= tol * scale)
        .map(|(i, _)| {
            let v = vt.row(i);
            Matrix2c::new(v[0].conj(), v[1].conj(), v[2].conj(), v[3].conj())
        })
        .collect();
    // with a degenerate (reducible) configuration the solution space can be
    // more than one-dimensional; take the most invertible of a few mixtures
    let mut cands = null.clone();
    for i in 0..null.len() {
        for j in 0..i {
            for w in [re(1.0), I, re(-1.0), -I] {
                cands.push(null[i] + null[j].scale(w));
            }
        }
    }
    let x = cands
        .into_iter()
        .map(|x| x.scale(re(1.0 / x.norm())))
        .max_by(|a, b| a.det().norm().total_cmp(&b.det().norm()))?;
    let det = x.det();
    if det.norm() < 1e-8 {
        return None;
    }
    Some(normalize_sign(x.scale(det.sqrt().inv())))
}

/// Symmetry test for a Z-chart system: existence of D̃, C̃ ∈ SL(2,ℂ) with
/// `δ*∇ = ∇.D̃` and `τ*∇ = ∇.C̃`.
///
/// δ and τ permute the punctures by double transpositions, which leave the
/// trace coordinates of the monodromy invariant. So every irreducible
/// system with equal weights passes; the test only fails on residue data
/// whose local classes are not permuted consistently.
pub fn check_symmetric(sys: &FuchsianSystem) -> (bool, Matrix2c, Matrix2c) {
    check_symmetric_residues(&sys.residues)
}

/// [`check_symmetric`] on bare residue data.
pub fn check_symmetric_residues(res: &[Matrix2c; 4]) -> (bool, Matrix2c, Matrix2c) {
    let tol = 1e-9;
    match (conjugator(res, DELTA_PERM, tol), conjugator(res, TAU_PERM, tol)) {
        (Some(d), Some(cm)) => (true, d, cm),
        (d, cm) => (false, d.unwrap_or_default(), cm.unwrap_or_default()),
    }
}

/// Point of the unstable 𝒪(−1) ⊕ 𝒪(1) family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnstableFamilyPoint {
    pub e: C64,
    pub c0: C64,
    pub rho: f64,
}

/// dz-coefficient of the 1-form ω^{E,c₀}.
pub fn unstable_connection_form(pt: &UnstableFamilyPoint, z: C64) -> Result<Matrix2c> {
    if [-1.0, 0.0, 1.0].iter().any(|p| (z - p).norm() < 1e-14) {
        return Err(Error::PoleAtPuncture(format!("{z}")));
    }
    let (e, c0, r) = (pt.e, pt.c0, re(pt.rho));
    let z2 = z * z;
    let z3 = z2 * z;
    let q = z - z3;
    let a11 = r * (re(1.0) - z2 * 3.0) / q + e;
    let num = -c0 * c0 * e * e + r * (c0 * e - e * z + 1.0) * 6.0 + c0 * e * (e * z - 2.0) - r * r * 8.0
        - e * e * z2
        + e * e
        + e * z
        - 1.0;
    let a12 = num / (z3 - z);
    let a21 = c0 + z;
    let a22 = -(r * (re(1.0) - z2 * 3.0) - e * z3 + e * z) / q;
    Ok(Matrix2c::new(a11, a12, a21, a22))
}

/// Constant part C of the gauge `l^E·C` taking ω^{E,c₀} to Fuchsian form.
pub fn unstable_gauge_constant(pt: &UnstableFamilyPoint) -> Result<Matrix2c> {
    let (e, c0, r) = (pt.e, pt.c0, re(pt.rho));
    if e.norm() == 0.0 {
        return Err(Error::DegenerateGauge);
    }
    let den = c0 * e - r * 2.0 + e + 1.0;
    if den.norm() < 1e-14 {
        return Err(Error::SingularGauge);
    }
    Ok(Matrix2c::new((c0 * e - r * 2.0 + 1.0) / (e * den), C64::default(), -e / den, re(1.0)))
}

/// `l^E(z) = [[0, 1], [−1, z/E]]`.
pub fn unstable_gauge_l(e: C64, z: C64) -> Matrix2c {
    Matrix2c::new(C64::default(), re(1.0), re(-1.0), z / e)
}

/// Closed-form coordinates `(u₀, s₀)` of the gauged unstable connection.
pub fn gauge_unstable_to_fuchsian(pt: &UnstableFamilyPoint) -> Result<(C64, C64)> {
    let (e, c0, r) = (pt.e, pt.c0, re(pt.rho));
    if e.norm() == 0.0 {
        return Err(Error::DegenerateGauge);
    }
    unstable_gauge_constant(pt)?;
    let den = (c0 - 1.0) * e + 1.0 - r * 2.0;
    if den.norm() < 1e-14 {
        return Err(Error::SingularGauge);
    }
    let u0 = -((c0 + 1.0) * e + 1.0 - r * 2.0) / den;
    let s0 = -(((re(1.0) - c0) * e + r * 2.0 - 1.0) * ((re(1.0) - c0) * e + r * 4.0 - 1.0)) / (e * 2.0);
    Ok((u0, s0))
}

/// Applies the gauge `g = l^E C` to ω^{E,c₀} on `zs` and returns the largest
/// deviation from the dz-coefficient of ∇^{u₀,s₀}.
pub fn verify_unstable_gauge(pt: &UnstableFamilyPoint, zs: &[C64]) -> Result<f64> {
    let (u0, s0) = gauge_unstable_to_fuchsian(pt)?;
    let target = make_us(u0, s0, pt.rho)?;
    let cm = unstable_gauge_constant(pt)?;
    let dl = Matrix2c::new(C64::default(), C64::default(), C64::default(), pt.e.inv());
    let mut worst: f64 = 0.0;
    for &z in zs {
        let g = unstable_gauge_l(pt.e, z) * cm;
        let gi = g.inverse();
        let gauged = gi * unstable_connection_form(pt, z)? * g + gi * dl * cm;
        let dev = (gauged - target.form(z)).norm() / (1.0 + target.form(z).norm());
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// Moves the system to another puncture chart. The residues are unchanged;
/// only the base points move.
pub fn mobius_change(sys: &FuchsianSystem, target: Normalization) -> FuchsianSystem {
    FuchsianSystem { punctures: PunctureSet::of(target), residues: sys.residues, rho: sys.rho }
}

fn homog(p: Point) -> [C64; 2] {
    match p {
        Some(z) => [z, re(1.0)],
        None => [re(1.0), re(0.0)],
    }
}

/// `(q1−q3)(q2−q4) / ((q1−q4)(q2−q3))`, with ∞ handled homogeneously.
pub fn cross_ratio(q: [Point; 4]) -> Result<C64> {
    let h = q.map(homog);
    for i in 0..4 {
        for j in 0..i {
            if bracket(&h[i], &h[j]).norm() < 1e-14 {
                return Err(Error::CoincidentPoints);
            }
        }
    }
    Ok(bracket(&h[0], &h[2]) * bracket(&h[1], &h[3]) / (bracket(&h[0], &h[3]) * bracket(&h[1], &h[2])))
}

/// Nilpotency check for all Higgs residues.
pub fn higgs_is_nilpotent(h: &HiggsField, tol: f64) -> bool {
    h.residues.iter().all(|m| is_nilpotent(m, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mclose(a: Matrix2c, b: Matrix2c, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn normal_form_example() {
        let s = make_normal_form(re(2.0), 1.0 / 6.0).unwrap();
        let r = 1.0 / 6.0;
        assert!(mclose(s.residues[0], Matrix2c::from_real(-r, 2.0 / 3.0, 0.0, r), 1e-15));
        assert!(mclose(s.residues[1], Matrix2c::from_real(-r, 0.0, -1.0 / 3.0, r), 1e-15));
        assert!(mclose(s.residues[2], Matrix2c::from_real(r, 0.0, 1.0 / 3.0, -r), 1e-15));
        assert!(mclose(s.residues[3], Matrix2c::from_real(r, -2.0 / 3.0, 0.0, -r), 1e-15));
        let sum = s.residues.iter().fold(Matrix2c::zero(), |a, b| a + *b);
        assert_eq!(sum, Matrix2c::zero());
        assert!(matches!(make_normal_form(re(1.0), 0.1), Err(Error::BadModulus(_))));
    }

    #[test]
    fn higgs_examples() {
        let h = make_higgs(re(2.0));
        assert!(mclose(h.residues[0], Matrix2c::from_real(-2.0, 4.0, -1.0, 2.0), 1e-15));
        assert!(mclose(h.residues[1], Matrix2c::from_real(0.0, 0.0, -1.0, 0.0), 1e-15));
        assert!(mclose(h.residues[2], Matrix2c::from_real(2.0, -2.0, 2.0, -2.0), 1e-15));
        assert!(mclose(h.residues[3], Matrix2c::from_real(0.0, -2.0, 0.0, 0.0), 1e-15));
        assert!(higgs_is_nilpotent(&h, 1e-12));
        let h0 = make_higgs(re(0.0));
        assert!(mclose(h0.residues[0], Matrix2c::from_real(0.0, 0.0, -1.0, 0.0), 1e-15));
        assert!(mclose(h0.residues[1], Matrix2c::from_real(0.0, 0.0, 1.0, 0.0), 1e-15));
        // det(Ψ) at u = 2, z = 2 equals −(u − u³)/(z − z³) = −1
        assert!((h.form(re(2.0)).det() + 1.0).norm() < 1e-13);
    }

    #[test]
    fn reducible_examples() {
        let s = make_reducible(-1, -1, 0.125).unwrap();
        let d = |x: f64| Matrix2c::diag(re(x), re(-x));
        assert_eq!(s.residues, [d(-0.125), d(0.125), d(-0.125), d(0.125)]);
        assert_eq!(modulus_u(&s, false).unwrap(), Modulus::Finite(re(1.0)));
        assert_eq!(modulus_u(&make_reducible(-1, 1, 0.125).unwrap(), false).unwrap(), Modulus::Infinity);
        let m = modulus_u(&make_reducible(1, -1, 0.125).unwrap(), false).unwrap();
        assert!(m.finite().unwrap().norm() < 1e-15);
        assert_eq!(make_reducible(1, 1, 0.125), Err(Error::InvalidSigns));
        assert_eq!(modulus_u(&s, true), Err(Error::NotStable));
    }

    #[test]
    fn lines_of_normal_form_and_reducible() {
        let u = c(2.0, 1.0);
        let par = parabolic_structure(&make_normal_form(u, 0.125).unwrap()).unwrap();
        let expect = [[u, re(1.0)], [re(0.0), re(1.0)], [re(1.0), re(1.0)], [re(1.0), re(0.0)]];
        for k in 0..4 {
            assert!(line_distance(&par.lines[k], &expect[k]) < 1e-14);
        }
        assert_eq!(stability(&par, LINE_TOL), StabilityClass::Stable);
        let par = parabolic_structure(&make_reducible(1, -1, 0.125).unwrap()).unwrap();
        let e1 = [re(1.0), re(0.0)];
        let e2 = [re(0.0), re(1.0)];
        for (k, e) in [e1, e1, e2, e2].iter().enumerate() {
            assert!(line_distance(&par.lines[k], e) < 1e-14);
        }
        assert_eq!(stability(&par, LINE_TOL), StabilityClass::StrictlySemistable);
        let fixed = ParabolicStructure { lines: [e1, e2, [re(1.0), re(1.0)], [re(1.0), re(-1.0)]], rho: 0.1 };
        assert_eq!(stability(&fixed, LINE_TOL), StabilityClass::Stable);
    }

    #[test]
    fn modulus_is_gauge_invariant() {
        let u = c(2.0, 1.0);
        let s = make_normal_form(u, 0.125).unwrap();
        let g = Matrix2c::new(c(1.0, 0.5), c(0.3, -0.2), c(-0.7, 0.1), re(1.0));
        let m = modulus_u(&s.conjugate(&g), true).unwrap().finite().unwrap();
        assert!((m - u).norm() < 1e-12);
    }

    #[test]
    fn coordinates_round_trip() {
        let s = make_us(re(2.0), re(3.0), 0.125).unwrap();
        let g = Matrix2c::new(c(1.0, 0.5), c(0.3, -0.2), c(-0.7, 0.1), re(1.0));
        let g = g.scale(g.det().sqrt().inv());
        let (u, sc, h) = coordinates_us(&s.conjugate(&g)).unwrap();
        assert!((u - 2.0).norm() < 1e-10 && (sc - 3.0).norm() < 1e-10);
        // h undoes g up to sign
        let prod = h.inverse_sl2() * g;
        assert!(mclose(prod, Matrix2c::identity(), 1e-9) || mclose(prod, -Matrix2c::identity(), 1e-9));
        let (_, s0, h0) = coordinates_us(&make_normal_form(re(-3.0), 0.2).unwrap()).unwrap();
        assert!(s0.norm() < 1e-12);
        assert!(mclose(h0, Matrix2c::identity(), 1e-12));
    }

    #[test]
    fn unstable_examples() {
        let rho = 0.2;
        let pt = UnstableFamilyPoint { e: re(0.0), c0: re(0.0), rho };
        let w = unstable_connection_form(&pt, re(2.0)).unwrap();
        assert!((w.a21() - 2.0).norm() < 1e-15);
        assert!((w.a11() - 11.0 * rho / 6.0).norm() < 1e-14);
        assert!((w.a12() + (8.0 * rho * rho - 6.0 * rho + 1.0) / 6.0).norm() < 1e-14);
        assert!(w.trace().norm() < 1e-14);
        let pt = UnstableFamilyPoint { e: re(0.1), c0: re(0.0), rho: 0.125 };
        let (u0, s0) = gauge_unstable_to_fuchsian(&pt).unwrap();
        assert!((u0 + 17.0 / 13.0).norm() < 1e-14);
        assert!((s0 + 1.3).norm() < 1e-14);
        assert!(((u0 + 1.0) * s0 - 0.4).norm() < 1e-14);
        let zs: Vec<C64> = (0..12).map(|k| C64::from_polar(2.0, 0.3 + k as f64)).collect();
        assert!(verify_unstable_gauge(&pt, &zs).unwrap() < 1e-12);
        let small = UnstableFamilyPoint { e: re(1e-9), c0: re(0.3), rho: 0.125 };
        assert!((gauge_unstable_to_fuchsian(&small).unwrap().0 + 1.0).norm() < 1e-8);
        let zero = UnstableFamilyPoint { e: re(0.0), c0: re(0.0), rho: 0.125 };
        assert_eq!(gauge_unstable_to_fuchsian(&zero), Err(Error::DegenerateGauge));
    }

    #[test]
    fn cross_ratio_examples() {
        let x = cross_ratio([Some(re(-1.0)), Some(re(1.0)), Some(re(0.0)), None]).unwrap();
        assert!((x + 1.0).norm() < 1e-15);
        let x = cross_ratio(PunctureSet::p_chart().points).unwrap();
        assert!((x + 1.0).norm() < 1e-14);
        assert_eq!(cross_ratio([Some(re(0.0)), Some(re(0.0)), None, Some(re(2.0))]), Err(Error::CoincidentPoints));
    }

    #[test]
    fn mobius_round_trip() {
        let s = make_us(c(0.4, 1.2), re(0.5), 0.15).unwrap();
        let p = mobius_change(&s, Normalization::P);
        let back = mobius_change(&p, Normalization::Z);
        assert_eq!(back, s);
        assert_eq!(modulus_u(&p, true).unwrap(), modulus_u(&s, true).unwrap());
    }

    #[test]
    fn symmetric_normal_form() {
        let a1 = Matrix2c::new(re(0.05), c(0.2, 0.1), c(0.1, -0.3), re(-0.05));
        let rho = eigenvalues_tracefree(&a1).unwrap().0;
        // the eigenvalue is complex for this a1; rescale to a real one
        let a1 = a1.scale(rho.inv() * 0.15);
        let s = make_symmetric(a1, 0.15).unwrap();
        let (ok, d, cm) = check_symmetric(&s);
        assert!(ok);
        let (d0, c0) = symmetry_matrices();
        assert!(mclose(d, d0, 1e-9) || mclose(d, -d0, 1e-9));
        assert!(mclose(cm, c0, 1e-9) || mclose(cm, -c0, 1e-9));
        let (ok, _, _) = check_symmetric(&make_reducible(-1, -1, 0.125).unwrap());
        assert!(ok);
        let generic = make_us(c(0.3, 2.1), c(0.7, -0.4), 0.125).unwrap();
        let (ok, d, cm) = check_symmetric(&generic);
        assert!(ok);
        for (g, perm) in [(d, DELTA_PERM), (cm, TAU_PERM)] {
            for j in 0..4 {
                let lhs = g.inverse_sl2() * generic.residues[j] * g;
                assert!(mclose(lhs, generic.residues[perm[j]], 1e-9));
            }
        }
        // weights 0.1 at p1, p2 and 0.2 at p3, p4 cannot be swapped by δ
        let w = |x: f64| Matrix2c::new(re(x), re(0.3), re(0.0), re(-x));
        let v = |x: f64| Matrix2c::new(re(-x), re(0.0), re(0.5), re(x));
        let res = [w(0.1), v(0.1), w(0.2), v(0.2)];
        let res = [res[0], res[1], res[2], -(res[0] + res[1] + res[2])];
        assert!(!check_symmetric_residues(&res).0);
    }

    #[test]
    fn higgs_dimension() {
        let par = parabolic_structure(&make_normal_form(re(2.0), 0.125).unwrap()).unwrap();
        assert_eq!(higgs_space_dim(&par), 1);
        let par = parabolic_structure(&make_reducible(1, -1, 0.125).unwrap()).unwrap();
        let dt = Matrix2c::from_real(0.0, 1.0, -1.0, 0.0);
        let (_, cm) = symmetry_matrices();
        assert_eq!(symmetric_higgs_space_dim(&par, &dt, &cm), 1);
    }

    fn cplx(r: f64) -> impl Strategy<Value = C64> {
        (-r..r, -r..r).prop_map(|(a, b)| c(a, b))
    }

    proptest! {
        #[test]
        fn normal_form_invariants(u in cplx(3.0), rho in 0.01..0.49f64) {
            prop_assume!(u.norm() > 0.05 && (u - 1.0).norm() > 0.05);
            let s = make_normal_form(u, rho).unwrap();
            let sum = s.residues.iter().fold(Matrix2c::zero(), |a, b| a + *b);
            prop_assert_eq!(sum, Matrix2c::zero());
            for a in &s.residues {
                let (m, _) = eigenvalues_tracefree(a).unwrap();
                prop_assert!((m - rho).norm() < 1e-12);
            }
        }

        #[test]
        fn det_identity(u in cplx(3.0), z in cplx(3.0)) {
            prop_assume!([-1.0, 0.0, 1.0].iter().all(|p| (z - p).norm() > 0.1));
            let d = make_higgs(u).form(z).det();
            let rhs = -(u - u * u * u) / (z - z * z * z);
            prop_assert!((d - rhs).norm() < 1e-10 * (1.0 + rhs.norm()));
        }

        #[test]
        fn us_round_trip(u in cplx(3.0), s in cplx(3.0), g in proptest::array::uniform4(cplx(1.5)),
                         rho in 0.02..0.24f64) {
            prop_assume!(u.norm() > 0.1 && (u - 1.0).norm() > 0.1);
            let gm = Matrix2c { m: g };
            prop_assume!(gm.det().norm() > 0.2);
            let gm = gm.scale(gm.det().sqrt().inv());
            prop_assume!(gm.norm() < 6.0);
            let sys = make_us(u, s, rho).unwrap();
            let par = parabolic_structure(&sys).unwrap();
            prop_assume!(stability(&par, 1e-4) == StabilityClass::Stable);
            let (u1, s1, _) = coordinates_us(&sys.conjugate(&gm)).unwrap();
            prop_assert!((u1 - u).norm() < 1e-9 * (1.0 + u.norm()));
            prop_assert!((s1 - s).norm() < 1e-9 * (1.0 + s.norm()));
            prop_assert_eq!(higgs_space_dim(&par), 1);
        }

        #[test]
        fn unstable_identity(er in 1e-3..1.0f64, eth in 0.0..6.28f64, c0 in cplx(1.0), rho in 0.01..0.24f64) {
            let pt = UnstableFamilyPoint { e: C64::from_polar(er, eth), c0, rho };
            if let Ok((u0, s0)) = gauge_unstable_to_fuchsian(&pt) {
                let rhs = re(1.0 - 4.0 * rho) + (c0 - 1.0) * pt.e;
                prop_assert!(((u0 + 1.0) * s0 - rhs).norm() < 1e-10 * (1.0 + rhs.norm()));
            }
        }
    }
}
