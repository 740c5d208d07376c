//! Radial mollifiers φ^ε, the scalar split φ = φ_L + φ_T, and smoothing
//! operators built from a radial × angular quadrature of the ℓ-integral.
//!
//! Every smoothing operator is a Fourier multiplier. For a node set
//! {ℓ = r n̂, weight c} the quadrature gives
//!
//! ```text
//! m(k)    = Σ c φ^ε(r) e^{ik·ℓ}
//! M_ij(k) = Σ c φ^ε(r) n̂_i n̂_j e^{ik·ℓ}
//! ```
//!
//! so E^ε = m Ê, E^ε_L = M Ê and E^ε_T = (m - M) Ê. With an antipodal
//! direction set the imaginary parts cancel pairwise and the multipliers
//! are real and even in k.

use crate::error::{KhmError, Result};
use crate::grid::{scale, Grid, ScalarField, SpectralField, SpectralScalar, Vec3, VectorField};
use crate::increments::DirectionQuadrature;
use crate::par;
use crate::quadrature::{composite, gauss_interval, gauss_legendre};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// C exp(-1/(1-r²)) on r < 1.
    Bump,
    /// (2π)^{-3/2} exp(-r²/2); not compactly supported.
    Gaussian,
}

impl std::str::FromStr for Profile {
    type Err = KhmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bump" => Ok(Profile::Bump),
            "gaussian" => Ok(Profile::Gaussian),
            _ => Err(KhmError::Config(format!("unknown kernel profile '{s}' (bump, gaussian)"))),
        }
    }
}

/// Radius past which the Gaussian is treated as zero (e^{-32} ≈ 1e-14).
pub const GAUSSIAN_CUTOFF: f64 = 8.0;

#[derive(Clone, Debug)]
pub struct RadialKernel {
    pub profile: Profile,
    pub epsilon: f64,
    norm: f64,
}

fn bump_raw(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r * r)).exp()
    }
}

fn bump_raw_d(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let q = 1.0 - r * r;
        bump_raw(r) * (-2.0 * r / (q * q))
    }
}

impl RadialKernel {
    pub fn new(profile: Profile, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(KhmError::Config(format!("kernel.epsilon = {epsilon} must be positive")));
        }
        let norm = match profile {
            Profile::Bump => {
                let (x, w) = composite(20, 64, 0.0, 1.0);
                let m: f64 = x.iter().zip(&w).map(|(r, w)| w * r * r * bump_raw(*r)).sum();
                1.0 / (4.0 * PI * m)
            }
            Profile::Gaussian => (2.0 * PI).powf(-1.5),
        };
        Ok(RadialKernel { profile, epsilon, norm })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.profile, epsilon)
    }

    /// Unit-scale radius beyond which φ vanishes (or is negligible).
    pub fn cutoff(&self) -> f64 {
        match self.profile {
            Profile::Bump => 1.0,
            Profile::Gaussian => GAUSSIAN_CUTOFF,
        }
    }

    /// True support radius; infinite for the Gaussian.
    pub fn support_radius(&self) -> f64 {
        match self.profile {
            Profile::Bump => 1.0,
            Profile::Gaussian => f64::INFINITY,
        }
    }

    pub fn phi(&self, r: f64) -> f64 {
        match self.profile {
            Profile::Bump => self.norm * bump_raw(r),
            Profile::Gaussian => self.norm * (-0.5 * r * r).exp(),
        }
    }

    pub fn dphi(&self, r: f64) -> f64 {
        match self.profile {
            Profile::Bump => self.norm * bump_raw_d(r),
            Profile::Gaussian => -r * self.norm * (-0.5 * r * r).exp(),
        }
    }

    /// φ_T(r) = 2 ∫_r^∞ φ(s)/s ds, integrated in log s.
    pub fn phi_t(&self, r: f64) -> f64 {
        let top = self.cutoff();
        if r >= top {
            return 0.0;
        }
        let r = r.max(1e-300);
        let (t, w) = composite(16, 16, r.ln(), top.ln());
        2.0 * t.iter().zip(&w).map(|(t, w)| w * self.phi(t.exp())).sum::<f64>()
    }

    pub fn phi_l(&self, r: f64) -> f64 {
        self.phi(r) - self.phi_t(r)
    }

    /// dφ_L/dr = φ' + 2φ/r.
    pub fn dphi_l(&self, r: f64) -> f64 {
        self.dphi(r) + 2.0 * self.phi(r) / r
    }

    pub fn phi_eps(&self, r: f64) -> f64 {
        self.phi(r / self.epsilon) / self.epsilon.powi(3)
    }

    pub fn dphi_eps(&self, r: f64) -> f64 {
        self.dphi(r / self.epsilon) / self.epsilon.powi(4)
    }

    pub fn phi_t_eps(&self, r: f64) -> f64 {
        self.phi_t(r / self.epsilon) / self.epsilon.powi(3)
    }

    pub fn phi_l_eps(&self, r: f64) -> f64 {
        self.phi_l(r / self.epsilon) / self.epsilon.powi(3)
    }

    /// 4π ∫₀^∞ r^p φ(r) dr on a dense composite rule.
    pub fn moment(&self, p: i32) -> f64 {
        let (x, w) = composite(24, 96, 0.0, self.cutoff());
        4.0 * PI * x.iter().zip(&w).map(|(r, w)| w * r.powi(p) * self.phi(*r)).sum::<f64>()
    }

    /// 4π ∫₀^∞ r^p φ'(r) dr on a dense composite rule.
    pub fn derivative_moment(&self, p: i32) -> f64 {
        let (x, w) = composite(24, 96, 0.0, self.cutoff());
        4.0 * PI * x.iter().zip(&w).map(|(r, w)| w * r.powi(p) * self.dphi(*r)).sum::<f64>()
    }

    /// 4π ∫ r² φ_T and 4π ∫ r² φ_L on a graded rule (exact values 2/3, 1/3).
    pub fn split_masses(&self) -> (f64, f64) {
        let rule = RadialRule::graded(96, self.cutoff(), 3.0);
        let mut t = 0.0;
        let mut l = 0.0;
        for (r, w) in rule.r.iter().zip(&rule.w) {
            let pt = self.phi_t(*r);
            t += w * r * r * pt;
            l += w * r * r * (self.phi(*r) - pt);
        }
        (4.0 * PI * t, 4.0 * PI * l)
    }
}

/// Nodes and weights for ∫₀^R f(r) dr.
#[derive(Clone, Debug)]
pub struct RadialRule {
    pub r: Vec<f64>,
    pub w: Vec<f64>,
}

impl RadialRule {
    pub fn gauss(m: usize, rmax: f64) -> Self {
        let (r, w) = gauss_interval(m, 0.0, rmax);
        RadialRule { r, w }
    }

    /// r = R t^p with Gauss nodes in t; clusters nodes at the origin where
    /// φ_T has its logarithmic singularity.
    pub fn graded(m: usize, rmax: f64, p: f64) -> Self {
        let (t, w) = gauss_legendre(m);
        let mut rr = Vec::with_capacity(m);
        let mut ww = Vec::with_capacity(m);
        for (t, w) in t.iter().zip(&w) {
            let s = 0.5 * (t + 1.0);
            rr.push(rmax * s.powf(p));
            ww.push(0.5 * w * rmax * p * s.powf(p - 1.0));
        }
        RadialRule { r: rr, w: ww }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weight {
    Phi,
    PhiL,
    PhiT,
}

/// One node of the half (n̂ with positive orientation) set; the antipode is implied.
#[derive(Clone, Copy, Debug)]
pub struct Node {
    pub ell: Vec3,
    pub n: Vec3,
    pub r: f64,
    /// 4π r² w_r q_n (volume weight of this node alone).
    pub w: f64,
}

#[derive(Clone, Debug)]
pub struct Mollifier {
    pub kernel: RadialKernel,
    pub dirs: DirectionQuadrature,
    pub radial: RadialRule,
    pub graded: RadialRule,
    pub grading: f64,
}

impl Mollifier {
    pub fn new(kernel: RadialKernel, dirs: DirectionQuadrature, radial_nodes: usize, grading: f64) -> Result<Self> {
        if radial_nodes == 0 {
            return Err(KhmError::Config("quad.radial_nodes must be positive".into()));
        }
        if !(grading >= 1.0) {
            return Err(KhmError::Config(format!("quad.grading = {grading} must be at least 1")));
        }
        let rmax = kernel.cutoff() * kernel.epsilon;
        Ok(Mollifier {
            radial: RadialRule::gauss(radial_nodes, rmax),
            graded: RadialRule::graded(radial_nodes, rmax, grading),
            kernel,
            dirs,
            grading,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.kernel.epsilon
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Mollifier::new(self.kernel.with_epsilon(epsilon)?, self.dirs.clone(), self.radial.r.len(), self.grading)
    }

    pub fn check_resolvable(&self, grid: &Grid) -> Result<()> {
        if self.kernel.epsilon < 2.0 * grid.spacing() {
            return Err(KhmError::Config(format!(
                "kernel.epsilon = {} is below twice the grid spacing {:.4}",
                self.kernel.epsilon,
                grid.spacing()
            )));
        }
        Ok(())
    }

    /// Half-set nodes on the plain Gauss radial rule.
    pub fn nodes(&self) -> Vec<Node> {
        self.nodes_on(&self.radial)
    }

    pub fn nodes_on(&self, rule: &RadialRule) -> Vec<Node> {
        let mut out = Vec::with_capacity(rule.r.len() * self.dirs.len() / 2);
        for (n, q) in self.dirs.half() {
            for (r, w) in rule.r.iter().zip(&rule.w) {
                out.push(Node { ell: scale(n, *r), n, r: *r, w: 4.0 * PI * r * r * w * q });
            }
        }
        out
    }

    /// Σ c φ^ε over all nodes; approximates ∫φ^ε = 1.
    pub fn discrete_mass(&self) -> f64 {
        2.0 * self.nodes().iter().map(|nd| nd.w * self.kernel.phi_eps(nd.r)).sum::<f64>()
    }

    /// Σ c φ^ε n̂⊗n̂; approximates I/3.
    pub fn discrete_second_moment(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for nd in self.nodes() {
            let a = 2.0 * nd.w * self.kernel.phi_eps(nd.r);
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += a * nd.n[i] * nd.n[j];
                }
            }
        }
        m
    }

    /// Multiplier on the cube |k_i| ≤ k for the chosen radial profile. The
    /// tensor part is only built for `Weight::Phi`.
    pub fn multiplier(&self, k: i64, weight: Weight) -> Multiplier {
        let (nodes, tensor) = match weight {
            Weight::Phi => (self.nodes(), true),
            _ => (self.nodes_on(&self.graded), false),
        };
        let f = |r: f64| match weight {
            Weight::Phi => self.kernel.phi_eps(r),
            Weight::PhiL => self.kernel.phi_l_eps(r),
            Weight::PhiT => self.kernel.phi_t_eps(r),
        };
        let weighted: Vec<(Vec3, Vec3, f64)> = nodes.iter().map(|nd| (nd.ell, nd.n, 2.0 * nd.w * f(nd.r))).collect();
        Multiplier::build(&weighted, k, tensor)
    }
}

/// Real, even Fourier multipliers tabulated on the cube |k_i| ≤ k.
#[derive(Clone, Debug)]
pub struct Multiplier {
    pub k: i64,
    side: usize,
    pub m0: Vec<f64>,
    /// xx, yy, zz, xy, xz, yz.
    pub mt: Option<[Vec<f64>; 6]>,
}

const PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

impl Multiplier {
    pub fn build(nodes: &[(Vec3, Vec3, f64)], k: i64, tensor: bool) -> Multiplier {
        let side = (2 * k + 1) as usize;
        let len = side * side * side;
        let comps = if tensor { 7 } else { 1 };
        let chunks = nodes.len().clamp(1, 16);
        let per = nodes.len().div_ceil(chunks);
        let parts = par::map(chunks, |c| {
            let mut acc = vec![vec![0.0; len]; comps];
            let lo = (c * per).min(nodes.len());
            let hi = ((c + 1) * per).min(nodes.len());
            let mut ex = vec![Complex64::default(); side];
            let mut ey = vec![Complex64::default(); side];
            let mut ez = vec![Complex64::default(); side];
            let mut cosv = vec![0.0; side];
            for &(ell, n, w) in &nodes[lo..hi] {
                if w == 0.0 {
                    continue;
                }
                for j in 0..side {
                    let kk = j as f64 - k as f64;
                    ex[j] = Complex64::from_polar(1.0, kk * ell[0]);
                    ey[j] = Complex64::from_polar(1.0, kk * ell[1]);
                    ez[j] = Complex64::from_polar(1.0, kk * ell[2]);
                }
                let mut coef = [w; 7];
                for (p, &(a, b)) in PAIRS.iter().enumerate() {
                    coef[p + 1] = w * n[a] * n[b];
                }
                for z in 0..side {
                    for y in 0..side {
                        let eyz = ey[y] * ez[z];
                        let base = (z * side + y) * side;
                        for (x, cv) in cosv.iter_mut().enumerate() {
                            *cv = ex[x].re * eyz.re - ex[x].im * eyz.im;
                        }
                        for (q, arr) in acc.iter_mut().enumerate() {
                            let cq = coef[q];
                            for (v, cv) in arr[base..base + side].iter_mut().zip(&cosv) {
                                *v += cq * cv;
                            }
                        }
                    }
                }
            }
            acc
        });
        let mut tot = vec![vec![0.0; len]; comps];
        for p in parts {
            for (t, a) in tot.iter_mut().zip(p) {
                for (x, y) in t.iter_mut().zip(a) {
                    *x += y;
                }
            }
        }
        let mut it = tot.into_iter();
        let m0 = it.next().unwrap();
        let mt = if tensor {
            Some([
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
            ])
        } else {
            None
        };
        Multiplier { k, side, m0, mt }
    }

    #[inline]
    fn cube_index(&self, kv: [i64; 3]) -> Option<usize> {
        if kv.iter().any(|c| c.abs() > self.k) {
            return None;
        }
        let s = self.side;
        let o = |c: i64| (c + self.k) as usize;
        Some((o(kv[2]) * s + o(kv[1])) * s + o(kv[0]))
    }

    pub fn scalar_at(&self, kv: [i64; 3]) -> f64 {
        self.cube_index(kv).map(|i| self.m0[i]).unwrap_or(0.0)
    }

    pub fn tensor_at(&self, kv: [i64; 3]) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        if let (Some(i), Some(mt)) = (self.cube_index(kv), &self.mt) {
            for (p, &(a, b)) in PAIRS.iter().enumerate() {
                m[a][b] = mt[p][i];
                m[b][a] = mt[p][i];
            }
        }
        m
    }

    fn check_band(&self, grid: &Grid, comps: &[&Vec<Complex64>]) -> Result<()> {
        if 2 * self.k + 1 > grid.n() as i64 {
            return Err(KhmError::Config(format!(
                "multiplier band {} exceeds what a {}³ grid holds",
                self.k,
                grid.n()
            )));
        }
        let top = comps.iter().flat_map(|c| c.iter()).fold(0.0f64, |m, v| m.max(v.norm()));
        for c in comps {
            for (i, v) in c.iter().enumerate() {
                if v.norm() > 1e-12 * top && self.cube_index(grid.wavevector(i)).is_none() {
                    return Err(KhmError::Precondition(format!(
                        "field has content outside the multiplier band |k_i| ≤ {}",
                        self.k
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn apply_scalar(&self, f: &SpectralScalar) -> Result<SpectralScalar> {
        self.check_band(&f.grid, &[&f.data])?;
        let g = &f.grid;
        let mut out = SpectralScalar::zeros(g);
        for i in 0..g.len() {
            out.data[i] = f.data[i] * self.scalar_at(g.wavevector(i));
        }
        Ok(out)
    }

    /// m Ê.
    pub fn smooth(&self, f: &SpectralField) -> Result<SpectralField> {
        self.check_band(&f.grid, &[&f.comps[0], &f.comps[1], &f.comps[2]])?;
        let g = &f.grid;
        let mut out = SpectralField::zeros(g);
        for i in 0..g.len() {
            let m = self.scalar_at(g.wavevector(i));
            for c in 0..3 {
                out.comps[c][i] = f.comps[c][i] * m;
            }
        }
        Ok(out)
    }

    /// M Ê (longitudinal) or (m - M) Ê (transverse).
    pub fn project(&self, f: &SpectralField, longitudinal: bool) -> Result<SpectralField> {
        if self.mt.is_none() {
            return Err(KhmError::Config("multiplier was built without its tensor part".into()));
        }
        self.check_band(&f.grid, &[&f.comps[0], &f.comps[1], &f.comps[2]])?;
        let g = &f.grid;
        let mut out = SpectralField::zeros(g);
        for i in 0..g.len() {
            let kv = g.wavevector(i);
            let mut m = self.tensor_at(kv);
            if !longitudinal {
                let s = self.scalar_at(kv);
                for (a, row) in m.iter_mut().enumerate() {
                    for (b, v) in row.iter_mut().enumerate() {
                        *v = if a == b { s - *v } else { -*v };
                    }
                }
            }
            let v = f.at(i);
            for a in 0..3 {
                out.comps[a][i] = v[0] * m[a][0] + v[1] * m[a][1] + v[2] * m[a][2];
            }
        }
        Ok(out)
    }

    /// ∂_i (M_ij π) for a scalar π, i.e. the divergence of the smoothed tensor π n̂⊗n̂.
    pub fn div_tensor(&self, pi: &SpectralScalar) -> Result<SpectralField> {
        if self.mt.is_none() {
            return Err(KhmError::Config("multiplier was built without its tensor part".into()));
        }
        self.check_band(&pi.grid, &[&pi.data])?;
        let g = &pi.grid;
        let mut out = SpectralField::zeros(g);
        for i in 0..g.len() {
            let m = self.tensor_at(g.wavevector(i));
            let k = g.dk(i);
            let ip = Complex64::new(0.0, 1.0) * pi.data[i];
            for j in 0..3 {
                out.comps[j][i] = ip * (k[0] * m[0][j] + k[1] * m[1][j] + k[2] * m[2][j]);
            }
        }
        Ok(out)
    }
}

fn band_of(f: &SpectralField) -> i64 {
    f.band(1e-13)
}

/// E^ε_L(x) = ∫ φ^ε(ℓ) (n̂⊗n̂) E(x+ℓ) d³ℓ.
pub fn smooth_longitudinal(field: &VectorField, moll: &Mollifier) -> Result<VectorField> {
    moll.check_resolvable(&field.grid)?;
    let s = field.transform();
    Ok(moll.multiplier(band_of(&s), Weight::Phi).project(&s, true)?.to_real())
}

/// E^ε_T(x) = ∫ φ^ε(ℓ) (1 - n̂⊗n̂) E(x+ℓ) d³ℓ.
pub fn smooth_transverse(field: &VectorField, moll: &Mollifier) -> Result<VectorField> {
    moll.check_resolvable(&field.grid)?;
    let s = field.transform();
    Ok(moll.multiplier(band_of(&s), Weight::Phi).project(&s, false)?.to_real())
}

/// E^ε(x) = ∫ φ^ε(ℓ) E(x+ℓ) d³ℓ.
pub fn smooth(field: &VectorField, moll: &Mollifier) -> Result<VectorField> {
    moll.check_resolvable(&field.grid)?;
    let s = field.transform();
    Ok(moll.multiplier(band_of(&s), Weight::Phi).smooth(&s)?.to_real())
}

/// Convolution of a scalar with φ^ε, φ^ε_L or φ^ε_T.
pub fn mollify_scalar(field: &ScalarField, moll: &Mollifier, weight: Weight) -> Result<ScalarField> {
    moll.check_resolvable(&field.grid)?;
    let s = field.transform();
    let wrap = SpectralField { grid: s.grid.clone(), comps: [s.data.clone(), Vec::new(), Vec::new()] };
    let k = {
        let g = &s.grid;
        let top = s.data.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let mut k = 0;
        for (i, v) in wrap.comps[0].iter().enumerate() {
            if v.norm() > 1e-13 * top {
                k = g.wavevector(i).iter().fold(k, |m, c| m.max(c.abs()));
            }
        }
        k
    };
    Ok(moll.multiplier(k, weight).apply_scalar(&s)?.to_real())
}

#[derive(Clone, Debug, Serialize)]
pub struct PressureReport {
    pub directions: usize,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    pub residual: f64,
}

/// Compares ∇·Π^ε_L (tensor quadrature with φ) against ∇π^ε_L (scalar
/// quadrature with φ_L); the residual is max|lhs - rhs| / max(max|lhs|, max|rhs|).
pub fn verify_pressure_claim(pi: &ScalarField, moll: &Mollifier) -> Result<PressureReport> {
    moll.check_resolvable(&pi.grid)?;
    let s = pi.transform();
    let g = &s.grid;
    let top = s.data.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let mut k = 0;
    for (i, v) in s.data.iter().enumerate() {
        if v.norm() > 1e-13 * top {
            k = g.wavevector(i).iter().fold(k, |m, c| m.max(c.abs()));
        }
    }
    let lhs = moll.multiplier(k, Weight::Phi).div_tensor(&s)?.to_real();
    let rhs = moll.multiplier(k, Weight::PhiL).apply_scalar(&s)?.gradient().to_real();
    let ln = lhs.max_norm();
    let rn = rhs.max_norm();
    let d = lhs.axpy(-1.0, &rhs).max_norm();
    let den = ln.max(rn);
    Ok(PressureReport {
        directions: moll.dirs.len(),
        lhs_norm: ln,
        rhs_norm: rn,
        residual: if den == 0.0 { 0.0 } else { d / den },
    })
}
