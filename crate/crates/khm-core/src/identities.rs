//! Numerical checks of the pointwise vector identity for ∂(n̂⊗n̂)/∂ℓ, the
//! four ℓ-integral identities that trade increments for mollified
//! commutators, and the equivalent forms of the Hall term.

use crate::error::{KhmError, Result};
use crate::grid::{dot, norm, Grid, SpectralField, SpectralScalar, Vec3, VectorField};
use crate::mollify::{Mollifier, Multiplier, Weight};
use crate::{grid::PointEvaluator, par};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Clone, Debug, Default, Serialize)]
pub struct Resolution {
    pub grid_n: Option<usize>,
    pub directions: Option<usize>,
    pub radial_nodes: Option<usize>,
    pub epsilon: Option<f64>,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub identity_name: String,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    pub residual: f64,
    pub resolution: Resolution,
}

/// Which projector (n̂⊗n̂ or 1 - n̂⊗n̂) and which pairing of the fields.
/// The cross forms pair (E, F, E); the square forms pair (E, F, F) and carry
/// an overall factor one half.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaForm {
    LongitudinalCross,
    LongitudinalSquare,
    TransverseCross,
    TransverseSquare,
}

impl LemmaForm {
    pub const ALL: [LemmaForm; 4] = [
        LemmaForm::LongitudinalCross,
        LemmaForm::LongitudinalSquare,
        LemmaForm::TransverseCross,
        LemmaForm::TransverseSquare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LemmaForm::LongitudinalCross => "longitudinal_cross",
            LemmaForm::LongitudinalSquare => "longitudinal_square",
            LemmaForm::TransverseCross => "transverse_cross",
            LemmaForm::TransverseSquare => "transverse_square",
        }
    }

    pub fn longitudinal(self) -> bool {
        matches!(self, LemmaForm::LongitudinalCross | LemmaForm::LongitudinalSquare)
    }

    pub fn square(self) -> bool {
        matches!(self, LemmaForm::LongitudinalSquare | LemmaForm::TransverseSquare)
    }
}

impl std::str::FromStr for LemmaForm {
    type Err = KhmError;
    fn from_str(s: &str) -> Result<Self> {
        LemmaForm::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| KhmError::Config(format!("unknown identity '{s}'")))
    }
}

/// ℓ-integrand of the increment side at one node, with ∇φ^ε = φ'(r) n̂.
///
/// * longitudinal cross: φ' (n̂·δE)(δF_L·δE_L) + (2/r)φ (n̂·δE)(δF_T·δE_T) - (φ/r) n̂·[δE(δE·δF) - δF|δE|²]
/// * longitudinal square: ½[φ' (n̂·δE)|δF_L|² + (2/r)φ n̂·(δE|δF_T|² + δF(δE·δF) - δE|δF|²)]
/// * transverse cross: (φ' - 2φ/r)(n̂·δE)(δF_T·δE_T) + (φ/r) n̂·[δE(δE·δF) - δF|δE|²]
/// * transverse square: ½[(φ' - 2φ/r)(n̂·δE)|δF_T|² - (2/r)φ n̂·(δF(δE·δF) - δE|δF|²)]
#[inline]
pub fn lemma_integrand(form: LemmaForm, de: Vec3, df: Vec3, n: Vec3, r: f64, phi: f64, dphi: f64) -> f64 {
    let ne = dot(n, de);
    let nf = dot(n, df);
    let ef = dot(de, df);
    let ee = dot(de, de);
    let ff = dot(df, df);
    let g = phi / r;
    match form {
        LemmaForm::LongitudinalCross => dphi * ne * nf * ne + 2.0 * g * ne * (ef - nf * ne) - g * (ne * ef - nf * ee),
        LemmaForm::LongitudinalSquare => 0.5 * (dphi * ne * nf * nf + 2.0 * g * (ne * (ff - nf * nf) + nf * ef - ne * ff)),
        LemmaForm::TransverseCross => (dphi - 2.0 * g) * ne * (ef - nf * ne) + g * (ne * ef - nf * ee),
        LemmaForm::TransverseSquare => 0.5 * ((dphi - 2.0 * g) * ne * (ff - nf * nf) - 2.0 * g * (nf * ef - ne * ff)),
    }
}

/// Both sides of the identity for ∂_ℓk(n̂_i n̂_j) - (∂_ℓj n̂_i + ∂_ℓi n̂_j) n̂_k
/// contracted with E_k F_i G_j. The left side is assembled from the analytic
/// Jacobian ∂n̂_i/∂ℓ_k = (δ_ik - n̂_i n̂_k)/|ℓ|.
pub fn lemma21_sides(e: Vec3, f: Vec3, g: Vec3, ell: Vec3) -> Result<(f64, f64)> {
    let r = norm(ell);
    if !(r > 0.0) || !r.is_finite() {
        return Err(KhmError::Domain("separation vector must be nonzero".into()));
    }
    let n = [ell[0] / r, ell[1] / r, ell[2] / r];
    let mut jac = [[0.0; 3]; 3];
    for (i, row) in jac.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = ((i == k) as u8 as f64 - n[i] * n[k]) / r;
        }
    }
    let mut lhs = 0.0;
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let d_nn = jac[i][k] * n[j] + n[i] * jac[j][k];
                let sym = (jac[i][j] + jac[j][i]) * n[k];
                lhs += (d_nn - sym) * e[k] * f[i] * g[j];
            }
        }
    }
    let ef = dot(e, f);
    let eg = dot(e, g);
    let fg = dot(f, g);
    let rhs = (dot(n, g) * ef + dot(n, f) * eg - 2.0 * dot(n, e) * fg) / r;
    Ok((lhs, rhs))
}

pub fn check_lemma21(e: Vec3, f: Vec3, g: Vec3, ell: Vec3) -> Result<IdentityReport> {
    let (l, r) = lemma21_sides(e, f, g, ell)?;
    let scale = norm(e) * norm(f) * norm(g) / norm(ell);
    Ok(IdentityReport {
        identity_name: "projector_derivative".into(),
        lhs_norm: l.abs(),
        rhs_norm: r.abs(),
        residual: if scale > 0.0 { (l - r).abs() / scale } else { (l - r).abs() },
        resolution: Resolution { samples: 1, ..Default::default() },
    })
}

/// Worst residual over `count` seeded random (E, F, G, ℓ).
pub fn check_lemma21_random(count: usize, seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = |rng: &mut ChaCha8Rng, s: f64| -> Vec3 {
        [s * rng.random_range(-1.0..1.0), s * rng.random_range(-1.0..1.0), s * rng.random_range(-1.0..1.0)]
    };
    let mut worst = IdentityReport {
        identity_name: "projector_derivative".into(),
        lhs_norm: 0.0,
        rhs_norm: 0.0,
        residual: 0.0,
        resolution: Resolution { samples: count, ..Default::default() },
    };
    for _ in 0..count {
        let e = v(&mut rng, 1.0);
        let f = v(&mut rng, 1.0);
        let g = v(&mut rng, 1.0);
        let mut ell = v(&mut rng, 1.0);
        while norm(ell) < 1e-3 {
            ell = v(&mut rng, 1.0);
        }
        let s = 10f64.powf(rng.random_range(-2.0..1.0)) / norm(ell);
        let ell = [ell[0] * s, ell[1] * s, ell[2] * s];
        let rep = check_lemma21(e, f, g, ell).expect("nonzero separation");
        worst.lhs_norm = worst.lhs_norm.max(rep.lhs_norm);
        worst.rhs_norm = worst.rhs_norm.max(rep.rhs_norm);
        worst.residual = worst.residual.max(rep.residual);
    }
    worst
}

/// K_ij(k) applied to a vector of spectra: n̂⊗n̂ (longitudinal) or 1 - n̂⊗n̂.
fn project(m: &Multiplier, f: &SpectralField, longitudinal: bool) -> Result<SpectralField> {
    m.project(f, longitudinal)
}

/// Σ_ij K_ij(k) P̂_ij(k) for a symmetric product given as xx, yy, zz, xy, xz, yz.
fn contract(m: &Multiplier, grid: &Grid, p: &[Vec<Complex64>], longitudinal: bool) -> SpectralScalar {
    let mut out = SpectralScalar::zeros(grid);
    for i in 0..grid.len() {
        let kv = grid.wavevector(i);
        let t = m.tensor_at(kv);
        let mut s = t[0][0] * p[0][i] + t[1][1] * p[1][i] + t[2][2] * p[2][i]
            + 2.0 * (t[0][1] * p[3][i] + t[0][2] * p[4][i] + t[1][2] * p[5][i]);
        if !longitudinal {
            s = m.scalar_at(kv) * (p[0][i] + p[1][i] + p[2][i]) - s;
        }
        out.data[i] = s;
    }
    out
}

const SYM: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

fn sym_products(x: &VectorField, y: &VectorField) -> Vec<Vec<f64>> {
    SYM.iter()
        .map(|&(a, b)| {
            x.comps[a]
                .iter()
                .zip(&y.comps[b])
                .zip(x.comps[b].iter().zip(&y.comps[a]))
                .map(|((xa, yb), (xb, ya))| 0.5 * (xa * yb + xb * ya))
                .collect()
        })
        .collect()
}

fn times(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn forward(grid: &Grid, fields: &[Vec<f64>]) -> Vec<Vec<Complex64>> {
    let refs: Vec<&[f64]> = fields.iter().map(|v| v.as_slice()).collect();
    grid.forward_real(&refs)
}

fn derivative(grid: &Grid, spec: &[Complex64], axis: usize) -> Vec<Complex64> {
    (0..grid.len()).map(|i| Complex64::new(0.0, grid.dk(i)[axis]) * spec[i]).collect()
}

fn real(grid: &Grid, spec: &[Complex64]) -> Vec<f64> {
    grid.inverse_real(&[spec]).pop().unwrap()
}

/// Y_j ∂_k[(E_k X_Kj)^ε - E_k X^ε_Kj] on the lattice.
fn commutator_term(m: &Multiplier, e: &VectorField, x: &VectorField, xs: &SpectralField, y: &VectorField, longitudinal: bool) -> Result<Vec<f64>> {
    let g = &e.grid;
    let xk = project(m, xs, longitudinal)?.to_real();
    let mut w = [vec![Complex64::default(); g.len()], vec![Complex64::default(); g.len()], vec![Complex64::default(); g.len()]];
    for k in 0..3 {
        // (E_k X_m) smoothed on the m index, and E_k X^ε_K
        let prods: Vec<Vec<f64>> = (0..3).map(|mm| times(&e.comps[k], &x.comps[mm])).collect();
        let ps = forward(g, &prods);
        let pf = SpectralField { grid: g.clone(), comps: [ps[0].clone(), ps[1].clone(), ps[2].clone()] };
        let sm = project(m, &pf, longitudinal)?;
        let inner: Vec<Vec<f64>> = (0..3).map(|j| times(&e.comps[k], &xk.comps[j])).collect();
        let is = forward(g, &inner);
        for j in 0..3 {
            let d1 = derivative(g, &sm.comps[j], k);
            let d2 = derivative(g, &is[j], k);
            for i in 0..g.len() {
                w[j][i] += d1[i] - d2[i];
            }
        }
    }
    let wr = g.inverse_real(&[&w[0], &w[1], &w[2]]);
    let mut out = vec![0.0; g.len()];
    for j in 0..3 {
        for (o, (a, b)) in out.iter_mut().zip(y.comps[j].iter().zip(&wr[j])) {
            *o += a * b;
        }
    }
    Ok(out)
}

/// ∇·[(E(X·K·Y))^ε - E (X·K·Y)^ε] on the lattice.
fn divergence_term(m: &Multiplier, e: &VectorField, x: &VectorField, y: &VectorField, longitudinal: bool) -> Vec<f64> {
    let g = &e.grid;
    let s = sym_products(x, y);
    let ss = forward(g, &s);
    let inner = contract(m, g, &ss, longitudinal).to_real();
    let mut acc = vec![Complex64::default(); g.len()];
    for mm in 0..3 {
        let cubic: Vec<Vec<f64>> = s.iter().map(|p| times(p, &e.comps[mm])).collect();
        let cs = forward(g, &cubic);
        let outer = contract(m, g, &cs, longitudinal);
        let es = forward(g, &[times(&e.comps[mm], &inner.data)]).pop().unwrap();
        for i in 0..g.len() {
            let ik = Complex64::new(0.0, g.dk(i)[mm]);
            acc[i] += ik * (outer.data[i] - es[i]);
        }
    }
    real(g, &acc)
}

/// Lattice indices of the `per_axis`³ evenly spaced sample points.
pub fn sample_lattice(grid: &Grid, per_axis: usize) -> Vec<usize> {
    let n = grid.n();
    let step = (n / per_axis.max(1)).max(1);
    let mut out = Vec::new();
    for z in (0..n).step_by(step) {
        for y in (0..n).step_by(step) {
            for x in (0..n).step_by(step) {
                out.push(grid.index(x, y, z));
            }
        }
    }
    out
}

/// Both sides of one ℓ-integral identity at the sample points. The left
/// side is the ℓ-quadrature of the increment integrand plus the divergence
/// of the smoothed cubic product; the right side is the commutator form.
/// E must be solenoidal; the identities rely on ∇·E = 0.
pub fn lemma22_sides(form: LemmaForm, e: &VectorField, f: &VectorField, moll: &Mollifier, per_axis: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = &e.grid;
    crate::grid::check_grid(g, &f.grid)?;
    moll.check_resolvable(g)?;
    let es = e.transform();
    let fs = f.transform();
    let dr = es.divergence_ratio();
    if dr > 1e-8 {
        return Err(KhmError::Precondition(format!("E must be solenoidal (divergence ratio {dr:.2e})")));
    }
    let band = es.band(1e-13).max(fs.band(1e-13));
    if 6 * band + 1 > g.n() as i64 {
        return Err(KhmError::Precondition(format!(
            "band {band} too wide for exact cubic products on a {}³ grid",
            g.n()
        )));
    }
    let long = form.longitudinal();
    let m = moll.multiplier(3 * band, Weight::Phi);
    let (x, xs, y, ys, half) = if form.square() { (f, &fs, f, &fs, 0.5) } else { (f, &fs, e, &es, 1.0) };

    let mut rhs = commutator_term(&m, e, x, xs, y, long)?;
    if !form.square() {
        // symmetric partner with the roles of F and E exchanged
        let other = commutator_term(&m, e, y, ys, x, long)?;
        for (a, b) in rhs.iter_mut().zip(other) {
            *a += b;
        }
    }
    let div = divergence_term(&m, e, x, y, long);

    let samples = sample_lattice(g, per_axis);
    let eval = PointEvaluator::new(&[&es, &fs], band);
    let kern = &moll.kernel;
    let radial: Vec<(f64, f64, f64, f64)> = moll
        .radial
        .r
        .iter()
        .zip(&moll.radial.w)
        .map(|(r, w)| (*r, 4.0 * PI * r * r * w, kern.phi_eps(*r), kern.dphi_eps(*r)))
        .collect();
    let dirs = &moll.dirs;
    let integral = par::map(samples.len(), |s| {
        let p = g.point(samples[s]);
        let e0 = e.at(samples[s]);
        let f0 = f.at(samples[s]);
        let mut acc = 0.0;
        for (n, q) in dirs.dirs.iter().zip(&dirs.weights) {
            let mut shell = 0.0;
            for &(r, w, phi, dphi) in &radial {
                if w == 0.0 || (phi == 0.0 && dphi == 0.0) {
                    continue;
                }
                let v = eval.eval([p[0] + r * n[0], p[1] + r * n[1], p[2] + r * n[2]]);
                let de = [v[0][0] - e0[0], v[0][1] - e0[1], v[0][2] - e0[2]];
                let df = [v[1][0] - f0[0], v[1][1] - f0[1], v[1][2] - f0[2]];
                shell += w * lemma_integrand(form, de, df, *n, r, phi, dphi);
            }
            acc += q * shell;
        }
        acc
    });
    let lhs: Vec<f64> = samples.iter().zip(&integral).map(|(&i, l)| l + half * div[i]).collect();
    let rhs: Vec<f64> = samples.iter().map(|&i| rhs[i]).collect();
    Ok((lhs, rhs))
}

pub fn check_lemma22(form: LemmaForm, e: &VectorField, f: &VectorField, moll: &Mollifier, per_axis: usize) -> Result<IdentityReport> {
    let (lhs, rhs) = lemma22_sides(form, e, f, moll, per_axis)?;
    let residual = lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| (l - r).abs() / (1.0 + l.abs() + r.abs()))
        .fold(0.0, f64::max);
    Ok(IdentityReport {
        identity_name: form.name().into(),
        lhs_norm: lhs.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        rhs_norm: rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        residual,
        resolution: Resolution {
            grid_n: Some(e.grid.n()),
            directions: Some(moll.dirs.len()),
            radial_nodes: Some(moll.radial.r.len()),
            epsilon: Some(moll.kernel.epsilon),
            samples: lhs.len(),
        },
    })
}

/// Random solenoidal, mean-free field whose modes satisfy |k_i| ≤ kmax,
/// with unit rms.
pub fn random_band_field(grid: &Grid, kmax: i64, seed: u64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SpectralField::zeros(grid);
    let n = grid.n() as i64;
    let kmax = kmax.min(n / 2 - 1);
    for kz in -kmax..=kmax {
        for ky in -kmax..=kmax {
            for kx in -kmax..=kmax {
                if (kx, ky, kz) == (0, 0, 0) {
                    continue;
                }
                let i = grid.index(grid.slot(kx), grid.slot(ky), grid.slot(kz));
                let j = grid.mirror(i);
                let key = (kz, ky, kx);
                let mk = (-kz, -ky, -kx);
                if key < mk {
                    continue;
                }
                let k2 = (kx * kx + ky * ky + kz * kz) as f64;
                let amp = (-k2 / 8.0).exp();
                let mut c = [Complex64::default(); 3];
                for v in c.iter_mut() {
                    *v = amp * Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                }
                for d in 0..3 {
                    s.comps[d][i] = c[d];
                    s.comps[d][j] = c[d].conj();
                }
            }
        }
    }
    let s = s.leray();
    let rms = s.mean_square().sqrt();
    let f = s.to_real();
    if rms > 0.0 {
        f.scaled(1.0 / rms)
    } else {
        f
    }
}

/// Pairwise comparison of ∇×(J×b), ∇·(b⊗J) - ∇·(J⊗b) and ∇×[∇·(b⊗b)].
pub fn check_hall_rewrites(b: &VectorField) -> Result<Vec<IdentityReport>> {
    let g = &b.grid;
    let bs = b.transform();
    let dr = bs.divergence_ratio();
    if dr > 1e-8 {
        return Err(KhmError::Precondition(format!("b must be solenoidal (divergence ratio {dr:.2e})")));
    }
    let band = bs.band(1e-13);
    if 4 * band + 1 > g.n() as i64 {
        return Err(KhmError::Precondition(format!(
            "band {band} too wide for exact quadratic products on a {}³ grid",
            g.n()
        )));
    }
    let js = bs.curl();
    let j = js.to_real();
    let curl_form = j.cross(b).transform().curl().to_real();
    let div_of = |x: &VectorField, y: &VectorField| -> SpectralField {
        // [∇·(x⊗y)]_i = ∂_k(x_k y_i)
        let mut out = SpectralField::zeros(g);
        for k in 0..3 {
            let prods: Vec<Vec<f64>> = (0..3).map(|i| times(&x.comps[k], &y.comps[i])).collect();
            let ps = forward(g, &prods);
            for i in 0..3 {
                let d = derivative(g, &ps[i], k);
                for (o, v) in out.comps[i].iter_mut().zip(d) {
                    *o += v;
                }
            }
        }
        out
    };
    let tensor_form = div_of(b, &j).axpy(-1.0, &div_of(&j, b)).to_real();
    let stress_form = div_of(b, b).curl().to_real();
    let scale = b.max_norm().powi(2) * (band.max(1) as f64).powi(2);
    let pair = |name: &str, x: &VectorField, y: &VectorField| {
        let xn = x.max_norm();
        let yn = y.max_norm();
        let den = xn.max(yn).max(1e-300 * scale).max(f64::MIN_POSITIVE);
        let diff = x.axpy(-1.0, y).max_norm();
        IdentityReport {
            identity_name: name.into(),
            lhs_norm: xn,
            rhs_norm: yn,
            residual: if xn == 0.0 && yn == 0.0 { diff } else { diff / den },
            resolution: Resolution { grid_n: Some(g.n()), samples: g.len(), ..Default::default() },
        }
    };
    Ok(vec![
        pair("curl_vs_tensor", &curl_form, &tensor_form),
        pair("curl_vs_stress", &curl_form, &stress_form),
        pair("tensor_vs_stress", &tensor_form, &stress_form),
    ])
}

fn field_pair(name: &str, x: &VectorField, y: &VectorField) -> IdentityReport {
    let xn = x.max_norm();
    let yn = y.max_norm();
    let diff = x.axpy(-1.0, y).max_norm();
    let den = xn.max(yn);
    IdentityReport {
        identity_name: name.into(),
        lhs_norm: xn,
        rhs_norm: yn,
        residual: if den > 0.0 { diff / den } else { diff },
        resolution: Resolution { grid_n: Some(x.grid.n()), samples: x.grid.len(), ..Default::default() },
    }
}

/// curl∘curl⁻¹ on a random band field, plus the Beltrami checks on the ABC
/// flow: ∇×b = b, ∇·b = 0, J×b = 0.
pub fn check_operators(grid: &Grid, kmax: i64, seed: u64) -> Result<Vec<IdentityReport>> {
    let f = random_band_field(grid, kmax, seed);
    let back = f.inverse_curl()?.curl();
    let abc = crate::grid::abc_field(grid);
    let j = abc.curl();
    let lorentz = j.cross(&abc);
    let zero = VectorField::zeros(grid);
    let mut div = field_pair("abc_divergence", &zero, &zero);
    div.lhs_norm = abc.divergence().max_abs();
    div.residual = div.lhs_norm / abc.max_norm();
    let mut lor = field_pair("abc_force_free", &lorentz, &zero);
    lor.residual = lorentz.max_norm() / (j.max_norm() * abc.max_norm());
    Ok(vec![field_pair("curl_inverse_curl", &back, &f), field_pair("abc_eigenfield", &j, &abc), div, lor])
}

/// Largest entry of Σ c φ^ε n̂⊗n̂ - I/3 for the discrete kernel quadrature.
pub fn check_projection(moll: &Mollifier) -> IdentityReport {
    let m = moll.discrete_second_moment();
    let mut worst: f64 = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { 1.0 / 3.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    IdentityReport {
        identity_name: "kernel_projection".into(),
        lhs_norm: (m[0][0] + m[1][1] + m[2][2]).abs(),
        rhs_norm: 1.0,
        residual: worst,
        resolution: Resolution {
            directions: Some(moll.dirs.len()),
            radial_nodes: Some(moll.radial.r.len()),
            epsilon: Some(moll.kernel.epsilon),
            ..Default::default()
        },
    }
}
