//! Increments δE(x; ℓ) = E(x+ℓ) - E(x), their longitudinal and transverse
//! parts, direction sets on the unit sphere and shell averages.

use crate::error::{KhmError, Result};
use crate::grid::{dot, scale, sub, Grid, SpectralField, Vec3, VectorField, BOX_LENGTH};
use crate::par;
use crate::quadrature::gauss_legendre;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionScheme {
    /// Fibonacci points with weights corrected so that every even monomial up
    /// to `exact_degree` integrates exactly.
    Fibonacci,
    /// Plain Fibonacci points with equal weights.
    FibonacciEqual,
    /// Gauss–Legendre in z times the trapezoid rule in azimuth.
    GaussProduct,
}

impl std::str::FromStr for DirectionScheme {
    type Err = KhmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fibonacci" => Ok(Self::Fibonacci),
            "fibonacci_equal" => Ok(Self::FibonacciEqual),
            "gauss_product" => Ok(Self::GaussProduct),
            _ => Err(KhmError::Config(format!(
                "unknown direction scheme '{s}' (fibonacci, fibonacci_equal, gauss_product)"
            ))),
        }
    }
}

/// Antipodally symmetric point set on the unit sphere. The second half of
/// `dirs` is the negation of the first half, with matching weights.
#[derive(Clone, Debug)]
pub struct DirectionQuadrature {
    pub dirs: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub scheme: DirectionScheme,
    /// Highest polynomial degree integrated exactly (odd degrees vanish by symmetry).
    pub exact_degree: usize,
}

/// Exact sphere average of x^a y^b z^c.
pub fn sphere_moment(a: usize, b: usize, c: usize) -> f64 {
    if a % 2 == 1 || b % 2 == 1 || c % 2 == 1 {
        return 0.0;
    }
    let dfact = |m: usize| -> f64 {
        // (m-1)!! for even m, with (-1)!! = 1
        let mut p = 1.0;
        let mut k = m as i64 - 1;
        while k > 1 {
            p *= k as f64;
            k -= 2;
        }
        p
    };
    let mut top = 1.0;
    let mut k = (a + b + c + 1) as i64;
    while k > 1 {
        top *= k as f64;
        k -= 2;
    }
    dfact(a) * dfact(b) * dfact(c) / top
}

fn monomials(d: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for a in 0..=d {
        for b in 0..=(d - a) {
            out.push((a, b, d - a - b));
        }
    }
    out
}

fn mono(p: Vec3, (a, b, c): (usize, usize, usize)) -> f64 {
    p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32)
}

impl DirectionQuadrature {
    pub fn new(scheme: DirectionScheme, count: usize) -> Result<Self> {
        if count < 2 || count % 2 != 0 {
            return Err(KhmError::Config(format!(
                "quad.directions = {count}: need an even count of at least 2"
            )));
        }
        match scheme {
            DirectionScheme::FibonacciEqual => Ok(Self::fibonacci_equal(count)),
            DirectionScheme::Fibonacci => Ok(Self::fibonacci_corrected(count)),
            DirectionScheme::GaussProduct => Self::gauss_product(count),
        }
    }

    fn from_half(half: Vec<Vec3>, half_w: Vec<f64>, scheme: DirectionScheme, exact_degree: usize) -> Self {
        let mut dirs = half.clone();
        dirs.extend(half.iter().map(|p| scale(*p, -1.0)));
        let mut weights = half_w.clone();
        weights.extend(half_w);
        DirectionQuadrature { dirs, weights, scheme, exact_degree }
    }

    fn fibonacci_half(count: usize) -> Vec<Vec3> {
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..count / 2)
            .map(|i| {
                let z = 1.0 - (2 * i + 1) as f64 / count as f64;
                let r = (1.0 - z * z).sqrt();
                let a = golden * i as f64;
                [r * a.cos(), r * a.sin(), z]
            })
            .collect()
    }

    pub fn fibonacci_equal(count: usize) -> Self {
        let half = Self::fibonacci_half(count);
        let w = vec![1.0 / count as f64; count / 2];
        Self::from_half(half, w, DirectionScheme::FibonacciEqual, 1)
    }

    /// Fibonacci points, weights moved by the least-norm correction that
    /// makes all degree-`d` monomials exact. The largest admissible even `d`
    /// keeping every weight positive is used.
    pub fn fibonacci_corrected(count: usize) -> Self {
        let half = Self::fibonacci_half(count);
        let m = half.len();
        let mut d = 10;
        while d >= 2 {
            let mons = monomials(d);
            if mons.len() * 4 <= m {
                if let Some(w) = corrected_weights(&half, &mons) {
                    if w.iter().all(|&v| v > 0.0) {
                        let w = w.iter().map(|v| 0.5 * v).collect();
                        return Self::from_half(half, w, DirectionScheme::Fibonacci, d + 1);
                    }
                }
            }
            d -= 2;
        }
        let mut q = Self::fibonacci_equal(count);
        q.scheme = DirectionScheme::Fibonacci;
        q
    }

    pub fn gauss_product(count: usize) -> Result<Self> {
        // count = 2 nz², with nz Gauss nodes in z and 2 nz azimuths
        let nz = ((count / 2) as f64).sqrt().round() as usize;
        if nz == 0 || 2 * nz * nz != count {
            return Err(KhmError::Config(format!(
                "gauss_product needs quad.directions = 2·m² (e.g. 128, 512); got {count}"
            )));
        }
        let np = 2 * nz;
        let (zs, wz) = gauss_legendre(nz);
        let mut half = Vec::new();
        let mut hw = Vec::new();
        for (j, z) in zs.iter().enumerate() {
            if *z < 0.0 {
                continue;
            }
            let r = (1.0 - z * z).sqrt();
            for a in 0..np {
                let phi = 2.0 * PI * (a as f64 + 0.5) / np as f64;
                // the centre node of odd nz sits on the equator; keep half of it
                if z.abs() < 1e-15 && phi >= PI {
                    continue;
                }
                half.push([r * phi.cos(), r * phi.sin(), *z]);
                hw.push(0.5 * wz[j] / np as f64);
            }
        }
        Ok(Self::from_half(half, hw, DirectionScheme::GaussProduct, 2 * nz - 1))
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// First half of the set; the rest are antipodes with equal weights.
    pub fn half(&self) -> impl Iterator<Item = (Vec3, f64)> + '_ {
        let h = self.dirs.len() / 2;
        self.dirs[..h].iter().copied().zip(self.weights[..h].iter().copied())
    }

    pub fn second_moment(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (p, w) in self.dirs.iter().zip(&self.weights) {
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += w * p[i] * p[j];
                }
            }
        }
        m
    }

    /// Largest deviation of Σ w n⊗n from I/3.
    pub fn second_moment_error(&self) -> f64 {
        let m = self.second_moment();
        let mut e: f64 = 0.0;
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let want = if i == j { 1.0 / 3.0 } else { 0.0 };
                e = e.max((v - want).abs());
            }
        }
        e
    }
}

fn corrected_weights(half: &[Vec3], mons: &[(usize, usize, usize)]) -> Option<Vec<f64>> {
    let m = half.len();
    let r = mons.len();
    let a = DMatrix::from_fn(r, m, |i, j| mono(half[j], mons[i]));
    let target = DVector::from_iterator(r, mons.iter().map(|&(x, y, z)| sphere_moment(x, y, z)));
    let p0 = DVector::from_element(m, 1.0 / m as f64);
    let resid = &target - &a * &p0;
    let gram = &a * a.transpose();
    let y = gram.cholesky()?.solve(&resid);
    let p = p0 + a.transpose() * y;
    Some(p.iter().copied().collect())
}

/// Increasing separations in (0, L/4], each at least one grid spacing.
#[derive(Clone, Debug, Serialize)]
pub struct SeparationScan {
    pub lambdas: Vec<f64>,
}

impl SeparationScan {
    pub fn new(lambdas: Vec<f64>, floor: f64) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(KhmError::Config("empty separation scan".into()));
        }
        for w in lambdas.windows(2) {
            if w[1] <= w[0] {
                return Err(KhmError::Config("separations must be strictly increasing".into()));
            }
        }
        for &l in &lambdas {
            check_separation(l, floor)?;
        }
        Ok(SeparationScan { lambdas })
    }

    /// `count` log-spaced values in [lo, hi].
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![lo];
        }
        (0..count)
            .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
            .collect()
    }

    /// Split candidate values into resolvable and rejected ones.
    pub fn filter(cands: &[f64], floor: f64) -> (Vec<f64>, Vec<f64>) {
        cands.iter().partition(|&&l| check_separation(l, floor).is_ok())
    }
}

pub fn check_separation(lambda: f64, floor: f64) -> Result<()> {
    if !(lambda >= floor && lambda > 0.0 && lambda <= BOX_LENGTH / 4.0 + 1e-12) {
        return Err(KhmError::Domain(format!(
            "separation λ = {lambda} outside the resolvable range [{floor}, π/2]"
        )));
    }
    Ok(())
}

/// δE(x) = E(x+ℓ) - E(x) on every lattice point.
pub fn increment(field: &SpectralField, ell: Vec3) -> VectorField {
    let shifted = field.shifted(ell).to_real();
    let base = field.to_real();
    shifted.axpy(-1.0, &base)
}

/// Increments of several fields at one separation, sharing transforms.
pub fn increments(fields: &[&SpectralField], bases: &[&VectorField], ell: Vec3) -> Vec<VectorField> {
    let grid = &fields[0].grid;
    let shifted: Vec<SpectralField> = fields.iter().map(|f| f.shifted(ell)).collect();
    let specs: Vec<&[num_complex::Complex64]> =
        shifted.iter().flat_map(|s| s.comps.iter().map(|c| c.as_slice())).collect();
    let mut real = grid.inverse_real(&specs).into_iter();
    bases
        .iter()
        .map(|b| {
            let mut comps: [Vec<f64>; 3] = [real.next().unwrap(), real.next().unwrap(), real.next().unwrap()];
            for c in 0..3 {
                for (v, w) in comps[c].iter_mut().zip(&b.comps[c]) {
                    *v -= w;
                }
            }
            VectorField { grid: grid.clone(), comps }
        })
        .collect()
}

fn check_unit(n: Vec3) -> Result<()> {
    let e = (dot(n, n) - 1.0).abs();
    if e > 1e-12 {
        return Err(KhmError::Precondition(format!("direction is not a unit vector (| |n|² - 1 | = {e:.2e})")));
    }
    Ok(())
}

/// (n⊗n) δE.
pub fn project_longitudinal(incr: &VectorField, n: Vec3) -> Result<VectorField> {
    check_unit(n)?;
    let mut out = VectorField::zeros(&incr.grid);
    for i in 0..incr.grid.len() {
        let s = dot(n, incr.at(i));
        for c in 0..3 {
            out.comps[c][i] = s * n[c];
        }
    }
    Ok(out)
}

/// (1 - n⊗n) δE.
pub fn project_transverse(incr: &VectorField, n: Vec3) -> Result<VectorField> {
    let l = project_longitudinal(incr, n)?;
    Ok(incr.axpy(-1.0, &l))
}

/// Pointwise projections used inside estimator loops.
#[inline]
pub fn long(v: Vec3, n: Vec3) -> Vec3 {
    scale(n, dot(n, v))
}

#[inline]
pub fn trans(v: Vec3, n: Vec3) -> Vec3 {
    sub(v, long(v, n))
}

/// (1/λ) Σ_n w ⟨integrand(δE₁, δE₂, …; n)⟩_x with increments at ℓ = λn.
///
/// The integrand receives the increments of every field at one lattice
/// point, the base values at that point, and the direction.
pub fn shell_average<F>(
    fields: &[&SpectralField],
    lambda: f64,
    quad: &DirectionQuadrature,
    floor: f64,
    integrand: F,
) -> Result<f64>
where
    F: Fn(&[Vec3], &[Vec3], Vec3) -> f64 + Sync + Send,
{
    check_separation(lambda, floor)?;
    if fields.is_empty() {
        return Err(KhmError::Config("shell_average needs at least one field".into()));
    }
    let grid: &Grid = &fields[0].grid;
    let bases: Vec<VectorField> = fields.iter().map(|f| f.to_real()).collect();
    let base_refs: Vec<&VectorField> = bases.iter().collect();
    let total = par::sum_scalar(quad.len(), |d| {
        let n = quad.dirs[d];
        let inc = increments(fields, &base_refs, scale(n, lambda));
        let mut s = 0.0;
        let mut dv = vec![[0.0; 3]; fields.len()];
        let mut bv = vec![[0.0; 3]; fields.len()];
        for i in 0..grid.len() {
            for (k, f) in inc.iter().enumerate() {
                dv[k] = f.at(i);
                bv[k] = bases[k].at(i);
            }
            s += integrand(&dv, &bv, n);
        }
        quad.weights[d] * s / grid.len() as f64
    });
    Ok(total / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::norm;

    #[test]
    fn sphere_moments_known_values() {
        assert_eq!(sphere_moment(0, 0, 0), 1.0);
        assert!((sphere_moment(2, 0, 0) - 1.0 / 3.0).abs() < 1e-16);
        assert!((sphere_moment(4, 0, 0) - 1.0 / 5.0).abs() < 1e-16);
        assert!((sphere_moment(2, 2, 0) - 1.0 / 15.0).abs() < 1e-16);
        assert!((sphere_moment(2, 2, 2) - 1.0 / 105.0).abs() < 1e-16);
        assert_eq!(sphere_moment(1, 1, 0), 0.0);
    }

    #[test]
    fn sets_are_unit_symmetric_normalized() {
        for q in [
            DirectionQuadrature::new(DirectionScheme::Fibonacci, 256).unwrap(),
            DirectionQuadrature::new(DirectionScheme::FibonacciEqual, 100).unwrap(),
            DirectionQuadrature::new(DirectionScheme::GaussProduct, 128).unwrap(),
        ] {
            let h = q.len() / 2;
            for i in 0..q.len() {
                assert!((norm(q.dirs[i]) - 1.0).abs() < 1e-14);
                assert!(q.weights[i] > 0.0);
            }
            for i in 0..h {
                assert_eq!(q.dirs[i + h], scale(q.dirs[i], -1.0));
                assert_eq!(q.weights[i + h], q.weights[i]);
            }
            let s: f64 = q.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "{:?} sum {s}", q.scheme);
            assert!(q.second_moment_error() < 1e-2, "{:?} {}", q.scheme, q.second_moment_error());
        }
    }

    #[test]
    fn corrected_weights_reach_high_degree() {
        let q = DirectionQuadrature::fibonacci_corrected(256);
        assert!(q.exact_degree >= 5, "degree {}", q.exact_degree);
        assert!(q.second_moment_error() < 1e-14);
        let s: f64 = q.dirs.iter().zip(&q.weights).map(|(p, w)| w * p[0].powi(4)).sum();
        assert!((s - 0.2).abs() < 1e-13);
        // equal weights miss the second moment at the 1/N² level
        let e = DirectionQuadrature::fibonacci_equal(256);
        assert!(e.second_moment_error() > 1e-7);
    }

    #[test]
    fn gauss_product_exact() {
        let q = DirectionQuadrature::gauss_product(512).unwrap();
        assert_eq!(q.exact_degree, 31);
        let s: f64 = q.dirs.iter().zip(&q.weights).map(|(p, w)| w * (p[0] * p[1] * p[2]).powi(2)).sum();
        assert!((s - sphere_moment(2, 2, 2)).abs() < 1e-15);
        assert!(DirectionQuadrature::gauss_product(100).is_err());
    }

    #[test]
    fn projections_split_exactly() {
        let g = Grid::new(8).unwrap();
        let f = VectorField::from_fn(&g, |p| [p[0].sin(), p[1].cos() * 0.3, p[2]]);
        let n = [0.6, 0.0, 0.8];
        let l = project_longitudinal(&f, n).unwrap();
        let t = project_transverse(&f, n).unwrap();
        assert!(l.axpy(1.0, &t).max_diff(&f) < 1e-15);
        assert!(project_longitudinal(&f, [1.0, 1.0, 0.0]).is_err());
        let par = VectorField::from_fn(&g, |p| scale(n, p[0].sin()));
        assert!(project_transverse(&par, n).unwrap().max_abs() < 1e-15);
        let perp = VectorField::from_fn(&g, |p| scale([0.0, 1.0, 0.0], p[2].cos()));
        assert!(project_longitudinal(&perp, n).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn increments_basic() {
        let g = Grid::new(16).unwrap();
        let c = VectorField::from_fn(&g, |_| [1.0, -2.0, 0.5]).transform();
        assert!(increment(&c, [0.3, 0.2, 0.1]).max_abs() < 1e-15);
        let e = VectorField::from_fn(&g, |p| [p[0].sin(), 0.0, 0.0]).transform();
        assert!(increment(&e, [BOX_LENGTH, 0.0, 0.0]).max_abs() < 1e-14);
        let d = increment(&e, [PI, 0.0, 0.0]);
        let want = VectorField::from_fn(&g, |p| [-2.0 * p[0].sin(), 0.0, 0.0]);
        assert!(d.max_diff(&want) < 1e-14);
    }

    #[test]
    fn shell_average_constant_and_odd() {
        let g = Grid::new(16).unwrap();
        let e = VectorField::from_fn(&g, |p| [p[1].sin(), 0.0, p[0].cos()]).transform();
        let q = DirectionQuadrature::fibonacci_corrected(64);
        let lam = 0.5;
        let c = shell_average(&[&e], lam, &q, g.spacing(), |_, _, _| 3.0).unwrap();
        assert!((c - 3.0 / lam).abs() < 1e-13);
        let odd = shell_average(&[&e], lam, &q, g.spacing(), |_, _, n| n[0] + n[1] * n[2] * n[2]).unwrap();
        assert!(odd.abs() < 1e-15);
        assert!(shell_average(&[&e], 0.01, &q, g.spacing(), |_, _, _| 1.0).is_err());
    }
}
