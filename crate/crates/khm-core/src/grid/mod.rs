//! Periodic box [0, 2π)³ sampled on an n³ lattice, and the spectral
//! operators that act on fields living there.
//!
//! Storage is x-fastest: `idx = x + n (y + n z)`. Spectral coefficients use
//! the same layout with FFT index ordering, so `k = i` for `i < n/2` and
//! `k = i - n` otherwise. Derivative operators drop the Nyquist component
//! (its derivative vanishes on the lattice).

pub mod fft;
pub mod snapshot;

use crate::error::{KhmError, Result};
use crate::par;
use fft::Fft3;
use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::Arc;

pub const BOX_LENGTH: f64 = 2.0 * PI;

pub type Vec3 = [f64; 3];

#[derive(Clone, Debug)]
pub struct Grid {
    n: usize,
    // log2 n when n is a power of two; lets split() use shifts
    shift: Option<u32>,
    fft: Arc<Fft3>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(KhmError::Config(format!(
                "grid.n = {n}: points per axis must be even and at least 8"
            )));
        }
        Ok(Grid { n, shift: n.is_power_of_two().then(|| n.trailing_zeros()), fft: Fft3::shared(n) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        BOX_LENGTH / self.n as f64
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.n * (y + self.n * z)
    }

    #[inline]
    pub fn split(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        if let Some(s) = self.shift {
            let m = n - 1;
            return [idx & m, (idx >> s) & m, idx >> (2 * s)];
        }
        [idx % n, (idx / n) % n, idx / (n * n)]
    }

    pub fn point(&self, idx: usize) -> Vec3 {
        let h = self.spacing();
        let [x, y, z] = self.split(idx);
        [x as f64 * h, y as f64 * h, z as f64 * h]
    }

    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Lattice index holding wavenumber `k`.
    #[inline]
    pub fn slot(&self, k: i64) -> usize {
        k.rem_euclid(self.n as i64) as usize
    }

    pub fn wavevector(&self, idx: usize) -> [i64; 3] {
        let [x, y, z] = self.split(idx);
        [self.wavenumber(x), self.wavenumber(y), self.wavenumber(z)]
    }

    /// Wavenumber used by derivative operators.
    #[inline]
    pub fn dk1(&self, i: usize) -> f64 {
        if i == self.n / 2 {
            0.0
        } else {
            self.wavenumber(i) as f64
        }
    }

    #[inline]
    pub fn dk(&self, idx: usize) -> Vec3 {
        let [x, y, z] = self.split(idx);
        [self.dk1(x), self.dk1(y), self.dk1(z)]
    }

    /// Index of the mode -k.
    #[inline]
    pub fn mirror(&self, idx: usize) -> usize {
        let n = self.n;
        let [x, y, z] = self.split(idx);
        self.index((n - x) % n, (n - y) % n, (n - z) % n)
    }

    /// Largest |k_i| kept by the dealiasing filter.
    pub fn kmax_dealiased(&self) -> i64 {
        (self.n as i64 - 1) / 3
    }

    /// A mode survives dealiasing iff every 3|k_i| < n.
    #[inline]
    pub fn keeps(&self, k: [i64; 3]) -> bool {
        let n = self.n as i64;
        k.iter().all(|c| 3 * c.abs() < n)
    }

    pub fn fft(&self) -> &Fft3 {
        &self.fft
    }

    /// Forward transform of real arrays, two per complex FFT.
    pub fn forward_real(&self, fields: &[&[f64]]) -> Vec<Vec<Complex64>> {
        let len = self.len();
        for f in fields {
            assert_eq!(f.len(), len, "field size does not match the grid");
        }
        let pairs = fields.len().div_ceil(2);
        let chunks = par::map(pairs, |p| {
            let a = fields[2 * p];
            let b = fields.get(2 * p + 1);
            let mut c: Vec<Complex64> = match b {
                Some(b) => a.iter().zip(b.iter()).map(|(&x, &y)| Complex64::new(x, y)).collect(),
                None => a.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            };
            self.fft.forward(&mut c);
            match b {
                None => vec![c],
                Some(_) => {
                    let mut fa = vec![Complex64::default(); len];
                    let mut fb = vec![Complex64::default(); len];
                    for i in 0..len {
                        let cm = c[self.mirror(i)].conj();
                        fa[i] = 0.5 * (c[i] + cm);
                        fb[i] = Complex64::new(0.0, -0.5) * (c[i] - cm);
                    }
                    vec![fa, fb]
                }
            }
        });
        chunks.into_iter().flatten().collect()
    }

    /// Inverse transform of Hermitian spectra, two per complex FFT.
    pub fn inverse_real(&self, specs: &[&[Complex64]]) -> Vec<Vec<f64>> {
        let len = self.len();
        for s in specs {
            assert_eq!(s.len(), len, "spectrum size does not match the grid");
        }
        let pairs = specs.len().div_ceil(2);
        let chunks = par::map(pairs, |p| {
            let a = specs[2 * p];
            let b = specs.get(2 * p + 1);
            let mut c: Vec<Complex64> = match b {
                Some(b) => a
                    .iter()
                    .zip(b.iter())
                    .map(|(&x, &y)| x + Complex64::new(-y.im, y.re))
                    .collect(),
                None => a.to_vec(),
            };
            self.fft.inverse(&mut c);
            match b {
                None => vec![c.iter().map(|v| v.re).collect::<Vec<f64>>()],
                Some(_) => vec![c.iter().map(|v| v.re).collect(), c.iter().map(|v| v.im).collect()],
            }
        });
        chunks.into_iter().flatten().collect()
    }

    /// Per-axis phase factors e^{ik s} indexed by lattice slot. The Nyquist
    /// slot gets cos(k s), the exact shift of its lattice samples.
    pub fn phase_axis(&self, s: f64) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| {
                let k = self.wavenumber(i) as f64;
                if i == self.n / 2 {
                    Complex64::new((k * s).cos(), 0.0)
                } else {
                    Complex64::from_polar(1.0, k * s)
                }
            })
            .collect()
    }
}

pub(crate) fn check_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(KhmError::Config(format!(
            "grid mismatch: {}³ vs {}³",
            a.n, b.n
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VectorField {
    pub grid: Grid,
    pub comps: [Vec<f64>; 3],
}

#[derive(Clone, Debug)]
pub struct SpectralScalar {
    pub grid: Grid,
    pub data: Vec<Complex64>,
}

#[derive(Clone, Debug)]
pub struct SpectralField {
    pub grid: Grid,
    pub comps: [Vec<Complex64>; 3],
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField { grid: grid.clone(), data: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(Vec3) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        ScalarField { grid: grid.clone(), data }
    }

    pub fn transform(&self) -> SpectralScalar {
        let mut v = self.grid.forward_real(&[&self.data]);
        SpectralScalar { grid: self.grid.clone(), data: v.pop().unwrap() }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        let z = vec![0.0; grid.len()];
        VectorField { grid: grid.clone(), comps: [z.clone(), z.clone(), z] }
    }

    pub fn new(grid: &Grid, comps: [Vec<f64>; 3]) -> Result<Self> {
        for c in &comps {
            if c.len() != grid.len() {
                return Err(KhmError::Config(format!(
                    "component length {} does not match {}³ grid",
                    c.len(),
                    grid.n()
                )));
            }
        }
        Ok(VectorField { grid: grid.clone(), comps })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(Vec3) -> Vec3) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.len() {
            let v = f(grid.point(i));
            for c in 0..3 {
                out.comps[c][i] = v[c];
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, i: usize) -> Vec3 {
        [self.comps[0][i], self.comps[1][i], self.comps[2][i]]
    }

    pub fn transform(&self) -> SpectralField {
        let mut v = self
            .grid
            .forward_real(&[&self.comps[0], &self.comps[1], &self.comps[2]])
            .into_iter();
        SpectralField {
            grid: self.grid.clone(),
            comps: [v.next().unwrap(), v.next().unwrap(), v.next().unwrap()],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max over points of |F(x)|.
    pub fn max_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| norm(self.at(i)))
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vec3 {
        let l = self.grid.len() as f64;
        [
            self.comps[0].iter().sum::<f64>() / l,
            self.comps[1].iter().sum::<f64>() / l,
            self.comps[2].iter().sum::<f64>() / l,
        ]
    }

    /// ⟨F·G⟩ over the lattice.
    pub fn inner(&self, other: &VectorField) -> f64 {
        let mut s = 0.0;
        for c in 0..3 {
            s += self.comps[c].iter().zip(&other.comps[c]).map(|(a, b)| a * b).sum::<f64>();
        }
        s / self.grid.len() as f64
    }

    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let data = (0..self.grid.len())
            .map(|i| dot(self.at(i), other.at(i)))
            .collect();
        ScalarField { grid: self.grid.clone(), data }
    }

    pub fn cross(&self, other: &VectorField) -> VectorField {
        let mut out = VectorField::zeros(&self.grid);
        for i in 0..self.grid.len() {
            let v = cross(self.at(i), other.at(i));
            for c in 0..3 {
                out.comps[c][i] = v[c];
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        let mut out = self.clone();
        for c in out.comps.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn axpy(&self, a: f64, other: &VectorField) -> VectorField {
        let mut out = self.clone();
        for c in 0..3 {
            for (v, w) in out.comps[c].iter_mut().zip(&other.comps[c]) {
                *v += a * w;
            }
        }
        out
    }

    pub fn max_diff(&self, other: &VectorField) -> f64 {
        let mut m: f64 = 0.0;
        for c in 0..3 {
            for (a, b) in self.comps[c].iter().zip(&other.comps[c]) {
                m = m.max((a - b).abs());
            }
        }
        m
    }

    pub fn curl(&self) -> VectorField {
        self.transform().curl().to_real()
    }

    pub fn divergence(&self) -> ScalarField {
        self.transform().divergence().to_real()
    }

    pub fn leray_project(&self) -> VectorField {
        self.transform().leray().to_real()
    }

    pub fn inverse_curl(&self) -> Result<VectorField> {
        Ok(self.transform().inverse_curl()?.to_real())
    }

    /// max|∇·F| / max|∇F|, the solenoidality measure of the field.
    pub fn divergence_ratio(&self) -> f64 {
        self.transform().divergence_ratio()
    }
}

impl SpectralScalar {
    pub fn zeros(grid: &Grid) -> Self {
        SpectralScalar { grid: grid.clone(), data: vec![Complex64::default(); grid.len()] }
    }

    pub fn to_real(&self) -> ScalarField {
        let mut v = self.grid.inverse_real(&[&self.data]);
        ScalarField { grid: self.grid.clone(), data: v.pop().unwrap() }
    }

    pub fn gradient(&self) -> SpectralField {
        let g = &self.grid;
        let mut out = SpectralField::zeros(g);
        for i in 0..g.len() {
            let k = g.dk(i);
            let ic = Complex64::new(0.0, 1.0) * self.data[i];
            for c in 0..3 {
                out.comps[c][i] = ic * k[c];
            }
        }
        out
    }

    pub fn dealias(&self) -> SpectralScalar {
        let g = &self.grid;
        let mut out = self.clone();
        for i in 0..g.len() {
            if !g.keeps(g.wavevector(i)) {
                out.data[i] = Complex64::default();
            }
        }
        out
    }

    pub fn mean_square(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

impl SpectralField {
    pub fn zeros(grid: &Grid) -> Self {
        let z = vec![Complex64::default(); grid.len()];
        SpectralField { grid: grid.clone(), comps: [z.clone(), z.clone(), z] }
    }

    pub fn to_real(&self) -> VectorField {
        let mut v = self
            .grid
            .inverse_real(&[&self.comps[0], &self.comps[1], &self.comps[2]])
            .into_iter();
        VectorField {
            grid: self.grid.clone(),
            comps: [v.next().unwrap(), v.next().unwrap(), v.next().unwrap()],
        }
    }

    #[inline]
    pub fn at(&self, i: usize) -> [Complex64; 3] {
        [self.comps[0][i], self.comps[1][i], self.comps[2][i]]
    }

    fn map_modes(&self, f: impl Fn(usize, [Complex64; 3]) -> [Complex64; 3]) -> SpectralField {
        let g = &self.grid;
        let mut out = SpectralField::zeros(g);
        for i in 0..g.len() {
            let v = f(i, self.at(i));
            for c in 0..3 {
                out.comps[c][i] = v[c];
            }
        }
        out
    }

    /// ik × F̂.
    pub fn curl(&self) -> SpectralField {
        let g = self.grid.clone();
        self.map_modes(|i, f| {
            let k = g.dk(i);
            let im = Complex64::new(0.0, 1.0);
            [
                im * (f[2] * k[1] - f[1] * k[2]),
                im * (f[0] * k[2] - f[2] * k[0]),
                im * (f[1] * k[0] - f[0] * k[1]),
            ]
        })
    }

    pub fn divergence(&self) -> SpectralScalar {
        let g = &self.grid;
        let mut out = SpectralScalar::zeros(g);
        for i in 0..g.len() {
            let k = g.dk(i);
            let f = self.at(i);
            out.data[i] = Complex64::new(0.0, 1.0) * (f[0] * k[0] + f[1] * k[1] + f[2] * k[2]);
        }
        out
    }

    pub fn laplacian(&self) -> SpectralField {
        let g = self.grid.clone();
        self.map_modes(|i, f| {
            let k = g.dk(i);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            [f[0] * -k2, f[1] * -k2, f[2] * -k2]
        })
    }

    /// Multiply each mode by a real function of the derivative wavevector.
    pub fn filtered(&self, f: impl Fn(Vec3) -> f64) -> SpectralField {
        let g = self.grid.clone();
        self.map_modes(|i, v| {
            let s = f(g.dk(i));
            [v[0] * s, v[1] * s, v[2] * s]
        })
    }

    /// Remove the gradient part: F̂ - k (k·F̂)/|k|². The mean is kept.
    pub fn leray(&self) -> SpectralField {
        let g = self.grid.clone();
        self.map_modes(|i, f| {
            let k = g.dk(i);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 {
                return f;
            }
            let kf = (f[0] * k[0] + f[1] * k[1] + f[2] * k[2]) / k2;
            [f[0] - kf * k[0], f[1] - kf * k[1], f[2] - kf * k[2]]
        })
    }

    pub fn dealias(&self) -> SpectralField {
        let g = self.grid.clone();
        self.map_modes(|i, f| {
            if g.keeps(g.wavevector(i)) {
                f
            } else {
                [Complex64::default(); 3]
            }
        })
    }

    /// Σ_k |F̂(k)|², equal to the lattice mean of |F|².
    pub fn mean_square(&self) -> f64 {
        self.comps.iter().flat_map(|c| c.iter()).map(|c| c.norm_sqr()).sum()
    }

    /// ⟨F·G⟩ via Parseval.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        let mut s = 0.0;
        for c in 0..3 {
            for (a, b) in self.comps[c].iter().zip(&other.comps[c]) {
                s += (a.conj() * b).re;
            }
        }
        s
    }

    pub fn divergence_ratio(&self) -> f64 {
        let g = &self.grid;
        let (mut div2, mut grad2) = (0.0, 0.0);
        for i in 0..g.len() {
            let k = g.dk(i);
            let f = self.at(i);
            let d = f[0] * k[0] + f[1] * k[1] + f[2] * k[2];
            div2 += d.norm_sqr();
            grad2 += (k[0] * k[0] + k[1] * k[1] + k[2] * k[2])
                * (f[0].norm_sqr() + f[1].norm_sqr() + f[2].norm_sqr());
        }
        if grad2 == 0.0 {
            0.0
        } else {
            (div2 / grad2).sqrt()
        }
    }

    /// Â = (ik × F̂)/|k|², zero at k = 0. Rejects inputs that are not
    /// mean-free and solenoidal to 1e-8 relative.
    pub fn inverse_curl(&self) -> Result<SpectralField> {
        let g = &self.grid;
        let rms = self.mean_square().sqrt();
        let mean = self.at(0).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if mean > 1e-8 * rms.max(f64::MIN_POSITIVE) {
            return Err(KhmError::Precondition(format!(
                "inverse_curl: input is not mean-free (|mean| = {mean:.3e}, rms = {rms:.3e})"
            )));
        }
        let ratio = self.divergence_ratio();
        if ratio > 1e-8 {
            return Err(KhmError::Precondition(format!(
                "inverse_curl: input is not solenoidal (‖∇·F‖/‖∇F‖ = {ratio:.3e})"
            )));
        }
        let c = self.curl();
        let g2 = g.clone();
        Ok(c.map_modes(|i, f| {
            let k = g2.dk(i);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 {
                [Complex64::default(); 3]
            } else {
                [f[0] / k2, f[1] / k2, f[2] / k2]
            }
        }))
    }

    /// Spectrum of F(x + s).
    pub fn shifted(&self, s: Vec3) -> SpectralField {
        let g = &self.grid;
        let (px, py, pz) = (g.phase_axis(s[0]), g.phase_axis(s[1]), g.phase_axis(s[2]));
        let n = g.n();
        let mut out = SpectralField::zeros(g);
        for z in 0..n {
            for y in 0..n {
                let pyz = py[y] * pz[z];
                for x in 0..n {
                    let i = g.index(x, y, z);
                    let p = px[x] * pyz;
                    for c in 0..3 {
                        out.comps[c][i] = self.comps[c][i] * p;
                    }
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        self.map_modes(|_, f| [f[0] * s, f[1] * s, f[2] * s])
    }

    pub fn axpy(&self, a: f64, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        for c in 0..3 {
            for (v, w) in out.comps[c].iter_mut().zip(&other.comps[c]) {
                *v += a * w;
            }
        }
        out
    }

    /// Largest Hermitian defect |F̂(k) - conj F̂(-k)|.
    pub fn hermitian_defect(&self) -> f64 {
        let g = &self.grid;
        let mut m: f64 = 0.0;
        for c in 0..3 {
            for i in 0..g.len() {
                m = m.max((self.comps[c][i] - self.comps[c][g.mirror(i)].conj()).norm());
            }
        }
        m
    }

    /// Largest |k_i| carrying a coefficient above `tol` times the largest one.
    pub fn band(&self, tol: f64) -> i64 {
        let g = &self.grid;
        let top = self.comps.iter().flat_map(|c| c.iter()).fold(0.0f64, |m, v| m.max(v.norm()));
        let mut k = 0;
        for i in 0..g.len() {
            if self.at(i).iter().any(|v| v.norm() > tol * top) {
                let w = g.wavevector(i);
                k = k.max(w[0].abs()).max(w[1].abs()).max(w[2].abs());
            }
        }
        k
    }
}

impl SpectralField {
    /// Copy the modes onto another grid. Modes with |k_i| ≥ n/2 on the
    /// target must be below 1e-13 of the largest coefficient; they are dropped.
    pub fn resample(&self, target: &Grid) -> Result<SpectralField> {
        let g = &self.grid;
        let half = target.n() as i64 / 2;
        let top = self.comps.iter().flat_map(|c| c.iter()).fold(0.0f64, |m, v| m.max(v.norm()));
        let mut out = SpectralField::zeros(target);
        for i in 0..g.len() {
            let k = g.wavevector(i);
            let v = self.at(i);
            if k.iter().any(|c| c.abs() >= half) {
                if v.iter().any(|c| c.norm() > 1e-13 * top) {
                    return Err(KhmError::Precondition(format!(
                        "mode {k:?} does not fit on a {}³ grid",
                        target.n()
                    )));
                }
                continue;
            }
            let j = target.index(target.slot(k[0]), target.slot(k[1]), target.slot(k[2]));
            for c in 0..3 {
                out.comps[c][j] = v[c];
            }
        }
        Ok(out)
    }
}

/// Smallest admissible grid on which the lattice mean of a cubic form in
/// fields of band `band` is exact, capped at `n`.
pub fn cubic_average_n(band: i64, n: usize) -> usize {
    let m = (3 * band.max(0) as usize + 2).next_multiple_of(2).max(8);
    m.min(n)
}

/// Exact evaluation of band-limited fields at arbitrary points by summing
/// their Fourier series over the cube |k_i| ≤ K.
#[derive(Clone, Debug)]
pub struct PointEvaluator {
    k: i64,
    coef: Vec<Vec<[Complex64; 3]>>,
}

impl PointEvaluator {
    pub fn new(fields: &[&SpectralField], k: i64) -> Self {
        let side = (2 * k + 1) as usize;
        let coef = fields
            .iter()
            .map(|f| {
                let g = &f.grid;
                let mut c = Vec::with_capacity(side * side * side);
                for kz in -k..=k {
                    for ky in -k..=k {
                        for kx in -k..=k {
                            let i = g.index(g.slot(kx), g.slot(ky), g.slot(kz));
                            c.push(f.at(i));
                        }
                    }
                }
                c
            })
            .collect();
        PointEvaluator { k, coef }
    }

    pub fn field_count(&self) -> usize {
        self.coef.len()
    }

    /// Values of every field at `p`.
    pub fn eval(&self, p: Vec3) -> Vec<Vec3> {
        let side = (2 * self.k + 1) as usize;
        let axis = |s: f64| -> Vec<Complex64> {
            (-self.k..=self.k).map(|k| Complex64::from_polar(1.0, k as f64 * s)).collect()
        };
        let (ex, ey, ez) = (axis(p[0]), axis(p[1]), axis(p[2]));
        self.coef
            .iter()
            .map(|c| {
                let mut acc = [Complex64::default(); 3];
                for z in 0..side {
                    let mut ay = [Complex64::default(); 3];
                    for y in 0..side {
                        let row = &c[(z * side + y) * side..(z * side + y + 1) * side];
                        let mut ax = [Complex64::default(); 3];
                        for (e, v) in ex.iter().zip(row) {
                            for d in 0..3 {
                                ax[d] += e * v[d];
                            }
                        }
                        for d in 0..3 {
                            ay[d] += ey[y] * ax[d];
                        }
                    }
                    for d in 0..3 {
                        acc[d] += ez[z] * ay[d];
                    }
                }
                [acc[0].re, acc[1].re, acc[2].re]
            })
            .collect()
    }
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// The ABC Beltrami field (sin z + cos y, sin x + cos z, sin y + cos x).
pub fn abc_field(grid: &Grid) -> VectorField {
    VectorField::from_fn(grid, |[x, y, z]| {
        [z.sin() + y.cos(), x.sin() + z.cos(), y.sin() + x.cos()]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(grid: &Grid, kmax: i64, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = VectorField::zeros(grid);
        for _ in 0..12 {
            let k = [
                rng.random_range(-kmax..=kmax) as f64,
                rng.random_range(-kmax..=kmax) as f64,
                rng.random_range(-kmax..=kmax) as f64,
            ];
            let a: Vec3 = [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let ph: f64 = rng.random::<f64>() * 6.0;
            for i in 0..grid.len() {
                let p = grid.point(i);
                let s = (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin();
                for c in 0..3 {
                    f.comps[c][i] += a[c] * s;
                }
            }
        }
        f.transform()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(6).is_err());
        assert!(Grid::new(9).is_err());
        assert!(Grid::new(8).is_ok());
    }

    #[test]
    fn spacing_times_n_is_box() {
        for n in [8, 12, 32, 48, 64] {
            let g = Grid::new(n).unwrap();
            assert_eq!(g.spacing() * n as f64, BOX_LENGTH);
        }
    }

    #[test]
    fn constant_field_has_only_mean_mode() {
        let g = Grid::new(8).unwrap();
        let f = VectorField::from_fn(&g, |_| [1.0, 0.0, 0.0]).transform();
        assert!((f.comps[0][0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        for i in 1..g.len() {
            assert!(f.comps[0][i].norm() < 1e-15);
        }
    }

    #[test]
    fn sine_has_two_modes() {
        let g = Grid::new(16).unwrap();
        let f = VectorField::from_fn(&g, |p| [p[0].sin(), 0.0, 0.0]).transform();
        let plus = g.index(1, 0, 0);
        let minus = g.index(15, 0, 0);
        assert!((f.comps[0][plus] - Complex64::new(0.0, -0.5)).norm() < 1e-15);
        assert!((f.comps[0][minus] - Complex64::new(0.0, 0.5)).norm() < 1e-15);
        let others = (0..g.len())
            .filter(|&i| i != plus && i != minus)
            .map(|i| f.comps[0][i].norm())
            .fold(0.0, f64::max);
        assert!(others < 1e-15);
    }

    #[test]
    fn roundtrip_random() {
        let g = Grid::new(16).unwrap();
        let s = random_band(&g, 5, 3);
        let f = s.to_real();
        let back = f.transform().to_real();
        assert!(f.max_diff(&back) <= 1e-12 * f.max_abs());
        assert!(s.hermitian_defect() < 1e-14);
    }

    #[test]
    fn abc_is_curl_eigenfield() {
        let g = Grid::new(16).unwrap();
        let u = abc_field(&g);
        assert!(u.curl().max_diff(&u) < 1e-12);
        assert!(u.inverse_curl().unwrap().max_diff(&u) < 1e-12);
    }

    #[test]
    fn curl_grad_and_div_curl_vanish() {
        let g = Grid::new(16).unwrap();
        let f = random_band(&g, 5, 9);
        let scale = f.to_real().max_abs() * 5.0;
        let phi = SpectralScalar { grid: g.clone(), data: f.comps[0].clone() };
        let cg = phi.gradient().curl().to_real();
        assert!(cg.max_abs() < 1e-12 * scale * 5.0);
        let dc = f.curl().divergence().to_real();
        assert!(dc.max_abs() < 1e-12 * scale * 5.0);
    }

    #[test]
    fn inverse_curl_rejects_bad_input() {
        let g = Grid::new(8).unwrap();
        let c = VectorField::from_fn(&g, |p| [1.0 + p[1].sin(), 0.0, 0.0]);
        let err = c.inverse_curl().unwrap_err().to_string();
        assert!(err.contains("mean-free"), "{err}");
        let d = VectorField::from_fn(&g, |p| [p[0].sin(), 0.0, 0.0]);
        let err = d.inverse_curl().unwrap_err().to_string();
        assert!(err.contains("solenoidal"), "{err}");
    }

    #[test]
    fn inverse_curl_of_shear_mode() {
        let g = Grid::new(16).unwrap();
        let b = VectorField::from_fn(&g, |p| [0.0, 0.0, p[0].sin()]);
        let a = b.inverse_curl().unwrap();
        // A = (0, -cos x, 0) up to rounding
        let want = VectorField::from_fn(&g, |p| [0.0, -p[0].cos(), 0.0]);
        assert!(a.max_diff(&want) < 1e-13);
        assert!(a.curl().max_diff(&b) < 1e-13);
        assert!(a.mean().iter().all(|m| m.abs() < 1e-15));
    }

    #[test]
    fn leray_properties() {
        let g = Grid::new(16).unwrap();
        let f = random_band(&g, 5, 4);
        let p = f.leray();
        assert!(p.divergence_ratio() < 1e-14);
        let pp = p.leray();
        assert!(pp.to_real().max_diff(&p.to_real()) < 1e-13);
        // orthogonal to gradients
        let gphi = SpectralScalar { grid: g.clone(), data: random_band(&g, 4, 5).comps[1].clone() }.gradient();
        let ip = p.inner(&gphi);
        assert!(ip.abs() < 1e-13 * (p.mean_square() * gphi.mean_square()).sqrt());
        assert!(gphi.leray().to_real().max_abs() < 1e-13);
    }

    #[test]
    fn dealias_rule() {
        let g = Grid::new(32).unwrap();
        assert!(!g.keeps([15, 0, 0]));
        assert!(!g.keeps([11, 0, 0]));
        assert!(g.keeps([10, 0, 0]));
        assert!(g.keeps([1, 1, 1]));
        let g48 = Grid::new(48).unwrap();
        assert!(!g48.keeps([16, 0, 0]));
        assert!(g48.keeps([15, 0, 0]));
        let f = random_band(&g, 14, 2);
        let d = f.dealias();
        assert_eq!(d.dealias().comps, d.comps);
    }

    #[test]
    fn parseval() {
        let g = Grid::new(16).unwrap();
        let s = random_band(&g, 6, 8);
        let f = s.to_real();
        let lhs = f.inner(&f);
        assert!((lhs - s.mean_square()).abs() <= 1e-12 * lhs);
    }

    #[test]
    fn b_grad_b_identity() {
        // b·∇b = ½∇|b|² + J×b
        let g = Grid::new(24).unwrap();
        let bs = random_band(&g, 3, 6).leray();
        let b = bs.to_real();
        let grads: Vec<VectorField> = (0..3)
            .map(|c| {
                SpectralScalar { grid: g.clone(), data: bs.comps[c].clone() }
                    .gradient()
                    .to_real()
            })
            .collect();
        let mut lhs = VectorField::zeros(&g);
        for i in 0..g.len() {
            let bv = b.at(i);
            for c in 0..3 {
                lhs.comps[c][i] = dot(bv, grads[c].at(i));
            }
        }
        let half_b2 = ScalarField { grid: g.clone(), data: b.dot(&b).data.iter().map(|v| 0.5 * v).collect() };
        let rhs = half_b2.transform().gradient().to_real().axpy(1.0, &bs.curl().to_real().cross(&b));
        assert!(lhs.max_diff(&rhs) <= 1e-8 * lhs.max_abs());
    }

    #[test]
    fn shift_half_period() {
        let g = Grid::new(16).unwrap();
        let e = VectorField::from_fn(&g, |p| [p[0].sin(), 0.0, 0.0]).transform();
        let s = e.shifted([PI, 0.0, 0.0]).to_real();
        let want = VectorField::from_fn(&g, |p| [-p[0].sin(), 0.0, 0.0]);
        assert!(s.max_diff(&want) < 1e-14);
    }

    #[test]
    fn point_evaluator_matches_lattice_and_shift() {
        let g = Grid::new(16).unwrap();
        let s = random_band(&g, 3, 12);
        let f = s.to_real();
        let ev = PointEvaluator::new(&[&s], 3);
        for i in [0, 17, 300, 4000] {
            let v = ev.eval(g.point(i))[0];
            assert!(norm(sub(v, f.at(i))) < 1e-12);
        }
        let ell = [0.3, -0.7, 1.1];
        let sh = s.shifted(ell).to_real();
        let p = g.point(55);
        let v = ev.eval(add(p, ell))[0];
        assert!(norm(sub(v, sh.at(55))) < 1e-12);
    }
}
