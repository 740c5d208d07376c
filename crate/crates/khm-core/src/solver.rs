//! Pseudo-spectral EMHD and incompressible Hall-MHD on the periodic box.
//!
//! State is kept in Fourier space and truncated to the dealiased set after
//! every stage, so quadratic products are exact on the retained modes.
//! Time stepping is classical RK4 with explicit dissipation.

use crate::error::{KhmError, Result};
use crate::grid::snapshot::Snapshot;
use crate::grid::{abc_field, Grid, SpectralField, VectorField};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Emhd,
    HallMhd,
}

impl std::str::FromStr for Model {
    type Err = KhmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emhd" => Ok(Model::Emhd),
            "hallmhd" => Ok(Model::HallMhd),
            _ => Err(KhmError::Config(format!("unknown solver.model '{s}' (emhd, hallmhd)"))),
        }
    }
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Emhd => "emhd",
            Model::HallMhd => "hallmhd",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Params {
    pub model: Model,
    pub d_i: f64,
    pub nu: f64,
    pub eta: f64,
    /// Coefficient of -ν_h(-∆)² on every evolved field (extension, off by default).
    pub hyper_nu: f64,
    pub cfl: f64,
}

impl Params {
    pub fn inviscid(model: Model, d_i: f64) -> Self {
        Params { model, d_i, nu: 0.0, eta: 0.0, hyper_nu: 0.0, cfl: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("solver.d_i", self.d_i), ("solver.nu", self.nu), ("solver.eta", self.eta), ("solver.hyper_nu", self.hyper_nu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(KhmError::Config(format!("{k} = {v} must be a finite non-negative number")));
            }
        }
        if !(self.cfl > 0.0 && self.cfl.is_finite()) {
            return Err(KhmError::Config(format!("solver.cfl = {} must be positive", self.cfl)));
        }
        Ok(())
    }

    pub fn dissipative(&self) -> bool {
        self.nu > 0.0 || self.eta > 0.0 || self.hyper_nu > 0.0
    }
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub t: f64,
    pub b: SpectralField,
    /// Velocity; absent for EMHD.
    pub u: Option<SpectralField>,
    pub params: Params,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct InvariantRow {
    pub t: f64,
    pub energy: f64,
    pub magnetic_helicity: f64,
    pub generalized_helicity: f64,
    pub cross_helicity: f64,
    pub eps_e: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InvariantLedger {
    pub rows: Vec<InvariantRow>,
}

impl InvariantLedger {
    /// max_t |q(t) - q(0)| / |q(0)| for the chosen column.
    pub fn relative_drift(&self, column: impl Fn(&InvariantRow) -> f64) -> f64 {
        let Some(first) = self.rows.first() else { return 0.0 };
        let q0 = column(first);
        let d = self.rows.iter().map(|r| (column(r) - q0).abs()).fold(0.0, f64::max);
        if q0 == 0.0 {
            d
        } else {
            d / q0.abs()
        }
    }

    /// Time average of ε_E over rows with t in [t0, t1].
    pub fn mean_eps(&self, t0: f64, t1: f64) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.t >= t0 && r.t <= t1).map(|r| r.eps_e).collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> std::io::Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(w);
        writeln!(w, "t,E,H_M,H_G,H_C,eps_E")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{:e},{:e}",
                r.t, r.energy, r.magnetic_helicity, r.generalized_helicity, r.cross_helicity, r.eps_e
            )?;
        }
        w.flush()
    }

    /// Inverse of [`InvariantLedger::write_csv`].
    pub fn read_csv(r: impl std::io::Read) -> Result<InvariantLedger> {
        use std::io::BufRead;
        let mut rows = Vec::new();
        for (i, line) in std::io::BufReader::new(r).lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "t,E,H_M,H_G,H_C,eps_E" {
                    return Err(KhmError::Format(format!("unexpected ledger header '{line}'")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| KhmError::Format(format!("ledger line {}: {e}", i + 1)))?;
            if v.len() != 6 {
                return Err(KhmError::Format(format!("ledger line {} has {} columns", i + 1, v.len())));
            }
            rows.push(InvariantRow {
                t: v[0],
                energy: v[1],
                magnetic_helicity: v[2],
                generalized_helicity: v[3],
                cross_helicity: v[4],
                eps_e: v[5],
            });
        }
        Ok(InvariantLedger { rows })
    }
}

fn dissipate(f: &SpectralField, nu: f64, hyper: f64) -> SpectralField {
    f.filtered(|k| {
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        -(nu * k2 + hyper * k2 * k2)
    })
}

/// -d_I ∇×[J×b] + η∆b for a spectral b.
pub fn rhs_emhd_spectral(b: &SpectralField, d_i: f64, eta: f64, hyper: f64) -> SpectralField {
    let mut out = dissipate(b, eta, hyper);
    if d_i != 0.0 {
        let br = b.to_real();
        let jr = b.curl().to_real();
        let hall = jr.cross(&br).transform().dealias().curl();
        out = out.axpy(-d_i, &hall);
    }
    out
}

/// (du/dt, db/dt) for Hall-MHD with the pressure removed by projection.
pub fn rhs_hallmhd_spectral(u: &SpectralField, b: &SpectralField, p: &Params) -> (SpectralField, SpectralField) {
    let ur = u.to_real();
    let br = b.to_real();
    let wr = u.curl().to_real();
    let jr = b.curl().to_real();
    let force = ur.cross(&wr).axpy(1.0, &jr.cross(&br));
    let du = force.transform().dealias().leray().axpy(1.0, &dissipate(u, p.nu, p.hyper_nu));
    let drift = ur.axpy(-p.d_i, &jr);
    let db = drift.cross(&br).transform().dealias().curl().axpy(1.0, &dissipate(b, p.eta, p.hyper_nu));
    (du, db)
}

/// Real-space wrapper: -d_I ∇×[J×b] + η∆b.
pub fn rhs_emhd(b: &VectorField, d_i: f64, eta: f64) -> VectorField {
    rhs_emhd_spectral(&b.transform().dealias(), d_i, eta, 0.0).to_real()
}

/// Real-space wrapper for the Hall-MHD right-hand side.
pub fn rhs_hallmhd(u: &VectorField, b: &VectorField, d_i: f64, nu: f64, eta: f64) -> (VectorField, VectorField) {
    let p = Params { model: Model::HallMhd, d_i, nu, eta, hyper_nu: 0.0, cfl: 1.0 };
    let (du, db) = rhs_hallmhd_spectral(&u.transform().dealias(), &b.transform().dealias(), &p);
    (du.to_real(), db.to_real())
}

impl SolverState {
    pub fn new(params: Params, b: &VectorField, u: Option<&VectorField>) -> Result<Self> {
        params.validate()?;
        let bs = b.transform().dealias();
        let us = match (params.model, u) {
            (Model::Emhd, _) => None,
            (Model::HallMhd, Some(u)) => {
                crate::grid::check_grid(&b.grid, &u.grid)?;
                Some(u.transform().dealias())
            }
            (Model::HallMhd, None) => Some(SpectralField::zeros(&b.grid)),
        };
        for (name, f) in [("b", Some(&bs)), ("u", us.as_ref())] {
            if let Some(f) = f {
                let r = f.divergence_ratio();
                if r > 1e-10 {
                    return Err(KhmError::Precondition(format!("{name} is not solenoidal (divergence ratio {r:.2e})")));
                }
            }
        }
        Ok(SolverState { t: 0.0, b: bs, u: us, params })
    }

    pub fn grid(&self) -> &Grid {
        &self.b.grid
    }

    pub fn b_real(&self) -> VectorField {
        self.b.to_real()
    }

    pub fn u_real(&self) -> Option<VectorField> {
        self.u.as_ref().map(|u| u.to_real())
    }

    /// Largest admissible step: advective, Hall (whistler) and diffusive limits.
    pub fn cfl_limit(&self) -> f64 {
        let p = &self.params;
        let dx = self.grid().spacing();
        let bmax = self.b.to_real().max_norm();
        let umax = self.u.as_ref().map(|u| u.to_real().max_norm()).unwrap_or(0.0);
        let kmax = self.grid().kmax_dealiased() as f64 * 3f64.sqrt();
        let mut lim = f64::INFINITY;
        if umax + bmax > 0.0 && p.model == Model::HallMhd {
            lim = lim.min(dx / (umax + bmax));
        }
        if p.d_i > 0.0 && bmax > 0.0 {
            lim = lim.min(dx * dx / (p.d_i * bmax));
        }
        let visc = p.nu.max(p.eta) * kmax * kmax + p.hyper_nu * kmax.powi(4);
        if visc > 0.0 {
            lim = lim.min(2.5 / visc);
        }
        p.cfl * lim
    }

    fn rhs(&self, u: Option<&SpectralField>, b: &SpectralField) -> (Option<SpectralField>, SpectralField) {
        let p = &self.params;
        match (p.model, u) {
            (Model::HallMhd, Some(u)) => {
                let (du, db) = rhs_hallmhd_spectral(u, b, p);
                (Some(du), db)
            }
            _ => (None, rhs_emhd_spectral(b, p.d_i, p.eta, p.hyper_nu)),
        }
    }

    pub fn step_rk4(&mut self, dt: f64) -> Result<()> {
        let limit = self.cfl_limit();
        if !(dt > 0.0) || dt > limit {
            return Err(KhmError::Cfl { t: self.t, dt, limit });
        }
        let add = |x: &Option<SpectralField>, a: f64, y: &Option<SpectralField>| match (x, y) {
            (Some(x), Some(y)) => Some(x.axpy(a, y)),
            _ => None,
        };
        let (u0, b0) = (self.u.clone(), self.b.clone());
        let (k1u, k1b) = self.rhs(u0.as_ref(), &b0);
        let (u1, b1) = (add(&u0, 0.5 * dt, &k1u), b0.axpy(0.5 * dt, &k1b));
        let (k2u, k2b) = self.rhs(u1.as_ref(), &b1);
        let (u2, b2) = (add(&u0, 0.5 * dt, &k2u), b0.axpy(0.5 * dt, &k2b));
        let (k3u, k3b) = self.rhs(u2.as_ref(), &b2);
        let (u3, b3) = (add(&u0, dt, &k3u), b0.axpy(dt, &k3b));
        let (k4u, k4b) = self.rhs(u3.as_ref(), &b3);
        let w = dt / 6.0;
        let combine = |x0: &SpectralField, k: [&SpectralField; 4]| {
            x0.axpy(w, k[0]).axpy(2.0 * w, k[1]).axpy(2.0 * w, k[2]).axpy(w, k[3])
        };
        let b = combine(&b0, [&k1b, &k2b, &k3b, &k4b]);
        let u = match (&u0, &k1u, &k2u, &k3u, &k4u) {
            (Some(u0), Some(a), Some(b), Some(c), Some(d)) => Some(combine(u0, [a, b, c, d])),
            _ => None,
        };
        let t = self.t + dt;
        let bad = |f: &SpectralField| f.comps.iter().flat_map(|c| c.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite());
        if bad(&b) || u.as_ref().is_some_and(bad) {
            return Err(KhmError::NonFinite(t));
        }
        self.b = b;
        self.u = u;
        self.t = t;
        Ok(())
    }

    /// Volume-mean invariants at the current time.
    pub fn invariants(&self) -> Result<InvariantRow> {
        let p = &self.params;
        let a = self.b.inverse_curl()?;
        let hm = a.inner(&self.b);
        let bb = self.b.mean_square();
        let grid = self.grid();
        let k2sum = |f: &SpectralField, pow: i32| -> f64 {
            let mut s = 0.0;
            for i in 0..grid.len() {
                let k = grid.dk(i);
                let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).powi(pow);
                for c in 0..3 {
                    s += k2 * f.comps[c][i].norm_sqr();
                }
            }
            s
        };
        let mut eps = p.eta * k2sum(&self.b, 1) + p.hyper_nu * k2sum(&self.b, 2);
        let row = match &self.u {
            Some(u) => {
                eps += p.nu * k2sum(u, 1) + p.hyper_nu * k2sum(u, 2);
                let w = u.curl();
                let ad = a.axpy(p.d_i, u);
                let bd = self.b.axpy(p.d_i, &w);
                InvariantRow {
                    t: self.t,
                    energy: 0.5 * (u.mean_square() + bb),
                    magnetic_helicity: hm,
                    generalized_helicity: ad.inner(&bd),
                    cross_helicity: u.inner(&self.b),
                    eps_e: eps,
                }
            }
            None => InvariantRow {
                t: self.t,
                energy: 0.5 * bb,
                magnetic_helicity: hm,
                generalized_helicity: hm,
                cross_helicity: 0.0,
                eps_e: eps,
            },
        };
        Ok(row)
    }

    pub fn to_snapshot(&self) -> Snapshot {
        let p = &self.params;
        let mut fields = vec![("b".to_string(), self.b_real())];
        if let Some(u) = self.u_real() {
            fields.push(("u".to_string(), u));
        }
        Snapshot {
            time: self.t,
            params: vec![
                ("model".into(), if p.model == Model::Emhd { 0.0 } else { 1.0 }),
                ("d_i".into(), p.d_i),
                ("nu".into(), p.nu),
                ("eta".into(), p.eta),
                ("hyper_nu".into(), p.hyper_nu),
            ],
            fields,
        }
    }

    pub fn from_snapshot(s: &Snapshot, cfl: f64) -> Result<Self> {
        let get = |k: &str| s.param(k).ok_or_else(|| KhmError::Format(format!("snapshot lacks parameter '{k}'")));
        let model = if get("model")? == 0.0 { Model::Emhd } else { Model::HallMhd };
        let params = Params { model, d_i: get("d_i")?, nu: get("nu")?, eta: get("eta")?, hyper_nu: get("hyper_nu")?, cfl };
        let b = s.field("b").ok_or_else(|| KhmError::Format("snapshot lacks field 'b'".into()))?;
        let mut st = SolverState::new(params, b, s.field("u"))?;
        st.t = s.time;
        Ok(st)
    }
}

/// Integrate to `t_end` with fixed `dt`, recording invariants every step and
/// handing a snapshot to `emit` at t = 0 and every `interval` thereafter.
pub fn run_with(
    state: &mut SolverState,
    t_end: f64,
    dt: f64,
    interval: f64,
    mut emit: impl FnMut(&SolverState) -> Result<()>,
) -> Result<InvariantLedger> {
    if !(dt > 0.0) {
        return Err(KhmError::Config(format!("solver.dt = {dt} must be positive")));
    }
    let steps = ((t_end - state.t) / dt).round().max(0.0) as usize;
    let every = if interval > 0.0 { ((interval / dt).round() as usize).max(1) } else { usize::MAX };
    let mut ledger = InvariantLedger::default();
    ledger.rows.push(state.invariants()?);
    emit(state)?;
    for s in 1..=steps {
        state.step_rk4(dt)?;
        ledger.rows.push(state.invariants()?);
        if s % every == 0 || (s == steps && every != usize::MAX) {
            emit(state)?;
        }
    }
    Ok(ledger)
}

pub fn run(state: &mut SolverState, t_end: f64, dt: f64, interval: f64) -> Result<(Vec<Snapshot>, InvariantLedger)> {
    let mut snaps = Vec::new();
    let ledger = run_with(state, t_end, dt, interval, |s| {
        snaps.push(s.to_snapshot());
        Ok(())
    })?;
    Ok((snaps, ledger))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Abc,
    RandomLowk,
    OrszagTang3d,
}

impl std::str::FromStr for InitialKind {
    type Err = KhmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abc" => Ok(InitialKind::Abc),
            "random_lowk" => Ok(InitialKind::RandomLowk),
            "orszag_tang_3d" => Ok(InitialKind::OrszagTang3d),
            _ => Err(KhmError::Config(format!("unknown ic.kind '{s}' (abc, random_lowk, orszag_tang_3d)"))),
        }
    }
}

/// Seeded solenoidal, mean-free field with modes 0 < |k| ≤ kmax and rms `amplitude`.
pub fn random_lowk(grid: &Grid, seed: u64, kmax: f64, amplitude: f64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SpectralField::zeros(grid);
    let kc = (kmax.floor() as i64).min(grid.kmax_dealiased());
    for kz in -kc..=kc {
        for ky in -kc..=kc {
            for kx in -kc..=kc {
                let k2 = (kx * kx + ky * ky + kz * kz) as f64;
                if k2 == 0.0 || k2 > kmax * kmax || (kz, ky, kx) < (-kz, -ky, -kx) {
                    continue;
                }
                let i = grid.index(grid.slot(kx), grid.slot(ky), grid.slot(kz));
                let j = grid.mirror(i);
                for c in 0..3 {
                    let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    s.comps[c][i] = v;
                    s.comps[c][j] = v.conj();
                }
            }
        }
    }
    let s = s.leray();
    let rms = s.mean_square().sqrt();
    if rms == 0.0 || amplitude == 0.0 {
        return VectorField::zeros(grid);
    }
    s.scaled(amplitude / rms).to_real()
}

/// (b, u) for the requested kind. u is None for EMHD.
pub fn make_initial_condition(
    grid: &Grid,
    kind: InitialKind,
    model: Model,
    seed: u64,
    amplitude: f64,
    kmax: f64,
) -> Result<(VectorField, Option<VectorField>)> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(KhmError::Config(format!("ic.amplitude = {amplitude} must be non-negative")));
    }
    let hall = model == Model::HallMhd;
    let (b, u) = match kind {
        InitialKind::Abc => (abc_field(grid).scaled(amplitude), hall.then(|| VectorField::zeros(grid))),
        InitialKind::RandomLowk => {
            if !(kmax >= 1.0) {
                return Err(KhmError::Config(format!("ic.kmax = {kmax} must be at least 1")));
            }
            let b = random_lowk(grid, seed, kmax, amplitude);
            let u = hall.then(|| random_lowk(grid, seed.wrapping_add(0x9e37_79b9_7f4a_7c15), kmax, amplitude));
            (b, u)
        }
        InitialKind::OrszagTang3d => {
            let b = VectorField::from_fn(grid, |[x, y, z]| {
                [-2.0 * (2.0 * y).sin() + z.sin(), 2.0 * x.sin() + z.sin(), x.sin() + y.sin()]
            })
            .scaled(amplitude);
            let u = hall.then(|| {
                VectorField::from_fn(grid, |[x, y, _]| [-2.0 * y.sin(), 2.0 * x.sin(), 0.0]).scaled(amplitude)
            });
            (b, u)
        }
    };
    Ok((b, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    #[test]
    fn abc_is_steady_for_emhd() {
        let g = Grid::new(16).unwrap();
        let b = abc_field(&g);
        assert!(rhs_emhd(&b, 1.0, 0.0).max_abs() < 1e-12);
        let visc = rhs_emhd(&b, 1.0, 0.1);
        assert!(visc.max_diff(&b.scaled(-0.1)) < 1e-12);
        let mut st = SolverState::new(Params::inviscid(Model::Emhd, 1.0), &b, None).unwrap();
        for _ in 0..100 {
            st.step_rk4(1e-3).unwrap();
        }
        assert!(st.b_real().max_diff(&b) < 1e-10);
    }

    #[test]
    fn hall_term_does_no_work() {
        let g = Grid::new(16).unwrap();
        let b = random_lowk(&g, 3, 3.0, 1.0);
        let r = rhs_emhd(&b, 1.0, 0.0);
        assert!(r.inner(&b).abs() < 1e-12 * r.max_abs() * b.max_abs());
        assert!(r.transform().divergence_ratio() < 1e-12);
        let zero = rhs_emhd(&b, 0.0, 0.2);
        assert!(zero.max_diff(&b.transform().laplacian().scaled(0.2).to_real()) < 1e-12);
    }

    #[test]
    fn alfvenic_state_is_steady_without_hall() {
        let g = Grid::new(16).unwrap();
        let b = random_lowk(&g, 4, 3.0, 1.0);
        let (du, db) = rhs_hallmhd(&b, &b, 0.0, 0.0, 0.0);
        assert!(du.max_abs() < 1e-12, "{}", du.max_abs());
        assert!(db.max_abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_isolates_terms() {
        let g = Grid::new(16).unwrap();
        let b = random_lowk(&g, 5, 3.0, 1.0);
        let u = VectorField::zeros(&g);
        let (du, db) = rhs_hallmhd(&u, &b, 0.7, 0.0, 0.0);
        assert!(db.max_diff(&rhs_emhd(&b, 0.7, 0.0)) < 1e-12);
        let j = b.curl();
        let want = j.cross(&b).transform().dealias().leray().to_real();
        assert!(du.max_diff(&want) < 1e-12);
    }

    #[test]
    fn instantaneous_energy_balance() {
        let g = Grid::new(16).unwrap();
        let b = random_lowk(&g, 6, 3.0, 1.0);
        let u = random_lowk(&g, 7, 3.0, 1.0);
        let (nu, eta) = (0.03, 0.05);
        let (du, db) = rhs_hallmhd(&u, &b, 0.5, nu, eta);
        let us = u.transform();
        let grad2: f64 = (0..3).map(|c| us.comps[c].iter().enumerate().map(|(i, v)| {
            let k = g.dk(i);
            (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * v.norm_sqr()
        }).sum::<f64>()).sum();
        let j = b.curl();
        let bal = u.inner(&du) + b.inner(&db) + nu * grad2 + eta * j.inner(&j);
        let scale = nu * grad2 + eta * j.inner(&j);
        assert!(bal.abs() <= 1e-9 * scale, "{bal}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let g = Grid::new(16).unwrap();
        let b = random_lowk(&g, 8, 2.0, 0.5);
        let run_to = |dt: f64| {
            let mut st = SolverState::new(Params::inviscid(Model::Emhd, 1.0), &b, None).unwrap();
            let n = (0.2 / dt).round() as usize;
            for _ in 0..n {
                st.step_rk4(dt).unwrap();
            }
            st.b_real()
        };
        let r = run_to(0.0025);
        let e1 = run_to(0.02).max_diff(&r);
        let e2 = run_to(0.01).max_diff(&r);
        let ratio = e1 / e2;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn cfl_and_nan_guards() {
        let g = Grid::new(16).unwrap();
        let b = random_lowk(&g, 1, 2.0, 1.0);
        let mut st = SolverState::new(Params::inviscid(Model::Emhd, 1.0), &b, None).unwrap();
        assert!(matches!(st.step_rk4(1.0), Err(KhmError::Cfl { .. })));
        let mut bad = st.clone();
        bad.b.comps[0][1] = Complex64::new(f64::NAN, 0.0);
        assert!(bad.step_rk4(1e-4).is_err());
    }

    #[test]
    fn initial_conditions() {
        let g = Grid::new(16).unwrap();
        let (b, u) = make_initial_condition(&g, InitialKind::RandomLowk, Model::HallMhd, 1, 1.0, 3.0).unwrap();
        let u = u.unwrap();
        for f in [&b, &u] {
            assert!(f.transform().divergence_ratio() <= 1e-12);
            assert!(f.mean().iter().all(|m| m.abs() < 1e-14));
            assert!((f.inner(f) - 1.0).abs() < 1e-12);
        }
        let (b2, _) = make_initial_condition(&g, InitialKind::RandomLowk, Model::HallMhd, 1, 1.0, 3.0).unwrap();
        let digest = |f: &VectorField| {
            let mut h = Sha256::new();
            for c in &f.comps {
                for v in c {
                    h.update(v.to_le_bytes());
                }
            }
            h.finalize().to_vec()
        };
        assert_eq!(digest(&b), digest(&b2));
        let (z, zu) = make_initial_condition(&g, InitialKind::RandomLowk, Model::HallMhd, 1, 0.0, 3.0).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        assert_eq!(zu.unwrap().max_abs(), 0.0);
        let (ot, otu) = make_initial_condition(&g, InitialKind::OrszagTang3d, Model::HallMhd, 0, 1.0, 0.0).unwrap();
        assert!(ot.transform().divergence_ratio() < 1e-12 && otu.unwrap().transform().divergence_ratio() < 1e-12);
        let (abc, none) = make_initial_condition(&g, InitialKind::Abc, Model::Emhd, 0, 1.0, 0.0).unwrap();
        assert!(none.is_none());
        assert!(abc.max_diff(&abc_field(&g)) == 0.0);
        assert!("vortex".parse::<InitialKind>().is_err());
    }

    #[test]
    fn snapshot_roundtrip_restores_state() {
        let g = Grid::new(16).unwrap();
        let (b, u) = make_initial_condition(&g, InitialKind::RandomLowk, Model::HallMhd, 2, 1.0, 3.0).unwrap();
        let p = Params { model: Model::HallMhd, d_i: 0.3, nu: 0.01, eta: 0.02, hyper_nu: 0.0, cfl: 0.5 };
        let st = SolverState::new(p, &b, u.as_ref()).unwrap();
        let back = SolverState::from_snapshot(&st.to_snapshot(), 0.5).unwrap();
        assert_eq!(back.params.d_i, 0.3);
        assert!(back.b.axpy(-1.0, &st.b).mean_square() < 1e-28);
    }

    #[test]
    fn ledger_csv_roundtrip() {
        let led = InvariantLedger {
            rows: vec![
                InvariantRow { t: 0.0, energy: 1.5, magnetic_helicity: -0.25, generalized_helicity: 3e-17, cross_helicity: 0.1, eps_e: 0.0 },
                InvariantRow { t: 0.125, energy: 1.499, magnetic_helicity: -0.2500001, generalized_helicity: 1.0 / 3.0, cross_helicity: 0.2, eps_e: 1e-3 },
            ],
        };
        let mut buf = Vec::new();
        led.write_csv(&mut buf).unwrap();
        let back = InvariantLedger::read_csv(&buf[..]).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1].generalized_helicity, 1.0 / 3.0);
        assert_eq!(back.rows[1].magnetic_helicity, -0.2500001);
        assert!(InvariantLedger::read_csv(&b"t,E\n"[..]).is_err());
    }
}
