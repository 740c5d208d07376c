//! Third-order structure-function estimators, the ℓ-integrated dissipation
//! functionals, the space-integrated KHM audits, the coarea constants and the
//! separation scan.
//!
//! Every lattice mean of a cubic form is taken on the smallest grid where it
//! is exact for the band of the input fields.

use crate::error::{KhmError, Result};
use crate::grid::{cross, cubic_average_n, dot, scale, Grid, SpectralField, Vec3};
use crate::identities::{lemma_integrand, LemmaForm};
use crate::increments::{check_separation, trans, DirectionQuadrature};
use crate::mollify::{Mollifier, RadialKernel, Weight};
use crate::par;
use crate::solver::{InvariantLedger, Model, SolverState};
use serde::Serialize;

/// Spectral fields prepared for estimation: b, J = ∇×b and, for Hall-MHD,
/// u and ω = ∇×u, all on the averaging grid.
#[derive(Clone, Debug)]
pub struct LawFields {
    pub b: SpectralField,
    pub j: SpectralField,
    pub u: Option<SpectralField>,
    pub w: Option<SpectralField>,
    pub d_i: f64,
    /// Spacing of the grid the fields were sampled on; separations below it are rejected.
    pub floor: f64,
    pub source: Grid,
    /// Spatial mean over every `stride`-th lattice point per axis; 1 uses all.
    pub stride: usize,
}

impl LawFields {
    pub fn new(b: &SpectralField, u: Option<&SpectralField>, d_i: f64) -> Result<Self> {
        if let Some(u) = u {
            crate::grid::check_grid(&b.grid, &u.grid)?;
        }
        let j = b.curl();
        let w = u.map(|u| u.curl());
        let mut band = b.band(1e-13).max(j.band(1e-13));
        if let (Some(u), Some(w)) = (u, &w) {
            band = band.max(u.band(1e-13)).max(w.band(1e-13));
        }
        let n = cubic_average_n(band, b.grid.n());
        let g = Grid::new(n)?;
        let rs = |f: &SpectralField| f.resample(&g);
        Ok(LawFields {
            b: rs(b)?,
            j: rs(&j)?,
            u: u.map(rs).transpose()?,
            w: w.as_ref().map(rs).transpose()?,
            d_i,
            floor: b.grid.spacing(),
            source: b.grid.clone(),
            stride: 1,
        })
    }

    pub fn from_state(s: &SolverState) -> Result<Self> {
        LawFields::new(&s.b, s.u.as_ref(), s.params.d_i)
    }

    pub fn averaging_grid(&self) -> &Grid {
        &self.b.grid
    }

    /// Subsampled spatial means for quick looks. The cubic means are then no
    /// longer exact.
    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 || self.b.grid.n() % stride != 0 {
            return Err(KhmError::Config(format!(
                "stride {stride} must divide the averaging grid size {}",
                self.b.grid.n()
            )));
        }
        self.stride = stride;
        Ok(self)
    }

    /// Sum over the half direction set (weights doubled) of the lattice mean
    /// of `f` evaluated on the increments of every field at ℓ = r n̂.
    fn ell_sums<const K: usize, F>(&self, points: &[(Vec3, f64, f64)], f: F) -> [f64; K]
    where
        F: Fn(&Incr, Vec3, f64) -> [f64; K] + Sync + Send,
    {
        let mut specs: Vec<&SpectralField> = vec![&self.b, &self.j];
        if let (Some(u), Some(w)) = (&self.u, &self.w) {
            specs.push(u);
            specs.push(w);
        }
        let g = self.averaging_grid();
        let bases: Vec<_> = specs.iter().map(|s| s.to_real()).collect();
        let base_refs: Vec<_> = bases.iter().collect();
        let m = g.n() / self.stride;
        let sites: Vec<usize> = (0..m * m * m)
            .map(|i| g.index(self.stride * (i % m), self.stride * ((i / m) % m), self.stride * (i / (m * m))))
            .collect();
        let npts = sites.len() as f64;
        par::sum::<K, _>(points.len(), |p| {
            let (n, r, weight) = points[p];
            let inc = crate::increments::increments(&specs, &base_refs, scale(n, r));
            let mut acc = [0.0; K];
            for &i in &sites {
                let zero = [0.0; 3];
                let x = Incr {
                    b: inc[0].at(i),
                    j: inc[1].at(i),
                    u: inc.get(2).map_or(zero, |f| f.at(i)),
                    w: inc.get(3).map_or(zero, |f| f.at(i)),
                };
                let v = f(&x, n, r);
                for k in 0..K {
                    acc[k] += v[k];
                }
            }
            acc.map(|a| 2.0 * weight * a / npts)
        })
    }
}

/// Increments of b, J, u, ω at one lattice point (u, ω zero for EMHD).
#[derive(Clone, Copy, Debug)]
pub struct Incr {
    pub b: Vec3,
    pub j: Vec3,
    pub u: Vec3,
    pub w: Vec3,
}

/// Structure-function values at one separation.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct SValues {
    pub s_el_bar: f64,
    pub s_et_bar: f64,
    pub s_e_bar: f64,
    pub s_el: f64,
    pub s_et: f64,
    pub s_ml: f64,
    pub s_mt: f64,
    pub s_hl: f64,
    /// Energy-flux estimate read off the longitudinal balance before the two
    /// routes are combined; +ε in the inertial range.
    pub flux_l: f64,
    /// Same for the transverse balance.
    pub flux_t: f64,
}

// Integrand slots, each to be divided by λ.
const N_S: usize = 10;

#[inline]
fn s_integrands(x: &Incr, n: Vec3) -> [f64; N_S] {
    let (b, j, u, w) = (x.b, x.j, x.u, x.w);
    let (nb, nj, nu, nw) = (dot(n, b), dot(n, j), dot(n, u), dot(n, w));
    let (bt, jt, ut) = (trans(b, n), trans(j, n), trans(u, n));
    let bb = dot(b, b);
    let uu = dot(u, u);
    let btbt = dot(bt, bt);
    let ut2 = dot(ut, ut);
    // n·δb(δb_L·δJ_L) - ½ n·δJ |δb_L|²
    let el_bar = nb * nb * nj - 0.5 * nj * nb * nb;
    // n·δb(δb_T·δJ_T) - ½ n·δJ |δb_T|²
    let et_bar = nb * dot(bt, jt) - 0.5 * nj * btbt;
    // n·[δb × (δJ × δb)]
    let e_bar = dot(n, cross(b, cross(j, b)));
    let ml = nb * nb * nb;
    let mt = nb * btbt;
    let vel_l = nu * (nu * nu + nb * nb) - 2.0 * nb * nu * nb;
    let vel_t = nu * (ut2 + btbt) - 2.0 * nb * dot(ut, bt);
    let mix = nb * dot(b, u) - nu * bb;
    let shear = nu * (btbt - ut2);
    let hl = nu * nu * nw - 0.5 * nw * nu * nu + 2.0 * nu * nb * nu - nb * nu * nu - 0.4 * nw * uu
        + 0.4 * nu * dot(u, w)
        - 0.8 * nb * uu
        + 0.8 * nu * dot(u, b);
    [el_bar, et_bar, e_bar, ml, mt, vel_l, vel_t, mix, hl, shear]
}

fn assemble(raw: [f64; N_S], d: f64, lambda: f64) -> SValues {
    let r = raw.map(|v| v / lambda);
    let (el_bar, et_bar, e_bar) = (d * r[0], d * r[1], d * r[2]);
    SValues {
        s_el_bar: el_bar,
        s_et_bar: et_bar,
        s_e_bar: e_bar,
        s_el: r[5] + 0.8 * r[7] + el_bar - 0.4 * e_bar,
        s_et: r[6] - 0.8 * r[7] + et_bar + 0.4 * e_bar,
        s_ml: d * r[3],
        s_mt: d * r[4],
        s_hl: r[8],
        flux_l: -2.25 * (r[5] + el_bar) - 1.5 * r[9] + 1.5 * (et_bar + e_bar),
        flux_t: -1.875 * (r[6] + 0.8 * r[7] + et_bar + 0.4 * e_bar),
    }
}

fn half_points(quad: &DirectionQuadrature, r: f64) -> Vec<(Vec3, f64, f64)> {
    quad.half().map(|(n, q)| (n, r, q)).collect()
}

/// All structure functions at separation λ.
pub fn structure_functions(f: &LawFields, lambda: f64, quad: &DirectionQuadrature) -> Result<SValues> {
    check_separation(lambda, f.floor)?;
    let raw = f.ell_sums::<N_S, _>(&half_points(quad, lambda), |x, n, _| s_integrands(x, n));
    Ok(assemble(raw, f.d_i, lambda))
}

fn emhd_fields(b: &SpectralField, d_i: f64) -> Result<LawFields> {
    LawFields::new(b, None, d_i)
}

/// S_EL(b, J, λ) = S̄_EL - (2/5) S̄_E, carrying d_I.
pub fn s_el_energy(b: &SpectralField, d_i: f64, lambda: f64, quad: &DirectionQuadrature) -> Result<f64> {
    Ok(structure_functions(&emhd_fields(b, d_i)?, lambda, quad)?.s_el)
}

/// S_ET(b, J, λ) = S̄_ET + (2/5) S̄_E, carrying d_I.
pub fn s_et_energy(b: &SpectralField, d_i: f64, lambda: f64, quad: &DirectionQuadrature) -> Result<f64> {
    Ok(structure_functions(&emhd_fields(b, d_i)?, lambda, quad)?.s_et)
}

pub fn s_e_bar(b: &SpectralField, d_i: f64, lambda: f64, quad: &DirectionQuadrature) -> Result<f64> {
    Ok(structure_functions(&emhd_fields(b, d_i)?, lambda, quad)?.s_e_bar)
}

/// (S_EL, S_ET) for Hall-MHD: velocity–magnetic block plus the d_I-weighted b–J block.
pub fn s_energy_hallmhd(
    u: &SpectralField,
    b: &SpectralField,
    d_i: f64,
    lambda: f64,
    quad: &DirectionQuadrature,
) -> Result<(f64, f64)> {
    let v = structure_functions(&LawFields::new(b, Some(u), d_i)?, lambda, quad)?;
    Ok((v.s_el, v.s_et))
}

pub fn s_ml(b: &SpectralField, d_i: f64, lambda: f64, quad: &DirectionQuadrature) -> Result<f64> {
    Ok(structure_functions(&emhd_fields(b, d_i)?, lambda, quad)?.s_ml)
}

pub fn s_mt(b: &SpectralField, d_i: f64, lambda: f64, quad: &DirectionQuadrature) -> Result<f64> {
    Ok(structure_functions(&emhd_fields(b, d_i)?, lambda, quad)?.s_mt)
}

/// Eight-term generalized-helicity combination with v = u, h = b.
pub fn s_hl_generalized(u: &SpectralField, b: &SpectralField, lambda: f64, quad: &DirectionQuadrature) -> Result<f64> {
    Ok(structure_functions(&LawFields::new(b, Some(u), 1.0)?, lambda, quad)?.s_hl)
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct DissipationEstimate {
    pub epsilon_kernel: f64,
    pub d_el: f64,
    pub d_et: f64,
    pub d_ml: f64,
    pub d_mt: f64,
    pub eps_e_measured: Option<f64>,
}

/// Space-averaged D^ε functionals on the mollifier's node set.
pub fn dissipation(f: &LawFields, moll: &Mollifier) -> Result<DissipationEstimate> {
    moll.check_resolvable(&f.source)?;
    let kern = &moll.kernel;
    let points: Vec<(Vec3, f64, f64)> = moll
        .nodes()
        .iter()
        .filter(|nd| nd.w != 0.0)
        .map(|nd| (nd.n, nd.r, nd.w))
        .collect();
    let hall = f.u.is_some();
    let s = f.ell_sums::<12, _>(&points, |x, n, r| {
        let (phi, dphi) = (kern.phi_eps(r), kern.dphi_eps(r));
        let li = |form, e, g| lemma_integrand(form, e, g, n, r, phi, dphi);
        let mut v = [0.0; 12];
        v[0] = li(LemmaForm::LongitudinalCross, x.b, x.j);
        v[1] = li(LemmaForm::LongitudinalSquare, x.j, x.b);
        v[2] = li(LemmaForm::TransverseCross, x.b, x.j);
        v[3] = li(LemmaForm::TransverseSquare, x.j, x.b);
        v[4] = li(LemmaForm::LongitudinalSquare, x.b, x.b);
        v[5] = li(LemmaForm::TransverseSquare, x.b, x.b);
        if hall {
            v[6] = li(LemmaForm::LongitudinalCross, x.b, x.u);
            v[7] = li(LemmaForm::LongitudinalSquare, x.u, x.b);
            v[8] = li(LemmaForm::LongitudinalSquare, x.u, x.u);
            v[9] = li(LemmaForm::TransverseCross, x.b, x.u);
            v[10] = li(LemmaForm::TransverseSquare, x.u, x.b);
            v[11] = li(LemmaForm::TransverseSquare, x.u, x.u);
        }
        v
    });
    let d = f.d_i;
    // The velocity terms enter the energy balance with weight -2/d relative to the b–J terms.
    Ok(DissipationEstimate {
        epsilon_kernel: moll.epsilon(),
        d_el: 0.75 * d * (s[0] - s[1]) - 1.5 * (s[6] - s[7] - s[8]),
        d_et: 0.375 * d * (s[2] - s[3]) - 0.75 * (s[9] - s[10] - s[11]),
        d_ml: 1.5 * d * s[4],
        d_mt: 0.75 * d * s[5],
        eps_e_measured: None,
    })
}

pub fn d_energy(b: &SpectralField, d_i: f64, moll: &Mollifier) -> Result<DissipationEstimate> {
    dissipation(&emhd_fields(b, d_i)?, moll)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum KhmForm {
    #[serde(rename = "energy-L")]
    EnergyL,
    #[serde(rename = "energy-T")]
    EnergyT,
    #[serde(rename = "helicity-L")]
    HelicityL,
    #[serde(rename = "helicity-T")]
    HelicityT,
}

impl KhmForm {
    pub const ALL: [KhmForm; 4] = [KhmForm::EnergyL, KhmForm::EnergyT, KhmForm::HelicityL, KhmForm::HelicityT];

    pub fn name(self) -> &'static str {
        match self {
            KhmForm::EnergyL => "energy-L",
            KhmForm::EnergyT => "energy-T",
            KhmForm::HelicityL => "helicity-L",
            KhmForm::HelicityT => "helicity-T",
        }
    }

    /// Coefficient of the space-averaged D on the right of the balance.
    pub fn factor(self) -> f64 {
        match self {
            KhmForm::EnergyL => -2.0 / 3.0,
            KhmForm::EnergyT | KhmForm::HelicityL => -4.0 / 3.0,
            KhmForm::HelicityT => -8.0 / 3.0,
        }
    }

    fn longitudinal(self) -> bool {
        matches!(self, KhmForm::EnergyL | KhmForm::HelicityL)
    }

    fn pick(self, d: &DissipationEstimate) -> f64 {
        match self {
            KhmForm::EnergyL => d.d_el,
            KhmForm::EnergyT => d.d_et,
            KhmForm::HelicityL => d.d_ml,
            KhmForm::HelicityT => d.d_mt,
        }
    }
}

impl std::str::FromStr for KhmForm {
    type Err = KhmError;
    fn from_str(s: &str) -> Result<Self> {
        KhmForm::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| KhmError::Config(format!("unknown audit '{s}' (energy-L, energy-T, helicity-L, helicity-T)")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub which: KhmForm,
    pub factor: f64,
    pub t0: f64,
    pub t1: f64,
    /// Centered difference of the filtered quadratic plus the averaged source term.
    pub lhs: f64,
    /// Mean of ⟨D⟩ at the two times (before the factor).
    pub d_mean: f64,
    pub rhs: f64,
    pub floor: f64,
    pub residual: f64,
}

impl AuditReport {
    /// Residual if the balance used `factor` instead of the stated one.
    pub fn residual_with_factor(&self, factor: f64) -> f64 {
        let rhs = factor * self.d_mean;
        (self.lhs - rhs).abs() / self.lhs.abs().max(rhs.abs()).max(self.floor)
    }
}

struct AuditTerms {
    q: f64,
    source: f64,
}

fn audit_terms(s: &SolverState, moll: &Mollifier, which: KhmForm, band: i64) -> Result<AuditTerms> {
    let m = moll.multiplier(band, Weight::Phi);
    let mb = m.project(&s.b, which.longitudinal())?;
    Ok(match which {
        KhmForm::EnergyL | KhmForm::EnergyT => {
            let kinetic = match &s.u {
                Some(u) => u.inner(&m.project(u, which.longitudinal())?),
                None => 0.0,
            };
            AuditTerms { q: s.b.inner(&mb) + kinetic, source: 0.0 }
        }
        KhmForm::HelicityL | KhmForm::HelicityT => {
            let a = s.b.inverse_curl()?;
            let source = match &s.u {
                Some(u) => -4.0 * u.to_real().cross(&s.b.to_real()).transform().inner(&mb),
                None => 0.0,
            };
            AuditTerms { q: 2.0 * a.inner(&mb), source }
        }
    })
}

fn rms(f: &SpectralField) -> f64 {
    f.mean_square().sqrt()
}

/// Space-integrated KHM balances between two nearby states of one inviscid
/// run. The time derivative is a difference quotient; D and the source term
/// are averaged over both ends.
pub fn audit_khm_forms(s0: &SolverState, s1: &SolverState, moll: &Mollifier, forms: &[KhmForm]) -> Result<Vec<AuditReport>> {
    for s in [s0, s1] {
        if s.params.dissipative() {
            return Err(KhmError::Precondition(
                "KHM audits need snapshots from an inviscid run (nu = eta = hyper_nu = 0)".into(),
            ));
        }
    }
    if s0.params.model != s1.params.model || s0.params.d_i != s1.params.d_i {
        return Err(KhmError::Precondition("audit snapshots come from different runs".into()));
    }
    crate::grid::check_grid(s0.grid(), s1.grid())?;
    let dt = s1.t - s0.t;
    if !(dt > 0.0) {
        return Err(KhmError::Precondition(format!("snapshot times must increase (Δt = {dt})")));
    }
    moll.check_resolvable(s0.grid())?;
    let band = [s0, s1]
        .iter()
        .map(|s| s.b.band(1e-13).max(s.u.as_ref().map_or(0, |u| u.band(1e-13))))
        .max()
        .unwrap_or(0);
    let f0 = LawFields::from_state(s0)?;
    let f1 = LawFields::from_state(s1)?;
    let d0 = dissipation(&f0, moll)?;
    let d1 = dissipation(&f1, moll)?;
    let scale = [rms(&s0.b), rms(&s0.b.curl()), s0.u.as_ref().map_or(0.0, rms)].into_iter().fold(0.0, f64::max);
    let floor = 1e-12 * scale.powi(3);
    forms
        .iter()
        .map(|&which| {
            let a = audit_terms(s0, moll, which, band)?;
            let b = audit_terms(s1, moll, which, band)?;
            let lhs = (b.q - a.q) / dt + 0.5 * (a.source + b.source);
            let d_mean = 0.5 * (which.pick(&d0) + which.pick(&d1));
            let rhs = which.factor() * d_mean;
            let residual = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(floor);
            Ok(AuditReport { which, factor: which.factor(), t0: s0.t, t1: s1.t, lhs, d_mean, rhs, floor, residual })
        })
        .collect()
}

pub fn audit_khm(s0: &SolverState, s1: &SolverState, moll: &Mollifier, which: KhmForm) -> Result<AuditReport> {
    Ok(audit_khm_forms(s0, s1, moll, &[which])?.remove(0))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantEntry {
    pub name: String,
    pub value: f64,
    pub expected: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoareaReport {
    pub profile: String,
    pub tolerance: f64,
    pub entries: Vec<ConstantEntry>,
    pub pass: bool,
}

/// Radial moments of the kernel and the constant combinations built from
/// them, including both 2×2 eliminations.
pub fn verify_coarea_constants(kernel: &RadialKernel, tolerance: f64) -> CoareaReport {
    let m2 = kernel.moment(2);
    let m3p = kernel.derivative_moment(3);
    // transverse route: D = c_T S̄_ET + r S̄_E
    let c_t = 0.375 * (m3p - 2.0 * m2);
    let r = -0.75 * m2;
    // longitudinal route: D = c_L S̄_EL + p S̄_ET + q S̄_E
    let c_l = 0.75 * m3p;
    let p = 0.75 * 2.0 * m2;
    let q = 1.5 * m2;
    let denom = 1.0 - p / c_t;
    let alpha = c_l / denom;
    let beta = (q - p * r / c_t) / denom;
    // helicity: D = c_T S_MT and D = c_L S_ML + p S_MT
    let alpha_m = c_l / (1.0 - p / c_t);
    let rows = [
        ("mass", m2, 1.0),
        ("first_derivative_moment", m3p, -3.0),
        ("transverse_coefficient", c_t, -15.0 / 8.0),
        ("longitudinal_coefficient", c_l, -9.0 / 4.0),
        ("energy_longitudinal_law", alpha, -5.0 / 4.0),
        ("energy_s_e_weight_longitudinal", beta / alpha, -2.0 / 5.0),
        ("energy_s_e_weight_transverse", r / c_t, 2.0 / 5.0),
        ("helicity_longitudinal_law", alpha_m, -5.0 / 4.0),
        ("helicity_transverse_law", c_t, -15.0 / 8.0),
    ];
    let entries: Vec<ConstantEntry> = rows
        .iter()
        .map(|&(name, value, expected)| ConstantEntry { name: name.into(), value, expected, error: (value - expected).abs() })
        .collect();
    let pass = entries.iter().all(|e| e.error <= tolerance);
    CoareaReport { profile: format!("{:?}", kernel.profile).to_lowercase(), tolerance, entries, pass }
}

#[derive(Clone, Debug, Serialize)]
pub struct LawScanRecord {
    pub t: f64,
    pub model: Model,
    pub lambda: f64,
    #[serde(rename = "S_EL")]
    pub s_el: f64,
    #[serde(rename = "S_ET")]
    pub s_et: f64,
    #[serde(rename = "S_EL_bar")]
    pub s_el_bar: f64,
    #[serde(rename = "S_ET_bar")]
    pub s_et_bar: f64,
    #[serde(rename = "S_E_bar")]
    pub s_e_bar: f64,
    #[serde(rename = "S_ML")]
    pub s_ml: f64,
    #[serde(rename = "S_MT")]
    pub s_mt: f64,
    #[serde(rename = "S_HL")]
    pub s_hl: f64,
    #[serde(rename = "Pi_L")]
    pub flux_l: f64,
    #[serde(rename = "Pi_T")]
    pub flux_t: f64,
}

impl LawScanRecord {
    fn new(t: f64, model: Model, lambda: f64, v: SValues) -> Self {
        LawScanRecord {
            t,
            model,
            lambda,
            s_el: v.s_el,
            s_et: v.s_et,
            s_el_bar: v.s_el_bar,
            s_et_bar: v.s_et_bar,
            s_e_bar: v.s_e_bar,
            s_ml: v.s_ml,
            s_mt: v.s_mt,
            s_hl: v.s_hl,
            flux_l: v.flux_l,
            flux_t: v.flux_t,
        }
    }
}

/// Time-averaged compensated ratios at one separation.
#[derive(Clone, Debug, Serialize)]
pub struct CompensatedRow {
    pub lambda: f64,
    pub four_fifths: f64,
    pub eight_fifteenths: f64,
    pub helicity: f64,
    /// −Π_L/ε_E and −Π_T/ε_E.
    pub balance_l: f64,
    pub balance_t: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlateauReport {
    pub window: (f64, f64),
    pub ratio_window: (f64, f64),
    pub eps_e: f64,
    pub eps_m: f64,
    /// True when ε_E was zero and the ratios are absolute values of -(5/4)S_EL etc.
    pub absolute: bool,
    pub rows: Vec<CompensatedRow>,
    pub band: Option<(f64, f64)>,
    pub decades: f64,
    /// Largest relative gap between the two energy routes over the band.
    pub route_gap: Option<f64>,
    pub rejected_lambdas: Vec<f64>,
    /// The same band search run on the balance-consistent pair.
    pub balance_band: Option<(f64, f64)>,
    pub balance_decades: f64,
    pub balance_route_gap: Option<f64>,
}

impl PlateauReport {
    pub fn pass(&self, min_decades: f64, max_gap: f64) -> bool {
        self.decades >= min_decades && self.route_gap.is_some_and(|g| g <= max_gap)
    }
}

#[derive(Clone, Debug)]
pub struct ScanSettings {
    pub lambdas: Vec<f64>,
    pub window: (f64, f64),
    pub ratio_window: (f64, f64),
    pub stride: usize,
}

/// Widest contiguous run of rows (in log λ) whose value lies in [lo, hi].
pub fn widest_band(lambdas: &[f64], values: &[f64], lo: f64, hi: f64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    let width = |a: usize, b: usize| (lambdas[b] / lambdas[a]).log10();
    for i in 0..=values.len() {
        let inside = i < values.len() && values[i] >= lo && values[i] <= hi;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                let cand = (s, i - 1);
                if best.is_none_or(|b| width(cand.0, cand.1) > width(b.0, b.1)) {
                    best = Some(cand);
                }
                start = None;
            }
            _ => {}
        }
    }
    best
}

/// Per-snapshot records for every resolvable λ, and the plateau report
/// built from snapshots inside the analysis window.
pub fn scan_laws(
    states: &[SolverState],
    ledger: Option<&InvariantLedger>,
    settings: &ScanSettings,
    quad: &DirectionQuadrature,
) -> Result<(Vec<LawScanRecord>, PlateauReport)> {
    if states.is_empty() {
        return Err(KhmError::Config("scan-laws needs at least one snapshot".into()));
    }
    let floor = states[0].grid().spacing();
    let (lambdas, rejected) = crate::increments::SeparationScan::filter(&settings.lambdas, floor);
    if lambdas.is_empty() {
        return Err(KhmError::Config(format!("no resolvable separation (grid spacing {floor:.4})")));
    }
    let mut records = Vec::new();
    let (t0, t1) = settings.window;
    let in_window = |t: f64| t >= t0 - 1e-12 && t <= t1 + 1e-12;
    let mut sums = vec![[0.0; 5]; lambdas.len()];
    let mut count = 0usize;
    let mut eps_m_sum = 0.0;
    let mut eps_e_snap = 0.0;
    for s in states {
        let f = LawFields::from_state(s)?.with_stride(settings.stride)?;
        let vals: Vec<SValues> = lambdas.iter().map(|&l| structure_functions(&f, l, quad)).collect::<Result<_>>()?;
        if in_window(s.t) {
            count += 1;
            for (acc, v) in sums.iter_mut().zip(&vals) {
                acc[0] += v.s_el;
                acc[1] += v.s_et;
                acc[2] += v.s_ml;
                acc[3] += v.flux_l;
                acc[4] += v.flux_t;
            }
            eps_m_sum += s.params.eta * s.b.curl().inner(&s.b);
            eps_e_snap += s.invariants()?.eps_e;
        }
        for (&l, v) in lambdas.iter().zip(vals) {
            records.push(LawScanRecord::new(s.t, s.params.model, l, v));
        }
    }
    let mut report = PlateauReport {
        window: settings.window,
        ratio_window: settings.ratio_window,
        eps_e: 0.0,
        eps_m: 0.0,
        absolute: false,
        rows: Vec::new(),
        band: None,
        decades: 0.0,
        route_gap: None,
        rejected_lambdas: rejected,
        balance_band: None,
        balance_decades: 0.0,
        balance_route_gap: None,
    };
    if count == 0 {
        return Ok((records, report));
    }
    let eps_e = ledger.and_then(|l| l.mean_eps(t0, t1)).unwrap_or(eps_e_snap / count as f64);
    let eps_m = eps_m_sum / count as f64;
    report.eps_e = eps_e;
    report.eps_m = eps_m;
    report.absolute = eps_e == 0.0;
    let ref_e = if eps_e == 0.0 { 1.0 } else { eps_e };
    let ref_m = if eps_m == 0.0 { 1.0 } else { eps_m };
    report.rows = lambdas
        .iter()
        .zip(&sums)
        .map(|(&lambda, s)| {
            let m = 1.0 / count as f64;
            CompensatedRow {
                lambda,
                four_fifths: -1.25 * s[0] * m / ref_e,
                eight_fifteenths: -1.875 * s[1] * m / ref_e,
                helicity: -1.25 * s[2] * m / ref_m,
                balance_l: s[3] * m / ref_e,
                balance_t: s[4] * m / ref_e,
            }
        })
        .collect();
    let (lo, hi) = settings.ratio_window;
    let band = |a: fn(&CompensatedRow) -> f64, b: fn(&CompensatedRow) -> f64| {
        let ratios: Vec<f64> = report.rows.iter().map(a).collect();
        widest_band(&lambdas, &ratios, lo, hi).map(|(i, j)| {
            let gap = report.rows[i..=j].iter().map(|r| (b(r) - a(r)).abs() / a(r).abs()).fold(0.0, f64::max);
            ((lambdas[i], lambdas[j]), (lambdas[j] / lambdas[i]).log10(), gap)
        })
    };
    if let Some((b, dec, gap)) = band(|r| r.four_fifths, |r| r.eight_fifteenths) {
        report.band = Some(b);
        report.decades = dec;
        report.route_gap = Some(gap);
    }
    if let Some((b, dec, gap)) = band(|r| r.balance_l, |r| r.balance_t) {
        report.balance_band = Some(b);
        report.balance_decades = dec;
        report.balance_route_gap = Some(gap);
    }
    Ok((records, report))
}

/// Least-squares slope of log|y| against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.abs().ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
