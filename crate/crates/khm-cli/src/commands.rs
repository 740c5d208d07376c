use crate::config::Config;
use crate::manifest::{self, Emitter};
use anyhow::{bail, Context, Result};
use khm_core::grid::snapshot::Snapshot;
use khm_core::grid::Grid;
use khm_core::identities::{self, IdentityReport, LemmaForm};
use khm_core::increments::{DirectionQuadrature, DirectionScheme, SeparationScan};
use khm_core::laws::{self, AuditReport, KhmForm, LawFields, ScanSettings};
use khm_core::mollify::{Mollifier, Profile, RadialKernel};
use khm_core::solver::{make_initial_condition, run_with, InitialKind, InvariantLedger, Model, Params, SolverState};
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// Result of one subcommand: whether every tolerance gate passed.
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
}

pub fn quadrature(cfg: &Config) -> Result<DirectionQuadrature> {
    let scheme: DirectionScheme = cfg.text("quad.scheme").parse()?;
    Ok(DirectionQuadrature::new(scheme, cfg.usize("quad.directions"))?)
}

pub fn mollifier(cfg: &Config) -> Result<Mollifier> {
    let profile: Profile = cfg.text("kernel.profile").parse()?;
    let kernel = RadialKernel::new(profile, cfg.f64("kernel.epsilon"))?;
    Ok(Mollifier::new(kernel, quadrature(cfg)?, cfg.usize("quad.radial_nodes"), cfg.f64("quad.grading"))?)
}

fn lambdas(cfg: &Config) -> Vec<f64> {
    let (lo, hi, m) = (cfg.f64("scan.lambda_min"), cfg.f64("scan.lambda_max"), cfg.usize("scan.lambda_count"));
    if m == 1 {
        vec![lo]
    } else {
        SeparationScan::log_spaced(lo, hi, m)
    }
}

fn params(cfg: &Config) -> Result<Params> {
    let p = Params {
        model: cfg.text("solver.model").parse()?,
        d_i: cfg.f64("solver.d_i"),
        nu: cfg.f64("solver.nu"),
        eta: cfg.f64("solver.eta"),
        hyper_nu: cfg.f64("solver.hyper_nu"),
        cfl: cfg.f64("solver.cfl"),
    };
    p.validate()?;
    Ok(p)
}

fn initial_state(cfg: &Config) -> Result<SolverState> {
    let p = params(cfg)?;
    let grid = Grid::new(cfg.usize("grid.n"))?;
    let kind: InitialKind = cfg.text("ic.kind").parse()?;
    let (b, u) = make_initial_condition(
        &grid,
        kind,
        p.model,
        cfg.u64("ic.seed"),
        cfg.f64("ic.amplitude"),
        cfg.f64("ic.kmax"),
    )?;
    Ok(SolverState::new(p, &b, u.as_ref())?)
}

/// Snapshot files named on the command line; directories expand to their
/// `*.khm` entries in name order.
pub fn snapshot_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|x| x == "khm"))
                .collect();
            if v.is_empty() {
                let nested = p.join("snapshots");
                if nested.is_dir() {
                    v = snapshot_paths(&[nested])?;
                }
            }
            v.sort();
            out.extend(v);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no snapshot files given (use --input FILE|DIR)");
    }
    Ok(out)
}

fn load_states(paths: &[PathBuf], cfl: f64) -> Result<Vec<SolverState>> {
    paths
        .iter()
        .map(|p| {
            let s = Snapshot::load(p).with_context(|| format!("loading {}", p.display()))?;
            SolverState::from_snapshot(&s, cfl).with_context(|| format!("interpreting {}", p.display()))
        })
        .collect()
}

/// `ledger.csv` next to the snapshots or one directory up.
fn find_ledger(paths: &[PathBuf]) -> Result<Option<InvariantLedger>> {
    let Some(dir) = paths.first().and_then(|p| p.parent()) else { return Ok(None) };
    for cand in [dir.join("ledger.csv"), dir.parent().map(|d| d.join("ledger.csv")).unwrap_or_default()] {
        if cand.is_file() {
            let f = std::fs::File::open(&cand)?;
            return Ok(Some(InvariantLedger::read_csv(f).with_context(|| format!("reading {}", cand.display()))?));
        }
    }
    Ok(None)
}

pub fn simulate(cfg: &Config, out: &mut Emitter) -> Result<Outcome> {
    let mut st = initial_state(cfg)?;
    let dt = cfg.f64("solver.dt");
    let t_end = cfg.f64("solver.t_end");
    let mut written = Vec::new();
    let dir = out.path("snapshots");
    std::fs::create_dir_all(&dir)?;
    let ledger = run_with(&mut st, t_end, dt, cfg.f64("solver.snapshot_interval"), |s| {
        let rel = format!("snapshots/snap_{:04}.khm", written.len());
        s.to_snapshot().save(&out.path(&rel))?;
        written.push(rel);
        Ok(())
    })?;
    for rel in &written {
        out.record(rel);
    }
    let mut csv = Vec::new();
    ledger.write_csv(&mut csv)?;
    out.write("ledger.csv", &csv)?;

    let p = st.params;
    let drift = json!({
        "E": ledger.relative_drift(|r| r.energy),
        "H_M": ledger.relative_drift(|r| r.magnetic_helicity),
        "H_G": ledger.relative_drift(|r| r.generalized_helicity),
        "H_C": ledger.relative_drift(|r| r.cross_helicity),
    });
    let tol = cfg.f64("tolerances.conservation");
    let gated: Vec<&str> = match (p.dissipative(), p.model) {
        (true, _) => vec![],
        (false, Model::Emhd) => vec!["E", "H_M"],
        (false, Model::HallMhd) => vec!["E", "H_M", "H_G"],
    };
    let pass = gated.iter().all(|k| drift[k].as_f64().is_some_and(|d| d <= tol));
    let extensions: Vec<&str> = [("viscosity", p.nu), ("resistivity", p.eta), ("hyperdissipation", p.hyper_nu)]
        .iter()
        .filter(|e| e.1 > 0.0)
        .map(|e| e.0)
        .collect();
    out.write_json(
        "simulate.json",
        &json!({
            "command": "simulate",
            "model": p.model,
            "grid_n": st.grid().n(),
            "steps": ledger.rows.len() - 1,
            "t_final": st.t,
            "snapshots": written,
            "relative_drift": drift,
            "gated_invariants": gated,
            "tolerance": tol,
            "extensions": extensions,
            "pass": pass,
        }),
    )?;
    let summary = format!(
        "{} steps to t = {:.4}; drift E {:.2e}, H_M {:.2e}",
        ledger.rows.len() - 1,
        st.t,
        drift["E"].as_f64().unwrap_or(f64::NAN),
        drift["H_M"].as_f64().unwrap_or(f64::NAN)
    );
    Ok(Outcome { pass, summary })
}

#[derive(Serialize)]
struct EstimateRow<'a> {
    t: f64,
    lambda: f64,
    direction_count: usize,
    value: f64,
    estimator_name: &'a str,
}

pub fn estimate(cfg: &Config, inputs: &[PathBuf], out: &mut Emitter) -> Result<Outcome> {
    let paths = snapshot_paths(inputs)?;
    let states = load_states(&paths, cfg.f64("solver.cfl"))?;
    let quad = quadrature(cfg)?;
    let moll = mollifier(cfg)?;
    let ls = lambdas(cfg);
    let mut w = csv_writer();
    let mut per_snapshot = Vec::new();
    for (path, st) in paths.iter().zip(&states) {
        let f = LawFields::from_state(st)?.with_stride(cfg.usize("scan.stride"))?;
        let (kept, rejected) = SeparationScan::filter(&ls, st.grid().spacing());
        let mut series: Vec<(&str, Vec<f64>)> = ["S_EL", "S_ET", "S_EL_bar", "S_ET_bar", "S_E_bar", "S_ML", "S_MT", "S_HL", "Pi_L", "Pi_T"]
            .iter()
            .map(|n| (*n, Vec::new()))
            .collect();
        for &lambda in &kept {
            let v = laws::structure_functions(&f, lambda, &quad)?;
            let vals = [v.s_el, v.s_et, v.s_el_bar, v.s_et_bar, v.s_e_bar, v.s_ml, v.s_mt, v.s_hl, v.flux_l, v.flux_t];
            for ((name, s), value) in series.iter_mut().zip(vals) {
                s.push(value);
                w.serialize(EstimateRow { t: st.t, lambda, direction_count: quad.len(), value, estimator_name: name })?;
            }
        }
        let slopes: serde_json::Map<String, Value> = series
            .iter()
            .map(|(n, s)| {
                let abs: Vec<f64> = s.iter().map(|v| v.abs()).collect();
                let slope = if kept.len() >= 2 { laws::loglog_slope(&kept, &abs) } else { f64::NAN };
                (n.to_string(), json!(slope))
            })
            .collect();
        let d = laws::dissipation(&f, &moll)?;
        per_snapshot.push(json!({
            "file": path.display().to_string(),
            "t": st.t,
            "model": st.params.model,
            "lambdas": kept,
            "rejected_lambdas": rejected,
            "loglog_slopes": slopes,
            "dissipation": d,
        }));
    }
    out.write("estimates.csv", &w.into_inner()?)?;
    out.write_json(
        "estimate.json",
        &json!({
            "command": "estimate",
            "direction_count": quad.len(),
            "epsilon": moll.epsilon(),
            "snapshots": per_snapshot,
            "pass": true,
        }),
    )?;
    Ok(Outcome { pass: true, summary: format!("{} snapshot(s), {} separations", states.len(), ls.len()) })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

#[derive(Serialize)]
struct GateRow {
    #[serde(flatten)]
    report: IdentityReport,
    tolerance: f64,
    pass: bool,
}

fn gate(report: IdentityReport, tolerance: f64) -> GateRow {
    GateRow { pass: report.residual <= tolerance, report, tolerance }
}

pub fn verify_identities(cfg: &Config, out: &mut Emitter) -> Result<Outcome> {
    let mut rows = Vec::new();
    let seed = cfg.u64("identities.seed");
    rows.push(gate(identities::check_lemma21_random(cfg.usize("identities.samples"), seed), cfg.f64("tolerances.lemma21")));

    let grid = Grid::new(cfg.usize("identities.grid_n"))?;
    let kmax = cfg.u64("identities.kmax") as i64;
    let moll = mollifier(cfg)?;
    rows.push(gate(identities::check_projection(&moll), cfg.f64("tolerances.projection")));
    let e = identities::random_band_field(&grid, kmax, seed);
    let f = identities::random_band_field(&grid, kmax, seed.wrapping_add(1));
    for form in LemmaForm::ALL {
        let r = identities::check_lemma22(form, &e, &f, &moll, cfg.usize("identities.per_axis"))?;
        rows.push(gate(r, cfg.f64("tolerances.lemma22")));
    }
    for r in identities::check_hall_rewrites(&e)? {
        rows.push(gate(r, cfg.f64("tolerances.hall_rewrites")));
    }
    for r in identities::check_operators(&grid, kmax, seed)? {
        rows.push(gate(r, cfg.f64("tolerances.operators")));
    }
    let pass = rows.iter().all(|r| r.pass);
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.report.identity_name.as_str()).collect();
    let summary = if failed.is_empty() { format!("{} identities pass", rows.len()) } else { format!("failed: {}", failed.join(", ")) };
    out.write_json("identities.json", &json!({ "command": "verify-identities", "identities": rows, "pass": pass }))?;
    Ok(Outcome { pass, summary })
}

#[derive(Serialize)]
struct AuditRow {
    #[serde(flatten)]
    report: AuditReport,
    pass: bool,
}

pub fn audit_khm(cfg: &Config, inputs: &[PathBuf], out: &mut Emitter) -> Result<Outcome> {
    let states = if inputs.is_empty() {
        let mut s0 = initial_state(cfg)?;
        let dt = cfg.f64("solver.dt");
        for _ in 0..cfg.usize("audit.warmup_steps") {
            s0.step_rk4(dt)?;
        }
        let mut s1 = s0.clone();
        for _ in 0..cfg.usize("audit.gap_steps") {
            s1.step_rk4(dt)?;
        }
        vec![s0, s1]
    } else {
        load_states(&snapshot_paths(inputs)?, cfg.f64("solver.cfl"))?
    };
    if states.len() < 2 {
        bail!("audit-khm needs at least two snapshots");
    }
    let moll = mollifier(cfg)?;
    let tol = cfg.f64("tolerances.khm");
    let mut rows = Vec::new();
    for pair in states.windows(2) {
        for r in laws::audit_khm_forms(&pair[0], &pair[1], &moll, &KhmForm::ALL)? {
            rows.push(AuditRow { pass: r.residual <= tol, report: r });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    let worst = rows.iter().map(|r| r.report.residual).fold(0.0, f64::max);
    out.write_json("audit.json", &json!({ "command": "audit-khm", "tolerance": tol, "audits": rows, "pass": pass }))?;
    Ok(Outcome { pass, summary: format!("{} balance(s), worst residual {worst:.2e}", rows.len()) })
}

pub fn scan_laws(cfg: &Config, inputs: &[PathBuf], out: &mut Emitter) -> Result<Outcome> {
    let paths = snapshot_paths(inputs)?;
    let states = load_states(&paths, cfg.f64("solver.cfl"))?;
    let ledger = find_ledger(&paths)?;
    let settings = ScanSettings {
        lambdas: lambdas(cfg),
        window: (cfg.f64("laws.window_start"), cfg.f64("laws.window_end")),
        ratio_window: (cfg.f64("laws.ratio_lo"), cfg.f64("laws.ratio_hi")),
        stride: cfg.usize("scan.stride"),
    };
    let selected: Vec<SolverState> =
        states.into_iter().filter(|s| s.t >= settings.window.0 && s.t <= settings.window.1).collect();
    if selected.is_empty() {
        bail!("no snapshot falls inside laws.window_start..laws.window_end");
    }
    let (records, report) = laws::scan_laws(&selected, ledger.as_ref(), &settings, &quadrature(cfg)?)?;
    let mut w = csv_writer();
    for r in &records {
        w.serialize(r)?;
    }
    out.write("laws.csv", &w.into_inner()?)?;
    let (min_dec, max_gap) = (cfg.f64("laws.min_decades"), cfg.f64("laws.max_route_gap"));
    let pass = report.pass(min_dec, max_gap);
    out.write_json(
        "plateau.json",
        &json!({
            "command": "scan-laws",
            "snapshots": selected.len(),
            "ledger_found": ledger.is_some(),
            "min_decades": min_dec,
            "max_route_gap": max_gap,
            "plateau": report,
            "pass": pass,
        }),
    )?;
    Ok(Outcome {
        pass,
        summary: format!("plateau over {:.2} decades, route gap {:?}", report.decades, report.route_gap),
    })
}

pub fn verify_constants(cfg: &Config, out: &mut Emitter) -> Result<Outcome> {
    let tol = cfg.f64("tolerances.constants");
    let eps = cfg.f64("kernel.epsilon");
    let mut reports = Vec::new();
    for profile in [Profile::Bump, Profile::Gaussian] {
        reports.push(laws::verify_coarea_constants(&RadialKernel::new(profile, eps)?, tol));
    }
    let pass = reports.iter().all(|r| r.pass);
    out.write_json("constants.json", &json!({ "command": "verify-constants", "profiles": reports, "pass": pass }))?;
    let worst = reports.iter().flat_map(|r| r.entries.iter().map(|e| e.error)).fold(0.0, f64::max);
    Ok(Outcome { pass, summary: format!("worst constant error {worst:.2e}") })
}

fn walk(dir: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    for e in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.is_dir() {
            walk(&p, acc)?;
        } else if p.extension().is_some_and(|x| x == "json") {
            acc.push(p);
        }
    }
    Ok(())
}

/// Aggregate the `pass` flag of every report under `root` and re-verify
/// every manifest found there.
pub fn report(root: &Path, out: &mut Emitter) -> Result<Outcome> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    files.sort();
    let mut gates = Vec::new();
    let mut manifests = Vec::new();
    for p in &files {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let rel = p.strip_prefix(root).unwrap_or(p).display().to_string();
        if name == "summary.json" {
            continue;
        }
        if name.starts_with("manifest-") {
            let m = manifest::load(p)?;
            let bad = manifest::verify(p.parent().unwrap_or(root), &m);
            manifests.push(json!({ "file": rel, "command": m.command, "config_hash": m.config_hash, "mismatched": bad, "ok": bad.is_empty() }));
            continue;
        }
        let v: Value = serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?;
        if let Some(pass) = v.get("pass").and_then(Value::as_bool) {
            gates.push(json!({ "file": rel, "command": v.get("command").cloned().unwrap_or(Value::Null), "pass": pass }));
        }
    }
    if gates.is_empty() {
        bail!("no reports found under {}", root.display());
    }
    let gates_pass = gates.iter().all(|g| g["pass"] == true);
    let manifests_ok = manifests.iter().all(|m| m["ok"] == true);
    let pass = gates_pass && manifests_ok;
    out.write_json(
        "summary.json",
        &json!({ "command": "report", "gates": gates, "manifests": manifests, "manifests_ok": manifests_ok, "pass": pass }),
    )?;
    let failed = gates.iter().filter(|g| g["pass"] != true).count();
    Ok(Outcome { pass, summary: format!("{} gate(s), {failed} failing; manifests ok: {manifests_ok}", gates.len()) })
}
