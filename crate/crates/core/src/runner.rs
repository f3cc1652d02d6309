//! Experiment execution and output bundles.
//!
//! A bundle directory holds `survival.csv`, `populations.csv`, `rates.csv`,
//! `fit.json`, `manifest.json` and `plot.gp`, plus `spectral.csv`/`kk.csv`
//! when the golden-rule density is available and `branching.csv` when
//! requested. A τ sweep writes one bundle per run under `free/` and
//! `tau_<τ>fs/`, and an aggregate `rates.csv` sorted by τ with the free row
//! last (τ = inf).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use crate::analysis::{
    fit_branching, fit_exponential, kk_rate, survival_series, zeno_diagnostics, BranchingFit, DecayFit, DecaySeries,
    SpectralBasis, SpectralDensity, ZenoDiagnostics,
};
use crate::config::Experiment;
use crate::error::{invalid, Error, Result};
use crate::measure::{MeasurementKind, MeasurementSchedule};
use crate::model::{initial_quasibound_state, SystemSpec};
use crate::propagate::{evolve, steps_per_interval, write_checkpoint, FluxLedger, Trajectory, WavePacket};
use crate::units::{au_to_fs, cm1_to_hartree, fs_to_au, hartree_to_cm1, AU_PER_FS, BOHR_PER_ANGSTROM,
    HARTREE_PER_CM1, ME_PER_AMU};

/// One propagation and its analysis.
#[derive(Clone, Debug)]
pub struct RunResult {
    /// `free` or `tau_<τ>fs`.
    pub name: String,
    pub tau_fs: Option<f64>,
    /// `free`, `depletion` or `randomization`.
    pub model: String,
    pub seed: u64,
    pub labels: Vec<String>,
    pub initial_channel: usize,
    pub times: Vec<f64>,
    pub survival: DecaySeries,
    pub populations: Vec<Vec<f64>>,
    pub ledgers: Vec<FluxLedger>,
    pub fit: Option<DecayFit>,
    /// `ok`, or a short reason the fit is suspect or missing.
    pub status: String,
    pub branching: Option<BranchingFit>,
    pub zeno: Option<ZenoDiagnostics>,
    pub measurements_applied: u64,
    pub final_state: WavePacket,
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn gamma_cm1(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.gamma_cm1)
    }

    /// Live norm plus ledger at the last sample.
    pub fn final_accounted(&self) -> f64 {
        let last = self.populations.len() - 1;
        self.populations[last].iter().sum::<f64>() + self.ledgers[last].total()
    }
}

/// Cumulative yield per channel: everything that has left the initial state
/// through that channel. Non-initial channels count live + absorbed + depleted;
/// the initial channel counts absorbed + depleted.
pub fn channel_yields(traj_pops: &[Vec<f64>], ledgers: &[FluxLedger], initial: usize) -> Vec<Vec<f64>> {
    let nc = traj_pops.first().map_or(0, |p| p.len());
    (0..nc)
        .map(|c| {
            traj_pops
                .iter()
                .zip(ledgers)
                .map(|(p, l)| l.absorbed[c] + l.depleted[c] + if c == initial { 0.0 } else { p[c] })
                .collect()
        })
        .collect()
}

fn run_name(tau_fs: Option<f64>) -> String {
    match tau_fs {
        None => "free".into(),
        Some(t) => format!("tau_{t}fs"),
    }
}

/// Propagate the experiment's initial state, free (`tau_fs = None`) or
/// measured every `tau_fs` with the experiment's measurement settings.
pub fn simulate(exp: &Experiment, tau_fs: Option<f64>, seed: u64) -> Result<RunResult> {
    let system = &exp.system;
    let psi0 = initial_quasibound_state(system, exp.initial_level)?;
    let schedule = match tau_fs {
        None => None,
        Some(t) => {
            let Some(plan) = &exp.measurement else {
                return invalid("a measured run needs a measurement block");
            };
            Some(MeasurementSchedule {
                kind: plan.kind,
                tau: fs_to_au(t),
                mode: plan.mode,
                targets: plan.targets.clone(),
                seed,
            })
        }
    };
    let traj = evolve(&psi0, system, &exp.propagation, schedule.as_ref(), &mut [])?;
    analyse(exp, &psi0, traj, tau_fs, seed, schedule.as_ref().map(|s| s.kind))
}

fn analyse(
    exp: &Experiment,
    psi0: &WavePacket,
    traj: Trajectory,
    tau_fs: Option<f64>,
    seed: u64,
    kind: Option<MeasurementKind>,
) -> Result<RunResult> {
    let system = &exp.system;
    let survival = survival_series(&traj)?;
    let mut warnings = Vec::new();
    let name = run_name(tau_fs);
    let (fit, status) = match fit_exponential(&survival, exp.fit_window()) {
        Ok(f) if f.rmse > exp.config.analysis.rmse_warning => {
            warnings.push(format!("{name}: survival fit rmse {:.3e} exceeds {:.1e}", f.rmse, exp.config.analysis.rmse_warning));
            (Some(f), "rmse_warning".to_string())
        }
        Ok(f) => (Some(f), "ok".to_string()),
        Err(e) => {
            warnings.push(format!("{name}: {e}"));
            (None, "fit_failed".to_string())
        }
    };
    let branching = if exp.config.analysis.branching {
        let ys = channel_yields(&traj.populations, &traj.ledgers, system.initial_channel);
        match fit_branching(&traj.times, &ys) {
            Ok(b) => {
                if !b.converged {
                    warnings.push(format!("{name}: branching fit did not converge (rmse {:.3e})", b.rmse));
                }
                Some(b)
            }
            Err(e) => {
                warnings.push(format!("{name}: {e}"));
                None
            }
        }
    } else {
        None
    };
    let zeno = if exp.config.analysis.zeno {
        match zeno_diagnostics(psi0, system, &survival) {
            Ok(z) => Some(z),
            Err(e) => {
                warnings.push(format!("{name}: zeno diagnostics: {e}"));
                None
            }
        }
    } else {
        None
    };
    let last = traj.final_state.accounted(&system.grid);
    if (last - 1.0).abs() > 1e-6 {
        warnings.push(format!("{name}: probability bookkeeping off by {:.3e}", last - 1.0));
    }
    Ok(RunResult {
        name,
        tau_fs,
        model: match kind {
            None => "free".into(),
            Some(MeasurementKind::Depletion) => "depletion".into(),
            Some(MeasurementKind::Randomization) => "randomization".into(),
        },
        seed,
        labels: traj.labels,
        initial_channel: system.initial_channel,
        times: traj.times,
        survival,
        populations: traj.populations,
        ledgers: traj.ledgers,
        fit,
        status,
        branching,
        zeno,
        measurements_applied: traj.measurements_applied,
        final_state: traj.final_state,
        warnings,
    })
}

/// Golden-rule density of the experiment's initial state on the default
/// ω grid, or `None` when nothing couples to the initial channel.
pub fn spectral_for(exp: &Experiment) -> Result<Option<SpectralDensity>> {
    let psi0 = initial_quasibound_state(&exp.system, exp.initial_level)?;
    let basis = SpectralBasis::new(&exp.system, &psi0)?;
    if basis.channels.is_empty() {
        return Ok(None);
    }
    let grid = basis.default_omega_grid(cm1_to_hartree(exp.config.analysis.omega_step_cm1));
    Ok(Some(basis.density_on(&grid)?))
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub directory: PathBuf,
    pub runs: Vec<RunResult>,
    pub warnings: Vec<String>,
}

/// Execute the experiment described by `exp` and write its outputs.
/// `threads` bounds the worker count of a τ sweep.
pub fn run_experiment(exp: &Experiment, threads: Option<usize>) -> Result<Outcome> {
    match &exp.measurement {
        Some(plan) if plan.sweep => sweep_tau(exp, &plan.taus_fs, threads),
        plan => {
            let dir = exp.output_dir();
            fs::create_dir_all(&dir)?;
            let spectral = spectral_or_warn(exp);
            let (seed, tau) = match plan {
                Some(p) => (p.seed, Some(p.taus_fs[0])),
                None => (0, None),
            };
            let result = match simulate(exp, tau, seed) {
                Ok(r) => r,
                Err(e) => {
                    write_manifest(&dir, exp, &[seed], &[run_name(tau)], Some(&e.to_string()))?;
                    return Err(e);
                }
            };
            let mut warnings = spectral.1.clone();
            warnings.extend(result.warnings.iter().cloned());
            write_bundle(&dir, exp, &result, spectral.0.as_ref())?;
            Ok(Outcome { directory: dir, runs: vec![result], warnings })
        }
    }
}

fn spectral_or_warn(exp: &Experiment) -> (Option<SpectralDensity>, Vec<String>) {
    if !exp.config.analysis.spectral {
        return (None, Vec::new());
    }
    match spectral_for(exp) {
        Ok(s) => (s, Vec::new()),
        Err(e) => (None, vec![format!("spectral density: {e}")]),
    }
}

/// Free run plus one measured run per distinct τ; runs execute on up to
/// `threads` workers and the aggregate output does not depend on scheduling.
pub fn sweep_tau(exp: &Experiment, taus_fs: &[f64], threads: Option<usize>) -> Result<Outcome> {
    let Some(plan) = &exp.measurement else {
        return invalid("a τ sweep needs a measurement block");
    };
    let mut warnings = Vec::new();
    let mut keyed: Vec<(u64, f64)> = Vec::new();
    for &t in taus_fs {
        let steps = steps_per_interval(fs_to_au(t), exp.propagation.dt)?;
        if keyed.iter().any(|(s, _)| *s == steps) {
            warnings.push(format!("duplicate tau {t} fs ignored"));
        } else {
            keyed.push((steps, t));
        }
    }
    keyed.sort_by_key(|k| k.0);
    let mut jobs: Vec<Option<f64>> = keyed.iter().map(|k| Some(k.1)).collect();
    jobs.push(None);

    let dir = exp.output_dir();
    fs::create_dir_all(&dir)?;
    let (spectral, w) = spectral_or_warn(exp);
    warnings.extend(w);
    let seed = plan.seed;
    let work = |tau: &Option<f64>| -> (Option<f64>, Result<RunResult>) {
        let r = simulate(exp, *tau, seed);
        if let Ok(res) = &r {
            let sub = dir.join(&res.name);
            if let Err(e) = fs::create_dir_all(&sub).map_err(Error::from).and_then(|_| write_bundle(&sub, exp, res, None)) {
                return (*tau, Err(e));
            }
        }
        (*tau, r)
    };
    let outputs: Vec<(Option<f64>, Result<RunResult>)> = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?
            .install(|| jobs.par_iter().map(work).collect()),
        None => jobs.par_iter().map(work).collect(),
    };

    let mut rows = String::new();
    let mut runs = Vec::new();
    let mut names = Vec::new();
    for (tau, r) in outputs {
        names.push(run_name(tau));
        match r {
            Ok(res) => {
                rows.push_str(&rate_row(&res));
                warnings.extend(res.warnings.iter().cloned());
                runs.push(res);
            }
            Err(e) => {
                let model = if tau.is_some() { model_name(plan.kind) } else { "free" };
                let t = tau.map_or("inf".to_string(), |t| t.to_string());
                let _ = writeln!(rows, "{t},,,,{model},{seed},error: {}", csv_safe(&e.to_string()));
                warnings.push(format!("{}: {e}", run_name(tau)));
            }
        }
    }
    fs::write(dir.join("rates.csv"), format!("{}{}{rows}", seed_header(seed), RATES_HEADER))?;
    if let Some(g) = &spectral {
        write_spectral(&dir, g, &keyed.iter().map(|k| k.1).collect::<Vec<_>>(), seed)?;
    }
    write_manifest(&dir, exp, &[seed], &names, None)?;
    fs::write(dir.join("plot.gp"), sweep_plot(&runs))?;
    Ok(Outcome { directory: dir, runs, warnings })
}

fn model_name(k: MeasurementKind) -> &'static str {
    match k {
        MeasurementKind::Depletion => "depletion",
        MeasurementKind::Randomization => "randomization",
    }
}

fn csv_safe(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

const RATES_HEADER: &str = "tau_fs,gamma_cm1,lifetime_ps,rmse,model,seed,status\n";

fn seed_header(seed: u64) -> String {
    format!("# seed={seed}\n")
}

fn rate_row(r: &RunResult) -> String {
    let t = r.tau_fs.map_or("inf".to_string(), |t| t.to_string());
    match &r.fit {
        Some(f) => format!("{t},{},{},{},{},{},{}\n", f.gamma_cm1, f.lifetime_ps, f.rmse, r.model, r.seed, r.status),
        None => format!("{t},,,,{},{},{}\n", r.model, r.seed, r.status),
    }
}

/// Write one run's bundle into `dir`.
pub fn write_bundle(dir: &Path, exp: &Experiment, r: &RunResult, spectral: Option<&SpectralDensity>) -> Result<()> {
    let head = format!("{}# model={}\n# tau_fs={}\n", seed_header(r.seed), r.model, r.tau_fs.map_or("inf".into(), |t| t.to_string()));
    let mut s = head.clone();
    s.push_str("t_fs,P\n");
    for (t, p) in r.survival.times.iter().zip(&r.survival.values) {
        let _ = writeln!(s, "{},{}", au_to_fs(*t), p);
    }
    fs::write(dir.join("survival.csv"), s)?;

    let mut s = head.clone();
    let cols: Vec<String> = ["live", "absorbed", "depleted"]
        .iter()
        .flat_map(|k| r.labels.iter().map(move |l| format!("{k}_{l}")))
        .collect();
    let _ = writeln!(s, "t_fs,{}", cols.join(","));
    for ((t, p), l) in r.times.iter().zip(&r.populations).zip(&r.ledgers) {
        let vals: Vec<String> = p.iter().chain(&l.absorbed).chain(&l.depleted).map(|x| x.to_string()).collect();
        let _ = writeln!(s, "{},{}", au_to_fs(*t), vals.join(","));
    }
    fs::write(dir.join("populations.csv"), s)?;

    fs::write(dir.join("rates.csv"), format!("{}{}{}", seed_header(r.seed), RATES_HEADER, rate_row(r)))?;

    let fit_json = json!({
        "run": r.name,
        "model": r.model,
        "seed": r.seed,
        "tau_fs": r.tau_fs,
        "status": r.status,
        "measurements_applied": r.measurements_applied,
        "survival_fit": r.fit.as_ref().map(|f| json!({
            "gamma_cm1": f.gamma_cm1,
            "population_rate_per_ps": f.rate_au * AU_PER_FS * 1000.0,
            "lifetime_ps": f.lifetime_ps,
            "population_lifetime_ps": 1.0 / (f.rate_au * AU_PER_FS * 1000.0),
            "amplitude": f.amplitude,
            "rmse": f.rmse,
            "window_ps": [f.fit_window.0 / (AU_PER_FS * 1000.0), f.fit_window.1 / (AU_PER_FS * 1000.0)],
            "n_samples": f.n_samples,
        })),
        "branching": r.branching.as_ref().map(|b| json!({
            "channels": r.labels,
            "q": b.q,
            "gamma_cm1": b.gamma_cm1,
            "rmse": b.rmse,
            "converged": b.converged,
            "method": b.method,
        })),
        "zeno": r.zeno.as_ref().map(|z| json!({
            "mean_h_cm1": hartree_to_cm1(z.mean_h),
            "delta_h_cm1": hartree_to_cm1(z.var_h.sqrt()),
            "zeno_time_fs": au_to_fs(z.zeno_time),
            "var_h_au": z.var_h,
            "quadratic_coeff_fit_au": z.quadratic_coeff_fit,
            "fit_t_max_fs": au_to_fs(z.fit_t_max),
        })),
        "final_accounted_probability": r.final_accounted(),
        "warnings": r.warnings,
    });
    fs::write(dir.join("fit.json"), serde_json::to_string_pretty(&fit_json)?)?;

    if let Some(b) = &r.branching {
        let mut s = seed_header(r.seed);
        s.push_str("channel,q,gamma_cm1,rmse\n");
        for (l, q) in r.labels.iter().zip(&b.q) {
            let _ = writeln!(s, "{l},{q},{},{}", b.gamma_cm1, b.rmse);
        }
        fs::write(dir.join("branching.csv"), s)?;
    }
    if let Some(g) = spectral {
        write_spectral(dir, g, &r.tau_fs.into_iter().collect::<Vec<_>>(), r.seed)?;
    }
    if exp.config.output.checkpoint {
        write_checkpoint(&dir.join("final.chk"), &r.final_state, &exp.system, Some(r.seed), r.measurements_applied)?;
    }
    write_manifest(dir, exp, &[r.seed], std::slice::from_ref(&r.name), None)?;
    fs::write(dir.join("plot.gp"), single_plot())?;
    Ok(())
}

fn write_spectral(dir: &Path, g: &SpectralDensity, taus_fs: &[f64], seed: u64) -> Result<()> {
    let mut s = format!("{}# omega_b_cm1={}\nomega_cm1,g_au\n", seed_header(seed), hartree_to_cm1(g.omega_b));
    for (w, v) in g.omegas.iter().zip(&g.g_values) {
        let _ = writeln!(s, "{},{}", hartree_to_cm1(*w), v);
    }
    fs::write(dir.join("spectral.csv"), s)?;
    let mut s = seed_header(seed);
    s.push_str("tau_fs,kk_gamma_cm1,status\n");
    for &t in taus_fs {
        match kk_rate(g, fs_to_au(t)) {
            Ok(k) => {
                let _ = writeln!(s, "{t},{k},ok");
            }
            Err(e) => {
                let _ = writeln!(s, "{t},,error: {}", csv_safe(&e.to_string()));
            }
        }
    }
    let _ = writeln!(s, "inf,{},golden_rule", g.golden_rule_cm1());
    fs::write(dir.join("kk.csv"), s)?;
    Ok(())
}

fn write_manifest(dir: &Path, exp: &Experiment, seeds: &[u64], runs: &[String], error: Option<&str>) -> Result<()> {
    let m = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": exp.config,
        "seeds": seeds,
        "runs": runs,
        "error": error,
        "units": {
            "au_per_fs": AU_PER_FS,
            "hartree_per_cm1": HARTREE_PER_CM1,
            "bohr_per_angstrom": BOHR_PER_ANGSTROM,
            "me_per_amu": ME_PER_AMU,
        },
        "system": system_summary(&exp.system),
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(())
}

fn system_summary(s: &SystemSpec) -> serde_json::Value {
    json!({
        "channels": s.channels.iter().map(|c| json!({
            "label": c.label,
            "kind": c.kind,
            "asymptotic_energy_cm1": hartree_to_cm1(c.asymptotic_energy),
        })).collect::<Vec<_>>(),
        "initial_channel": s.channels[s.initial_channel].label,
        "reduced_mass_me": s.reduced_mass,
    })
}

fn single_plot() -> String {
    "set datafile separator ','\n\
     set terminal pngcairo size 900,600\n\
     set output 'survival.png'\n\
     set logscale y\n\
     set xlabel 't (fs)'\n\
     set ylabel 'P(t)'\n\
     plot 'survival.csv' using 1:2 skip 4 with lines title 'survival'\n"
        .to_string()
}

fn sweep_plot(runs: &[RunResult]) -> String {
    let mut s = String::from("set datafile separator ','\nset terminal pngcairo size 900,600\n");
    let gfree = runs.iter().find(|r| r.tau_fs.is_none()).and_then(|r| r.gamma_cm1());
    s.push_str("set output 'gamma_tau.png'\nset logscale x\nset xlabel 'tau (fs)'\nset ylabel 'gamma (cm^-1)'\n");
    match gfree {
        Some(g) => {
            let _ = writeln!(s, "gfree = {g}");
            s.push_str("plot 'rates.csv' using 1:2 skip 2 with linespoints title 'measured', gfree title 'free'\n");
        }
        None => s.push_str("plot 'rates.csv' using 1:2 skip 2 with linespoints title 'measured'\n"),
    }
    s.push_str("unset logscale x\nset logscale y\nset output 'survival.png'\nset xlabel 't (fs)'\nset ylabel 'P(t)'\n");
    let curves: Vec<String> = runs
        .iter()
        .map(|r| format!("'{}/survival.csv' using 1:2 skip 4 with lines title '{}'", r.name, r.name))
        .collect();
    if !curves.is_empty() {
        let _ = writeln!(s, "plot {}", curves.join(", \\\n     "));
    }
    s
}
