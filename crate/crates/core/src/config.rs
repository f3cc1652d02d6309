//! Run configuration: JSON schema, presets and resolution to atomic units.
//!
//! Resolution order, later entries winning: built-in field defaults, the
//! named preset, the user's file (objects merged key by key, arrays and
//! scalars replaced), then command-line overrides applied by the caller.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::measure::{DepletionMode, MeasurementKind};
use crate::model::{
    build_system, parse_tabulated, ChannelKind, ChannelSpec, Coupling, ElectronicChannelParams, EpParams,
    MetastableParams, MorseParams, PotentialSpec, SystemParams, SystemSpec, VibLadderParams,
};
use crate::propagate::{steps_per_interval, CapConfig, PropagatorConfig};
use crate::units::{amu_to_me, cm1_to_hartree, fs_to_au, ps_to_au};

pub const PRESETS: [&str; 3] = ["vp2_default", "vp2_paper_scale", "ep3_default"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemBlock,
    pub grid: GridBlock,
    pub propagation: PropagationBlock,
    #[serde(default)]
    pub measurement: Option<MeasurementBlock>,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub kind: SystemKind,
    pub params: Value,
    #[serde(default)]
    pub initial_level: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    VpLadder,
    EpThreeState,
    #[serde(rename = "metastable_1d")]
    Metastable1d,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VpLadderBlock {
    pub reduced_mass_amu: f64,
    pub fast_we_cm1: f64,
    pub fast_wexe_cm1: f64,
    pub fast_mass_amu: f64,
    #[serde(default = "default_fast_r0")]
    pub fast_r0_bohr: f64,
    pub vdw_d_cm1: f64,
    pub vdw_a_per_bohr: f64,
    pub vdw_r0_bohr: f64,
    pub v_init: usize,
    #[serde(default = "default_n_chan")]
    pub n_chan: usize,
    /// Coupling strength at R = vdw_r0_bohr.
    pub coupling_cm1: f64,
    pub coupling_range_per_bohr: f64,
}

fn default_fast_r0() -> f64 {
    5.0
}

fn default_n_chan() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectronicBlock {
    pub label: String,
    pub offset_cm1: f64,
    pub range_per_bohr: f64,
    pub crossing_bohr: f64,
    pub coupling_cm1: f64,
    pub coupling_center_bohr: f64,
    pub coupling_width_bohr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpBlock {
    pub ladder: VpLadderBlock,
    pub electronic: Vec<ElectronicBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetastableBlock {
    pub mass_amu: f64,
    pub well_d_cm1: f64,
    pub well_a_per_bohr: f64,
    pub well_r0_bohr: f64,
    pub barrier_height_cm1: f64,
    pub barrier_center_bohr: f64,
    pub barrier_width_bohr: f64,
}

/// Explicit channels; potentials in hartree and bohr.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomBlock {
    pub reduced_mass_amu: f64,
    pub channels: Vec<CustomChannel>,
    #[serde(default)]
    pub couplings: Vec<CustomCoupling>,
    pub initial_channel: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomChannel {
    pub label: String,
    pub kind: ChannelKind,
    #[serde(default)]
    pub asymptotic_energy_cm1: f64,
    pub potential: PotentialSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomCoupling {
    pub a: String,
    pub b: String,
    pub potential: PotentialSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub n_points: usize,
    pub r_min_bohr: f64,
    pub r_max_bohr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationBlock {
    #[serde(default = "default_dt")]
    pub dt_fs: f64,
    pub t_end_ps: f64,
    pub cap: CapBlock,
}

fn default_dt() -> f64 {
    0.1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapBlock {
    pub r_start_bohr: f64,
    #[serde(default = "default_cap_strength")]
    pub strength_hartree: f64,
    #[serde(default = "default_cap_order")]
    pub order: i32,
}

fn default_cap_strength() -> f64 {
    0.01
}

fn default_cap_order() -> i32 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementBlock {
    pub kind: MeasurementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_fs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_list_fs: Option<Vec<f64>>,
    /// Defaults to the initial manifold without the initial channel.
    #[serde(default)]
    pub targets: Option<Vec<String>>,
    /// Defaults to keep_initial_projection for ep_three_state, else remove_targets.
    #[serde(default)]
    pub mode: Option<DepletionMode>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    /// Survival fit window; overrides `fit_window_fraction`.
    #[serde(default)]
    pub fit_window_ps: Option<[f64; 2]>,
    /// Fit window as fractions of the run length.
    #[serde(default = "default_fit_fraction")]
    pub fit_window_fraction: [f64; 2],
    #[serde(default = "default_true")]
    pub spectral: bool,
    #[serde(default = "default_omega_step")]
    pub omega_step_cm1: f64,
    #[serde(default)]
    pub branching: bool,
    #[serde(default)]
    pub zeno: bool,
    /// Fits with a larger rmse are reported as warnings.
    #[serde(default = "default_rmse_warning")]
    pub rmse_warning: f64,
}

fn default_fit_fraction() -> [f64; 2] {
    [0.3, 1.0]
}

fn default_true() -> bool {
    true
}

fn default_omega_step() -> f64 {
    0.5
}

fn default_rmse_warning() -> f64 {
    1e-2
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        Self {
            fit_window_ps: None,
            fit_window_fraction: default_fit_fraction(),
            spectral: true,
            omega_step_cm1: default_omega_step(),
            branching: false,
            zeno: false,
            rmse_warning: default_rmse_warning(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out_dir")]
    pub directory: String,
    /// Propagation steps between samples.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub checkpoint: bool,
}

fn default_out_dir() -> String {
    "out".into()
}

fn default_stride() -> usize {
    10
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: default_out_dir(), stride: default_stride(), checkpoint: false }
    }
}

/// Measurement settings in atomic units.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementPlan {
    pub kind: MeasurementKind,
    pub mode: DepletionMode,
    pub targets: Vec<String>,
    pub seed: u64,
    /// Femtoseconds, as given.
    pub taus_fs: Vec<f64>,
    /// True when the config asked for a τ list.
    pub sweep: bool,
}

/// A validated configuration together with everything derived from it.
#[derive(Clone, Debug)]
pub struct Experiment {
    /// Fully resolved; parsing its JSON reproduces this experiment.
    pub config: RunConfig,
    pub system: SystemSpec,
    pub initial_level: usize,
    pub propagation: PropagatorConfig,
    pub measurement: Option<MeasurementPlan>,
}

impl Experiment {
    pub fn fit_window(&self) -> (f64, f64) {
        match self.config.analysis.fit_window_ps {
            Some([lo, hi]) => (ps_to_au(lo), ps_to_au(hi)),
            None => {
                let [a, b] = self.config.analysis.fit_window_fraction;
                (a * self.propagation.t_end, b * self.propagation.t_end)
            }
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.config.output.directory)
    }

    /// Resolved configuration as pretty JSON.
    pub fn config_json(&self) -> String {
        serde_json::to_string_pretty(&self.config).unwrap_or_default()
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        parse_config(&json!({ "system": { "preset": name } }).to_string())
    }
}

fn cfg_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config { path: path.into(), msg: msg.into() }
}

/// Full preset configuration as JSON.
pub fn preset(name: &str) -> Option<Value> {
    let ladder = json!({
        "reduced_mass_amu": 3.905,
        "fast_we_cm1": 215.0,
        "fast_wexe_cm1": 0.75,
        "fast_mass_amu": 39.952,
        "fast_r0_bohr": 5.0,
        "vdw_d_cm1": 70.0,
        "vdw_a_per_bohr": 1.2,
        "vdw_r0_bohr": 7.0,
        "v_init": 20,
        "n_chan": 2,
        "coupling_cm1": 6.5,
        "coupling_range_per_bohr": 2.5
    });
    let grid = json!({ "n_points": 256, "r_min_bohr": 4.0, "r_max_bohr": 44.0 });
    let cap = json!({ "r_start_bohr": 30.0, "strength_hartree": 0.01, "order": 3 });
    match name {
        "vp2_default" => Some(json!({
            "system": { "preset": name, "kind": "vp_ladder", "params": ladder },
            "grid": grid,
            "propagation": { "dt_fs": 0.1, "t_end_ps": 8.0, "cap": cap },
        })),
        "vp2_paper_scale" => {
            let mut p = ladder;
            p["coupling_cm1"] = json!(2.674);
            Some(json!({
                "system": { "preset": name, "kind": "vp_ladder", "params": p },
                "grid": grid,
                "propagation": { "dt_fs": 0.1, "t_end_ps": 60.0, "cap": cap },
            }))
        }
        "ep3_default" => Some(json!({
            "system": {
                "preset": name,
                "kind": "ep_three_state",
                "params": {
                    "ladder": ladder,
                    "electronic": [
                        { "label": "2g", "offset_cm1": -300.0, "range_per_bohr": 1.5, "crossing_bohr": 7.0,
                          "coupling_cm1": 1.3, "coupling_center_bohr": 7.0, "coupling_width_bohr": 1.0 },
                        { "label": "C", "offset_cm1": -500.0, "range_per_bohr": 1.0, "crossing_bohr": 6.5,
                          "coupling_cm1": 1.93, "coupling_center_bohr": 7.0, "coupling_width_bohr": 1.0 }
                    ]
                }
            },
            "grid": grid,
            "propagation": { "dt_fs": 0.1, "t_end_ps": 25.0, "cap": cap },
            "analysis": { "branching": true, "fit_window_fraction": [0.2, 1.0] },
            "output": { "stride": 50 }
        })),
        _ => None,
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn typed<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner == ".") {
            (true, true) => "<root>".to_string(),
            (true, false) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        cfg_err(path, e.into_inner().to_string())
    })
}

/// Parse, default, validate and resolve a configuration. Tabulated potential
/// files are read relative to the current directory.
pub fn parse_config(text: &str) -> Result<Experiment> {
    parse_config_in(text, Path::new("."))
}

/// As [`parse_config`], resolving tabulated potential files against `base`.
pub fn parse_config_in(text: &str, base: &Path) -> Result<Experiment> {
    let user: Value = serde_json::from_str(text).map_err(|e| cfg_err("<root>", e.to_string()))?;
    if !user.is_object() {
        return Err(cfg_err("<root>", "configuration must be a JSON object"));
    }
    let preset_name = match user.pointer("/system/preset") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(cfg_err("system.preset", "must be a string")),
    };
    let mut merged = match &preset_name {
        Some(name) => preset(name).ok_or_else(|| {
            cfg_err("system.preset", format!("unknown preset '{name}' (known: {})", PRESETS.join(", ")))
        })?,
        None => json!({}),
    };
    merge(&mut merged, user);
    let mut config: RunConfig = typed(merged, "")?;
    resolve(&mut config, base)
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(cfg_err(path, format!("must be positive, got {v}")))
    }
}

fn ladder_params(b: &VpLadderBlock, grid: RadialGrid, prefix: &str) -> Result<VibLadderParams> {
    let p = |k: &str| format!("{prefix}.{k}");
    let fast_mass = amu_to_me(positive(&p("fast_mass_amu"), b.fast_mass_amu)?);
    let we = cm1_to_hartree(positive(&p("fast_we_cm1"), b.fast_we_cm1)?);
    let wexe = cm1_to_hartree(positive(&p("fast_wexe_cm1"), b.fast_wexe_cm1)?);
    let (d, a) = crate::model::morse_from_spectroscopic(we, wexe, fast_mass);
    if b.coupling_cm1 < 0.0 || !b.coupling_cm1.is_finite() {
        return Err(cfg_err(p("coupling_cm1"), format!("must be >= 0, got {}", b.coupling_cm1)));
    }
    if b.n_chan < 2 {
        return Err(cfg_err(p("n_chan"), format!("must be >= 2, got {}", b.n_chan)));
    }
    Ok(VibLadderParams {
        grid,
        reduced_mass: amu_to_me(positive(&p("reduced_mass_amu"), b.reduced_mass_amu)?),
        fast: MorseParams { d, a, r0: b.fast_r0_bohr },
        fast_mass,
        vdw: MorseParams {
            d: cm1_to_hartree(positive(&p("vdw_d_cm1"), b.vdw_d_cm1)?),
            a: positive(&p("vdw_a_per_bohr"), b.vdw_a_per_bohr)?,
            r0: b.vdw_r0_bohr,
        },
        v_init: b.v_init,
        n_chan: b.n_chan,
        c: cm1_to_hartree(b.coupling_cm1),
        b: positive(&p("coupling_range_per_bohr"), b.coupling_range_per_bohr)?,
    })
}

fn load_tabulated(p: &mut PotentialSpec, base: &Path, path: &str) -> Result<()> {
    if let PotentialSpec::Tabulated { file: Some(f), .. } = p {
        let full = base.join(&*f);
        let text = std::fs::read_to_string(&full)
            .map_err(|e| cfg_err(path, format!("cannot read {}: {e}", full.display())))?;
        *p = parse_tabulated(&text).map_err(|e| cfg_err(path, e.to_string()))?;
    }
    p.validate().map_err(|e| cfg_err(path, e.to_string()))
}

fn build(config: &mut RunConfig, grid: RadialGrid, base: &Path) -> Result<SystemSpec> {
    let params = config.system.params.clone();
    let spec = match config.system.kind {
        SystemKind::VpLadder => {
            let b: VpLadderBlock = typed(params, "system.params")?;
            let p = ladder_params(&b, grid, "system.params")?;
            config.system.params = serde_json::to_value(&b)?;
            build_system(&SystemParams::VpLadder(p))
        }
        SystemKind::EpThreeState => {
            let b: EpBlock = typed(params, "system.params")?;
            let ladder = ladder_params(&b.ladder, grid, "system.params.ladder")?;
            let electronic = b
                .electronic
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let p = |k: &str| format!("system.params.electronic[{i}].{k}");
                    Ok(ElectronicChannelParams {
                        label: e.label.clone(),
                        offset: cm1_to_hartree(e.offset_cm1),
                        b: positive(&p("range_per_bohr"), e.range_per_bohr)?,
                        r_cross: e.crossing_bohr,
                        coupling: cm1_to_hartree(e.coupling_cm1),
                        coupling_center: e.coupling_center_bohr,
                        coupling_width: positive(&p("coupling_width_bohr"), e.coupling_width_bohr)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            config.system.params = serde_json::to_value(&b)?;
            build_system(&SystemParams::EpThreeState(EpParams { ladder, electronic }))
        }
        SystemKind::Metastable1d => {
            let b: MetastableBlock = typed(params, "system.params")?;
            let p = |k: &str| format!("system.params.{k}");
            let mp = MetastableParams {
                grid,
                mass: amu_to_me(positive(&p("mass_amu"), b.mass_amu)?),
                well: MorseParams {
                    d: cm1_to_hartree(positive(&p("well_d_cm1"), b.well_d_cm1)?),
                    a: positive(&p("well_a_per_bohr"), b.well_a_per_bohr)?,
                    r0: b.well_r0_bohr,
                },
                barrier_height: cm1_to_hartree(b.barrier_height_cm1),
                barrier_center: b.barrier_center_bohr,
                barrier_width: positive(&p("barrier_width_bohr"), b.barrier_width_bohr)?,
            };
            config.system.params = serde_json::to_value(&b)?;
            build_system(&SystemParams::Metastable1d(mp))
        }
        SystemKind::Custom => {
            let mut b: CustomBlock = typed(params, "system.params")?;
            for (i, c) in b.channels.iter_mut().enumerate() {
                load_tabulated(&mut c.potential, base, &format!("system.params.channels[{i}].potential"))?;
            }
            for (i, c) in b.couplings.iter_mut().enumerate() {
                load_tabulated(&mut c.potential, base, &format!("system.params.couplings[{i}].potential"))?;
            }
            let channels: Vec<ChannelSpec> = b
                .channels
                .iter()
                .map(|c| ChannelSpec {
                    label: c.label.clone(),
                    kind: c.kind,
                    asymptotic_energy: cm1_to_hartree(c.asymptotic_energy_cm1),
                    potential: c.potential.clone(),
                })
                .collect();
            let find = |l: &str, path: String| {
                channels.iter().position(|c| c.label == l).ok_or_else(|| cfg_err(path, format!("unknown channel '{l}'")))
            };
            let couplings = b
                .couplings
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    Ok(Coupling {
                        a: find(&c.a, format!("system.params.couplings[{i}].a"))?,
                        b: find(&c.b, format!("system.params.couplings[{i}].b"))?,
                        potential: c.potential.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mass = amu_to_me(positive("system.params.reduced_mass_amu", b.reduced_mass_amu)?);
            config.system.params = serde_json::to_value(&b)?;
            SystemSpec::new(grid, mass, channels, couplings, &b.initial_channel)
                .map_err(|e| cfg_err("system.params", e.to_string()))
        }
    };
    spec.map_err(|e| match e {
        Error::Config { .. } => e,
        other => cfg_err("system", other.to_string()),
    })
}

fn resolve(config: &mut RunConfig, base: &Path) -> Result<Experiment> {
    let g = config.grid;
    let grid = RadialGrid::new(g.n_points, g.r_min_bohr, g.r_max_bohr).map_err(|e| cfg_err("grid", e.to_string()))?;
    let system = build(config, grid, base)?;
    crate::model::quasibound_level(&system, config.system.initial_level)
        .map_err(|e| cfg_err("system.initial_level", e.to_string()))?;

    let pr = config.propagation;
    let dt = fs_to_au(positive("propagation.dt_fs", pr.dt_fs)?);
    let t_end = ps_to_au(positive("propagation.t_end_ps", pr.t_end_ps)?);
    if pr.cap.strength_hartree < 0.0 || !pr.cap.strength_hartree.is_finite() {
        return Err(cfg_err("propagation.cap.strength_hartree", "must be >= 0"));
    }
    if pr.cap.strength_hartree > 0.0 && !(pr.cap.r_start_bohr > grid.r_min() && pr.cap.r_start_bohr < grid.r_max()) {
        return Err(cfg_err(
            "propagation.cap.r_start_bohr",
            format!("{} lies outside the grid ({}, {})", pr.cap.r_start_bohr, grid.r_min(), grid.r_max()),
        ));
    }
    if pr.cap.order < 1 {
        return Err(cfg_err("propagation.cap.order", "must be >= 1"));
    }
    if config.output.stride == 0 {
        return Err(cfg_err("output.stride", "must be >= 1"));
    }
    let propagation = PropagatorConfig {
        dt,
        t_end,
        cap: CapConfig { r_start: pr.cap.r_start_bohr, strength: pr.cap.strength_hartree, order: pr.cap.order },
        sample_stride: config.output.stride,
    };

    let an = &config.analysis;
    if let Some([lo, hi]) = an.fit_window_ps {
        if !(lo >= 0.0 && hi > lo && hi <= pr.t_end_ps * (1.0 + 1e-12)) {
            return Err(cfg_err("analysis.fit_window_ps", format!("[{lo}, {hi}] must lie within [0, t_end_ps]")));
        }
    }
    let [fa, fb] = an.fit_window_fraction;
    if !(fa >= 0.0 && fb > fa && fb <= 1.0) {
        return Err(cfg_err("analysis.fit_window_fraction", "must satisfy 0 <= lo < hi <= 1"));
    }
    positive("analysis.omega_step_cm1", an.omega_step_cm1)?;

    let measurement = match config.measurement.as_mut() {
        None => None,
        Some(m) => {
            let (taus, sweep) = match (&m.tau_fs, &m.tau_list_fs) {
                (Some(_), Some(_)) => {
                    return Err(cfg_err("measurement", "give either tau_fs or tau_list_fs, not both"))
                }
                (Some(t), None) => (vec![*t], false),
                (None, Some(l)) => (l.clone(), true),
                (None, None) => return Err(cfg_err("measurement.tau_fs", "missing (or give tau_list_fs)")),
            };
            let key = if sweep { "measurement.tau_list_fs" } else { "measurement.tau_fs" };
            for (i, &t) in taus.iter().enumerate() {
                let path = if sweep { format!("{key}[{i}]") } else { key.to_string() };
                if !(t > 0.0 && t.is_finite()) {
                    return Err(cfg_err(path, format!("tau must be positive, got {t}")));
                }
                steps_per_interval(fs_to_au(t), dt).map_err(|_| {
                    cfg_err(path, format!("{t} fs is not an integer multiple of dt_fs = {}", pr.dt_fs))
                })?;
            }
            let mode = m.mode.unwrap_or(if config.system.kind == SystemKind::EpThreeState {
                DepletionMode::KeepInitialProjection
            } else {
                DepletionMode::RemoveTargets
            });
            let targets = match &m.targets {
                Some(t) => t.clone(),
                None => system
                    .initial_manifold()
                    .into_iter()
                    .filter(|&i| i != system.initial_channel)
                    .map(|i| system.channels[i].label.clone())
                    .collect(),
            };
            for (i, t) in targets.iter().enumerate() {
                system.channel_index(t).map_err(|e| cfg_err(format!("measurement.targets[{i}]"), e.to_string()))?;
            }
            let needs = m.kind == MeasurementKind::Randomization || mode == DepletionMode::RemoveTargets;
            if needs && targets.is_empty() {
                return Err(cfg_err("measurement.targets", "must not be empty"));
            }
            m.mode = Some(mode);
            m.targets = Some(targets.clone());
            Some(MeasurementPlan { kind: m.kind, mode, targets, seed: m.seed, taus_fs: taus, sweep })
        }
    };

    Ok(Experiment {
        config: config.clone(),
        system,
        initial_level: config.system.initial_level,
        propagation,
        measurement,
    })
}
