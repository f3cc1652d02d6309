//! Surrogate coupled-channel Hamiltonians.
//!
//! Only the dissociation coordinate R is gridded. Fast-mode vibrational levels
//! and electronic states enter as channels with their own asymptotic energy;
//! the diagonal of the potential matrix is `V_α(R) + E_α` and the off-diagonal
//! entries are the coupling potentials.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{fgh_eigensolve, ComplexField, KineticOperator, RadialGrid, C64};
use crate::propagate::WavePacket;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `d·(e^{-2a(R-r0)} - 2e^{-a(R-r0)})`, minimum `-d` at `r0`.
    Morse { d: f64, a: f64, r0: f64 },
    /// `amplitude·e^{-bR} + e_asym`.
    ExpRepulsive { amplitude: f64, b: f64, e_asym: f64 },
    /// `c·exp(-(R-r0)²/(2w²))`.
    Gaussian { c: f64, r0: f64, w: f64 },
    /// Linear interpolation through `(r, v)`, constant beyond the ends.
    Tabulated {
        #[serde(default)]
        r: Vec<f64>,
        #[serde(default)]
        v: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<String>,
    },
}

impl PotentialSpec {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            PotentialSpec::Morse { d, a, r0 } => {
                let e = (-a * (r - r0)).exp();
                d * (e * e - 2.0 * e)
            }
            PotentialSpec::ExpRepulsive { amplitude, b, e_asym } => amplitude * (-b * r).exp() + e_asym,
            PotentialSpec::Gaussian { c, r0, w } => {
                let x = r - r0;
                c * (-x * x / (2.0 * w * w)).exp()
            }
            PotentialSpec::Tabulated { r: xs, v, .. } => interp(xs, v, r),
        }
    }

    /// Limit of the potential as R → ∞.
    pub fn asymptote(&self) -> f64 {
        match self {
            PotentialSpec::Morse { .. } | PotentialSpec::Gaussian { .. } => 0.0,
            PotentialSpec::ExpRepulsive { e_asym, .. } => *e_asym,
            PotentialSpec::Tabulated { v, .. } => v.last().copied().unwrap_or(0.0),
        }
    }

    pub fn on_grid(&self, grid: &RadialGrid) -> Vec<f64> {
        grid.points().iter().map(|&r| self.eval(r)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            PotentialSpec::Morse { d, a, r0 } => {
                if !(*d > 0.0) || !finite(&[*a, *r0, *d]) {
                    return invalid(format!("morse requires finite parameters and d > 0 (d = {d})"));
                }
            }
            PotentialSpec::ExpRepulsive { amplitude, b, e_asym } => {
                if !(*amplitude > 0.0) || !finite(&[*amplitude, *b, *e_asym]) {
                    return invalid(format!(
                        "exp_repulsive requires finite parameters and amplitude > 0 (amplitude = {amplitude})"
                    ));
                }
            }
            PotentialSpec::Gaussian { c, r0, w } => {
                if !(*w > 0.0) || !finite(&[*c, *r0, *w]) {
                    return invalid(format!("gaussian requires finite parameters and w > 0 (w = {w})"));
                }
            }
            PotentialSpec::Tabulated { r, v, file } => {
                if let Some(f) = file {
                    return invalid(format!("tabulated potential from {f} has not been loaded"));
                }
                if r.len() < 2 || r.len() != v.len() {
                    return invalid("tabulated potential needs matching r and v with at least two points");
                }
                if !finite(r) || !finite(v) {
                    return invalid("tabulated potential has non-finite entries");
                }
                if r.windows(2).any(|w| w[1] <= w[0]) {
                    return invalid("tabulated r values must be strictly increasing");
                }
            }
        }
        Ok(())
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let j = xs.partition_point(|&p| p <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let t = (x - x0) / (x1 - x0);
    ys[j - 1] + t * (ys[j] - ys[j - 1])
}

/// Parse two-column text (R in bohr, V in hartree). `#` starts a comment.
pub fn parse_tabulated(text: &str) -> Result<PotentialSpec> {
    let mut r = Vec::new();
    let mut v = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if cols.len() != 2 {
            return invalid(format!("line {}: expected two columns", ln + 1));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::Invalid(format!("line {}: {e}", ln + 1)))
        };
        r.push(parse(cols[0])?);
        v.push(parse(cols[1])?);
    }
    let spec = PotentialSpec::Tabulated { r, v, file: None };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Vibrational,
    Electronic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub label: String,
    pub kind: ChannelKind,
    /// Hartree.
    pub asymptotic_energy: f64,
    pub potential: PotentialSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub a: usize,
    pub b: usize,
    pub potential: PotentialSpec,
}

/// How the initial channel's reference potential is formed for the
/// quasibound initial state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialReference {
    /// The channel potential itself; bound below its asymptote.
    #[default]
    Uncoupled,
    /// The potential held at its barrier maximum outside the well; levels
    /// below the barrier top are resonances of the real potential.
    ClampedAtBarrier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub grid: RadialGrid,
    /// Electron masses.
    pub reduced_mass: f64,
    pub channels: Vec<ChannelSpec>,
    pub couplings: Vec<Coupling>,
    pub initial_channel: usize,
    #[serde(default)]
    pub initial_reference: InitialReference,
}

impl SystemSpec {
    pub fn new(
        grid: RadialGrid,
        reduced_mass: f64,
        channels: Vec<ChannelSpec>,
        couplings: Vec<Coupling>,
        initial_channel: &str,
    ) -> Result<Self> {
        let idx = channels
            .iter()
            .position(|c| c.label == initial_channel)
            .ok_or_else(|| Error::Invalid(format!("initial channel '{initial_channel}' not found")))?;
        let sys = Self {
            grid,
            reduced_mass,
            channels,
            couplings,
            initial_channel: idx,
            initial_reference: InitialReference::Uncoupled,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reduced_mass > 0.0 && self.reduced_mass.is_finite()) {
            return invalid(format!("reduced mass must be positive, got {}", self.reduced_mass));
        }
        if self.channels.is_empty() {
            return invalid("system has no channels");
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].iter().any(|o| o.label == c.label) {
                return invalid(format!("duplicate channel label '{}'", c.label));
            }
            if !c.asymptotic_energy.is_finite() {
                return invalid(format!("channel '{}' has non-finite asymptote", c.label));
            }
            c.potential
                .validate()
                .map_err(|e| Error::Invalid(format!("channel '{}': {e}", c.label)))?;
        }
        let n = self.channels.len();
        for (k, cp) in self.couplings.iter().enumerate() {
            if cp.a >= n || cp.b >= n {
                return invalid(format!("coupling {k} references a missing channel"));
            }
            if cp.a == cp.b {
                return invalid(format!("coupling {k} is diagonal"));
            }
            let key = (cp.a.min(cp.b), cp.a.max(cp.b));
            if self.couplings[..k].iter().any(|o| (o.a.min(o.b), o.a.max(o.b)) == key) {
                return invalid(format!(
                    "duplicate coupling between '{}' and '{}'",
                    self.channels[key.0].label, self.channels[key.1].label
                ));
            }
            cp.potential.validate()?;
        }
        if self.initial_channel >= n {
            return invalid("initial channel index out of range");
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn labels(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.label.clone()).collect()
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| Error::Invalid(format!("unknown channel '{label}'")))
    }

    /// Channels sharing the initial channel's kind.
    pub fn initial_manifold(&self) -> Vec<usize> {
        let kind = self.channels[self.initial_channel].kind;
        (0..self.n_channels()).filter(|&i| self.channels[i].kind == kind).collect()
    }

    /// Diagonal potential of channel `ch`, asymptote included.
    pub fn diagonal_on_grid(&self, ch: usize) -> Vec<f64> {
        let c = &self.channels[ch];
        c.potential.on_grid(&self.grid).into_iter().map(|v| v + c.asymptotic_energy).collect()
    }

    pub fn with_zero_couplings(&self) -> Self {
        Self { couplings: Vec::new(), ..self.clone() }
    }

    /// Copy with every coupling potential multiplied by `s`.
    pub fn with_coupling_scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for cp in &mut out.couplings {
            scale_potential(&mut cp.potential, s);
        }
        out
    }
}

fn scale_potential(p: &mut PotentialSpec, s: f64) {
    match p {
        PotentialSpec::Morse { d, .. } => *d *= s,
        PotentialSpec::ExpRepulsive { amplitude, e_asym, .. } => {
            *amplitude *= s;
            *e_asym *= s;
        }
        PotentialSpec::Gaussian { c, .. } => *c *= s,
        PotentialSpec::Tabulated { v, .. } => v.iter_mut().for_each(|x| *x *= s),
    }
}

/// Potential matrix at one grid point (hartree).
pub fn coupling_matrix_at(system: &SystemSpec, grid_index: usize) -> DMatrix<f64> {
    let n = system.n_channels();
    let r = system.grid.point(grid_index);
    let mut m = DMatrix::zeros(n, n);
    for (i, c) in system.channels.iter().enumerate() {
        m[(i, i)] = c.potential.eval(r) + c.asymptotic_energy;
    }
    for cp in &system.couplings {
        let w = cp.potential.eval(r);
        m[(cp.a, cp.b)] = w;
        m[(cp.b, cp.a)] = w;
    }
    m
}

/// The full Hamiltonian on the grid, for applying H to multi-channel states.
#[derive(Clone)]
pub struct Hamiltonian {
    kinetic: KineticOperator,
    n_ch: usize,
    /// Row-major potential matrices, one per grid point.
    potential: Vec<f64>,
    grid: RadialGrid,
}

impl Hamiltonian {
    pub fn new(system: &SystemSpec) -> Result<Self> {
        let n_ch = system.n_channels();
        let mut potential = Vec::with_capacity(system.grid.len() * n_ch * n_ch);
        for i in 0..system.grid.len() {
            potential.extend(coupling_matrix_at(system, i).transpose().iter());
        }
        Ok(Self {
            kinetic: KineticOperator::new(&system.grid, system.reduced_mass)?,
            n_ch,
            potential,
            grid: system.grid,
        })
    }

    pub fn apply(&self, fields: &[ComplexField]) -> Result<Vec<ComplexField>> {
        if fields.len() != self.n_ch {
            return invalid(format!("expected {} channel fields, got {}", self.n_ch, fields.len()));
        }
        let mut out = Vec::with_capacity(self.n_ch);
        for f in fields {
            out.push(self.kinetic.apply(f)?);
        }
        let nc = self.n_ch;
        for i in 0..self.grid.len() {
            let m = &self.potential[i * nc * nc..(i + 1) * nc * nc];
            for a in 0..nc {
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..nc {
                    acc += fields[b].values[i] * m[a * nc + b];
                }
                out[a].values[i] += acc;
            }
        }
        Ok(out)
    }

    /// ⟨ψ|H|ψ⟩ (real part; H is Hermitian).
    pub fn expectation(&self, fields: &[ComplexField]) -> Result<f64> {
        let h = self.apply(fields)?;
        Ok(fields.iter().zip(&h).map(|(a, b)| a.inner(b, &self.grid).re).sum())
    }
}

/// Analytic Morse levels below the dissociation limit, measured from the well bottom.
pub fn morse_levels_analytic(d: f64, a: f64, _r0: f64, mass: f64) -> Vec<f64> {
    if !(d > 0.0 && a > 0.0 && mass > 0.0) {
        return Vec::new();
    }
    let we = a * (2.0 * d / mass).sqrt();
    let wexe = we * we / (4.0 * d);
    let lambda = (2.0 * mass * d).sqrt() / a;
    let mut out = Vec::new();
    let mut n = 0usize;
    while (n as f64 + 0.5) < lambda {
        let x = n as f64 + 0.5;
        out.push(we * x - wexe * x * x);
        n += 1;
    }
    out
}

/// Morse parameters `(d, a)` for a given ω_e and ω_eχ_e (hartree) and mass.
pub fn morse_from_spectroscopic(we: f64, wexe: f64, mass: f64) -> (f64, f64) {
    let d = we * we / (4.0 * wexe);
    let a = we / (2.0 * d / mass).sqrt();
    (d, a)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorseParams {
    pub d: f64,
    pub a: f64,
    pub r0: f64,
}

impl MorseParams {
    pub fn potential(&self) -> PotentialSpec {
        PotentialSpec::Morse { d: self.d, a: self.a, r0: self.r0 }
    }
}

/// Vibrational-predissociation ladder, all values in atomic units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VibLadderParams {
    pub grid: RadialGrid,
    pub reduced_mass: f64,
    /// Morse potential of the fast diatomic mode.
    pub fast: MorseParams,
    /// Reduced mass of the fast mode.
    pub fast_mass: f64,
    /// Van der Waals well along R, shared by all vibrational channels.
    pub vdw: MorseParams,
    /// Fast-mode quantum number of the initial channel.
    pub v_init: usize,
    pub n_chan: usize,
    /// Nearest-neighbour coupling strength at R = vdw.r0.
    pub c: f64,
    /// Coupling range, 1/bohr.
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectronicChannelParams {
    pub label: String,
    /// Asymptote relative to the initial channel's asymptote (hartree, negative = open).
    pub offset: f64,
    /// Exponent of the repulsive wall.
    pub b: f64,
    /// The wall crosses the initial vdW ground level at this R.
    pub r_cross: f64,
    /// Gaussian coupling to the initial channel.
    pub coupling: f64,
    pub coupling_center: f64,
    pub coupling_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpParams {
    pub ladder: VibLadderParams,
    pub electronic: Vec<ElectronicChannelParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetastableParams {
    pub grid: RadialGrid,
    pub mass: f64,
    pub well: MorseParams,
    pub barrier_height: f64,
    pub barrier_center: f64,
    pub barrier_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum SystemParams {
    VpLadder(VibLadderParams),
    EpThreeState(EpParams),
    #[serde(rename = "metastable_1d")]
    Metastable1d(MetastableParams),
}

pub fn build_system(params: &SystemParams) -> Result<SystemSpec> {
    let sys = match params {
        SystemParams::VpLadder(p) => build_vp_ladder(p)?,
        SystemParams::EpThreeState(p) => build_ep(p)?,
        SystemParams::Metastable1d(p) => build_metastable(p)?,
    };
    quasibound_level(&sys, 0)?;
    Ok(sys)
}

fn build_vp_ladder(p: &VibLadderParams) -> Result<SystemSpec> {
    if p.n_chan < 2 {
        return invalid(format!("vp_ladder needs n_chan >= 2, got {}", p.n_chan));
    }
    if !(p.c >= 0.0) {
        return invalid(format!("coupling strength must be >= 0, got {}", p.c));
    }
    if p.v_init + 1 < p.n_chan {
        return invalid(format!("v_init = {} leaves fewer than {} channels", p.v_init, p.n_chan));
    }
    let levels = morse_levels_analytic(p.fast.d, p.fast.a, p.fast.r0, p.fast_mass);
    if p.v_init >= levels.len() {
        return Err(Error::Unbound(format!(
            "fast mode supports {} levels, v_init = {}",
            levels.len(),
            p.v_init
        )));
    }
    let channels: Vec<ChannelSpec> = (0..p.n_chan)
        .map(|k| {
            let v = p.v_init - k;
            ChannelSpec {
                label: format!("v{v}"),
                kind: ChannelKind::Vibrational,
                asymptotic_energy: levels[v],
                potential: p.vdw.potential(),
            }
        })
        .collect();
    let mut couplings = Vec::new();
    if p.c > 0.0 {
        let amplitude = p.c * (p.b * p.vdw.r0).exp();
        for k in 0..p.n_chan - 1 {
            couplings.push(Coupling {
                a: k,
                b: k + 1,
                potential: PotentialSpec::ExpRepulsive { amplitude, b: p.b, e_asym: 0.0 },
            });
        }
    }
    let label = channels[0].label.clone();
    SystemSpec::new(p.grid, p.reduced_mass, channels, couplings, &label)
}

fn build_ep(p: &EpParams) -> Result<SystemSpec> {
    let mut sys = build_vp_ladder(&p.ladder)?;
    let init = sys.initial_channel;
    let e_init = sys.channels[init].asymptotic_energy;
    let vdw = fgh_eigensolve(&sys.grid, &p.ladder.vdw.potential().on_grid(&sys.grid), sys.reduced_mass, 1)?;
    let e_bound = vdw.energies[0];
    for ec in &p.electronic {
        if !(e_bound > ec.offset) {
            return invalid(format!(
                "electronic channel '{}' offset must lie below the initial level",
                ec.label
            ));
        }
        let amplitude = (e_bound - ec.offset) * (ec.b * ec.r_cross).exp();
        sys.channels.push(ChannelSpec {
            label: ec.label.clone(),
            kind: ChannelKind::Electronic,
            asymptotic_energy: e_init + ec.offset,
            potential: PotentialSpec::ExpRepulsive { amplitude, b: ec.b, e_asym: 0.0 },
        });
        if ec.coupling != 0.0 {
            sys.couplings.push(Coupling {
                a: init,
                b: sys.channels.len() - 1,
                potential: PotentialSpec::Gaussian {
                    c: ec.coupling,
                    r0: ec.coupling_center,
                    w: ec.coupling_width,
                },
            });
        }
    }
    sys.validate()?;
    Ok(sys)
}

fn build_metastable(p: &MetastableParams) -> Result<SystemSpec> {
    let well = p.well.potential();
    let barrier = PotentialSpec::Gaussian { c: p.barrier_height, r0: p.barrier_center, w: p.barrier_width };
    let r = p.grid.points();
    let v = r.iter().map(|&x| well.eval(x) + barrier.eval(x)).collect();
    let ch = ChannelSpec {
        label: "well".into(),
        kind: ChannelKind::Vibrational,
        asymptotic_energy: 0.0,
        potential: PotentialSpec::Tabulated { r, v, file: None },
    };
    let mut sys = SystemSpec::new(p.grid, p.mass, vec![ch], Vec::new(), "well")?;
    sys.initial_reference = InitialReference::ClampedAtBarrier;
    Ok(sys)
}

/// Reference potential for the initial state and the energy below which its
/// levels count as (quasi)bound.
pub fn initial_reference_potential(system: &SystemSpec) -> (Vec<f64>, f64) {
    let ch = &system.channels[system.initial_channel];
    let mut v = system.diagonal_on_grid(system.initial_channel);
    match system.initial_reference {
        InitialReference::Uncoupled => (v, ch.asymptotic_energy + ch.potential.asymptote()),
        InitialReference::ClampedAtBarrier => {
            let imin = argmin(&v);
            let ib = imin + argmax(&v[imin..]);
            let top = v[ib];
            for x in &mut v[ib..] {
                *x = top;
            }
            (v, top)
        }
    }
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

#[derive(Clone, Debug)]
pub struct QuasiboundLevel {
    pub energy: f64,
    pub field: ComplexField,
    pub threshold: f64,
}

pub fn quasibound_level(system: &SystemSpec, index: usize) -> Result<QuasiboundLevel> {
    let (v, threshold) = initial_reference_potential(system);
    let k = (index + 1).min(system.grid.len());
    let sol = fgh_eigensolve(&system.grid, &v, system.reduced_mass, k)?;
    let label = &system.channels[system.initial_channel].label;
    match sol.energies.get(index) {
        Some(&e) if e < threshold => Ok(QuasiboundLevel {
            energy: e,
            field: sol.states[index].clone(),
            threshold,
        }),
        _ => Err(Error::Unbound(format!(
            "channel '{label}' has no level {index} below its asymptote {threshold:.6e} hartree"
        ))),
    }
}

/// The selected level of the uncoupled initial channel as a multi-channel packet.
pub fn initial_quasibound_state(system: &SystemSpec, vib_level_index: usize) -> Result<WavePacket> {
    let level = quasibound_level(system, vib_level_index)?;
    let n = system.grid.len();
    let fields = (0..system.n_channels())
        .map(|i| if i == system.initial_channel { level.field.clone() } else { ComplexField::zeros(n) })
        .collect();
    Ok(WavePacket::new(fields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::*;

    fn ladder(c: f64) -> VibLadderParams {
        let fast_mass = amu_to_me(39.952);
        let (d, a) = morse_from_spectroscopic(cm1_to_hartree(170.0), cm1_to_hartree(0.75), fast_mass);
        VibLadderParams {
            grid: RadialGrid::new(128, 4.0, 30.0).unwrap(),
            reduced_mass: amu_to_me(3.905),
            fast: MorseParams { d, a, r0: 5.0 },
            fast_mass,
            vdw: MorseParams { d: cm1_to_hartree(70.0), a: 1.1, r0: 7.0 },
            v_init: 20,
            n_chan: 3,
            c,
            b: 2.0,
        }
    }

    #[test]
    fn morse_level_count_and_shape() {
        let (d, a, m) = (0.02, 1.0, 10000.0);
        let lv = morse_levels_analytic(d, a, 0.0, m);
        let lambda = (2.0 * m * d).sqrt() / a;
        assert_eq!(lv.len(), (lambda - 0.5).floor() as usize + 1);
        assert!(lv[0] > 0.0);
        assert!(lv.windows(2).all(|w| w[1] > w[0]));
        assert!(*lv.last().unwrap() < d);
        assert!(morse_levels_analytic(-1.0, 1.0, 0.0, 1.0).is_empty());
    }

    #[test]
    fn morse_harmonic_limit() {
        let m: f64 = 1000.0;
        let a = 1.0;
        let d = 50.0;
        let we = a * (2.0 * d / m).sqrt();
        assert!(we / (4.0 * d) < 0.0025);
        let lv = morse_levels_analytic(d, a, 0.0, m);
        assert!(((lv[1] - lv[0]) / we - 1.0).abs() < 0.01);
    }

    #[test]
    fn spectroscopic_round_trip() {
        let m = amu_to_me(39.952);
        let (d, a) = morse_from_spectroscopic(cm1_to_hartree(170.0), cm1_to_hartree(0.75), m);
        let lv = morse_levels_analytic(d, a, 0.0, m);
        let gap = hartree_to_cm1(lv[20] - lv[19]);
        assert!((gap - 140.0).abs() < 1e-9, "{gap}");
    }

    #[test]
    fn ladder_structure() {
        let sys = build_system(&SystemParams::VpLadder(ladder(1e-5))).unwrap();
        assert_eq!(sys.labels(), vec!["v20", "v19", "v18"]);
        assert_eq!(sys.couplings.len(), 2);
        let e: Vec<f64> = sys.channels.iter().map(|c| c.asymptotic_energy).collect();
        assert!(e[0] > e[1] && e[1] > e[2]);
        let zero = build_system(&SystemParams::VpLadder(ladder(0.0))).unwrap();
        assert!(zero.couplings.is_empty());
        for i in [0, 40, 127] {
            let m = coupling_matrix_at(&zero, i);
            assert!((0..m.nrows()).all(|r| (0..m.ncols()).all(|c| r == c || m[(r, c)] == 0.0)));
        }
    }

    #[test]
    fn coupling_matrix_matches_scalar_evaluation() {
        let sys = build_system(&SystemParams::VpLadder(ladder(2e-5))).unwrap();
        for i in [0usize, 17, 64, 127] {
            let r = sys.grid.point(i);
            let m = coupling_matrix_at(&sys, i);
            assert_eq!(m, m.transpose());
            for (k, c) in sys.channels.iter().enumerate() {
                assert_eq!(m[(k, k)], c.potential.eval(r) + c.asymptotic_energy);
            }
            let want = 2e-5 * (-2.0 * (r - 7.0)).exp();
            assert!((m[(0, 1)] - want).abs() <= 1e-15 * want.abs().max(1e-300) * 10.0);
            assert_eq!(m[(0, 2)], 0.0);
        }
    }

    #[test]
    fn initial_state_properties() {
        let sys = build_system(&SystemParams::VpLadder(ladder(1e-5))).unwrap();
        let wp = initial_quasibound_state(&sys, 0).unwrap();
        let pops = wp.channel_norms(&sys.grid);
        assert!((pops[0] - 1.0).abs() < 1e-10);
        assert_eq!(pops[1], 0.0);
        // no sign change in the ground level
        let f = &wp.fields[0].values;
        let peak = f.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        assert!(f.iter().all(|z| z.re > -1e-8 * peak));
        let lv = quasibound_level(&sys.with_zero_couplings(), 0).unwrap();
        let h = Hamiltonian::new(&sys.with_zero_couplings()).unwrap();
        let e = h.expectation(&wp.fields).unwrap();
        assert!((e - lv.energy).abs() < 1e-10);
        assert!(initial_quasibound_state(&sys, 50).is_err());
    }

    #[test]
    fn rejects_bad_systems() {
        let g = RadialGrid::new(16, 0.0, 1.0).unwrap();
        let ch = |l: &str| ChannelSpec {
            label: l.into(),
            kind: ChannelKind::Vibrational,
            asymptotic_energy: 0.0,
            potential: PotentialSpec::Morse { d: 1.0, a: 1.0, r0: 0.5 },
        };
        assert!(SystemSpec::new(g, 1.0, vec![ch("a"), ch("a")], vec![], "a").is_err());
        let cp = Coupling { a: 0, b: 3, potential: PotentialSpec::Gaussian { c: 1.0, r0: 0.0, w: 1.0 } };
        assert!(SystemSpec::new(g, 1.0, vec![ch("a"), ch("b")], vec![cp], "a").is_err());
        assert!(SystemSpec::new(g, 1.0, vec![ch("a")], vec![], "z").is_err());
        let mut bad = ladder(1e-5);
        bad.vdw.d = cm1_to_hartree(0.001);
        assert!(matches!(build_system(&SystemParams::VpLadder(bad)), Err(Error::Unbound(_))));
    }

    #[test]
    fn tabulated_parsing_and_interp() {
        let p = parse_tabulated("# R V\n0 1.0\n1, 3.0\n2 5.0\n").unwrap();
        assert_eq!(p.eval(0.5), 2.0);
        assert_eq!(p.eval(-1.0), 1.0);
        assert_eq!(p.eval(9.0), 5.0);
        assert_eq!(p.asymptote(), 5.0);
        assert!(parse_tabulated("0 1\n0 2\n").is_err());
        assert!(parse_tabulated("0 1 2\n").is_err());
    }

    #[test]
    fn metastable_reference_is_clamped() {
        let p = MetastableParams {
            grid: RadialGrid::new(256, 1.0, 40.0).unwrap(),
            mass: 2000.0,
            well: MorseParams { d: 0.01, a: 1.0, r0: 3.0 },
            barrier_height: 0.015,
            barrier_center: 6.0,
            barrier_width: 0.7,
        };
        let sys = build_system(&SystemParams::Metastable1d(p)).unwrap();
        let (v, top) = initial_reference_potential(&sys);
        assert_eq!(*v.last().unwrap(), top);
        let lv = quasibound_level(&sys, 0).unwrap();
        assert!(lv.energy < top);
    }
}
