//! Split-operator propagation of coupled-channel wave packets.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{ComplexField, FftPair, RadialGrid, C64};
use crate::measure::{MeasurementSchedule, Measurer};
use crate::model::{coupling_matrix_at, SystemSpec};

/// Norm removed from each channel, indexed like the system's channels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FluxLedger {
    pub absorbed: Vec<f64>,
    pub depleted: Vec<f64>,
}

impl FluxLedger {
    pub fn new(n_channels: usize) -> Self {
        Self { absorbed: vec![0.0; n_channels], depleted: vec![0.0; n_channels] }
    }

    pub fn total(&self) -> f64 {
        self.absorbed.iter().sum::<f64>() + self.depleted.iter().sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WavePacket {
    pub fields: Vec<ComplexField>,
    /// Atomic time units.
    pub time: f64,
    pub ledger: FluxLedger,
}

impl WavePacket {
    pub fn new(fields: Vec<ComplexField>) -> Self {
        let n = fields.len();
        Self { fields, time: 0.0, ledger: FluxLedger::new(n) }
    }

    pub fn channel_norms(&self, grid: &RadialGrid) -> Vec<f64> {
        self.fields.iter().map(|f| f.norm_sqr(grid)).collect()
    }

    pub fn live_norm(&self, grid: &RadialGrid) -> f64 {
        self.channel_norms(grid).iter().sum()
    }

    /// Live norm plus everything in the ledger.
    pub fn accounted(&self, grid: &RadialGrid) -> f64 {
        self.live_norm(grid) + self.ledger.total()
    }

    /// Multi-channel ⟨self|other⟩.
    pub fn overlap(&self, other: &WavePacket, grid: &RadialGrid) -> C64 {
        self.fields.iter().zip(&other.fields).map(|(a, b)| a.inner(b, grid)).sum()
    }
}

pub fn channel_populations(wp: &WavePacket, system: &SystemSpec) -> Vec<(String, f64)> {
    system.labels().into_iter().zip(wp.channel_norms(&system.grid)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapConfig {
    /// Bohr.
    pub r_start: f64,
    /// η in hartree; zero disables absorption.
    pub strength: f64,
    pub order: i32,
}

impl CapConfig {
    pub fn off() -> Self {
        Self { r_start: 0.0, strength: 0.0, order: 3 }
    }

    /// Γ(R) = η((R−R_s)/(r_max−R_s))^order beyond R_s.
    pub fn profile(&self, grid: &RadialGrid) -> Vec<f64> {
        grid.points()
            .iter()
            .map(|&r| {
                if self.strength > 0.0 && r > self.r_start {
                    self.strength * ((r - self.r_start) / (grid.r_max() - self.r_start)).powi(self.order)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn validate(&self, grid: &RadialGrid) -> Result<()> {
        if !(self.strength >= 0.0) {
            return invalid(format!("cap strength must be >= 0, got {}", self.strength));
        }
        if self.strength > 0.0 {
            if !(self.r_start > grid.r_min() && self.r_start < grid.r_max()) {
                return invalid(format!("cap r_start {} lies outside the grid", self.r_start));
            }
            if self.order < 1 {
                return invalid(format!("cap order must be >= 1, got {}", self.order));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorConfig {
    /// Atomic time units.
    pub dt: f64,
    pub t_end: f64,
    pub cap: CapConfig,
    pub sample_stride: usize,
}

impl PropagatorConfig {
    pub fn n_steps(&self) -> u64 {
        let x = self.t_end / self.dt;
        let r = x.round();
        if (x - r).abs() <= 1e-9 * r.max(1.0) {
            r as u64
        } else {
            x.floor() as u64
        }
    }

    fn validate(&self, grid: &RadialGrid) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) {
            return invalid(format!("t_end must be >= 0, got {}", self.t_end));
        }
        if self.sample_stride == 0 {
            return invalid("sample_stride must be >= 1");
        }
        self.cap.validate(grid)
    }
}

/// Number of steps per interval `tau`, which must be a positive integer multiple of `dt`.
pub fn steps_per_interval(tau: f64, dt: f64) -> Result<u64> {
    if !(tau > 0.0) {
        return invalid(format!("tau must be positive, got {tau}"));
    }
    let x = tau / dt;
    let m = x.round();
    if m < 1.0 || (x - m).abs() > 1e-9 * m {
        return invalid(format!("tau = {tau} au is not an integer multiple of dt = {dt} au"));
    }
    Ok(m as u64)
}

/// Precomputed split-operator step for one system and time step.
pub struct Propagator {
    n: usize,
    nc: usize,
    dt: f64,
    spacing: f64,
    /// exp(−iV dt/2), row-major nc×nc per grid point.
    half_potential: Vec<C64>,
    /// exp(−iT dt)/N in FFT order.
    kinetic: Vec<C64>,
    cap_start: usize,
    cap_factor: Vec<f64>,
    cap_loss: Vec<f64>,
    ffts: FftPair,
    scratch: Vec<C64>,
    point: Vec<C64>,
    steps: u64,
}

impl Propagator {
    pub fn new(system: &SystemSpec, dt: f64, cap: &CapConfig) -> Result<Self> {
        let grid = &system.grid;
        cap.validate(grid)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("dt must be positive, got {dt}"));
        }
        let n = grid.len();
        let nc = system.n_channels();
        let mut half_potential = Vec::with_capacity(n * nc * nc);
        for i in 0..n {
            let m = coupling_matrix_at(system, i);
            let eig = SymmetricEigen::new(m);
            let q = &eig.eigenvectors;
            let ph: Vec<C64> = eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l * dt / 2.0)).collect();
            for a in 0..nc {
                for b in 0..nc {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..nc {
                        acc += ph[k] * (q[(a, k)] * q[(b, k)]);
                    }
                    half_potential.push(acc);
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        let mass = system.reduced_mass;
        let kinetic = grid
            .momenta()
            .iter()
            .map(|k| C64::from_polar(inv_n, -k * k / (2.0 * mass) * dt))
            .collect();
        let gamma = cap.profile(grid);
        let cap_start = gamma.iter().position(|&g| g > 0.0).unwrap_or(n);
        let cap_factor: Vec<f64> = gamma[cap_start..].iter().map(|g| (-g * dt).exp()).collect();
        let cap_loss = gamma[cap_start..].iter().map(|g| -(-2.0 * g * dt).exp_m1()).collect();
        let ffts = FftPair::new(n);
        let scratch = vec![C64::new(0.0, 0.0); ffts.scratch_len()];
        Ok(Self {
            n,
            nc,
            dt,
            spacing: grid.spacing(),
            half_potential,
            kinetic,
            cap_start,
            cap_factor,
            cap_loss,
            ffts,
            scratch,
            point: vec![C64::new(0.0, 0.0); nc],
            steps: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn apply_half_potential(&mut self, wp: &mut WavePacket) {
        let nc = self.nc;
        if nc == 1 {
            for (z, u) in wp.fields[0].values.iter_mut().zip(&self.half_potential) {
                *z *= u;
            }
            return;
        }
        for i in 0..self.n {
            let u = &self.half_potential[i * nc * nc..(i + 1) * nc * nc];
            for b in 0..nc {
                self.point[b] = wp.fields[b].values[i];
            }
            for a in 0..nc {
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..nc {
                    acc += u[a * nc + b] * self.point[b];
                }
                wp.fields[a].values[i] = acc;
            }
        }
    }

    /// One Strang step followed by the absorber.
    pub fn step(&mut self, wp: &mut WavePacket) -> Result<()> {
        if wp.fields.len() != self.nc || wp.fields.iter().any(|f| f.len() != self.n) {
            return invalid("wave packet does not match the propagator's system");
        }
        self.apply_half_potential(wp);
        for f in &mut wp.fields {
            self.ffts.forward.process_with_scratch(&mut f.values, &mut self.scratch);
            for (z, k) in f.values.iter_mut().zip(&self.kinetic) {
                *z *= k;
            }
            self.ffts.inverse.process_with_scratch(&mut f.values, &mut self.scratch);
        }
        self.apply_half_potential(wp);
        self.steps += 1;
        for (c, f) in wp.fields.iter_mut().enumerate() {
            let tail = &mut f.values[self.cap_start..];
            let mut loss = 0.0;
            for ((z, fac), l) in tail.iter_mut().zip(&self.cap_factor).zip(&self.cap_loss) {
                loss += z.norm_sqr() * l;
                *z *= fac;
            }
            wp.ledger.absorbed[c] += loss * self.spacing;
        }
        if !wp.fields.iter().all(|f| f.is_finite()) {
            return Err(Error::NonFinite { step: self.steps });
        }
        wp.time += self.dt;
        Ok(())
    }
}

/// Advance `wp` by one step of size `dt`.
pub fn split_operator_step(wp: &mut WavePacket, system: &SystemSpec, dt: f64, cap: &CapConfig) -> Result<()> {
    Propagator::new(system, dt, cap)?.step(wp)
}

/// Called at every sample point of [`evolve`].
pub trait Observer {
    fn observe(&mut self, step: u64, wp: &WavePacket) -> Result<()>;
}

impl<F: FnMut(u64, &WavePacket) -> Result<()>> Observer for F {
    fn observe(&mut self, step: u64, wp: &WavePacket) -> Result<()> {
        self(step, wp)
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub labels: Vec<String>,
    /// Atomic time units.
    pub times: Vec<f64>,
    /// ⟨ψ₀|ψ(t)⟩ at each sample.
    pub survival_amplitudes: Vec<C64>,
    /// Live norm per channel at each sample.
    pub populations: Vec<Vec<f64>>,
    pub ledgers: Vec<FluxLedger>,
    pub measurements_applied: u64,
    pub final_state: WavePacket,
}

/// Propagate `wp0` to `config.t_end`, applying measurements right after each
/// step that lands on a multiple of τ and sampling every `sample_stride` steps.
pub fn evolve(
    wp0: &WavePacket,
    system: &SystemSpec,
    config: &PropagatorConfig,
    schedule: Option<&MeasurementSchedule>,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    config.validate(&system.grid)?;
    let grid = system.grid;
    let mut prop = Propagator::new(system, config.dt, &config.cap)?;
    let mut measurer = match schedule {
        Some(s) => Some(Measurer::new(s, system, wp0, config.dt)?),
        None => None,
    };
    let n_steps = config.n_steps();
    let stride = config.sample_stride as u64;
    let cap = (n_steps / stride + 1) as usize;
    let mut traj = Trajectory {
        labels: system.labels(),
        times: Vec::with_capacity(cap),
        survival_amplitudes: Vec::with_capacity(cap),
        populations: Vec::with_capacity(cap),
        ledgers: Vec::with_capacity(cap),
        measurements_applied: 0,
        final_state: wp0.clone(),
    };
    let mut wp = wp0.clone();
    let sample = |wp: &WavePacket, step: u64, traj: &mut Trajectory, obs: &mut [&mut dyn Observer]| -> Result<()> {
        traj.times.push(wp.time);
        traj.survival_amplitudes.push(wp0.overlap(wp, &grid));
        traj.populations.push(wp.channel_norms(&grid));
        traj.ledgers.push(wp.ledger.clone());
        for o in obs.iter_mut() {
            o.observe(step, wp)?;
        }
        Ok(())
    };
    sample(&wp, 0, &mut traj, observers)?;
    for step in 1..=n_steps {
        prop.step(&mut wp)?;
        if let Some(m) = measurer.as_mut() {
            if m.apply_if_due(step, &mut wp, &grid)? {
                traj.measurements_applied += 1;
            }
        }
        if step % stride == 0 {
            sample(&wp, step, &mut traj, observers)?;
        }
    }
    traj.final_state = wp;
    Ok(traj)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    grid: RadialGrid,
    channels: Vec<String>,
    time: f64,
    seed: Option<u64>,
    measurements_applied: u64,
    ledger: FluxLedger,
}

/// Write a checkpoint: one JSON header line, then each channel's amplitudes as
/// little-endian f64 (re, im) pairs.
pub fn write_checkpoint(
    path: &Path,
    wp: &WavePacket,
    system: &SystemSpec,
    seed: Option<u64>,
    measurements_applied: u64,
) -> Result<()> {
    let header = CheckpointHeader {
        grid: system.grid,
        channels: system.labels(),
        time: wp.time,
        seed,
        measurements_applied,
        ledger: wp.ledger.clone(),
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for f in &wp.fields {
        for z in &f.values {
            out.write_all(&z.re.to_le_bytes())?;
            out.write_all(&z.im.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a checkpoint written by [`write_checkpoint`], returning the packet,
/// the recorded seed and the number of measurements already applied.
pub fn read_checkpoint(path: &Path, system: &SystemSpec) -> Result<(WavePacket, Option<u64>, u64)> {
    let bytes = {
        let mut b = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut b)?;
        b
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Invalid("checkpoint has no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.grid != system.grid || header.channels != system.labels() {
        return invalid("checkpoint grid or channels do not match the system");
    }
    let n = system.grid.len();
    let body = &bytes[nl + 1..];
    if body.len() != header.channels.len() * n * 16 {
        return invalid("checkpoint body has the wrong length");
    }
    let f64_at = |k: usize| f64::from_le_bytes(body[k * 8..k * 8 + 8].try_into().unwrap());
    let fields = (0..header.channels.len())
        .map(|c| ComplexField {
            values: (0..n).map(|i| C64::new(f64_at(2 * (c * n + i)), f64_at(2 * (c * n + i) + 1))).collect(),
        })
        .collect();
    Ok((
        WavePacket { fields, time: header.time, ledger: header.ledger },
        header.seed,
        header.measurements_applied,
    ))
}
