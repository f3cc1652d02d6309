//! Instantaneous repeated measurements: population depletion and phase
//! randomization.
//!
//! Random phases come from ChaCha8 seeded with the schedule seed, on stream
//! `(measurement_index << 16) | channel_index`, one uniform draw per grid
//! point mapped to θ = 2π·u. Draws are independent per grid point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{RadialGrid, C64};
use crate::model::SystemSpec;
use crate::propagate::{steps_per_interval, WavePacket};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Depletion,
    Randomization,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepletionMode {
    /// Zero the target channels.
    #[default]
    RemoveTargets,
    /// Replace the initial-manifold component by ⟨ψ₀|ψ⟩ψ₀.
    KeepInitialProjection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSchedule {
    pub kind: MeasurementKind,
    /// Atomic time units.
    pub tau: f64,
    pub mode: DepletionMode,
    pub targets: Vec<String>,
    pub seed: u64,
}

impl MeasurementSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return invalid(format!("tau must be positive, got {}", self.tau));
        }
        let needs_targets = self.kind == MeasurementKind::Randomization || self.mode == DepletionMode::RemoveTargets;
        if needs_targets && self.targets.is_empty() {
            return invalid("measurement targets must not be empty");
        }
        Ok(())
    }

    pub fn target_indices(&self, system: &SystemSpec) -> Result<Vec<usize>> {
        self.targets.iter().map(|t| system.channel_index(t)).collect()
    }
}

/// Zero the target channels, booking their norm as depleted.
pub fn deplete_channels(wp: &mut WavePacket, targets: &[usize], grid: &RadialGrid) {
    for &c in targets {
        let removed = wp.fields[c].norm_sqr(grid);
        if removed > 0.0 {
            wp.fields[c].values.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            wp.ledger.depleted[c] += removed;
        }
    }
}

/// Project the `manifold` channels onto ψ₀; the orthogonal remainder is
/// booked per channel as depleted. Other channels are untouched.
pub fn project_onto_initial(wp: &mut WavePacket, psi0: &WavePacket, manifold: &[usize], grid: &RadialGrid) {
    let mut a = C64::new(0.0, 0.0);
    let mut p0 = 0.0;
    for &c in manifold {
        a += psi0.fields[c].inner(&wp.fields[c], grid);
        p0 += psi0.fields[c].norm_sqr(grid);
    }
    if p0 > 0.0 {
        a /= p0;
    }
    for &c in manifold {
        let mut removed = 0.0;
        for (z, z0) in wp.fields[c].values.iter_mut().zip(&psi0.fields[c].values) {
            let keep = a * z0;
            removed += (*z - keep).norm_sqr();
            *z = keep;
        }
        wp.ledger.depleted[c] += removed * grid.spacing();
    }
}

pub fn apply_depletion(
    wp: &mut WavePacket,
    schedule: &MeasurementSchedule,
    system: &SystemSpec,
    initial_state: Option<&WavePacket>,
) -> Result<()> {
    match schedule.mode {
        DepletionMode::RemoveTargets => {
            let targets = schedule.target_indices(system)?;
            deplete_channels(wp, &targets, &system.grid);
        }
        DepletionMode::KeepInitialProjection => {
            let Some(psi0) = initial_state else {
                return invalid("keep_initial_projection needs the initial state");
            };
            project_onto_initial(wp, psi0, &system.initial_manifold(), &system.grid);
        }
    }
    Ok(())
}

/// RNG for one channel at one measurement.
pub fn phase_rng(seed: u64, measurement_index: u64, channel_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((measurement_index << 16) | channel_index as u64);
    rng
}

/// Multiply every point of each target channel by an independent random phase.
pub fn randomize_channels(wp: &mut WavePacket, targets: &[usize], seed: u64, measurement_index: u64) {
    for &c in targets {
        let mut rng = phase_rng(seed, measurement_index, c);
        for z in &mut wp.fields[c].values {
            let u: f64 = rng.random();
            *z *= C64::from_polar(1.0, std::f64::consts::TAU * u);
        }
    }
}

pub fn apply_randomization(
    wp: &mut WavePacket,
    schedule: &MeasurementSchedule,
    system: &SystemSpec,
    measurement_index: u64,
) -> Result<()> {
    let targets = schedule.target_indices(system)?;
    randomize_channels(wp, &targets, schedule.seed, measurement_index);
    Ok(())
}

/// Schedule resolved against a system, driven by the step loop.
pub(crate) struct Measurer {
    kind: MeasurementKind,
    mode: DepletionMode,
    seed: u64,
    steps_per: u64,
    targets: Vec<usize>,
    manifold: Vec<usize>,
    psi0: WavePacket,
}

impl Measurer {
    pub(crate) fn new(schedule: &MeasurementSchedule, system: &SystemSpec, wp0: &WavePacket, dt: f64) -> Result<Self> {
        schedule.validate()?;
        let steps_per = steps_per_interval(schedule.tau, dt)?;
        Ok(Self {
            kind: schedule.kind,
            mode: schedule.mode,
            seed: schedule.seed,
            steps_per,
            targets: schedule.target_indices(system)?,
            manifold: system.initial_manifold(),
            psi0: wp0.clone(),
        })
    }

    /// Apply the measurement if `step` is a multiple of τ/dt.
    pub(crate) fn apply_if_due(&mut self, step: u64, wp: &mut WavePacket, grid: &RadialGrid) -> Result<bool> {
        if !step.is_multiple_of(self.steps_per) {
            return Ok(false);
        }
        let index = step / self.steps_per;
        match (self.kind, self.mode) {
            (MeasurementKind::Randomization, _) => randomize_channels(wp, &self.targets, self.seed, index),
            (MeasurementKind::Depletion, DepletionMode::RemoveTargets) => deplete_channels(wp, &self.targets, grid),
            (MeasurementKind::Depletion, DepletionMode::KeepInitialProjection) => {
                project_onto_initial(wp, &self.psi0, &self.manifold, grid)
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian_packet, ComplexField};
    use crate::model::{ChannelKind, ChannelSpec, PotentialSpec};

    fn system() -> SystemSpec {
        let g = RadialGrid::new(64, 0.0, 20.0).unwrap();
        let ch = |l: &str, kind| ChannelSpec {
            label: l.into(),
            kind,
            asymptotic_energy: 0.0,
            potential: PotentialSpec::Morse { d: 0.01, a: 1.0, r0: 5.0 },
        };
        SystemSpec::new(
            g,
            1000.0,
            vec![ch("a", ChannelKind::Vibrational), ch("b", ChannelKind::Vibrational), ch("e", ChannelKind::Electronic)],
            vec![],
            "a",
        )
        .unwrap()
    }

    fn packet(sys: &SystemSpec, amps: [f64; 3]) -> WavePacket {
        let fields = amps
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut f = gaussian_packet(&sys.grid, 6.0 + i as f64, 1.0, 0.3 * i as f64).unwrap().field;
                f.scale(C64::new(s, 0.0));
                f
            })
            .collect();
        WavePacket::new(fields)
    }

    fn sched(kind: MeasurementKind, mode: DepletionMode, targets: &[&str]) -> MeasurementSchedule {
        MeasurementSchedule { kind, tau: 1.0, mode, targets: targets.iter().map(|s| s.to_string()).collect(), seed: 7 }
    }

    #[test]
    fn depletion_of_empty_target_is_noop() {
        let sys = system();
        let mut wp = packet(&sys, [0.8, 0.0, 0.6]);
        let before = wp.clone();
        apply_depletion(&mut wp, &sched(MeasurementKind::Depletion, DepletionMode::RemoveTargets, &["b"]), &sys, None)
            .unwrap();
        assert_eq!(wp, before);
    }

    #[test]
    fn depletion_books_removed_norm() {
        let sys = system();
        let mut wp = packet(&sys, [0.6, 0.6, 0.52]);
        let before = wp.live_norm(&sys.grid);
        apply_depletion(&mut wp, &sched(MeasurementKind::Depletion, DepletionMode::RemoveTargets, &["b"]), &sys, None)
            .unwrap();
        let after = wp.live_norm(&sys.grid);
        assert!((before - after - wp.ledger.depleted[1]).abs() < 1e-12);
        assert_eq!(wp.fields[1], ComplexField::zeros(64));
    }

    #[test]
    fn projection_is_idempotent_on_initial_state() {
        let sys = system();
        let psi0 = packet(&sys, [1.0, 0.0, 0.0]);
        let mut wp = psi0.clone();
        let s = sched(MeasurementKind::Depletion, DepletionMode::KeepInitialProjection, &[]);
        apply_depletion(&mut wp, &s, &sys, Some(&psi0)).unwrap();
        for (a, b) in wp.fields[0].values.iter().zip(&psi0.fields[0].values) {
            assert!((a - b).norm() < 1e-15);
        }
        assert!(wp.ledger.depleted.iter().all(|&d| d < 1e-28));
    }

    #[test]
    fn projection_bookkeeping_and_untouched_channels() {
        let sys = system();
        let psi0 = packet(&sys, [1.0, 0.0, 0.0]);
        let mut wp = packet(&sys, [0.7, 0.5, 0.5]);
        let mut g = gaussian_packet(&sys.grid, 9.0, 2.0, 1.0).unwrap().field;
        g.scale(C64::new(0.1, 0.0));
        for (z, d) in wp.fields[0].values.iter_mut().zip(&g.values) {
            *z += d;
        }
        let e_before = wp.fields[2].clone();
        let before = wp.live_norm(&sys.grid);
        let s = sched(MeasurementKind::Depletion, DepletionMode::KeepInitialProjection, &[]);
        apply_depletion(&mut wp, &s, &sys, Some(&psi0)).unwrap();
        let after = wp.live_norm(&sys.grid);
        assert!((before - after - wp.ledger.depleted.iter().sum::<f64>()).abs() < 1e-12);
        assert_eq!(wp.fields[2], e_before);
        assert_eq!(wp.ledger.depleted[2], 0.0);
        assert!(apply_depletion(&mut wp, &s, &sys, None).is_err());
    }

    #[test]
    fn randomization_preserves_norms_and_is_seeded() {
        let sys = system();
        let s = sched(MeasurementKind::Randomization, DepletionMode::RemoveTargets, &["b"]);
        let mut a = packet(&sys, [0.6, 0.6, 0.52]);
        let mut b = a.clone();
        let n0 = a.channel_norms(&sys.grid);
        apply_randomization(&mut a, &s, &sys, 3).unwrap();
        apply_randomization(&mut b, &s, &sys, 3).unwrap();
        assert_eq!(a, b);
        let n1 = a.channel_norms(&sys.grid);
        for (x, y) in n0.iter().zip(&n1) {
            assert!((x - y).abs() <= 1e-15 * x.max(1e-300));
        }
        assert_eq!(a.ledger, crate::propagate::FluxLedger::new(3));
        let mut c = packet(&sys, [0.6, 0.6, 0.52]);
        apply_randomization(&mut c, &s, &sys, 4).unwrap();
        assert_ne!(a.fields[1], c.fields[1]);
    }

    #[test]
    fn randomizing_zero_channel_is_noop() {
        let sys = system();
        let s = sched(MeasurementKind::Randomization, DepletionMode::RemoveTargets, &["b"]);
        let mut wp = packet(&sys, [1.0, 0.0, 0.0]);
        let before = wp.clone();
        apply_randomization(&mut wp, &s, &sys, 1).unwrap();
        assert_eq!(wp, before);
    }

    #[test]
    fn schedule_validation() {
        let mut s = sched(MeasurementKind::Randomization, DepletionMode::RemoveTargets, &[]);
        assert!(s.validate().is_err());
        s.targets = vec!["b".into()];
        assert!(s.validate().is_ok());
        s.tau = 0.0;
        assert!(s.validate().is_err());
        let sys = system();
        let bad = sched(MeasurementKind::Depletion, DepletionMode::RemoveTargets, &["zz"]);
        let mut wp = packet(&sys, [1.0, 0.0, 0.0]);
        assert!(apply_depletion(&mut wp, &bad, &sys, None).is_err());
    }

}
