//! Decay curves, rates, Zeno-time diagnostics, golden-rule spectral densities
//! and branching fits.
//!
//! Rates are quoted in cm⁻¹ as `slope · ℏ`, where `slope` is the decay
//! constant of the population; lifetimes use the `ℏ/(2γ)` convention.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{fgh_eigensolve, ComplexField};
use crate::model::{Hamiltonian, SystemSpec};
use crate::propagate::{Trajectory, WavePacket};
use crate::units::{hartree_to_cm1, lifetime_from_gamma};

#[derive(Clone, Debug, PartialEq)]
pub struct DecaySeries {
    /// Atomic time units.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl DecaySeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return invalid("times and values differ in length");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("times must be strictly increasing");
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0 + 1e-9)) {
            return invalid(format!("probability {v} outside [0, 1]"));
        }
        Ok(Self { times, values })
    }
}

/// P(t) = |⟨ψ₀|ψ(t)⟩|², with ψ₀ the packet the trajectory started from.
pub fn survival_series(traj: &Trajectory) -> Result<DecaySeries> {
    DecaySeries::new(traj.times.clone(), traj.survival_amplitudes.iter().map(|a| a.norm_sqr()).collect())
}

/// |⟨ψ₀|ψ⟩|² for two packets on the same grid.
pub fn survival_probability(psi0: &WavePacket, wp: &WavePacket, system: &SystemSpec) -> Result<f64> {
    let n = system.grid.len();
    let ok = |w: &WavePacket| w.fields.len() == system.n_channels() && w.fields.iter().all(|f| f.len() == n);
    if !ok(psi0) || !ok(wp) {
        return invalid("packet does not match the system grid");
    }
    Ok(psi0.overlap(wp, &system.grid).norm_sqr())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma_cm1: f64,
    /// Fitted decay constant of ln P, 1/au.
    pub rate_au: f64,
    pub amplitude: f64,
    /// Atomic time units.
    pub fit_window: (f64, f64),
    pub rmse: f64,
    pub lifetime_ps: f64,
    pub n_samples: usize,
}

/// Least-squares line through ln P on `t_lo ≤ t ≤ t_hi`.
pub fn fit_exponential(series: &DecaySeries, window: (f64, f64)) -> Result<DecayFit> {
    let (lo, hi) = window;
    let (Some(&first), Some(&last)) = (series.times.first(), series.times.last()) else {
        return Err(Error::Fit("empty series".into()));
    };
    let slack = 1e-9 * last.abs().max(1.0);
    if !(lo < hi) || lo < first - slack || hi > last + slack {
        return Err(Error::Fit(format!("window [{lo}, {hi}] not inside [{first}, {last}]")));
    }
    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.values)
        .filter(|(t, _)| **t >= lo - slack && **t <= hi + slack)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 10 {
        return Err(Error::Fit(format!("window holds {} samples, need at least 10", pts.len())));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Fit(format!("non-positive value {v} at t = {t}")));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1.ln() - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let amplitude = intercept.exp();
    let rmse = (pts.iter().map(|p| (p.1 - amplitude * (slope * p.0).exp()).powi(2)).sum::<f64>() / n).sqrt();
    let rate_au = (-slope).max(0.0);
    let gamma_cm1 = hartree_to_cm1(rate_au);
    Ok(DecayFit {
        gamma_cm1,
        rate_au,
        amplitude,
        fit_window: (lo, hi),
        rmse,
        lifetime_ps: lifetime_from_gamma(gamma_cm1),
        n_samples: pts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZenoDiagnostics {
    /// Hartree.
    pub mean_h: f64,
    /// Hartree².
    pub var_h: f64,
    /// ‖(H−⟨H⟩)²ψ₀‖², hartree⁴.
    pub fourth_moment: f64,
    /// ℏ/ΔH, atomic time units.
    pub zeno_time: f64,
    /// Upper end of the quadratic fit window.
    pub fit_t_max: f64,
    /// C in 1 − P = C t², 1/au².
    pub quadratic_coeff_fit: Option<f64>,
    pub n_fit_samples: usize,
}

/// Energy moments of ψ₀ and the short-time quadratic coefficient of 1 − P.
///
/// The fit uses 0 < t ≤ min(0.2·t_Z, t₄), where t₄ keeps the quartic term of
/// 1 − P = σ²t² − (σ⁴/4 + μ₄/12)t⁴ below 1% of the quadratic one.
pub fn zeno_diagnostics(psi0: &WavePacket, system: &SystemSpec, series: &DecaySeries) -> Result<ZenoDiagnostics> {
    let h = Hamiltonian::new(system)?;
    let grid = &system.grid;
    let norm = psi0.live_norm(grid);
    let hpsi = h.apply(&psi0.fields)?;
    let mean_h = psi0.fields.iter().zip(&hpsi).map(|(a, b)| a.inner(b, grid).re).sum::<f64>() / norm;
    let shifted = |x: &[ComplexField], hx: &[ComplexField]| -> Vec<ComplexField> {
        x.iter()
            .zip(hx)
            .map(|(a, b)| ComplexField {
                values: a.values.iter().zip(&b.values).map(|(u, v)| v - u * mean_h).collect(),
            })
            .collect()
    };
    let r1 = shifted(&psi0.fields, &hpsi);
    let var_h = r1.iter().map(|f| f.norm_sqr(grid)).sum::<f64>() / norm;
    let hr1 = h.apply(&r1)?;
    let r2 = shifted(&r1, &hr1);
    let fourth_moment = r2.iter().map(|f| f.norm_sqr(grid)).sum::<f64>() / norm;
    let zeno_time = 1.0 / var_h.sqrt();
    if var_h < 1e-16 {
        return Ok(ZenoDiagnostics {
            mean_h,
            var_h,
            fourth_moment,
            zeno_time,
            fit_t_max: 0.0,
            quadratic_coeff_fit: None,
            n_fit_samples: 0,
        });
    }
    let quartic = var_h / 4.0 + fourth_moment / (12.0 * var_h);
    let fit_t_max = (0.2 * zeno_time).min((0.01 / quartic).sqrt());
    let t0 = series.times.first().copied().unwrap_or(0.0);
    let pts: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.values)
        .map(|(t, p)| (t - t0, 1.0 - p))
        .filter(|(t, _)| *t > 0.0 && *t <= fit_t_max)
        .collect();
    if pts.len() < 5 {
        return Err(Error::Fit(format!(
            "{} samples below t = {fit_t_max:.3e} au, need at least 5",
            pts.len()
        )));
    }
    let num: f64 = pts.iter().map(|(t, y)| t * t * y).sum();
    let den: f64 = pts.iter().map(|(t, _)| t.powi(4)).sum();
    Ok(ZenoDiagnostics {
        mean_h,
        var_h,
        fourth_moment,
        zeno_time,
        fit_t_max,
        quadratic_coeff_fit: Some(num / den),
        n_fit_samples: pts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralDensity {
    /// Angular frequency (= energy), atomic units.
    pub omegas: Vec<f64>,
    /// Normalized so that ∫G dω is the coupling second moment.
    pub g_values: Vec<f64>,
    pub omega_b: f64,
}

/// Box-normalized final states of one uncoupled channel.
#[derive(Clone, Debug)]
pub struct ChannelSpectrum {
    pub channel: usize,
    pub energies: Vec<f64>,
    /// |⟨f_k|V|ψ₀⟩|².
    pub weights: Vec<f64>,
    /// weight × density of states at each box level.
    pub density: Vec<f64>,
}

impl ChannelSpectrum {
    fn at(&self, w: f64) -> f64 {
        let e = &self.energies;
        if w < e[0] || w > e[e.len() - 1] {
            return 0.0;
        }
        let j = e.partition_point(|&x| x <= w).min(e.len() - 1).max(1);
        let t = (w - e[j - 1]) / (e[j] - e[j - 1]);
        self.density[j - 1] + t * (self.density[j] - self.density[j - 1])
    }
}

/// Final-state weights for the golden-rule density of ψ₀.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub omega_b: f64,
    pub channels: Vec<ChannelSpectrum>,
}

impl SpectralBasis {
    pub fn new(system: &SystemSpec, psi0: &WavePacket) -> Result<Self> {
        let grid = &system.grid;
        let init = system.initial_channel;
        for (c, f) in psi0.fields.iter().enumerate() {
            if c != init && f.norm_sqr(grid) > 1e-20 {
                return invalid(format!("ψ₀ has amplitude in non-initial channel '{}'", system.channels[c].label));
            }
        }
        let omega_b = Hamiltonian::new(system)?.expectation(&psi0.fields)? / psi0.live_norm(grid);
        let n = grid.len();
        let mut channels = Vec::new();
        for j in (0..system.n_channels()).filter(|&j| j != init) {
            let mut f = ComplexField::zeros(n);
            let mut coupled = false;
            for cp in &system.couplings {
                let other = if cp.a == j { cp.b } else if cp.b == j { cp.a } else { continue };
                if other != init {
                    continue;
                }
                coupled = true;
                for (i, r) in grid.points().into_iter().enumerate() {
                    f.values[i] += psi0.fields[init].values[i] * cp.potential.eval(r);
                }
            }
            if !coupled {
                continue;
            }
            let sol = fgh_eigensolve(grid, &system.diagonal_on_grid(j), system.reduced_mass, n)?;
            let weights: Vec<f64> = sol.states.iter().map(|s| s.inner(&f, grid).norm_sqr()).collect();
            let e = &sol.energies;
            let density = (0..n)
                .map(|k| {
                    // Trapezoid weights on the level energies, so ∫G dω = Σ weights.
                    let width = if k == 0 {
                        0.5 * (e[1] - e[0])
                    } else if k == n - 1 {
                        0.5 * (e[n - 1] - e[n - 2])
                    } else {
                        0.5 * (e[k + 1] - e[k - 1])
                    };
                    weights[k] / width
                })
                .collect();
            channels.push(ChannelSpectrum { channel: j, energies: sol.energies, weights, density });
        }
        Ok(Self { omega_b, channels })
    }

    /// Σ_f |⟨f|V|ψ₀⟩|² over all box states.
    pub fn second_moment(&self) -> f64 {
        self.channels.iter().flat_map(|c| c.weights.iter()).sum()
    }

    /// Uniform grid from the lowest box level to the lowest top-of-box level.
    pub fn default_omega_grid(&self, step: f64) -> Vec<f64> {
        if self.channels.is_empty() {
            let w = self.omega_b;
            return (0..=20).map(|k| w + (k as f64 - 10.0) * step).collect();
        }
        let lo = self.channels.iter().map(|c| c.energies[0]).fold(f64::INFINITY, f64::min);
        let hi = self.resolvable_max();
        let n = ((hi - lo) / step).floor() as usize;
        (0..=n).map(|k| lo + k as f64 * step).collect()
    }

    fn resolvable_max(&self) -> f64 {
        self.channels.iter().map(|c| *c.energies.last().unwrap()).fold(f64::INFINITY, f64::min)
    }

    pub fn density_on(&self, omegas: &[f64]) -> Result<SpectralDensity> {
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("omega grid must be strictly increasing");
        }
        if let Some(&top) = omegas.last() {
            let hi = self.resolvable_max();
            if top > hi * (1.0 + 1e-12) + 1e-15 {
                return invalid(format!("omega grid reaches {top:.6e}, box spectrum ends at {hi:.6e}"));
            }
        }
        let g_values = omegas.iter().map(|&w| self.channels.iter().map(|c| c.at(w)).sum()).collect();
        Ok(SpectralDensity { omegas: omegas.to_vec(), g_values, omega_b: self.omega_b })
    }
}

pub fn spectral_density(system: &SystemSpec, psi0: &WavePacket, omega_grid: &[f64]) -> Result<SpectralDensity> {
    SpectralBasis::new(system, psi0)?.density_on(omega_grid)
}

impl SpectralDensity {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.omegas, &self.g_values)
    }

    pub fn at(&self, w: f64) -> f64 {
        let o = &self.omegas;
        if o.is_empty() || w < o[0] || w > o[o.len() - 1] {
            return 0.0;
        }
        let j = o.partition_point(|&x| x <= w).min(o.len() - 1).max(1);
        let t = (w - o[j - 1]) / (o[j] - o[j - 1]);
        self.g_values[j - 1] + t * (self.g_values[j] - self.g_values[j - 1])
    }

    /// 2πG(ω_b) in cm⁻¹.
    pub fn golden_rule_cm1(&self) -> f64 {
        hartree_to_cm1(2.0 * std::f64::consts::PI * self.at(self.omega_b))
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Measurement line shape (τ/2π)·sinc²((ω−ω_b)τ/2); unit area.
pub fn sinc2_kernel(omega: f64, omega_b: f64, tau: f64) -> f64 {
    let x = 0.5 * (omega - omega_b) * tau;
    let s = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    tau / (2.0 * std::f64::consts::PI) * s * s
}

/// γ(τ) = 2π∫G(ω)F(ω;τ)dω in cm⁻¹, by the trapezoid rule on G's own grid.
///
/// Rejected when the grid spacing exceeds 1/16 of the kernel's main-lobe width 4π/τ.
pub fn kk_rate(g: &SpectralDensity, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return invalid(format!("tau must be positive, got {tau}"));
    }
    let lobe = 4.0 * std::f64::consts::PI / tau;
    let widest = g.omegas.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if g.omegas.len() < 2 || widest > lobe / 16.0 {
        return invalid(format!(
            "omega spacing {widest:.3e} too coarse for kernel lobe {lobe:.3e} at tau = {tau}"
        ));
    }
    let f: Vec<f64> =
        g.omegas.iter().zip(&g.g_values).map(|(&w, &gv)| gv * sinc2_kernel(w, g.omega_b, tau)).collect();
    Ok(hartree_to_cm1(2.0 * std::f64::consts::PI * trapezoid(&g.omegas, &f)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchingFit {
    /// Asymptotic yield per input series.
    pub q: Vec<f64>,
    pub gamma_cm1: f64,
    pub rate_au: f64,
    pub rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    pub method: String,
}

const GN_MAX_ITER: usize = 100;

/// Profile cost: optimal Q for fixed rate, and the summed squared residual.
fn profile(times: &[f64], series: &[Vec<f64>], rate: f64) -> (Vec<f64>, f64) {
    let g: Vec<f64> = times.iter().map(|t| -(-rate * t).exp_m1()).collect();
    let gg: f64 = g.iter().map(|x| x * x).sum();
    let mut cost = 0.0;
    let q = series
        .iter()
        .map(|y| {
            let q = if gg > 0.0 { g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / gg } else { 0.0 };
            cost += g.iter().zip(y).map(|(a, b)| (q * a - b).powi(2)).sum::<f64>();
            q
        })
        .collect();
    (q, cost)
}

/// Shared-rate fit of `Q_α(1 − e^{−γt})` to cumulative yields.
///
/// A log-spaced scan seeds Gauss–Newton (analytic Jacobian, step halving,
/// at most 100 iterations). If that fails the scan minimum is refined by a
/// golden-section search with Q solved linearly.
pub fn fit_branching(times: &[f64], series: &[Vec<f64>]) -> Result<BranchingFit> {
    if series.is_empty() || series.iter().any(|s| s.len() != times.len()) {
        return invalid("every series must match the time axis");
    }
    if times.len() < 3 {
        return Err(Error::Fit("need at least 3 samples".into()));
    }
    let m = series.len();
    let n_obs = (m * times.len()) as f64;
    if series.iter().all(|s| s.iter().all(|&y| y == 0.0)) {
        return Ok(BranchingFit {
            q: vec![0.0; m],
            gamma_cm1: 0.0,
            rate_au: 0.0,
            rmse: 0.0,
            converged: true,
            iterations: 0,
            method: "degenerate".into(),
        });
    }
    let t_span = times.iter().fold(0.0f64, |a, &t| a.max(t.abs()));
    // scan the dimensionless rate γ·T over six decades
    let scan: Vec<f64> = (0..=240).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 240.0) / t_span).collect();
    let (mut best_k, mut best_cost) = (0usize, f64::INFINITY);
    for (k, &r) in scan.iter().enumerate() {
        let c = profile(times, series, r).1;
        if c < best_cost {
            best_cost = c;
            best_k = k;
        }
    }
    let mut rate = scan[best_k];
    let (mut q, mut cost) = profile(times, series, rate);
    let mut converged = false;
    let mut iterations = 0;
    let mut gn_ok = true;
    while iterations < GN_MAX_ITER {
        iterations += 1;
        // parameters: s = rate·T, then Q_α
        let np = m + 1;
        let mut jtj = DMatrix::<f64>::zeros(np, np);
        let mut jtr = DVector::<f64>::zeros(np);
        for (a, y) in series.iter().enumerate() {
            for (t, yv) in times.iter().zip(y) {
                let e = (-rate * t).exp();
                let r = q[a] * (1.0 - e) - yv;
                let ds = q[a] * t * e / t_span;
                let dq = 1.0 - e;
                jtj[(0, 0)] += ds * ds;
                jtj[(0, a + 1)] += ds * dq;
                jtj[(a + 1, 0)] += ds * dq;
                jtj[(a + 1, a + 1)] += dq * dq;
                jtr[0] += ds * r;
                jtr[a + 1] += dq * r;
            }
        }
        let Some(step) = jtj.clone().lu().solve(&jtr) else {
            gn_ok = false;
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let new_rate = rate - lambda * step[0] / t_span;
            if new_rate > 0.0 {
                let new_q: Vec<f64> = (0..m).map(|a| q[a] - lambda * step[a + 1]).collect();
                let new_cost = residual_cost(times, series, new_rate, &new_q);
                if new_cost <= cost {
                    let rel = (new_rate - rate).abs() / rate;
                    rate = new_rate;
                    q = new_q;
                    let dc = cost - new_cost;
                    cost = new_cost;
                    accepted = true;
                    if rel < 1e-12 || dc <= 1e-15 * cost.max(1e-300) {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            // no descent direction left: at a minimum if the gradient is negligible
            converged = jtr.norm() <= 1e-8 * (cost.sqrt() + 1e-300) * jtj.norm().sqrt() || cost <= 1e-30;
            gn_ok = converged;
            break;
        }
        if converged {
            break;
        }
    }
    let mut method = "gauss_newton".to_string();
    if !(gn_ok && converged && rate.is_finite()) {
        method = "golden_section".to_string();
        let lo = scan[best_k.saturating_sub(1)].ln();
        let hi = scan[(best_k + 1).min(scan.len() - 1)].ln();
        let (r, its) = golden_min(|x| profile(times, series, x.exp()).1, lo, hi);
        rate = r.exp();
        let p = profile(times, series, rate);
        q = p.0;
        cost = p.1;
        iterations += its;
        converged = its < 200;
    }
    let gamma_cm1 = hartree_to_cm1(rate);
    Ok(BranchingFit { q, gamma_cm1, rate_au: rate, rmse: (cost / n_obs).sqrt(), converged, iterations, method })
}

fn residual_cost(times: &[f64], series: &[Vec<f64>], rate: f64, q: &[f64]) -> f64 {
    series
        .iter()
        .zip(q)
        .map(|(y, qa)| times.iter().zip(y).map(|(t, yv)| (qa * -(-rate * t).exp_m1() - yv).powi(2)).sum::<f64>())
        .sum()
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, usize) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut its = 0;
    while (b - a).abs() > 1e-12 * (1.0 + a.abs()) && its < 200 {
        its += 1;
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    (0.5 * (a + b), its)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::*;

    fn exp_series(rate: f64, t_end: f64, n: usize) -> DecaySeries {
        let times: Vec<f64> = (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect();
        let values = times.iter().map(|t| (-rate * t).exp()).collect();
        DecaySeries::new(times, values).unwrap()
    }

    #[test]
    fn recovers_exact_exponential() {
        // P = e^{-0.1 t} with t in ps
        let rate = 0.1 / ps_to_au(1.0);
        let s = exp_series(rate, ps_to_au(20.0), 200);
        let f = fit_exponential(&s, (0.0, ps_to_au(20.0))).unwrap();
        assert!((f.rate_au / rate - 1.0).abs() < 1e-3);
        assert!((f.gamma_cm1 / hartree_to_cm1(rate) - 1.0).abs() < 1e-3);
        assert!(f.rmse < 1e-12);
    }

    #[test]
    fn fit_window_errors() {
        let s = exp_series(1e-5, 1e5, 50);
        assert!(fit_exponential(&s, (0.0, 1e3)).is_err());
        assert!(fit_exponential(&s, (0.0, 2e5)).is_err());
        let mut z = s.clone();
        z.values[30] = 0.0;
        assert!(fit_exponential(&z, (0.0, 1e5)).is_err());
    }

    #[test]
    fn fit_stable_across_windows() {
        let rate = 2e-6;
        let life = 1.0 / rate;
        let s = exp_series(rate, 4.0 * life, 400);
        let a = fit_exponential(&s, (life, 2.0 * life)).unwrap();
        let b = fit_exponential(&s, (2.0 * life, 3.0 * life)).unwrap();
        assert!((a.gamma_cm1 / b.gamma_cm1 - 1.0).abs() < 0.05);
    }

    #[test]
    fn series_validation() {
        assert!(DecaySeries::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(DecaySeries::new(vec![0.0, 1.0], vec![1.0, 1.1]).is_err());
        assert!(DecaySeries::new(vec![0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn kernel_has_unit_area() {
        let tau = 200.0;
        let w: Vec<f64> = (-200_000..=200_000).map(|k| k as f64 * 1e-4).collect();
        let f: Vec<f64> = w.iter().map(|&x| sinc2_kernel(x, 0.0, tau)).collect();
        assert!((trapezoid(&w, &f) - 1.0).abs() < 1e-3);
    }

    fn flat_density(g: f64, half_band: f64, step: f64) -> SpectralDensity {
        let n = (2.0 * half_band / step).round() as usize;
        let omegas: Vec<f64> = (0..=n).map(|k| -half_band + k as f64 * step).collect();
        SpectralDensity { g_values: vec![g; omegas.len()], omegas, omega_b: 0.0 }
    }

    #[test]
    fn flat_density_gives_tau_independent_rate() {
        let g = 1e-7;
        let d = flat_density(g, 1.0, 1e-4);
        let want = hartree_to_cm1(2.0 * std::f64::consts::PI * g);
        for tau in [500.0, 1000.0, 4000.0] {
            let k = kk_rate(&d, tau).unwrap();
            assert!((k / want - 1.0).abs() < 0.01, "tau {tau}: {k} vs {want}");
        }
    }

    #[test]
    fn kk_short_and_long_tau_limits() {
        // Lorentzian-free smooth bump: G(ω) = g·exp(-(ω-ω0)²/2s²)
        let (g0, w0, s) = (1e-6, 0.002, 0.004);
        let omegas: Vec<f64> = (0..=40000).map(|k| -0.02 + k as f64 * 1e-6).collect();
        let g_values = omegas.iter().map(|w| g0 * (-(w - w0).powi(2) / (2.0 * s * s)).exp()).collect();
        let d = SpectralDensity { omegas, g_values, omega_b: 0.0 };
        let long = kk_rate(&d, 4e5).unwrap();
        let gr = hartree_to_cm1(2.0 * std::f64::consts::PI * d.at(0.0));
        assert!((long / gr - 1.0).abs() < 0.01, "{long} {gr}");
        let tau = 5.0;
        let short = kk_rate(&d, tau).unwrap();
        let linear = hartree_to_cm1(tau * d.integral());
        assert!((short / linear - 1.0).abs() < 0.02, "{short} {linear}");
        assert!(kk_rate(&d, 1e8).is_err());
        assert!(kk_rate(&d, 0.0).is_err());
    }

    #[test]
    fn branching_recovers_synthetic() {
        let rate = cm1_to_hartree(0.01);
        let times: Vec<f64> = (0..300).map(|k| k as f64 * 4.0 / rate / 299.0).collect();
        let ys: Vec<Vec<f64>> =
            [0.3, 0.1].iter().map(|q| times.iter().map(|t| q * -(-rate * t).exp_m1()).collect()).collect();
        let f = fit_branching(&times, &ys).unwrap();
        assert!(f.converged);
        assert!((f.q[0] - 0.3).abs() < 1e-3 && (f.q[1] - 0.1).abs() < 1e-3);
        assert!((f.gamma_cm1 - 0.01).abs() < 1e-3 * 0.01);
    }

    #[test]
    fn branching_degenerate_input() {
        let times: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let f = fit_branching(&times, &[vec![0.0; 20], vec![0.0; 20]]).unwrap();
        assert_eq!(f.q, vec![0.0, 0.0]);
        assert_eq!(f.rmse, 0.0);
        assert!(fit_branching(&times, &[vec![0.0; 3]]).is_err());
    }
}
