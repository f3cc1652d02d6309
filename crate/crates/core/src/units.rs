//! Hartree atomic units and the conversions used at the I/O boundary.

/// Atomic time units per femtosecond.
pub const AU_PER_FS: f64 = 41.341374575751;
/// Hartree per wavenumber.
pub const HARTREE_PER_CM1: f64 = 4.5563352529e-6;
/// Bohr per ångström.
pub const BOHR_PER_ANGSTROM: f64 = 1.8897259886;
/// Electron masses per atomic mass unit.
pub const ME_PER_AMU: f64 = 1822.888486209;

pub fn fs_to_au(t_fs: f64) -> f64 {
    t_fs * AU_PER_FS
}

pub fn au_to_fs(t_au: f64) -> f64 {
    t_au / AU_PER_FS
}

pub fn ps_to_au(t_ps: f64) -> f64 {
    t_ps * 1000.0 * AU_PER_FS
}

pub fn au_to_ps(t_au: f64) -> f64 {
    t_au / (1000.0 * AU_PER_FS)
}

pub fn cm1_to_hartree(e: f64) -> f64 {
    e * HARTREE_PER_CM1
}

pub fn hartree_to_cm1(e: f64) -> f64 {
    e / HARTREE_PER_CM1
}

pub fn amu_to_me(m: f64) -> f64 {
    m * ME_PER_AMU
}

pub fn angstrom_to_bohr(r: f64) -> f64 {
    r * BOHR_PER_ANGSTROM
}

/// Lifetime in ps for a rate given in cm⁻¹, using the half-width convention
/// `ℏ/(2γ)` (≈ 2.65442 / γ).
pub fn lifetime_from_gamma(gamma_cm1: f64) -> f64 {
    au_to_ps(1.0 / (2.0 * cm1_to_hartree(gamma_cm1)))
}

/// Ratio of a measured yield to its free-run reference.
pub fn enhancement(q_free: f64, q_measured: f64) -> f64 {
    q_measured / q_free
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifetime_prefactor() {
        let k = lifetime_from_gamma(1.0);
        assert!((k - 2.65442).abs() < 1e-5, "{k}");
    }

    #[test]
    fn round_trips() {
        assert!((au_to_fs(fs_to_au(3.7)) - 3.7).abs() < 1e-14);
        assert!((hartree_to_cm1(cm1_to_hartree(170.0)) - 170.0).abs() < 1e-10);
        assert!((au_to_ps(ps_to_au(2.5)) - 2.5).abs() < 1e-14);
    }
}
