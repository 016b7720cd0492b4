//! Defect-mode properties of the single-missing-hole cavity.

use pcqd::cavity::{mode_volume, solve_h1_modes, H1Config, H1Modes, Parity, PeakRegion};
use pcqd::crystal::{SlabWaveguide, TriangularLattice};

const PERIOD: f64 = 300.0;

fn slab_eps() -> f64 {
    let slab = SlabWaveguide::<f64>::new(400.0, 3.4, 1.0).unwrap();
    slab.effective_index(1050.0).unwrap().powi(2)
}

fn solve(ra: f64, config: &H1Config) -> H1Modes<f64> {
    let lattice = TriangularLattice::new(PERIOD, ra, slab_eps(), 1.0).unwrap();
    solve_h1_modes(&lattice, config).unwrap()
}

fn small() -> H1Config {
    H1Config {
        supercell_size: 5,
        ..H1Config::default()
    }
}

#[test]
fn dipole_doublet_across_hole_sizes() {
    let mut wavelengths = Vec::new();
    let mut depth = Vec::new();
    for ra in [0.33, 0.36, 0.39, 0.42] {
        let modes = solve(ra, &small());
        let doublets = modes.dipole_doublets();
        assert_eq!(doublets.len(), 1, "r/a {ra}: {} doublets", doublets.len());
        let [m1, m2] = doublets[0];
        let split = (m1.frequency - m2.frequency).abs() / m1.frequency;
        assert!(split < 1e-3, "r/a {ra}: splitting {split}");
        assert_eq!(m1.parity, Parity::Odd);
        let gap = modes.bulk_gap.unwrap();
        assert!(gap.contains(m1.frequency));
        wavelengths.push(m1.wavelength(PERIOD));
        depth.push((m1.frequency - gap.lower_edge) / gap.width());

        for m in &modes.modes {
            let peak = m.field.energy_density.iter().fold(0.0_f64, |a, &b| a.max(b));
            assert!((peak - 1.0).abs() < 1e-12);
            let hmax = m.field.h_field.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
            assert!((hmax - 1.0).abs() < 1e-9);
        }
    }
    // smaller holes: longer wavelength, further from the lower band edge
    for w in wavelengths.windows(2) {
        assert!(w[0] > w[1], "{wavelengths:?}");
    }
    for d in depth.windows(2) {
        assert!(d[0] > d[1], "{depth:?}");
    }
}

#[test]
fn odd_mode_vanishes_at_the_centre() {
    let modes = solve(0.37, &small());
    let [m, _] = modes.dipole_doublets()[0];
    let f = &m.field;
    let centre = (f.ny / 2) * f.nx + f.nx / 2;
    assert!(f.h_field[centre].abs() < 1e-9);
}

#[test]
fn mode_volume_is_small_and_grid_converged() {
    let coarse = solve(0.37, &small());
    let fine = solve(
        0.37,
        &H1Config {
            grid_per_period: 128,
            ..small()
        },
    );
    let volume = |modes: &H1Modes<f64>, region| {
        let [m, _] = modes.dipole_doublets()[0];
        mode_volume(m, 400.0, m.wavelength(PERIOD), 3.4, region).unwrap()
    };
    let v64 = volume(&coarse, PeakRegion::Dielectric);
    let v128 = volume(&fine, PeakRegion::Dielectric);
    assert!((0.5..=3.0).contains(&v64), "V = {v64}");
    assert!((v64 - v128).abs() / v128 < 0.02, "{v64} vs {v128}");
    // normalising to the global maximum can only shrink the volume
    assert!(volume(&coarse, PeakRegion::Global) <= v64);
}

#[test]
fn supercell_size_converged() {
    let s5 = solve(0.37, &small());
    let s7 = solve(0.37, &H1Config::default());
    let f5 = s5.dipole_doublets()[0][0].frequency;
    let f7 = s7.dipole_doublets()[0][0].frequency;
    assert!((f5 - f7).abs() / f7 < 0.01, "{f5} vs {f7}");
}
