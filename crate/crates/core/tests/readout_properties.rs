use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use zenolock::hilbert::{ProductBasis, StateVector};
use zenolock::readout::*;
use zenolock::zeno_multilevel::four::{E1, E2, G1, G2};

fn state(basis: &Arc<ProductBasis>, terms: &[(C64, usize, usize)]) -> StateVector {
    let mut amps = DVector::zeros(basis.dimension());
    for &(c, a, b) in terms {
        amps[basis.index_of(&[a, b, 0]).unwrap()] += c;
    }
    StateVector::from_amplitudes(basis, amps).unwrap()
}

fn max_diff(a: &StateVector, b: &StateVector) -> f64 {
    a.amplitudes()
        .iter()
        .zip(b.amplitudes().iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

fn phases() -> Vec<f64> {
    (0..16).map(|k| -PI + (k as f64 + 0.5) * PI / 8.0).collect()
}

#[test]
fn chain_reproduces_each_stage() {
    let one = C64::new(1.0, 0.0);
    for phi in phases() {
        let c = ReadoutConfig::default().with_clock_phase(phi);
        let basis = c.basis().unwrap();
        let e = C64::from_polar(1.0, phi);
        let h = 0.5 * one;
        let q = one / (2.0 * 2f64.sqrt());

        let s22 =
            accumulate_clock_phase(&locked_state(&basis).unwrap(), c.elapsed_time, &c).unwrap();
        let eq22 = state(
            &basis,
            &[(h, E1, G1), (-h, G1, E1), (h * e, E2, G2), (-h * e, G2, E2)],
        );
        assert!(max_diff(&s22, &eq22) < 1e-12, "phi {phi}");

        let s23 = flip_sign_atom_b(&flip_sign_atom_b(&s22, E1).unwrap(), E2).unwrap();
        let eq23 = state(
            &basis,
            &[(h, E1, G1), (h, G1, E1), (h * e, E2, G2), (h * e, G2, E2)],
        );
        assert!(max_diff(&s23, &eq23) < 1e-12);

        let s25 = mix_ground_levels(&s23).unwrap();
        let eq25 = state(
            &basis,
            &[
                (q, E1, G1),
                (q, E1, G2),
                (q, G1, E1),
                (q, G2, E1),
                (-q * e, E2, G1),
                (q * e, E2, G2),
                (-q * e, G1, E2),
                (q * e, G2, E2),
            ],
        );
        assert!(max_diff(&s25, &eq25) < 1e-12);

        let (s26, p) = postselect_not_g2(&s25).unwrap();
        let eq26 = state(
            &basis,
            &[(h, E1, G1), (h, G1, E1), (-h * e, E2, G1), (-h * e, G1, E2)],
        );
        assert!(max_diff(&s26, &eq26) < 1e-12);
        assert!((p - 0.5).abs() < 1e-10);

        let (prepared, p2) = prepare_emitter(&c).unwrap();
        assert_eq!(prepared, s26);
        assert_eq!(p2, p);
    }
}

#[test]
fn accumulation_edge_cases() {
    let c = ReadoutConfig::default();
    let basis = c.basis().unwrap();
    let locked = locked_state(&basis).unwrap();
    assert!(max_diff(&accumulate_clock_phase(&locked, 0.0, &c).unwrap(), &locked) < 1e-15);
    let omega = c.clock_frequency();
    let a = accumulate_clock_phase(&locked, 0.3, &c).unwrap();
    let b = accumulate_clock_phase(&locked, 0.3 + 2.0 * PI / omega, &c).unwrap();
    assert!(max_diff(&a, &b) < 1e-12);
    let flipped = accumulate_clock_phase(&locked, PI / omega, &c).unwrap();
    let z1 = flipped.amplitude(&[E1, G1, 0]).unwrap();
    let z2 = flipped.amplitude(&[E2, G2, 0]).unwrap();
    assert!((z1 + z2).norm() < 1e-12);
}

#[test]
fn flip_is_involution_and_mixing_splits_ground() {
    let c = ReadoutConfig::default();
    let basis = c.basis().unwrap();
    let locked = locked_state(&basis).unwrap();
    let twice = flip_sign_atom_b(&flip_sign_atom_b(&locked, G2).unwrap(), G2).unwrap();
    assert_eq!(twice, locked);
    let g = StateVector::basis_state(&basis, &[G1, E1, 0]).unwrap();
    let mixed = mix_ground_levels(&g).unwrap();
    assert!((mixed.population_where(|d| d[0] == G2) - 0.5).abs() < 1e-15);
}

#[test]
fn phase_is_linear_in_elapsed_time() {
    let base = ReadoutConfig::default();
    let omega = base.clock_frequency();
    let times: Vec<f64> = (0..8).map(|k| 0.0371 + 0.093 * k as f64).collect();
    for model in [EmissionModel::Perturbative, EmissionModel::Full] {
        let mut unwrapped: Vec<f64> = Vec::new();
        for &t in &times {
            let c = ReadoutConfig {
                elapsed_time: t,
                model,
                ..base.clone()
            };
            let phase = read_out(&c).unwrap().fitted_phase;
            let next = match unwrapped.last() {
                Some(&prev) => prev + wrap_phase(phase - prev),
                None => phase,
            };
            unwrapped.push(next);
        }
        let n = times.len() as f64;
        let (mt, mp) = (
            times.iter().sum::<f64>() / n,
            unwrapped.iter().sum::<f64>() / n,
        );
        let sxy: f64 = times
            .iter()
            .zip(&unwrapped)
            .map(|(t, p)| (t - mt) * (p - mp))
            .sum();
        let sxx: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((slope / omega - 1.0).abs() < 0.005, "{model:?}: {slope}");
        let worst = times
            .iter()
            .zip(&unwrapped)
            .map(|(t, p)| (p - mp - slope * (t - mt)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.05);
    }
}

#[test]
fn full_model_traces_are_in_antiphase() {
    let zero = ReadoutConfig {
        model: EmissionModel::Full,
        ..ReadoutConfig::default()
    };
    let pi = zero.clone().with_clock_phase(PI);
    let a = read_out(&zero).unwrap();
    let b = read_out(&pi).unwrap();
    let scale = a.quadrature.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    for (x, y) in a.quadrature.iter().zip(&b.quadrature) {
        assert!((x + y).abs() < 1e-9 * scale);
    }
    assert!(wrap_phase(a.fitted_phase - b.fitted_phase - PI).abs() < 1e-9);
}

#[test]
fn perturbative_amplitude_tracks_full_evolution() {
    for amplitude in [0.25, 0.5, 1.0] {
        for phi in [0.0, 1.0, PI] {
            let p = ReadoutConfig {
                laser_amplitude: amplitude,
                ..ReadoutConfig::default()
            }
            .with_clock_phase(phi);
            let f = ReadoutConfig {
                model: EmissionModel::Full,
                ..p.clone()
            };
            let (tp, tf) = (read_out(&p).unwrap(), read_out(&f).unwrap());
            let window = p.fit_window();
            let end = *p.readout_times.last().unwrap();
            for start in [0.0, 0.5 * window, end - window] {
                let beat = p.beat_frequency();
                let ap = fit_quadrature(&tp.times, &tp.quadrature, beat, start, window).unwrap();
                let af = fit_quadrature(&tf.times, &tf.quadrature, beat, start, window).unwrap();
                let ratio = af.amplitude / ap.amplitude;
                assert!(
                    (ratio - 1.0).abs() < 0.05,
                    "A={amplitude} phi={phi} start={start}: {ratio}"
                );
            }
            assert!(tf.max_top_population < 1e-3);
        }
    }
}

#[test]
fn perturbative_phase_is_exact() {
    for phi in phases() {
        let c = ReadoutConfig::default().with_clock_phase(phi);
        let got = read_out(&c).unwrap().fitted_phase;
        assert!(wrap_phase(got - phi).abs() < 1e-9, "{phi} -> {got}");
        assert!(got > -PI && got <= PI);
    }
}
