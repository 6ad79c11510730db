//! Density-operator calculation of intercept-resend attacks, checked against
//! the closed-form attacked distributions.

use num_complex::Complex64;
use proptest::prelude::*;
use tbqkd::adversary::{attacked_distribution, distribution_for, EveStrategy};
use tbqkd::protocol::Basis;
use tbqkd::quantum::{outcome_distribution, Outcome, PhaseSettings, PortLabel, PumpSplitting};

type C = Complex64;
type Mat4 = [[C; 4]; 4];

fn zero4() -> Mat4 {
    [[C::new(0.0, 0.0); 4]; 4]
}

/// Two-photon emission basis `|ab>`, index `a * 2 + b` with 0 = early, 1 = late.
fn outer(v: &[C; 4]) -> Mat4 {
    let mut m = zero4();
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = v[i] * v[j].conj();
        }
    }
    m
}

fn add_scaled(acc: &mut Mat4, m: &Mat4, w: f64) {
    for i in 0..4 {
        for j in 0..4 {
            acc[i][j] += m[i][j] * w;
        }
    }
}

fn kron(a: &[C; 2], b: &[C; 2]) -> [C; 4] {
    [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
}

fn inner(u: &[C; 4], v: &[C; 4]) -> C {
    u.iter().zip(v).map(|(x, y)| x.conj() * y).sum()
}

fn bell_state(phi: f64) -> [C; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [C::new(h, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::from_polar(h, phi)]
}

/// Measure both photons in the basis `basis_a` x `basis_b` and resend the
/// eigenstate found: `sum_k |k><k| rho |k><k|`.
fn measure_resend(rho: &Mat4, basis_a: &[[C; 2]; 2], basis_b: &[[C; 2]; 2]) -> Mat4 {
    let mut out = zero4();
    for ka in basis_a {
        for kb in basis_b {
            let v = kron(ka, kb);
            // <v| rho |v>
            let mut p = C::new(0.0, 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    p += v[i].conj() * rho[i][j] * v[j];
                }
            }
            add_scaled(&mut out, &outer(&v), p.re);
        }
    }
    out
}

fn time_basis() -> [[C; 2]; 2] {
    [[C::new(1.0, 0.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::new(1.0, 0.0)]]
}

/// Eigenstates `(|e> + k e^{i theta} |l>)/sqrt 2` of an analyzer at phase theta.
fn energy_basis(theta: f64) -> [[C; 2]; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [
        [C::new(h, 0.0), C::from_polar(h, theta)],
        [C::new(h, 0.0), C::from_polar(-h, theta)],
    ]
}

/// Amplitude for a photon emitted at `emission` to reach (slot, port).
fn analyzer(emission: usize, slot: u8, port: PortLabel, phase: f64) -> C {
    let sign = f64::from(port.sign());
    match slot as i32 - emission as i32 {
        0 => C::new(0.5, 0.0),
        1 => C::from_polar(0.5 * sign, phase),
        _ => C::new(0.0, 0.0),
    }
}

fn cell_probability(rho: &Mat4, o: Outcome, phases: &PhaseSettings) -> f64 {
    let mut row = [C::new(0.0, 0.0); 4];
    for ea in 0..2 {
        for eb in 0..2 {
            row[ea * 2 + eb] = analyzer(ea, o.slot_a.index(), o.port_a, phases.alpha)
                * analyzer(eb, o.slot_b.index(), o.port_b, phases.beta);
        }
    }
    // row rho row^dagger
    let mut p = C::new(0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            p += row[i] * rho[i][j] * row[j].conj();
        }
    }
    p.re
}

fn oracle_rho(phases: &PhaseSettings, strategy: Option<EveStrategy>) -> Mat4 {
    let rho = outer(&bell_state(phases.phi));
    let Some(s) = strategy else { return rho };
    let p = s.p_time();
    let t = measure_resend(&rho, &time_basis(), &time_basis());
    let e = measure_resend(&rho, &energy_basis(phases.alpha), &energy_basis(phases.beta));
    let mut out = zero4();
    add_scaled(&mut out, &t, p);
    add_scaled(&mut out, &e, 1.0 - p);
    out
}

fn check(phases: PhaseSettings, strategy: Option<EveStrategy>) {
    let rho = oracle_rho(&phases, strategy);
    let d = distribution_for(&phases, strategy.as_ref()).unwrap();
    for o in Outcome::all() {
        let want = cell_probability(&rho, o, &phases);
        assert!((d.get(o) - want).abs() < 1e-9, "{strategy:?} {o:?}: {} vs {want}", d.get(o));
    }
}

#[test]
fn oracle_reproduces_unattacked_model() {
    let phases = PhaseSettings::new(0.4, 1.3, -2.2);
    check(phases, None);
    let d = outcome_distribution(&phases, &PumpSplitting::MAXIMAL).unwrap();
    let rho = outer(&bell_state(phases.phi));
    for o in Outcome::all() {
        assert!((d.get(o) - cell_probability(&rho, o, &phases)).abs() < 1e-12);
    }
}

#[test]
fn energy_eigenstates_are_orthonormal() {
    let b = energy_basis(0.77);
    let pad = |v: &[C; 2]| [v[0], v[1], C::new(0.0, 0.0), C::new(0.0, 0.0)];
    assert!((inner(&pad(&b[0]), &pad(&b[0])).re - 1.0).abs() < 1e-15);
    assert!(inner(&pad(&b[0]), &pad(&b[1])).norm() < 1e-15);
}

#[test]
fn fixed_strategies_match_oracle() {
    for s in [
        EveStrategy::TimeBasis,
        EveStrategy::EnergyBasis,
        EveStrategy::RandomPerPair { p_time: 0.5 },
        EveStrategy::RandomPerPair { p_time: 0.1 },
    ] {
        check(PhaseSettings::default(), Some(s));
        check(PhaseSettings::new(1.0, 2.5, -0.3), Some(s));
    }
}

#[test]
fn half_mixture_qber_is_a_quarter() {
    let d = attacked_distribution(&PhaseSettings::new(0.2, 0.1, 0.1), &EveStrategy::RandomPerPair { p_time: 0.5 }).unwrap();
    assert!((d.sifted_error_rate(Basis::Time).unwrap() - 0.25).abs() < 1e-12);
    assert!((d.sifted_error_rate(Basis::Energy).unwrap() - 0.25).abs() < 1e-12);
}

proptest! {
    #[test]
    fn random_strategies_match_oracle(
        phi in -4.0f64..4.0, alpha in -4.0f64..4.0, beta in -4.0f64..4.0, p in 0.0f64..=1.0
    ) {
        check(PhaseSettings::new(phi, alpha, beta), Some(EveStrategy::RandomPerPair { p_time: p }));
    }

    #[test]
    fn attacked_distributions_are_normalized(phi in -4.0f64..4.0, alpha in -4.0f64..4.0, beta in -4.0f64..4.0, p in 0.0f64..=1.0) {
        let d = attacked_distribution(&PhaseSettings::new(phi, alpha, beta), &EveStrategy::RandomPerPair { p_time: p }).unwrap();
        prop_assert!((d.total() - 1.0).abs() < 1e-12);
        prop_assert!(d.iter().all(|(_, q)| q >= -1e-15));
    }
}
