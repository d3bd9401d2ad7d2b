use super::*;
use crate::wavepacket::{evolve_exact, PacketSuperposition};

fn charge(width: f64) -> MovingCharge {
    MovingCharge::new(1.0, GaussianPacket::centered(width).unwrap()).unwrap()
}

fn test_particle(q: f64, mass: Mass, center: f64, width: f64) -> TestParticleSpec {
    let p = GaussianPacket::new([0.0, 0.0, center], width, Complex64::new(1.0, 0.0)).unwrap();
    TestParticleSpec::new(q, mass, p).unwrap()
}

/// Grid covering the exact reach `[-T, T]` and the weak reach `wT` around a
/// unit-width charge at 0, and a unit-width test particle at `cp`.
fn grid_for(t: f64, w: f64, cp: f64, n: usize, dx: f64) -> JointGrid {
    let lo = (-t).min(w * t) - 8.2;
    let hi = t.max(w * t) + 8.2;
    JointGrid::covering((lo, hi), (cp - 8.2, cp + 8.2), n, n, dx, 0.0).unwrap()
}

fn max_abs_diff(a: &JointState2D, b: &JointState2D) -> f64 {
    let shift = (a.log_scale() - b.log_scale()).exp();
    a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x * shift - y).norm()).fold(0.0, f64::max)
}

#[test]
fn uncoupled_exact_kick_is_a_product() {
    let post = CoinState::new(40, 0.8, -0.6).unwrap();
    let t = 0.6;
    let grid = grid_for(t, 7.0, -30.0, 96, 3.0);
    let ch = charge(1.0);
    let tp = test_particle(0.0, Mass::Infinite, -30.0, 1.0);
    let s = joint_kick_exact(&ch, &post, &tp, t, &grid).unwrap();
    let single: PacketSuperposition = evolve_exact(&ch.packet, &post, t).unwrap();
    let mut worst: f64 = 0.0;
    for i in (0..grid.nz).step_by(7) {
        let phi = single.amplitude_sector_sum(grid.z(i));
        for j in (0..grid.nzp).step_by(5) {
            let want = phi * tp.omega(grid.zp(j));
            worst = worst.max((s.amplitude(i, j) - want).norm());
        }
    }
    assert!(worst < 1e-12, "{worst}");
    // Grid norm against the closed-form norm of the charge packet (Omega has unit norm).
    let rel = (s.log_norm_sqr() - single.log_norm_sqr()).abs();
    assert!(rel < 1e-8, "{rel}");
    let sv = s.schmidt_values().unwrap();
    assert!(sv[0] >= 1.0 - 1e-10, "{}", sv[0]);
}

#[test]
fn single_spin_at_zero_time_is_one_kick_phase() {
    let post = CoinState::new(1, 0.6, 0.8).unwrap();
    let grid = grid_for(0.0, 0.0, -12.0, 72, 2.0);
    let ch = charge(1.0);
    let tp = test_particle(1.7, Mass::Infinite, -12.0, 1.0);
    let s = joint_kick_exact(&ch, &post, &tp, 0.0, &grid).unwrap();
    // (b K(-1) + a K(+1)) / sqrt 2, normalized by the overlap (a + b)/sqrt 2; V(+-1) = q/|dz|.
    for i in (0..grid.nz).step_by(5) {
        for j in (0..grid.nzp).step_by(3) {
            let (z, zp) = (grid.z(i), grid.zp(j));
            let k = Complex64::from_polar(1.0, -1.7 / (zp - z).abs());
            let want = (0.8 * k + 0.6 * k) / 1.4 * gauss(z, 1.0) * tp.omega(zp);
            assert!((s.amplitude(i, j) - want).norm() < 1e-14);
        }
    }
}

#[test]
fn chirp_contraction_matches_horner() {
    let post = CoinState::new(60, 0.8, -0.6).unwrap();
    let t = 0.5;
    let grid = grid_for(t, 7.0, -35.0, 84, 3.0);
    let ch = charge(1.0);
    let tp = test_particle(2.5, Mass::Infinite, -35.0, 1.0);
    let a = joint_kick_exact_with(&ch, &post, &tp, t, &grid, ExactMethod::Chirp).unwrap();
    let b = joint_kick_exact_with(&ch, &post, &tp, t, &grid, ExactMethod::Horner).unwrap();
    let peak = b.amplitudes().iter().map(|x| x.norm()).fold(0.0, f64::max);
    let d = max_abs_diff(&a, &b);
    assert!(d < 1e-13 * peak, "{d} vs peak {peak}");
}

#[test]
fn exact_kick_approaches_weak_kick() {
    let post = CoinState::new(200, 0.8, -0.6).unwrap();
    let w = coin::weak_velocity(&post).unwrap();
    let t = 0.3;
    let cp = -40.0;
    let grid = grid_for(t, w, cp, 100, 3.0);
    let ch = charge(1.0);
    let scale = max_weak_potential(1.0, w, &grid, FieldMode::ClosedForm);
    let tp = test_particle(0.3 / scale, Mass::Infinite, cp, 1.0);
    let ex = joint_kick_exact(&ch, &post, &tp, t, &grid).unwrap();
    let wk = joint_kick_weak(&ch, w, &tp, t, &grid, FieldMode::ClosedForm).unwrap();
    let f = ex.fidelity(&wk).unwrap();
    assert!(f > 0.99, "{f}");
    // Two retarded roots double the phase; the finite-N state follows the single closed form.
    let wk2 = joint_kick_weak(&ch, w, &tp, t, &grid, FieldMode::RetardedSum).unwrap();
    assert!(ex.fidelity(&wk2).unwrap() < f);
}

#[test]
fn weak_kick_keeps_the_test_marginal() {
    let grid = grid_for(0.4, 7.0, -30.0, 90, 3.0);
    let ch = charge(1.0);
    let tp = test_particle(30.0, Mass::Infinite, -30.0, 1.0);
    let free = joint_kick_weak(&ch, 7.0, &test_particle(0.0, Mass::Infinite, -30.0, 1.0), 0.4, &grid, FieldMode::ClosedForm)
        .unwrap();
    let kicked = joint_kick_weak(&ch, 7.0, &tp, 0.4, &grid, FieldMode::ClosedForm).unwrap();
    for (a, b) in kicked.test_marginal().iter().zip(free.test_marginal()) {
        assert!((a - b).abs() <= 1e-15 * b.max(1e-300) + 1e-300);
    }
    assert!(kicked.fidelity(&free).unwrap() < 0.999);
}

#[test]
fn static_charge_gives_coulomb_phase() {
    let grid = grid_for(1.0, 0.0, -20.0, 80, 3.0);
    let ch = charge(1.0);
    let tp = test_particle(0.7, Mass::Infinite, -20.0, 1.0);
    let s = joint_kick_weak(&ch, 0.0, &tp, 1.0, &grid, FieldMode::RetardedSum).unwrap();
    for i in (0..grid.nz).step_by(11) {
        for j in (0..grid.nzp).step_by(13) {
            let (z, zp) = (grid.z(i), grid.zp(j));
            let r = (9.0 + (zp - z) * (zp - z)).sqrt();
            let want = gauss(z, 1.0) * Complex64::from_polar(1.0, -0.7 / r) * tp.omega(zp);
            assert!((s.amplitude(i, j) - want).norm() < 1e-14);
        }
    }
}

#[test]
fn superluminal_weak_kick_lives_in_the_wake() {
    let grid = grid_for(0.0, 0.0, -20.0, 80, 3.0);
    let ch = charge(1.0);
    let tp = test_particle(1.0, Mass::Infinite, -20.0, 1.0);
    let s = joint_kick_weak(&ch, 7.0, &tp, 0.0, &grid, FieldMode::ClosedForm).unwrap();
    let edge = 3.0 * 48f64.sqrt();
    let i = grid.nz / 2;
    let z = grid.z(i);
    let phase = |j: usize| {
        let base = gauss(z, 1.0) * tp.omega(grid.zp(j));
        (s.amplitude(i, j) / base).arg()
    };
    let mut inside = 0;
    for j in 0..grid.nzp {
        let d = grid.zp(j) - z;
        if d.abs() < edge {
            assert!(phase(j).abs() < 1e-15);
        } else {
            assert!(phase(j) < 0.0);
            inside += 1;
        }
    }
    assert!(inside > 0);
}

#[test]
fn finite_mass_at_huge_mass_matches_scalar_kick() {
    let post = CoinState::new(30, 0.8, 0.6).unwrap();
    let t = 0.5;
    let cp = -25.0;
    let grid = grid_for(t, 1.0, cp, 80, 3.0);
    let ch = charge(1.0);
    let tp_inf = test_particle(2.0, Mass::Infinite, cp, 1.0);
    let tp_m = test_particle(2.0, Mass::Finite(1e12), cp, 1.0);
    let a = joint_kick_exact(&ch, &post, &tp_inf, t, &grid).unwrap();
    let b = joint_kick_finite_m(&ch, &KickBranch::Exact(post), &tp_m, t, &grid, 1).unwrap();
    let d = b.relative_distance(&a).unwrap();
    assert!(d < 1e-6, "{d}");
}

#[test]
fn finite_mass_without_coupling_spreads_omega() {
    let grid = grid_for(0.0, 0.0, 0.0, 128, 0.0);
    let ch = charge(1.0);
    let m = 3.0;
    let tp = test_particle(0.0, Mass::Finite(m), 0.0, 1.0);
    let s = joint_kick_finite_m(&ch, &KickBranch::Weak { w: 0.0, mode: FieldMode::ClosedForm }, &tp, 0.0, &grid, 1)
        .unwrap();
    // Free Gaussian after unit time: amplitude (pi)^{-1/4} (1 + i/m)^{-1/2} e^{-z^2 / 2(1 + i/m)}.
    let c = Complex64::new(1.0, 1.0 / m);
    let i = grid.nz / 2;
    let phi = gauss(grid.z(i), 1.0);
    for j in 0..grid.nzp {
        let zp = grid.zp(j);
        if zp.abs() > 5.0 {
            continue;
        }
        let want = phi * std::f64::consts::PI.powf(-0.25) / c.sqrt() * (-zp * zp / (2.0 * c)).exp();
        assert!((s.amplitude(i, j) - want).norm() < 1e-12, "{j}");
    }
}

#[test]
fn finite_mass_weak_branch_uses_the_weak_potentials() {
    let w = 0.5;
    let grid = grid_for(1.0, w, -12.0, 96, 3.0);
    let ch = charge(1.0);
    let tp = test_particle(0.4, Mass::Finite(1e12), -12.0, 1.0);
    let a = joint_kick_finite_m(&ch, &KickBranch::Weak { w, mode: FieldMode::RetardedSum }, &tp, 1.0, &grid, 1).unwrap();
    let tp_inf = test_particle(0.4, Mass::Infinite, -12.0, 1.0);
    let b = joint_kick_weak(&ch, w, &tp_inf, 1.0, &grid, FieldMode::RetardedSum).unwrap();
    assert!(a.relative_distance(&b).unwrap() < 1e-6);
}

#[test]
fn finite_mass_refuses_cancelling_sums_and_coarse_splits() {
    let ch = charge(1.0);
    let post = CoinState::new(200, 0.8, -0.6).unwrap();
    let grid = grid_for(0.3, 7.0, -40.0, 100, 3.0);
    let tp = test_particle(1.0, Mass::Finite(1.0), -40.0, 1.0);
    let err = joint_kick_finite_m(&ch, &KickBranch::Exact(post), &tp, 0.3, &grid, 4).unwrap_err();
    assert!(matches!(err, Error::Cancellation { digits } if digits > 100.0));

    let grid = grid_for(0.0, 0.0, -6.0, 80, 1.0);
    let tp = test_particle(40.0, Mass::Finite(0.05), -6.0, 1.0);
    let err = joint_kick_finite_m(&ch, &KickBranch::Weak { w: 0.0, mode: FieldMode::ClosedForm }, &tp, 0.0, &grid, 1)
        .unwrap_err();
    assert!(matches!(err, Error::SplitStepUnconverged { substeps: 2, .. }), "{err:?}");
}

#[test]
fn exact_kick_needs_infinite_mass_and_a_fine_grid() {
    let post = CoinState::new(10, 0.8, -0.6).unwrap();
    let ch = charge(1.0);
    let grid = grid_for(0.5, 7.0, -20.0, 80, 3.0);
    let tp = test_particle(1.0, Mass::Finite(2.0), -20.0, 1.0);
    assert!(joint_kick_exact(&ch, &post, &tp, 0.5, &grid).is_err());
    let coarse = grid_for(0.5, 7.0, -20.0, 40, 3.0);
    let tp = test_particle(1.0, Mass::Infinite, -20.0, 1.0);
    assert!(matches!(joint_kick_exact(&ch, &post, &tp, 0.5, &coarse), Err(Error::GridTooCoarse { .. })));
    let orth = CoinState::new(10, std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2).unwrap();
    assert_eq!(joint_kick_exact(&ch, &orth, &tp, 0.5, &grid).unwrap_err(), Error::ZeroOverlap);
}

#[test]
fn binary_table_round_trips() {
    let grid = JointGrid::new(-1.0, 2.0, 0.25, 3, 4, 3.0, 0.5).unwrap();
    let amps: Vec<Complex64> = (0..12).map(|k| Complex64::new(k as f64, -0.5 * k as f64)).collect();
    let s = JointState2D::from_parts(grid, amps, -3.5).unwrap();
    let mut buf = Vec::new();
    s.write_binary(&mut buf).unwrap();
    assert_eq!(buf.len(), 8 + 16 + 48 + 16 * 12);
    assert_eq!(&buf[..8], b"WFJOINT1");
    assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 3);
    let back = JointState2D::read_binary(buf.as_slice()).unwrap();
    assert_eq!(back, s);
    let mut csv = Vec::new();
    write_summary_csv(&mut csv, &[("a", &s)], Some(0.5), 2).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("key,value\na.log_norm_sqr,"));
    assert!(text.contains("a.schmidt_2,"));
    assert!(text.ends_with("fidelity,5.00000000000000000e-1\n"));
}

#[test]
fn moment_table_cells() {
    let post = CoinState::new(100, 0.8, -0.6).unwrap();
    let tab = moment_replacement_check(&post, 3, &[0.0, 1.0, 2.0], 1.0, &[100, 200, 400, 800]).unwrap();
    assert_eq!(tab.cells.len(), 12);
    let cell = |n: u32, p: f64| tab.cells.iter().find(|c| c.n == n && c.p == p).unwrap();
    assert!(cell(1, 0.0).is_identically_zero());
    assert!(cell(0, 0.0).is_identically_zero());
    assert!(tab.all_decreasing());
    assert!(cell(3, 2.0).ratios().iter().all(|r| *r > 2.0));
    assert!(tab.largest_slope() < -0.9);
    let orth = CoinState::new(4, std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2).unwrap();
    assert_eq!(moment_replacement_check(&orth, 1, &[0.0], 1.0, &[4]).unwrap_err(), Error::ZeroOverlap);
}

#[test]
fn causality_examples() {
    let w = 7.0;
    let q0 = CausalityQuery::new(10.0, None, 1, 0.0, 1.0).unwrap();
    let r = causality_check(&q0, w, 1.0).unwrap();
    assert!(r.resolution_ok && r.fluctuation_ok);

    for (n, ok) in [(4, false), (5, true)] {
        let q = CausalityQuery::new(10.0, None, n, 1.0, 1.0).unwrap();
        assert_eq!(causality_check(&q, w, 1.0).unwrap().fluctuation_ok, ok);
    }
    let q = CausalityQuery::new(2.0, None, 137, (1.0f64 / 137.0).sqrt(), 3.0).unwrap();
    let r = causality_check(&q, w, 1.0).unwrap();
    assert!((r.fluctuation_margin - 137.0 * 137.0 / 4.0).abs() < 1e-9);
    assert!((r.delta_e - 0.25).abs() < 1e-15);
    assert!((r.delta_z - 8.0 * 0.25 / (2.0 * (1.0f64 / 137.0).sqrt())).abs() < 1e-12);
    assert!(r.causal_contact);
    assert!(CausalityQuery::new(-1.0, None, 1, 1.0, 1.0).is_err());
}
