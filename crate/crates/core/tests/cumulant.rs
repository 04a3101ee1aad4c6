use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use superradiant::cumulant::{self, default_options};
use superradiant::integrate::IntegratorOptions;
use superradiant::meanfield;
use superradiant::{CumulantState, MeanFieldState, SystemParams};

type CMat = DMatrix<Complex64>;

fn steady(p: &SystemParams) -> CumulantState {
    cumulant::cumulant_steady_state(p, &default_options(p)).unwrap()
}

/// Steady state of one spin coupled to a cavity truncated at `n_max`
/// photons, from the Lindblad master equation with
/// `H = Omega (a^dag sigma^- + sigma^+ a)`, jump operators `sqrt(kappa) a`,
/// `sqrt(g+) sigma^+`, `sqrt(g-) sigma^-`, `sqrt(gz/2) sigma^z`.
/// Returns `(<sigma^z>, <a^dag a>)`.
fn single_spin_master_equation(omega: f64, kappa: f64, gp: f64, gm: f64, gz: f64, n_max: usize) -> (f64, f64) {
    let nf = n_max + 1;
    let dim = 2 * nf;
    let c = |x: f64| Complex64::new(x, 0.0);
    // basis index = spin * nf + photon, spin 0 = ground, 1 = excited
    let mut a_f = CMat::zeros(nf, nf);
    for k in 1..nf {
        a_f[(k - 1, k)] = c((k as f64).sqrt());
    }
    let mut sm_s = CMat::zeros(2, 2);
    sm_s[(0, 1)] = c(1.0);
    let mut sz_s = CMat::zeros(2, 2);
    sz_s[(0, 0)] = c(-1.0);
    sz_s[(1, 1)] = c(1.0);
    let id_f = CMat::identity(nf, nf);
    let id_s = CMat::identity(2, 2);
    let a = id_s.kronecker(&a_f);
    let sm = sm_s.kronecker(&id_f);
    let sz = sz_s.kronecker(&id_f);
    let h = (a.adjoint() * &sm + sm.adjoint() * &a) * c(omega);

    // column-major vec: vec(A X B) = (B^T kron A) vec(X)
    let id = CMat::identity(dim, dim);
    let left = |m: &CMat| id.kronecker(m);
    let right = |m: &CMat| m.transpose().kronecker(&id);
    let mut liou = (left(&h) - right(&h)) * Complex64::new(0.0, -1.0);
    let jumps = [
        (kappa, a.clone()),
        (gp, sm.adjoint()),
        (gm, sm.clone()),
        (0.5 * gz, sz.clone()),
    ];
    for (rate, l) in jumps {
        if rate == 0.0 {
            continue;
        }
        let ldl = l.adjoint() * &l;
        let term = l.conjugate().kronecker(&l) - (left(&ldl) + right(&ldl)) * c(0.5);
        liou += term * c(rate);
    }
    // replace one equation by the trace condition
    let mut rhs = DVector::<Complex64>::zeros(dim * dim);
    for j in 0..dim * dim {
        liou[(0, j)] = c(0.0);
    }
    for k in 0..dim {
        liou[(0, k * dim + k)] = c(1.0);
    }
    rhs[0] = c(1.0);
    let v = liou.lu().solve(&rhs).unwrap();
    let rho = CMat::from_column_slice(dim, dim, v.as_slice());
    let expect = |op: &CMat| (op * &rho).trace().re;
    (expect(&sz), expect(&(a.adjoint() * &a)))
}

#[test]
fn single_spin_matches_the_master_equation() {
    // weak excitation: n << 1, where the dropped spin-photon correlations are small
    let kappa = 10.0;
    let cases = [
        (0.3, 0.5, 0.0, 0.0),
        (0.3, 2.0, 0.0, 0.0),
        (0.5, 0.5, 0.0, 0.0),
        (0.5, 1.0, 0.1, 0.2),
    ];
    for (omega, gp, gm, gz) in cases {
        let p = SystemParams::new(1, 1.0, omega, kappa, gp, gm, gz).unwrap();
        assert_eq!((p.n_d, p.n_ud), (1, 0));
        let s = steady(&p);
        let (sz, n) = single_spin_master_equation(omega, kappa, gp, gm, gz, 8);
        assert!(
            (s.s_z_d - sz).abs() / sz.abs() < 0.05,
            "g+ = {gp}: s_z {} vs {sz}",
            s.s_z_d
        );
        assert!((s.n_phot - n).abs() / n < 0.05, "g+ = {gp}: n {} vs {n}", s.n_phot);
    }
}

#[test]
fn photon_number_is_extensive_above_threshold() {
    let per_atom: Vec<f64> = [100u64, 1000, 10000]
        .iter()
        .map(|&n| {
            let p = SystemParams::from_coupling(n, 1.0, 1.0, 10.0, 1.0, 0.0, 0.0).unwrap();
            let s = steady(&p);
            cumulant::output_power(&s, &p).n_phot_per_atom
        })
        .collect();
    let mean = per_atom.iter().sum::<f64>() / 3.0;
    for x in &per_atom {
        assert!((x - mean).abs() / mean < 0.2, "{per_atom:?}");
    }
}

#[test]
fn inversion_approaches_mean_field_with_growing_n() {
    // fully driven: mean-field inversion g+/(2V)
    let p = SystemParams::from_coupling(10000, 1.0, 1.0, 10.0, 1.0, 0.0, 0.0).unwrap();
    assert!((steady(&p).s_z_d - 0.5).abs() / 0.5 < 0.05);

    // The cavity is kept explicit on both sides: at this cavity ratio the
    // adiabatic elimination itself shifts the undriven inversion by ~1e-2.
    for p_d in [1.0, 0.9, 0.8] {
        let base = SystemParams::from_coupling(1000, p_d, 1.0, 10.0, 1.0, 0.0, 0.0).unwrap();
        let large = base.with_n_at_fixed_v(1_000_000).unwrap();
        let mut start = meanfield::seeded_initial_state(&large, 0);
        start.alpha = Some(meanfield::adiabatic_cavity_amplitude(&start, &large));
        let traj =
            meanfield::integrate_with_cavity(&large, &start, (0.0, 5000.0), &IntegratorOptions::default()).unwrap();
        let settled = MeanFieldState::unpack(traj.last().1);
        let gaps: Vec<f64> = [1000u64, 10000, 100000]
            .iter()
            .map(|&n| {
                let s = steady(&base.with_n_at_fixed_v(n).unwrap());
                let gap_d = (s.s_z_d - settled.s_z_d).abs();
                let gap_ud = if p_d < 1.0 {
                    (s.s_z_ud - settled.s_z_ud).abs()
                } else {
                    0.0
                };
                gap_d.max(gap_ud)
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "p_d = {p_d}: {gaps:?}");
    }
}

#[test]
fn weak_emission_below_threshold() {
    let p = SystemParams::from_coupling(1000, 0.5, 1.0, 10.0, 1.0, 0.0, 0.0).unwrap();
    let s = steady(&p);
    assert!(s.n_phot > 0.0 && s.n_phot < 1.0, "n = {}", s.n_phot);
    assert!(s.sp_sm_dd.abs() < 1e-2);
    assert!(s.sp_sm_udud.abs() < 1e-2);
    let power = cumulant::output_power(&s, &p);
    assert_eq!(power.power, p.kappa * s.n_phot);
}

#[test]
fn moments_stay_within_bounds_at_figure_three_rates() {
    let times: Vec<f64> = (0..=2000).map(|k| 5.0 * k as f64).collect();
    for (gp, p_d) in [(1.0, 0.8), (0.5, 0.97), (0.5, 1.0), (2.0, 0.6), (0.1, 0.55)] {
        let p = SystemParams::from_coupling(100000, p_d, 1.0, 10.0, gp, 1e-4, 1e-3).unwrap();
        let traj =
            cumulant::integrate_cumulants_at(&p, &CumulantState::ground(), 0.0, &times, &default_options(&p)).unwrap();
        for (t, s) in times.iter().zip(&traj) {
            assert!(s.within_bounds(&p, 1e-9), "g+ = {gp}, p_d = {p_d}, t = {t}: {s:?}");
        }
    }
}
