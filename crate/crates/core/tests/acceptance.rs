//! Acceptance report: one PASS/FAIL line per criterion with the measured
//! values. Failing criteria are reported, not asserted, so the report is
//! always complete.

use std::time::Instant;

use num_complex::Complex64;

use superradiant::config::Config;
use superradiant::cumulant::{self, default_options};
use superradiant::harness::{analyze_steady, compute_transient, SteadyAnalysis};
use superradiant::integrate::{integrate_complex, IntegratorOptions};
use superradiant::meanfield;
use superradiant::spectrum::{self, RegressionSystem};
use superradiant::SystemParams;

fn fig2(p_d: f64) -> SystemParams {
    SystemParams::from_coupling(1000, p_d, 1.0, 10.0, 1.0, 0.0, 0.0).unwrap()
}

fn fig3(p_d: f64, gp: f64) -> SystemParams {
    SystemParams::from_coupling(100_000, p_d, 1.0, 10.0, gp, 1e-4, 1e-3).unwrap()
}

fn analyze(p: &SystemParams) -> Result<SteadyAnalysis, String> {
    analyze_steady(p).map_err(|e| e.to_string())
}

/// `omega^2 = (g+/4) [v - 2 V p_ud - sqrt(v (v - 4 V p_ud))]`, `v = 2V - g+`.
fn traveling_wave_oracle(v_big: f64, gp: f64, p_ud: f64) -> f64 {
    let v = 2.0 * v_big - gp;
    (0.25 * gp * (v - 2.0 * v_big * p_ud - (v * (v - 4.0 * v_big * p_ud)).sqrt())).sqrt()
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, start: Instant, detail: String) {
        if !pass {
            self.failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("{verdict} [{name}] {detail} ({:.1} s)", start.elapsed().as_secs_f64());
    }
}

fn threshold(r: &mut Report) {
    let start = Instant::now();
    let p_c = meanfield::lasing_threshold(&fig2(0.8)).unwrap();
    let n = |p_d: f64| cumulant::cumulant_steady_state(&fig2(p_d), &default_options(&fig2(p_d))).map(|s| s.n_phot);
    match (n(0.70), n(0.85)) {
        (Ok(lo), Ok(hi)) => {
            let ratio = hi / lo;
            r.line(
                "threshold",
                (p_c - 0.75).abs() < 1e-12 && ratio >= 100.0,
                start,
                format!("p_c = {p_c}; n(0.85)/n(0.70) = {hi:.4e}/{lo:.4e} = {ratio:.2} (need >= 100)"),
            );
        }
        (a, b) => r.line("threshold", false, start, format!("steady state failed: {a:?} {b:?}")),
    }
}

fn frequency_shift(r: &mut Report) {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for p_d in [0.8, 0.9] {
        let expected = traveling_wave_oracle(1.0, 1.0, 1.0 - p_d);
        match analyze(&fig2(p_d)) {
            Ok(a) => {
                let rel = (a.peak_omega - expected).abs() / expected;
                pass &= rel < 0.05;
                detail.push(format!(
                    "p_d = {p_d}: peak {:.5} vs {expected:.5} ({:.2}%)",
                    a.peak_omega,
                    100.0 * rel
                ));
            }
            Err(e) => {
                pass = false;
                detail.push(format!("p_d = {p_d}: {e}"));
            }
        }
    }
    r.line("frequency shift", pass, start, detail.join("; "));
}

fn fully_driven_control(r: &mut Report) {
    let start = Instant::now();
    match analyze(&fig2(1.0)) {
        Ok(a) => {
            let fit = a.fit.as_ref().ok();
            let fit_delta = fit.map_or(f64::NAN, |f| f.delta);
            let fit_width = fit.map_or(f64::NAN, |f| f.delta_nu);
            let pass = a.peak_omega < 1e-3 && fit_delta < 1e-6 && a.delta_eig < 1e-12;
            r.line(
                "p_d = 1 control",
                pass,
                start,
                format!(
                    "peak |w| = {:.3e}, fitted delta = {fit_delta:.3e} (width {fit_width:.3e}), eigenvalue delta = {:.3e}",
                    a.peak_omega, a.delta_eig
                ),
            );
        }
        Err(e) => r.line("p_d = 1 control", false, start, e),
    }
}

fn linewidth_broadening(r: &mut Report) {
    let start = Instant::now();
    match (analyze(&fig3(0.97, 0.5)), analyze(&fig3(1.0, 0.5))) {
        (Ok(a), Ok(b)) => {
            let width = |x: &SteadyAnalysis| x.fit.as_ref().map_or(f64::NAN, |f| f.delta_nu);
            let ratio = width(&a) / width(&b);
            let eig_ratio = a.delta_nu_eig / b.delta_nu_eig;
            r.line(
                "linewidth broadening",
                (5.0..=20.0).contains(&ratio),
                start,
                format!(
                    "fitted dnu(0.97)/dnu(1) = {:.4e}/{:.4e} = {ratio:.2} (eigenvalues: {eig_ratio:.2}); need [5, 20]",
                    width(&a),
                    width(&b)
                ),
            );
        }
        (a, b) => r.line(
            "linewidth broadening",
            false,
            start,
            format!("{:?} {:?}", a.err(), b.err()),
        ),
    }
}

fn minimum_linewidth(r: &mut Report) {
    let start = Instant::now();
    let p = fig3(1.0, 1.0);
    let unit = p.v / p.n as f64;
    match analyze(&p) {
        Ok(a) => {
            let width = a.fit.as_ref().map_or(f64::NAN, |f| f.delta_nu);
            let ratio = width / unit;
            r.line(
                "minimum linewidth",
                (0.1..=10.0).contains(&ratio),
                start,
                format!("fitted dnu = {width:.4e}, V/N = {unit:.1e}, ratio {ratio:.3} (need within 10x)"),
            );
        }
        Err(e) => r.line("minimum linewidth", false, start, e),
    }
}

fn transient_and_scaling(r: &mut Report) {
    let start = Instant::now();
    let config = Config::parse("N = 100000\nNs = 1000, 10000, 100000, 1000000\n").unwrap();
    let result = match compute_transient(&config, 0, 0) {
        Ok(x) => x,
        Err(e) => {
            r.line("transient decay", false, start, e.to_string());
            r.line("N scaling", false, start, e.to_string());
            return;
        }
    };
    let gamma = result.base.gamma;
    let t_last = *result.times.last().unwrap();
    let mf_last = *result.omega_mf.last().unwrap();
    let plateau = result
        .tracks
        .iter()
        .find(|t| t.params.n == 100_000)
        .and_then(|t| t.residual());
    match (result.fit, plateau) {
        (Some(fit), Some(res)) => r.line(
            "transient decay",
            fit.r_squared > 0.99 && res > 3.0 * mf_last,
            start,
            format!(
                "mean-field fit R^2 = {:.6}, rate = {:.4e} V = {:.3} Gamma = {:.3} (Gamma/2); N = 1e5 peak at t = {t_last} is {res:.4e} vs mean-field {mf_last:.4e} ({:.0}x, need > 3x)",
                fit.r_squared,
                fit.rate,
                fit.rate / gamma,
                fit.rate / (0.5 * gamma),
                res / mf_last
            ),
        ),
        (fit, res) => r.line("transient decay", false, start, format!("fit {fit:?}, residual {res:?}")),
    }

    let residuals: Vec<Option<f64>> = result.tracks.iter().map(|t| t.residual()).collect();
    let values: Vec<f64> = residuals.iter().map(|x| x.unwrap_or(f64::NAN)).collect();
    let decreasing = residuals.iter().all(Option::is_some) && values.windows(2).all(|w| w[1] < w[0]);
    let listing: Vec<String> = result
        .tracks
        .iter()
        .zip(&values)
        .map(|(t, v)| format!("N = {:.0e}: {v:.4e}", t.params.n as f64))
        .collect();
    r.line(
        "N scaling",
        decreasing,
        start,
        format!("residual shift at t = {t_last}: {}", listing.join(", ")),
    );
}

fn purity_drift(p_d: f64, rtol: f64) -> f64 {
    let p = fig2(p_d);
    let s0 = meanfield::seeded_initial_state(&p, 1);
    let times: Vec<f64> = (0..=1000).map(|k| k as f64).collect();
    let opts = IntegratorOptions::default().with_tolerances(rtol, 1e-12);
    let traj = meanfield::integrate_reduced_at(&p, &s0, 0.0, &times, &opts).unwrap();
    let purity0 = s0.bloch_norms().1;
    traj.iter()
        .map(|s| (s.bloch_norms().1 - purity0).abs())
        .fold(0.0, f64::max)
}

fn total_intensity(sys: &RegressionSystem, c: &[Complex64; 3], width: f64, delta: f64, span: f64) -> f64 {
    let mut grid = Vec::new();
    for centre in [-delta, delta] {
        grid.extend(spectrum::linspace(centre - 50.0 * width, centre + 50.0 * width, 4001));
    }
    let mut x = width;
    while x < span {
        grid.push(delta + x);
        grid.push(-delta - x);
        x *= 1.01;
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let s: Vec<f64> = grid.iter().map(|&w| sys.resolvent(c, w).unwrap()).collect();
    let mut integral = 0.0;
    for k in 1..grid.len() {
        integral += 0.5 * (s[k] + s[k - 1]) * (grid[k] - grid[k - 1]);
    }
    // A / w^2 tails
    integral += s[0] * grid[0].abs() + s[s.len() - 1] * grid[grid.len() - 1].abs();
    integral / (2.0 * std::f64::consts::PI)
}

fn property_suites(r: &mut Report) {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;

    let default_rtol = IntegratorOptions::default().rtol;
    let drift = [0.6, 0.8, 0.95]
        .map(|p_d| purity_drift(p_d, default_rtol))
        .into_iter()
        .fold(0.0, f64::max);
    let fine = [0.6, 0.8]
        .map(|p_d| purity_drift(p_d, 1e-10))
        .into_iter()
        .fold(0.0, f64::max);
    pass &= drift < 1e-8;
    parts.push(format!(
        "purity drift {drift:.2e} at rtol {default_rtol:.0e} (need < 1e-8; {fine:.2e} at rtol 1e-10 for p_d <= 0.8)"
    ));

    let mut bisection = 0.0f64;
    for (gp, gm, gz) in [
        (1.0, 0.0, 0.0),
        (0.5, 0.0, 0.0),
        (1.0, 1e-4, 1e-3),
        (0.3, 0.01, 0.02),
        (1.5, 0.05, 0.0),
    ] {
        let p = SystemParams::from_coupling(1000, 0.5, 1.0, 10.0, gp, gm, gz).unwrap();
        let closed = meanfield::lasing_threshold(&p).unwrap();
        let bisected = meanfield::bisect_lasing_threshold(&p, 1e-9)
            .ok()
            .flatten()
            .unwrap_or(f64::NAN);
        bisection = bisection.max((bisected - closed).abs());
    }
    let ok = bisection < 1e-4;
    pass &= ok;
    parts.push(format!("bisection {bisection:.1e} (need < 1e-4)"));

    let mut integral = 0.0f64;
    for p in [
        fig2(0.6),
        fig2(0.8),
        fig2(0.9),
        fig2(1.0),
        fig3(0.97, 0.5),
        fig3(1.0, 0.5),
        fig3(0.8, 1.0),
    ] {
        let s = cumulant::cumulant_steady_state(&p, &default_options(&p)).unwrap();
        let sys = spectrum::regression_matrix(&p, s.s_z_d, s.s_z_ud);
        let (dnu, delta) = spectrum::linewidth_from_eigenvalues(&sys);
        let total = total_intensity(&sys, &spectrum::correlation_vector(&s), dnu, delta, 1e4 * p.kappa);
        integral = integral.max((total - s.n_phot).abs() / s.n_phot);
    }
    pass &= integral < 1e-2;
    parts.push(format!("integral identity {:.2e} relative (need < 1e-2)", integral));

    // Fig. 3 map grid; resolved where the spectral maxima are more than
    // three fitted widths apart
    let (mut resolved, mut bad_lasing, mut bad_below, mut worst) = (0, 0, 0, 0.0f64);
    let mut lasing = 0;
    for k in 0..40 {
        let gp = 0.05 + k as f64 * 0.05;
        for j in 0..51 {
            let p = fig3(0.5 + j as f64 * 0.01, gp);
            let Ok(a) = analyze(&p) else { continue };
            let Ok(fit) = a.fit else { continue };
            if 2.0 * a.peak_omega <= 3.0 * fit.delta_nu {
                continue;
            }
            resolved += 1;
            let above = p.p_d > meanfield::lasing_threshold(&p).unwrap_or(f64::INFINITY);
            lasing += above as usize;
            let rel = (fit.delta_nu - a.delta_nu_eig).abs() / a.delta_nu_eig;
            worst = worst.max(rel);
            if rel >= 0.1 {
                if above {
                    bad_lasing += 1;
                } else {
                    bad_below += 1;
                }
            }
        }
    }
    pass &= bad_lasing + bad_below == 0;
    parts.push(format!(
        "fit/eigenvalue dnu: {} of {resolved} resolved map points outside 10% ({bad_lasing} of {lasing} lasing, {bad_below} below threshold), worst {:.1}%",
        bad_lasing + bad_below,
        100.0 * worst
    ));

    let mut phase = 0.0f64;
    for (ratio, p_d, gp, gm, gz) in [
        (1.0, 0.9, 1.0, 1e-4, 1e-3),
        (10.0, 0.6, 0.5, 0.05, 0.01),
        (3.0, 1.0, 0.2, 0.3, 0.0),
    ] {
        let p = SystemParams::from_coupling(1000, p_d, 1.0, ratio, gp, gm, gz).unwrap();
        let theta = 0.7;
        let traj = integrate_complex(
            |_, z, dz| dz[0] = meanfield::standard_laser_rhs(z[0], &p).unwrap(),
            &[Complex64::from_polar(1e-3, theta)],
            (0.0, 200.0),
            &IntegratorOptions::default(),
        )
        .unwrap();
        for z in &traj.states {
            phase = phase.max((z[0].arg() - theta).abs());
        }
    }
    pass &= phase < 1e-9;
    parts.push(format!("standard-laser phase {phase:.1e} rad (need < 1e-9)"));

    r.line("property suites", pass, start, parts.join("; "));
}

fn main() {
    let mut r = Report { failed: 0 };
    threshold(&mut r);
    frequency_shift(&mut r);
    fully_driven_control(&mut r);
    linewidth_broadening(&mut r);
    minimum_linewidth(&mut r);
    transient_and_scaling(&mut r);
    property_suites(&mut r);
    println!("{} criteria failed", r.failed);
}
