//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! By default the process exits 0 once every criterion has been evaluated;
//! set `WEAKFLOW_ACCEPTANCE_STRICT=1` to exit 1 when any line reads FAIL.

use std::time::Instant;

use num_complex::Complex64;
use weakflow::coin::{self, CoinState};
use weakflow::coupling::{self, CausalityQuery, JointGrid, Mass, MovingCharge, TestParticleSpec};
use weakflow::ensemble_stats::{self, ExperimentConfig};
use weakflow::fields::{self, FieldMode, GridSpec, SourceSpec};
use weakflow::wavepacket::{self, GaussianPacket, PacketSuperposition};

const A_UP: f64 = 0.8;
const A_DOWN: f64 = -0.6;
const EPS: f64 = 1.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn post(n: u32) -> CoinState {
    CoinState::new(n, A_UP, A_DOWN).unwrap()
}

fn packet() -> GaussianPacket {
    GaussianPacket::centered(EPS).unwrap()
}

/// `w t = 3 eps` with `w = 7`.
fn t_criterion1() -> f64 {
    3.0 * EPS / coin::weak_velocity(&post(1)).unwrap()
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn exact_weak_fidelity(n: u32, t: f64) -> f64 {
    let ex = wavepacket::evolve_exact(&packet(), &post(n), t).unwrap();
    let wk = wavepacket::evolve_weak(&packet(), coin::weak_velocity(&post(n)).unwrap(), t).unwrap();
    wavepacket::fidelity(&ex, &PacketSuperposition::from(wk)).unwrap()
}

fn criterion_1() -> Outcome {
    let t = t_criterion1();
    let p = post(1000);
    let rep = wavepacket::convergence_report(&packet(), &p, t).unwrap();
    let ex = wavepacket::evolve_exact(&packet(), &p, t).unwrap();
    let at_peak = ex.amplitude(3.0 * EPS).norm();
    let at_t = ex.amplitude(t).norm();
    let ratio = at_peak / at_t;
    let pass = rep.fidelity >= 0.99 && rep.peak_error <= 0.05 * EPS && ratio >= 10.0;
    outcome(
        pass,
        format!(
            "fidelity {:.6} (>= 0.99), peak {:.5} (|peak - 3| = {:.2e} <= 0.05), |psi(3)|/|psi(t)| = {:.3e} (>= 10)",
            rep.fidelity, rep.peak, rep.peak_error, ratio
        ),
    )
}

fn criterion_2() -> Outcome {
    let t = t_criterion1();
    let ns = [250u32, 500, 1000, 2000];
    let deficits: Vec<f64> = ns.iter().map(|&n| 1.0 - exact_weak_fidelity(n, t)).collect();
    let x: Vec<f64> = ns.iter().map(|&n| f64::from(n)).collect();
    let s = slope(&x, &deficits);
    let list: Vec<String> = ns.iter().zip(&deficits).map(|(n, d)| format!("N={n}: {d:.3e}")).collect();
    outcome((s - -1.0).abs() <= 0.15, format!("1 - F: {}; log-log slope {s:.4} (target -1 +- 0.15)", list.join(", ")))
}

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [1.0, -1.0, 2.0, -2.0] {
        let e = wavepacket::scalar_expansion(s, 100);
        let ratio = e.residual.abs() / e.second_order_term.abs();
        pass &= ratio <= 1.2;
        parts.push(format!("s={s}: |res|/term = {ratio:.4}"));
    }
    outcome(pass, format!("{} (<= 1.2)", parts.join(", ")))
}

fn criterion_4() -> Outcome {
    let cfg = ExperimentConfig::new(post(1000), EPS, t_criterion1(), 1, 1).unwrap();
    let l = ensemble_stats::probability_ledger(&cfg).unwrap();
    let static_below_floor = l.log_p_postselect_static < l.log_floor;
    let pass = l.error_exceeds_floor()
        && l.error_exceeds_postselection()
        && (l.log_p_error - -9.0).abs() < 1e-9
        && (l.log_floor - -1000.0).abs() < 1e-12
        && (l.log_p_postselect_static - 1000.0 * 0.02f64.ln()).abs() < 1e-9;
    outcome(
        pass,
        format!(
            "ln p_error = {:.3}, ln p_static = {:.3}, ln e^-N = {:.1}; p_error > e^-N: {}, p_error > p_static: {}, \
             p_static > e^-N: {} (0.02^N below e^-N: {static_below_floor})",
            l.log_p_error,
            l.log_p_postselect_static,
            l.log_floor,
            l.error_exceeds_floor(),
            l.error_exceeds_postselection(),
            !static_below_floor
        ),
    )
}

fn criterion_5() -> Outcome {
    let n = 100;
    let trials = 100_000;
    let v = coin::born_sample(n, 2024, trials);
    let mean = v.iter().sum::<f64>() / trials as f64;
    let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (trials - 1) as f64).sqrt();
    let t = 5.0;
    let cfg = ExperimentConfig::new(CoinState::preselected(n), EPS, t, trials, 2024).unwrap();
    let sample = ensemble_stats::sample_displacements(&cfg, false, 60).unwrap();
    let probs = ensemble_stats::mixture_bin_probabilities(&sample.histogram, n, t, EPS);
    let chi = ensemble_stats::chi_square(&sample.histogram, &probs);
    let pass = (std - 0.1).abs() <= 0.005 && chi.p_value > 0.01;
    outcome(
        pass,
        format!(
            "velocity std {std:.5} (0.1 +- 5%), displacement chi2 {:.2} on {} dof, p = {:.3} (> 0.01)",
            chi.statistic, chi.dof, chi.p_value
        ),
    )
}

fn criterion_6() -> Outcome {
    let grid = GridSpec::new((0.0, 4.0), 64, (-4.0, 4.0), 64).unwrap();
    let mut worst_rel: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    let mut skipped = 0;
    for v in [0.0, 0.3, 0.9, 0.99] {
        let src = SourceSpec::new(1.0, v, 1.0).unwrap();
        for i in 0..grid.n_rho {
            for j in 0..grid.n_z {
                let x = [grid.rho(i), 0.0, grid.z(j)];
                let Ok(closed) = fields::scalar_potential_closed(&src, x) else {
                    skipped += 1;
                    continue;
                };
                let ret = fields::lienard_wiechert(&src, x).unwrap();
                worst_rel = worst_rel.max(((closed - ret) / closed).abs());
                for tau in fields::retarded_roots(&src, x).unwrap() {
                    worst_g = worst_g.max(fields::retardation_residual(&src, x, tau).abs());
                }
            }
        }
    }
    outcome(
        worst_rel <= 1e-10 && worst_g <= 1e-9,
        format!("max rel diff {worst_rel:.2e} (<= 1e-10), max |g(tau)| {worst_g:.2e} (<= 1e-9), {skipped} worldline cells skipped"),
    )
}

fn criterion_7() -> Outcome {
    let v = 7.0;
    let src = SourceSpec::new(1.0, v, 1.0).unwrap();
    let grid = GridSpec::new((0.25, 4.0), 64, (-25.0, 9.0), 256).unwrap();
    let map = fields::field_map(&src, &grid, FieldMode::RetardedSum);
    let cot = (v * v - 1.0).sqrt();
    let dz = grid.d_z();
    let mut worst_row: f64 = 0.0;
    for (i, b) in map.wake_boundary().iter().enumerate() {
        let want = v * src.t - cot * grid.rho(i);
        worst_row = worst_row.max(b.map_or(f64::INFINITY, |z| (z - want).abs()));
    }
    let exact = fields::mach_cone_half_angle(v).unwrap();
    let fitted = map.fitted_half_angle().unwrap();
    let fitted_shift = ((1.0 / fitted.to_radians().tan()) - cot).abs() * grid.rho_max;
    let mut bad_roots = 0;
    for i in 0..grid.n_rho {
        for j in 0..grid.n_z {
            let s = map.at(i, j);
            let r = fields::radicand(&src, s.position);
            if r.abs() < 1e-9 {
                continue;
            }
            let inside = r > 0.0 && s.position[2] < v * src.t;
            let want = if inside { 2 } else { 0 };
            bad_roots += usize::from(s.n_retarded_roots != want);
        }
    }
    let pass = worst_row <= dz && fitted_shift <= dz && bad_roots == 0;
    outcome(
        pass,
        format!(
            "fitted {fitted:.4} deg vs {exact:.4} deg; worst row boundary offset {worst_row:.4}, fit offset at rho_max \
             {fitted_shift:.4} (cell {dz:.4}); cells with wrong root count: {bad_roots}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let p_grid = [0.0, 0.5, 1.0, 1.5, 2.0];
    let table = coupling::moment_replacement_check(&post(100), 3, &p_grid, 1.0, &[100, 200, 400, 800]).unwrap();
    let zero: Vec<String> =
        table.cells.iter().filter(|c| c.is_identically_zero()).map(|c| format!("(n={}, pT={})", c.n, c.p)).collect();
    let failing: Vec<String> = table
        .cells
        .iter()
        .filter(|c| !c.is_identically_zero() && !c.strictly_decreasing())
        .map(|c| format!("(n={}, pT={})", c.n, c.p))
        .collect();
    let min_ratio = table.cells.iter().filter(|c| !c.is_identically_zero()).flat_map(|c| c.ratios()).fold(f64::INFINITY, f64::min);
    outcome(
        failing.is_empty(),
        format!(
            "{} cells; strictly decreasing in all non-zero cells: {}; smallest per-doubling ratio {min_ratio:.3}; \
             largest slope {:.3}; identically zero (exact weak linearity): {}",
            table.cells.len(),
            failing.is_empty(),
            table.largest_slope(),
            zero.join(" ")
        ),
    )
}

fn kick_fidelity(n: u32, points: usize) -> (f64, f64, std::time::Duration) {
    let p = post(n);
    let w = coin::weak_velocity(&p).unwrap();
    let t = 3.0 * EPS / w;
    let cp = -42.0;
    let ch = MovingCharge::new(1.0, packet()).unwrap();
    let grid = JointGrid::covering(
        (-t - 8.01 * EPS, w * t + 8.01 * EPS),
        (cp - 8.01 * EPS, cp + 8.01 * EPS),
        points,
        points,
        3.0 * EPS,
        0.0,
    )
    .unwrap();
    let qp = 0.3 / coupling::max_weak_potential(1.0, w, &grid, FieldMode::ClosedForm);
    let omega = GaussianPacket::new([0.0, 0.0, cp], EPS, Complex64::new(1.0, 0.0)).unwrap();
    let tp = TestParticleSpec::new(qp, Mass::Infinite, omega).unwrap();
    let start = Instant::now();
    let ex = coupling::joint_kick_exact(&ch, &p, &tp, t, &grid).unwrap();
    let elapsed = start.elapsed();
    let wk = coupling::joint_kick_weak(&ch, w, &tp, t, &grid, FieldMode::ClosedForm).unwrap();
    (ex.fidelity(&wk).unwrap(), qp, elapsed)
}

fn criterion_9() -> Outcome {
    let ladder = [250u32, 500, 1000];
    let mut fids = Vec::new();
    let mut times = Vec::new();
    let mut qp = 0.0;
    for &n in &ladder {
        let (f, q, dt) = kick_fidelity(n, 512);
        fids.push(f);
        times.push(dt.as_secs_f64());
        qp = q;
    }
    let monotone = fids.windows(2).all(|w| w[1] > w[0]);
    let t1000 = times[2];
    let threads = rayon::current_num_threads();
    let pass = fids[2] >= 0.99 && monotone && t1000 <= 300.0;
    let list: Vec<String> =
        ladder.iter().zip(&fids).zip(&times).map(|((n, f), t)| format!("N={n}: F={f:.8} ({t:.1} s)")).collect();
    outcome(
        pass,
        format!(
            "512x512, q'q = {qp:.4} (max weak phase 0.3 rad); {}; monotone: {monotone}; N=1000 exact kick {t1000:.1} s \
             on {threads} thread(s) (<= 300 s)",
            list.join(", ")
        ),
    )
}

fn criterion_10() -> Outcome {
    let t = t_criterion1();
    let rep = wavepacket::light_cone_check(&packet(), 5.0 * EPS, EPS / 8.0, &post(1000), t).unwrap();
    let pass = rep.holds() && rep.analytic_probe_ratio > 1e-6;
    outcome(
        pass,
        format!(
            "max |psi| beyond +-{:.4}: {:.1e} (<= 1e-14); analytic packet at z = 7t = {:.4}: {:.4} of peak (> 1e-6)",
            rep.bound, rep.max_outside, rep.probe, rep.analytic_probe_ratio
        ),
    )
}

fn criterion_11() -> Outcome {
    let q = (1.0f64 / 137.0).sqrt();
    let check = |n: u32| {
        let query = CausalityQuery::new(1.0, None, n, q, 1.0).unwrap();
        coupling::causality_check(&query, 7.0, EPS).unwrap()
    };
    let (a, b) = (check(137), check(3));
    let pass = a.fluctuation_ok && !b.fluctuation_ok;
    outcome(
        pass,
        format!(
            "N=137: margin N/4q^2 = {:.2} (passes: {}); N=3: margin {:.2} (passes: {}); expected pass then fail",
            a.fluctuation_margin, a.fluctuation_ok, b.fluctuation_margin, b.fluctuation_ok
        ),
    )
}

fn outputs() -> Vec<Vec<u8>> {
    let mut files = Vec::new();
    let cfg = ExperimentConfig::new(post(100), EPS, 3.0 / 7.0, 50_000, 99).unwrap();
    for postselect in [false, true] {
        let s = ensemble_stats::sample_displacements(&cfg, postselect, 80).unwrap();
        let mut buf = Vec::new();
        s.histogram.write_csv(&mut buf).unwrap();
        files.push(buf);
    }
    let src = SourceSpec::new(1.0, 7.0, 1.0).unwrap();
    let grid = GridSpec::new((0.0, 3.0), 40, (-20.0, 8.0), 90).unwrap();
    let mut buf = Vec::new();
    fields::field_map(&src, &grid, FieldMode::RetardedSum).write_csv(&mut buf).unwrap();
    files.push(buf);
    let table = coupling::moment_replacement_check(&post(100), 2, &[0.0, 1.0], 1.0, &[100, 200]).unwrap();
    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    files.push(buf);
    files
}

fn criterion_12() -> Outcome {
    let first = outputs();
    let second = outputs();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let third = pool.install(outputs);
    let same = first == second && first == third;
    let bytes: usize = first.iter().map(Vec::len).sum();
    outcome(same, format!("{} output files ({bytes} bytes) identical across two runs and a 3-thread pool: {same}", first.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("weak displacement", criterion_1),
        ("finite-N scaling", criterion_2),
        ("scalar identity", criterion_3),
        ("probability ordering", criterion_4),
        ("no-postselection spread", criterion_5),
        ("closed form vs retarded sum", criterion_6),
        ("Cherenkov geometry", criterion_7),
        ("moment replacement", criterion_8),
        ("kick experiment", criterion_9),
        ("light cone", criterion_10),
        ("causality inequality", criterion_11),
        ("determinism", criterion_12),
    ];
    let only: Option<usize> = std::env::var("WEAKFLOW_ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} [{:.1} s] {}",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {failed} criterion(s) FAIL");
    if failed > 0 && std::env::var("WEAKFLOW_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
