//! One function per subcommand. Each returns its summary values and the
//! files to write; nothing touches the disk here.

use num_complex::Complex64;
use serde_json::{json, Map, Value};
use weakflow::coin::{self, CoinState};
use weakflow::coupling::{self, CausalityQuery, JointGrid, KickBranch, Mass, MovingCharge, TestParticleSpec};
use weakflow::ensemble_stats::{self, ExperimentConfig};
use weakflow::fields::{self, FieldMode, GridSpec, SourceSpec};
use weakflow::wavepacket::{self, GaussianPacket, PacketSuperposition};

use crate::params::Params;
use crate::Failure;

pub struct Outcome {
    pub key_results: Map<String, Value>,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new() -> Self {
        Self { key_results: Map::new(), files: Vec::new() }
    }

    fn put(&mut self, key: &str, value: impl Into<Value>) {
        self.key_results.insert(key.to_string(), value.into());
    }

    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }
}

pub fn run(p: &Params) -> Result<Outcome, Failure> {
    match p.subcommand {
        "displacement" => displacement(p),
        "convergence" => convergence(p),
        "probabilities" => probabilities(p),
        "moments" => moments(p),
        "field-map" => field_map(p),
        "retarded-oracle" => retarded_oracle(p),
        "kick-compare" => kick_compare(p),
        "light-cone" => light_cone(p),
        "causality" => causality(p),
        other => Err(Failure::Usage(format!("unknown subcommand {other}"))),
    }
}

/// Domain checks that need no heavy computation: coin normalization and
/// overlap, grids, sources. Run before `--dry-run` returns.
pub fn validate(p: &Params) -> Result<(), Failure> {
    let has = |k: &str| crate::params::schema(p.subcommand).is_some_and(|s| s.params.iter().any(|q| q.name == k));
    if has("alpha-up") {
        let n = if has("n") { p.spins("n")? } else { p.counts("ladder")[0] };
        let w = coin::weak_velocity(&coin_state(p, n)?)?;
        if has("eps") {
            time(p, w, p.real("eps"))?;
        }
    }
    if has("rho-min") {
        SourceSpec::new(p.real("q"), p.real("v"), p.real("t"))?;
        grid(p)?;
    }
    if p.subcommand == "causality" {
        CausalityQuery::new(p.real("distance"), p.real_or_auto("delta-e"), p.spins("n")?, 1.0, p.real("horizon"))?;
    }
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:.12e}")
}

/// RFC-4180 table with `\n` line ends.
fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("in-memory write");
    buf
}

fn coin_state(p: &Params, n: u32) -> Result<CoinState, Failure> {
    Ok(CoinState::new(n, p.real("alpha-up"), p.real("alpha-down"))?)
}

/// `t`, or `3 eps / |w|` for `auto`.
fn time(p: &Params, w: f64, eps: f64) -> Result<f64, Failure> {
    match p.real_or_auto("t") {
        Some(t) => Ok(t),
        None if w != 0.0 => Ok(3.0 * eps / w.abs()),
        None => Err(Failure::Usage("--t auto needs a nonzero weak velocity".into())),
    }
}

fn mode(p: &Params) -> FieldMode {
    p.choice("mode").parse().expect("validated by the schema")
}

fn gnuplot(lines: &[String]) -> Vec<u8> {
    let mut s = String::from("set datafile separator ','\nset terminal pngcairo size 900,600\n");
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    s.into_bytes()
}

fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Some(sxy / sxx)
}

fn displacement(p: &Params) -> Result<Outcome, Failure> {
    let post = coin_state(p, p.spins("n")?)?;
    let w = coin::weak_velocity(&post)?;
    let eps = p.real("eps");
    let t = time(p, w, eps)?;
    let packet = GaussianPacket::centered(eps)?;
    let report = wavepacket::convergence_report(&packet, &post, t)?;
    let exact = wavepacket::evolve_exact(&packet, &post, t)?;
    let weak = PacketSuperposition::from(wavepacket::evolve_weak(&packet, w, t)?);

    let points = usize::try_from(p.count("points")).unwrap_or(usize::MAX).max(2);
    let lo = (-t).min(w * t) - 6.0 * eps;
    let hi = t.max(w * t) + 6.0 * eps;
    let dz = (hi - lo) / (points - 1) as f64;
    let (ne, nw) = (exact.norm_sqr_scaled(), weak.norm_sqr_scaled());
    let ea = exact.amplitudes_on_grid(lo, dz, points);
    let wa = weak.amplitudes_on_grid(lo, dz, points);
    let profile = table(
        &["z", "exact_density", "weak_density"],
        (0..points).map(|j| vec![num(lo + dz * j as f64), num(ea[j].norm_sqr() / ne), num(wa[j].norm_sqr() / nw)]),
    );

    let trials = usize::try_from(p.count("trials")).unwrap_or(usize::MAX);
    let bins = usize::try_from(p.count("bins")).unwrap_or(usize::MAX);
    let config = ExperimentConfig::new(post, eps, t, trials, p.count("seed"))?;
    let born = ensemble_stats::sample_displacements(&config, false, bins)?;
    let selected = ensemble_stats::sample_displacements(&config, true, bins)?;

    let mut out = Outcome::new();
    out.put("weak_velocity", w);
    out.put("t", t);
    out.put("expected_peak", w * t);
    out.put("peak", report.peak);
    out.put("peak_error", report.peak_error);
    out.put("fidelity", report.fidelity);
    out.put("distortion_parameter", report.distortion_parameter);
    out.put("postselected_mean", selected.mean);
    out.put("postselected_std", selected.std);
    out.put("born_mean", born.mean);
    out.put("born_std", born.std);
    out.put("born_predicted_std", born.predicted_std);
    out.file("profile.csv", profile);
    out.file("histogram_born.csv", bytes(|b| born.histogram.write_csv(b)));
    out.file("histogram_postselected.csv", bytes(|b| selected.histogram.write_csv(b)));
    out.file(
        "displacement.gp",
        gnuplot(&[
            "set output 'displacement.png'".into(),
            "set xlabel 'z'".into(),
            "set ylabel 'density'".into(),
            format!("set arrow from {t},graph 0 to {t},graph 1 nohead dt 2"),
            "plot 'profile.csv' every ::1 using 1:2 with lines title 'exact', \\".into(),
            "     'profile.csv' every ::1 using 1:3 with lines dt 2 title 'weak', \\".into(),
            "     'histogram_postselected.csv' every ::1 using (($1+$2)/2):4 with steps title 'postselected samples', \\"
                .into(),
            "     'histogram_born.csv' every ::1 using (($1+$2)/2):4 with steps title 'no postselection'".into(),
        ]),
    );
    Ok(out)
}

fn convergence(p: &Params) -> Result<Outcome, Failure> {
    let ladder = p.counts("ladder");
    let eps = p.real("eps");
    let packet = GaussianPacket::centered(eps)?;
    let w = coin::weak_velocity(&coin_state(p, ladder[0])?)?;
    let t = time(p, w, eps)?;
    let mut reports = Vec::new();
    for &n in ladder {
        reports.push(wavepacket::convergence_report(&packet, &coin_state(p, n)?, t)?);
    }
    let ns: Vec<f64> = ladder.iter().map(|&n| f64::from(n)).collect();
    let infid: Vec<f64> = reports.iter().map(|r| 1.0 - r.fidelity).collect();
    let mut out = Outcome::new();
    out.put("weak_velocity", w);
    out.put("t", t);
    out.put("fidelity", reports.iter().map(|r| r.fidelity).collect::<Vec<_>>());
    out.put("fidelity_increasing", reports.windows(2).all(|r| r[1].fidelity > r[0].fidelity));
    out.put("infidelity_slope", log_log_slope(&ns, &infid));
    out.file(
        "convergence.csv",
        table(
            &["n", "fidelity", "one_minus_fidelity", "peak", "peak_error", "distortion_parameter"],
            reports.iter().map(|r| {
                vec![
                    r.n_spins.to_string(),
                    num(r.fidelity),
                    num(1.0 - r.fidelity),
                    num(r.peak),
                    num(r.peak_error),
                    num(r.distortion_parameter),
                ]
            }),
        ),
    );
    out.file(
        "convergence.gp",
        gnuplot(&[
            "set output 'convergence.png'".into(),
            "set logscale xy".into(),
            "set xlabel 'N'".into(),
            "set ylabel '1 - fidelity'".into(),
            "plot 'convergence.csv' every ::1 using 1:3 with linespoints title 'exact vs weak'".into(),
        ]),
    );
    Ok(out)
}

fn probabilities(p: &Params) -> Result<Outcome, Failure> {
    let post = coin_state(p, p.spins("n")?)?;
    let w = coin::weak_velocity(&post)?;
    let eps = p.real("eps");
    let t = time(p, w, eps)?;
    let ledger = ensemble_stats::probability_ledger(&ExperimentConfig::new(post, eps, t, 1, 0)?)?;
    let rows = [
        ("p_error", ledger.p_error_analytic, ledger.log_p_error),
        ("p_postselect_static", ledger.p_postselect_static, ledger.log_p_postselect_static),
        ("p_postselect_evolved", ledger.p_postselect_evolved, ledger.log_p_postselect_evolved),
        ("floor_e_minus_n", ledger.floor_e_minus_n, ledger.log_floor),
    ];
    let mut out = Outcome::new();
    for (name, _, log) in &rows {
        out.put(&format!("log_{name}"), *log);
    }
    out.put("error_exceeds_postselection", ledger.error_exceeds_postselection());
    out.put("error_exceeds_floor", ledger.error_exceeds_floor());
    out.file(
        "probabilities.csv",
        table(
            &["quantity", "probability", "log_probability"],
            rows.iter().map(|(name, lin, log)| vec![(*name).to_string(), num(*lin), num(*log)]),
        ),
    );
    Ok(out)
}

fn moments(p: &Params) -> Result<Outcome, Failure> {
    let ladder = p.counts("ladder");
    let n_max = u32::try_from(p.count("n-max")).map_err(|_| Failure::Usage("--n-max is too large".into()))?;
    let post = coin_state(p, ladder[0])?;
    let table = coupling::moment_replacement_check(&post, n_max, p.reals("p-grid"), p.real("t"), ladder)?;
    let mut out = Outcome::new();
    out.put("cells", table.cells.len());
    out.put("identically_zero_cells", table.cells.iter().filter(|c| c.is_identically_zero()).count());
    out.put("all_decreasing", table.all_decreasing());
    out.put("largest_slope", table.largest_slope());
    out.file("moments.csv", bytes(|b| table.write_csv(b)));
    Ok(out)
}

fn grid(p: &Params) -> Result<GridSpec, Failure> {
    let n = |k: &str| usize::try_from(p.count(k)).unwrap_or(usize::MAX);
    Ok(GridSpec::new(
        (p.real("rho-min"), p.real("rho-max")),
        n("n-rho"),
        (p.real("z-min"), p.real("z-max")),
        n("n-z"),
    )?)
}

fn field_map(p: &Params) -> Result<Outcome, Failure> {
    let src = SourceSpec::new(p.real("q"), p.real("v"), p.real("t"))?;
    let map = fields::field_map(&src, &grid(p)?, mode(p));
    let count = |f: fields::SampleFlag| map.samples.iter().filter(|s| s.flag == f).count();
    let mut out = Outcome::new();
    out.put("mode", map.mode.name());
    out.put("defined_cells", count(fields::SampleFlag::Defined));
    out.put("worldline_cells", count(fields::SampleFlag::OnWorldline));
    out.put("undefined_cells", count(fields::SampleFlag::Undefined));
    out.put("cone_half_angle_deg", fields::mach_cone_half_angle(src.v).ok());
    out.put("fitted_half_angle_deg", map.fitted_half_angle());
    out.file("field_map.csv", bytes(|b| map.write_csv(b)));
    out.file("field_map.gp", bytes(|b| map.write_gnuplot(b, "field_map.csv", "field_map.png")));
    Ok(out)
}

fn retarded_oracle(p: &Params) -> Result<Outcome, Failure> {
    let src = SourceSpec::new(p.real("q"), p.real("v"), p.real("t"))?;
    let g = grid(p)?;
    let mut rows = Vec::with_capacity(g.n_rho * g.n_z);
    let (mut max_rel, mut max_res) = (0.0f64, 0.0f64);
    let (mut compared, mut worldline, mut support_mismatch) = (0usize, 0usize, 0usize);
    for i in 0..g.n_rho {
        for j in 0..g.n_z {
            let x = [g.rho(i), 0.0, g.z(j)];
            let (closed, retarded, roots) = match (
                fields::scalar_potential_closed(&src, x),
                fields::lienard_wiechert(&src, x),
                fields::retarded_roots(&src, x),
            ) {
                (Ok(c), Ok(r), Ok(roots)) => (c, r, roots),
                _ => {
                    worldline += 1;
                    rows.push(vec![num(x[0]), num(x[2]), String::new(), String::new(), String::new(), "0".into(), String::new()]);
                    continue;
                }
            };
            let residual = roots.iter().map(|&tau| fields::retardation_residual(&src, x, tau).abs()).fold(0.0, f64::max);
            max_res = max_res.max(residual);
            let rel = if closed != 0.0 {
                compared += 1;
                let r = ((closed - retarded) / closed).abs();
                max_rel = max_rel.max(r);
                num(r)
            } else {
                if retarded != 0.0 {
                    support_mismatch += 1;
                }
                String::new()
            };
            rows.push(vec![num(x[0]), num(x[2]), num(closed), num(retarded), rel, roots.len().to_string(), num(residual)]);
        }
    }
    let mut out = Outcome::new();
    out.put("cells_compared", compared);
    out.put("worldline_cells", worldline);
    out.put("support_mismatch_cells", support_mismatch);
    out.put("max_relative_difference", max_rel);
    out.put("max_root_residual", max_res);
    out.file(
        "retarded_oracle.csv",
        table(&["rho", "z", "closed_form", "retarded_sum", "relative_difference", "n_roots", "max_root_residual"], rows),
    );
    out.file(
        "retarded_oracle.gp",
        gnuplot(&[
            "set output 'retarded_oracle.png'".into(),
            "set view map".into(),
            "set xlabel 'z'".into(),
            "set ylabel 'rho'".into(),
            "set logscale cb".into(),
            "splot 'retarded_oracle.csv' every ::1 using 2:1:($5 > 0 ? $5 : 1/0) with image title 'relative difference'"
                .into(),
        ]),
    );
    Ok(out)
}

fn kick_compare(p: &Params) -> Result<Outcome, Failure> {
    let post = coin_state(p, p.spins("n")?)?;
    let w = coin::weak_velocity(&post)?;
    let eps = p.real("eps");
    let t = time(p, w, eps)?;
    let cp = p.real("test-z");
    let points = usize::try_from(p.count("points")).unwrap_or(usize::MAX);
    let field_mode = mode(p);
    let margin = 8.01 * eps;
    let grid = JointGrid::covering(
        ((-t).min(w * t) - margin, t.max(w * t) + margin),
        (cp - margin, cp + margin),
        points,
        points,
        p.real("dx"),
        0.0,
    )?;
    let q = p.real("q");
    let vmax = coupling::max_weak_potential(q, w, &grid, field_mode);
    if !(vmax > 0.0) {
        return Err(Failure::Usage("the weak potential vanishes on the grid; move the test particle".into()));
    }
    let qp = p.real("phase") / vmax;
    let charge = MovingCharge::new(q, GaussianPacket::centered(eps)?)?;
    let omega = GaussianPacket::new([0.0, 0.0, cp], eps, Complex64::new(1.0, 0.0))?;
    let (exact, weak) = match p.real_or_auto("mass") {
        None => {
            let tp = TestParticleSpec::new(qp, Mass::Infinite, omega)?;
            (
                coupling::joint_kick_exact(&charge, &post, &tp, t, &grid)?,
                coupling::joint_kick_weak(&charge, w, &tp, t, &grid, field_mode)?,
            )
        }
        Some(m) => {
            let tp = TestParticleSpec::new(qp, Mass::Finite(m), omega)?;
            let s = usize::try_from(p.count("substeps")).unwrap_or(usize::MAX);
            (
                coupling::joint_kick_finite_m(&charge, &KickBranch::Exact(post), &tp, t, &grid, s)?,
                coupling::joint_kick_finite_m(&charge, &KickBranch::Weak { w, mode: field_mode }, &tp, t, &grid, s)?,
            )
        }
    };
    let fidelity = exact.fidelity(&weak)?;
    let schmidt = exact.schmidt_values()?;
    let (me, mw) = (exact.test_marginal(), weak.test_marginal());
    let (se, sw) = (me.iter().sum::<f64>() * grid.spacing, mw.iter().sum::<f64>() * grid.spacing);

    let mut out = Outcome::new();
    out.put("weak_velocity", w);
    out.put("t", t);
    out.put("q_prime", qp);
    out.put("grid_spacing", grid.spacing);
    out.put("fidelity", fidelity);
    out.put("schmidt_1", schmidt.first().copied());
    out.put("flagged_cells", exact.flagged_cells());
    out.file(
        "kick_summary.csv",
        bytes(|b| coupling::write_summary_csv(b, &[("exact", &exact), ("weak", &weak)], Some(fidelity), 4)),
    );
    out.file(
        "test_marginal.csv",
        table(
            &["z_test", "exact", "weak"],
            (0..grid.nzp).map(|j| vec![num(grid.zp(j)), num(me[j] / se), num(mw[j] / sw)]),
        ),
    );
    out.file("exact.bin", bytes(|b| exact.write_binary(b)));
    out.file("weak.bin", bytes(|b| weak.write_binary(b)));
    out.file(
        "kick.gp",
        gnuplot(&[
            "set output 'kick.png'".into(),
            "set xlabel \"z'\"".into(),
            "set ylabel 'test-particle density'".into(),
            "plot 'test_marginal.csv' every ::1 using 1:2 with lines title 'exact', \\".into(),
            "     'test_marginal.csv' every ::1 using 1:3 with lines dt 2 title 'weak'".into(),
        ]),
    );
    Ok(out)
}

fn light_cone(p: &Params) -> Result<Outcome, Failure> {
    let post = coin_state(p, p.spins("n")?)?;
    let w = coin::weak_velocity(&post)?;
    let eps = p.real("eps");
    let t = time(p, w, eps)?;
    let packet = GaussianPacket::centered(eps)?;
    let rep = wavepacket::light_cone_check(&packet, p.real("truncation") * eps, p.real("spacing") * eps, &post, t)?;
    let mut out = Outcome::new();
    out.put("holds", rep.holds());
    out.put("bound", rep.bound);
    out.put("max_outside", rep.max_outside);
    out.put("log10_truncated_max", rep.log10_truncated_max);
    out.put("probe", rep.probe);
    out.put("analytic_probe_ratio", rep.analytic_probe_ratio);
    out.file(
        "light_cone.csv",
        table(
            &["z", "truncated_relative_amplitude"],
            rep.grid.iter().zip(&rep.truncated_profile).map(|(z, a)| vec![num(*z), num(*a)]),
        ),
    );
    out.file(
        "light_cone.gp",
        gnuplot(&[
            "set output 'light_cone.png'".into(),
            "set xlabel 'z'".into(),
            "set ylabel '|psi| / max'".into(),
            format!("set arrow from {b},graph 0 to {b},graph 1 nohead dt 2", b = rep.bound),
            format!("set arrow from {b},graph 0 to {b},graph 1 nohead dt 2", b = -rep.bound),
            "plot 'light_cone.csv' every ::1 using 1:2 with lines title 'truncated packet'".into(),
        ]),
    );
    Ok(out)
}

fn causality(p: &Params) -> Result<Outcome, Failure> {
    let q = p.real("q2").sqrt();
    let query =
        CausalityQuery::new(p.real("distance"), p.real_or_auto("delta-e"), p.spins("n")?, q, p.real("horizon"))?;
    let r = coupling::causality_check(&query, p.real("w"), p.real("eps"))?;
    let rows: Vec<(&str, Value)> = vec![
        ("pass", json!(r.fluctuation_ok)),
        ("fluctuation_margin", json!(r.fluctuation_margin)),
        ("resolution_ratio", json!(r.resolution_ratio)),
        ("resolution_ok", json!(r.resolution_ok)),
        ("delta_z", json!(r.delta_z)),
        ("delta_e", json!(r.delta_e)),
        ("causal_contact", json!(r.causal_contact)),
        ("width_ratio", json!(r.width_ratio)),
    ];
    let mut out = Outcome::new();
    out.file("causality.csv", table(&["key", "value"], rows.iter().map(|(k, v)| vec![(*k).to_string(), v.to_string()])));
    for (k, v) in rows {
        out.put(k, v);
    }
    Ok(out)
}
