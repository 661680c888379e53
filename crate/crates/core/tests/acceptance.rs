//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints a PASS/FAIL line; exits nonzero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use contractive_sde::bounds::{
    iss_envelope, niss_two_traj, optimize_alpha, AlphaTarget, BoundParams, Envelope, EnvelopeKind, Profile,
};
use contractive_sde::cli::{load_config, run_scenario, RunOptions};
use contractive_sde::contraction::{cascade_drift, cascade_metric, oslip_sampled};
use contractive_sde::integrate::{integrate_cascade, ode_rk4_every, pair_path, CascadeInput, CouplingMode};
use contractive_sde::montecarlo::{
    check_envelope, ou_exact_moment, pair_error_moment, state_moment, tracking_error_moment, AlphaPolicy, Ensemble,
    InitialLaw, MomentSeries, PairScenario, TrackingInput, TrackingScenario, TrackingTarget,
};
use contractive_sde::noise::{ou_second_moment, JDParams, OUParams};
use contractive_sde::wasserstein::{
    coupling_cost, gibbs_check, ks_critical_1pct, ks_statistic, long_run_samples, normal_cdf, optimal_assignment, wasserstein_1d,
    wasserstein_assignment, EmpiricalMeasure, Grid1d, SampleNorm, WassersteinScenario,
};
use contractive_sde::{InputBox, InputNorm, InputSignal, RngLineage, SystemSpec, TimeGrid};
use nalgebra::DMatrix;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lib<T>(r: contractive_sde::Result<T>) -> Result<T, String> {
    r.map_err(|e| format!("library error: {e}"))
}

fn at_time(s: &MomentSeries, t: f64) -> usize {
    ((t - s.grid.t0) / s.grid.dt).round() as usize
}

/// Largest `mean − limsup − 3·SE` over the final 20% of the series.
fn tail_excess(s: &MomentSeries, limsup: f64) -> f64 {
    let start = s.len() - 1 - (s.len() - 1) / 5;
    (start..s.len())
        .map(|k| s.mean_sq[k] - limsup - 3.0 * s.std_err[k])
        .fold(f64::NEG_INFINITY, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (c, sigma, x0, dt) = (1.0, 1.0, 2.0, 1e-3);
    let grid = lib(TimeGrid::over(4.0, dt))?;
    let ens = Ensemble::new(20_000, 101);
    let exact = lib(ou_exact_moment(&lib(OUParams::new(c, sigma, 1))?, &[x0], &grid, 250, &ens))?;
    let sys = lib(SystemSpec::linear_tracker(1, c, sigma))?;
    let em = lib(state_moment(&sys, &[x0], &InputSignal::zero(1), &grid, 250, &Ensemble::new(20_000, 102)))?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut ok = elapsed < 10.0;
    let mut detail = vec![];
    for t in [0.25, 1.0, 4.0] {
        let want = ou_second_moment(x0 * x0, c, sigma, t);
        let k = at_time(&exact, t);
        let ze = (exact.mean_sq[k] - want).abs() / exact.std_err[k];
        let em_dev = (em.mean_sq[k] - want).abs();
        ok &= ze <= 3.0 && em_dev <= 3.0 * em.std_err[k] + 2.0 * dt;
        detail.push(format!("t={t}: exact {ze:.2} SE, EM dev {em_dev:.4} (SE {:.4})", em.std_err[k]));
    }
    ensure(ok, format!("{}; {elapsed:.2}s", detail.join(", ")))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let sys = lib(SystemSpec::linear_tracker(1, 1.0, 0.3))?;
    let ux = InputSignal::scalar_sine(0.0, 1.0, 1.0);
    let sc = PairScenario {
        sys_x: sys.clone(),
        sys_y: sys.clone(),
        x0: InitialLaw::Point(vec![0.0]),
        y0: InitialLaw::Point(vec![0.0]),
        u_x: ux.clone(),
        u_y: InputSignal::zero(1),
        mode: CouplingMode::Independent,
        grid: lib(TimeGrid::over(10.0, 1e-3))?,
        record_every: 10,
        versus_ode: false,
    };
    let series = lib(pair_error_moment(&sc, &Ensemble::new(10_000, 202)))?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut p = BoundParams::new(1.0, 1.0, 0.09);
    p.input_gap_sq = lib(Profile::input_gap(&ux, &InputSignal::zero(1), InputNorm::L2, 2))?;
    p.input_gap_sq_limsup = Some(1.0);
    let env = lib(Envelope::new(EnvelopeKind::NissTwoTraj, p))?;
    let mut ok = elapsed < 30.0;
    let mut detail = vec![];
    for policy in [
        AlphaPolicy::Fixed(0.3),
        AlphaPolicy::Fixed(0.5),
        AlphaPolicy::Fixed(0.7),
        AlphaPolicy::Optimized,
    ] {
        let v = lib(check_envelope(&series, &env, policy))?;
        ok &= v.holds;
        detail.push(format!("α={:.3} margin {:.3}", v.alpha.unwrap_or(f64::NAN), v.worst_margin));
    }
    ensure(ok, format!("{}; {elapsed:.2}s", detail.join(", ")))
}

fn criterion_3() -> Outcome {
    // envelopes: matched inputs, x0 = 1, y0 = 0, horizon 10
    let (c, ell) = (1.0, 1.0);
    let mut p = BoundParams::new(c, ell, 0.0);
    p.e0 = 1.0;
    let mut worst_env: f64 = 0.0;
    for k in 0..=1000 {
        let t = k as f64 * 0.01;
        let stoch = lib(niss_two_traj(&p, t, 0.999))?;
        let det = lib(iss_envelope(1.0, c, ell, &Profile::Constant(0.0), t, 1e-3))?.powi(2);
        worst_env = worst_env.max((stoch - det).abs() / stoch);
    }

    // paths: Σ = 0, u^x = sin t, u^y = 0, Euler–Maruyama at dt = 1e-6 against RK4
    let sys = lib(SystemSpec::linear_tracker(1, c, 0.0))?;
    let ux = InputSignal::scalar_sine(0.0, 1.0, 1.0);
    let uy = InputSignal::zero(1);
    let fine = lib(TimeGrid::over(10.0, 1e-6))?;
    let coarse = lib(TimeGrid::over(10.0, 1e-3))?;
    let fx = |u: &InputSignal| {
        let (s, u) = (sys.clone(), u.clone());
        move |t: f64, x: &[f64], out: &mut [f64]| s.drift_into(x, &u.value(t), out)
    };
    let rx = lib(ode_rk4_every(fx(&ux), &[1.0], &coarse, 10))?;
    let ry = lib(ode_rk4_every(fx(&uy), &[0.0], &coarse, 10))?;
    let mut worst_path: f64 = 0.0;
    let mut rng = RngLineage::new(303, 0).stream();
    lib(pair_path(
        &sys,
        &sys,
        &[1.0],
        &[0.0],
        &ux,
        &uy,
        CouplingMode::Independent,
        &fine,
        &mut rng,
        10_000,
        |k, x, y| {
            let d_ode = rx.state(k)[0] - ry.state(k)[0];
            worst_path = worst_path.max((x[0] - y[0] - d_ode).abs());
        },
    ))?;
    ensure(
        worst_env <= 0.02 && worst_path <= 1e-6,
        format!("envelope rel. gap {:.4}% (≤ 2%), path gap {worst_path:.2e} (≤ 1e-6)", 100.0 * worst_env),
    )
}

fn tracker_scenario(c: f64, sigma: f64, input: TrackingInput, target: TrackingTarget, x0: f64) -> Result<TrackingScenario, String> {
    let sys = lib(SystemSpec::linear_tracker(1, c, sigma))?;
    Ok(TrackingScenario {
        eq_map: lib(sys.equilibrium_map())?,
        sys,
        input,
        target,
        x0: InitialLaw::Point(vec![x0]),
        grid: lib(TimeGrid::over(20.0, 1e-3))?,
        record_every: 20,
    })
}

fn sine_theta_params(c: f64, sigma: f64) -> Result<BoundParams, String> {
    let mut p = BoundParams::new(c, c, sigma * sigma);
    p.theta_dot_sq = lib(Profile::derivative_sq(&InputSignal::scalar_sine(0.0, 1.0, 1.0), InputNorm::L2))?;
    p.theta_dot_sq_limsup = Some(1.0);
    Ok(p)
}

fn criterion_4() -> Outcome {
    let (c, sigma) = (2.0, 0.2);
    let theta = InputSignal::scalar_sine(0.0, 1.0, 1.0);
    let sc = tracker_scenario(c, sigma, TrackingInput::Deterministic(theta), TrackingTarget::DeterministicCurve, 0.0)?;
    let s = lib(tracking_error_moment(&sc, &Ensemble::new(4000, 404)))?;
    let env = lib(Envelope::new(EnvelopeKind::TrackDidc, sine_theta_params(c, sigma)?))?;
    let (alpha, lim) = lib(optimize_alpha(&env, AlphaTarget::Limsup))?;
    let ex = tail_excess(&s, lim);
    ensure(ex <= 0.0, format!("α*={alpha:.4}, limsup {lim:.5}, max tail excess {ex:.3e}"))
}

fn criterion_5() -> Outcome {
    let (c, sigma, sxi) = (2.0, 0.2, 0.3);
    let theta = InputSignal::scalar_sine(0.0, 1.0, 1.0);
    let input = || -> Result<TrackingInput, String> {
        Ok(TrackingInput::Cascade {
            input: CascadeInput::Ou {
                params: lib(OUParams::new(c, sxi, 1))?,
                theta: theta.clone(),
            },
            v0: InitialLaw::Point(vec![0.0]),
        })
    };
    let mut p = sine_theta_params(c, sigma)?;
    p.sigma_xi_sq = sxi * sxi;
    let mut detail = vec![];
    let mut ok = true;
    for (kind, target, seed) in [
        (EnvelopeKind::TrackOuSidc, TrackingTarget::DeterministicCurve, 505),
        (EnvelopeKind::TrackOuSisc, TrackingTarget::StochasticCurve, 506),
    ] {
        let sc = tracker_scenario(c, sigma, input()?, target, 0.0)?;
        let s = lib(tracking_error_moment(&sc, &Ensemble::new(4000, seed)))?;
        let env = lib(Envelope::new(kind, p.clone()))?;
        let (alpha, lim) = lib(optimize_alpha(&env, AlphaTarget::Limsup))?;
        let ex = tail_excess(&s, lim);
        ok &= ex <= 0.0;
        detail.push(format!("{kind:?}: α*={alpha:.3} limsup {lim:.4} tail excess {ex:.2e}"));
        if kind == EnvelopeKind::TrackOuSisc {
            let v = lib(check_envelope(&s, &env, AlphaPolicy::Fixed(alpha)))?;
            ok &= v.holds;
            detail.push(format!("finite-t margin {:.3}", v.worst_margin));
        }
    }
    ensure(ok, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let (c, sigma_u_sq, sigma): (f64, f64, f64) = (1.0, 0.5, 0.2);
    let theta = InputSignal::constant(vec![0.5]);
    let times: Vec<f64> = (0..=100).map(|k| k as f64).collect();
    let jd = lib(JDParams::new(c, theta, sigma_u_sq.sqrt(), vec![1.0], &times, false))?;
    let sys = lib(SystemSpec::linear_tracker(1, c, sigma))?;

    let grid = lib(TimeGrid::over(100.0, 1e-3))?;
    let (u, _) = lib(integrate_cascade(
        &CascadeInput::Jd(jd.clone()),
        &sys,
        &[0.5],
        &[0.5],
        &grid,
        RngLineage::new(606, 0),
    ))?;
    let (lo, hi) = u.states.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let clamp_frac = u.clamp_count as f64 / grid.steps as f64;
    let mut ok = lo > 0.0 && hi < 1.0 && clamp_frac < 1e-3;
    let mut detail = vec![format!("{} steps in [{lo:.4}, {hi:.4}], clamps {:.3}%", grid.steps, 100.0 * clamp_frac)];

    let mut p = BoundParams::new(c, c, sigma * sigma);
    p.sigma_u_sq = sigma_u_sq;
    p.a_norm_sq = 1.0;
    for (kind, target, seed) in [
        (EnvelopeKind::TrackJdSidc, TrackingTarget::DeterministicCurve, 607),
        (EnvelopeKind::TrackJdSisc, TrackingTarget::StochasticCurve, 608),
    ] {
        let sc = TrackingScenario {
            eq_map: lib(sys.equilibrium_map())?,
            sys: sys.clone(),
            input: TrackingInput::Cascade {
                input: CascadeInput::Jd(jd.clone()),
                v0: InitialLaw::Point(vec![0.5]),
            },
            target,
            x0: InitialLaw::Point(vec![0.5]),
            grid: lib(TimeGrid::over(20.0, 1e-3))?,
            record_every: 20,
        };
        let s = lib(tracking_error_moment(&sc, &Ensemble::new(4000, seed)))?;
        let env = lib(Envelope::new(kind, p.clone()))?;
        let (alpha, lim) = lib(optimize_alpha(&env, AlphaTarget::Limsup))?;
        let (a_lo, _) = env.limsup_alpha();
        let ex = tail_excess(&s, lim);
        ok &= ex <= 0.0 && alpha >= a_lo;
        detail.push(format!("{kind:?}: α*={alpha:.3} limsup {lim:.4} tail excess {ex:.2e}"));
    }
    ensure(ok, detail.join("; "))
}

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut detail = vec![];
    for c in [1.0, 2.0] {
        let sys = lib(SystemSpec::linear_tracker(1, c, 0.2))?;
        let ell = sys.constants().ell;
        let pc = lib(cascade_metric(sys.metric(), c, ell, 1))?;
        let field = cascade_drift(&sys, c, vec![0.3]);
        let osl = lib(oslip_sampled(
            &field,
            2,
            &lib(InputBox::cube(2, -5.0, 5.0))?,
            &lib(InputBox::cube(0, 0.0, 0.0))?,
            &pc,
            100_000,
            707,
        ))?;
        ok &= osl <= -c / 2.0 + 1e-3;
        detail.push(format!("c={c}: osLip {osl:.5} vs {:.5}", -c / 2.0 + 1e-3));
    }
    ensure(ok, detail.join(", "))
}

fn criterion_8() -> Outcome {
    let (c, du, k, shift) = (1.0, 1.0, 1024, 11.0);
    let sys = lib(SystemSpec::linear_tracker(1, c, 0.5))?;
    let ell = sys.constants().ell;
    let mut rng = RngLineage::new(808, 1).stream();
    let xs: Vec<f64> = (0..k).map(|_| 0.5 * rng.normal()).collect();
    let ys: Vec<f64> = (0..k).map(|_| -shift + 0.5 * rng.normal()).collect();
    let sc = WassersteinScenario {
        sys_x: sys.clone(),
        sys_y: sys,
        u_x: InputSignal::constant(vec![du]),
        u_y: InputSignal::zero(1),
        x_cloud: lib(EmpiricalMeasure::from_scalars(&xs))?,
        y_cloud: lib(EmpiricalMeasure::from_scalars(&ys))?,
        grid: lib(TimeGrid::over(12.0 / c, 1e-3))?,
        record_every: 50,
        p: 2.0,
        norm: SampleNorm::L2,
        gap_norm: InputNorm::L2,
    };
    let rep = lib(contractive_sde::wasserstein::verify_wasserstein_contraction(&sc, 809))?;
    let floor = ell * du / c;

    // (i) least-squares slope of log(W₂ − ℓΔu/c) on [0, 3/c]
    let pts: Vec<(f64, f64)> = rep
        .times
        .iter()
        .zip(&rep.w_empirical)
        .filter(|(t, _)| **t <= 3.0 / c + 1e-9)
        .map(|(t, w)| (*t, (w - floor).ln()))
        .collect();
    let n = pts.len() as f64;
    let (mt, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    let slope_ok = (slope + c).abs() <= 0.1 * c;

    // (ii) W₂(t) ≤ envelope + 2/√k
    let slack = 2.0 / (k as f64).sqrt();
    let worst = rep
        .w_empirical
        .iter()
        .zip(&rep.envelope)
        .map(|(w, e)| w - e - slack)
        .fold(f64::NEG_INFINITY, f64::max);

    // (iii) stationary value
    let last = *rep.w_empirical.last().expect("nonempty");
    let stat = (last - floor).abs() / floor;
    ensure(
        slope_ok && worst <= 0.0 && stat <= 0.05,
        format!(
            "slope {slope:.4} (target {:.1}), max W₂−envelope−slack {worst:.3e}, stationary W₂ {last:.4} ({:.2}% off)",
            -c,
            100.0 * stat
        ),
    )
}

fn criterion_9() -> Outcome {
    let (c, sigma) = (1.0, 1.0);
    let sys = lib(SystemSpec::gradient_flow(1, move |x, out| out[0] = c * x[0], sigma, c))?;
    let grid = lib(TimeGrid::over(200.0 / c, 1e-2))?;
    let mut rng = RngLineage::new(909, 0).stream();
    let rows = lib(long_run_samples(&sys, &[0.0], &InputSignal::zero(0), &grid, 10.0, 2.0, &mut rng))?;
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let var = sigma * sigma / (2.0 * c);
    let ks = lib(ks_statistic(&xs, |x| normal_cdf(x, 0.0, var)))?;
    let crit = ks_critical_1pct(xs.len());

    let residual = |points| -> Result<f64, String> {
        let g = lib(Grid1d::new(-4.0, 4.0, points))?;
        Ok(lib(gibbs_check(|x| x.powi(4) / 4.0, |x| x.powi(3), sigma, &xs, &g))?.residual)
    };
    let (r1, r2, r3) = (residual(201)?, residual(401)?, residual(801)?);
    let (q1, q2) = (r1 / r2, r2 / r3);
    let order_ok = [q1, q2].iter().all(|q| (q - 4.0).abs() <= 0.4);
    ensure(
        ks < crit && order_ok,
        format!("k={} KS {ks:.4} < {crit:.4}; residual ratios under halving {q1:.3}, {q2:.3}", xs.len()),
    )
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = vec![];
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_10() -> Outcome {
    let mut rng = RngLineage::new(1010, 0).stream();
    let norms = [SampleNorm::L1, SampleNorm::L2, SampleNorm::Linf];
    let orders = [1.0, 2.0, f64::INFINITY];
    let mut mismatches = 0;
    for inst in 0..200 {
        let k = 2 + inst % 6;
        let dim = 1 + inst % 3;
        let mx = lib(EmpiricalMeasure::new(DMatrix::from_fn(k, dim, |_, _| rng.normal())))?;
        let my = lib(EmpiricalMeasure::new(DMatrix::from_fn(k, dim, |_, _| rng.normal() + 0.3)))?;
        let norm = &norms[inst % 3];
        let p = orders[(inst / 3) % 3];
        let got = lib(wasserstein_assignment(&mx, &my, p, norm))?;
        let mut want = f64::INFINITY;
        for perm in permutations(k) {
            want = want.min(lib(coupling_cost(&mx, &my, &perm, p, norm))?);
        }
        if got != want {
            mismatches += 1;
        }
    }
    let mut worst_1d: f64 = 0.0;
    for inst in 0..200 {
        let k = 2 + (inst * 7) % 300;
        let xs: Vec<f64> = (0..k).map(|_| rng.normal()).collect();
        let ys: Vec<f64> = (0..k).map(|_| 1.5 * rng.normal() - 0.2).collect();
        let p = orders[inst % 3];
        let a = lib(wasserstein_assignment(
            &lib(EmpiricalMeasure::from_scalars(&xs))?,
            &lib(EmpiricalMeasure::from_scalars(&ys))?,
            p,
            &SampleNorm::L2,
        ))?;
        let b = lib(wasserstein_1d(&xs, &ys, p))?;
        worst_1d = worst_1d.max((a - b).abs());
    }
    // the raw solver on a hand-checkable instance
    let perm = lib(optimal_assignment(&DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 2.0, 8.0])))?;
    ensure(
        mismatches == 0 && worst_1d <= 1e-12 && perm == vec![1, 0],
        format!("{mismatches} brute-force mismatches in 200; max 1D gap {worst_1d:.2e} over 200"),
    )
}

fn csv_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
                .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn criterion_11() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut configs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    configs.sort();
    let mut differing = vec![];
    for cfg_path in &configs {
        let cfg = lib(load_config(cfg_path))?;
        let stem = cfg_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let mut outputs = vec![];
        for threads in [1, 4, 8] {
            let out = tmp.path().join(format!("{stem}-{threads}"));
            let opts = RunOptions {
                out: Some(out.clone()),
                threads: Some(threads),
                ..Default::default()
            };
            lib(run_scenario(&cfg, &opts))?;
            outputs.push(csv_bytes(&out));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] || outputs[0] != outputs[2] {
            differing.push(stem);
        }
    }
    ensure(
        differing.is_empty() && !configs.is_empty(),
        format!("{} bundled scenarios at 1/4/8 threads; differing: {differing:?}", configs.len()),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("OU moment oracle", criterion_1),
        ("two-trajectory envelope domination", criterion_2),
        ("deterministic reduction", criterion_3),
        ("deterministic-input tracking limsup", criterion_4),
        ("OU-input tracking envelopes", criterion_5),
        ("Jacobi-input positivity and tracking", criterion_6),
        ("cascade contraction rate", criterion_7),
        ("Wasserstein contraction", criterion_8),
        ("Gibbs stationarity", criterion_9),
        ("assignment solver exactness", criterion_10),
        ("thread-count reproducibility", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{:.1}s]", i + 1, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
