//! Mean-square distance between two noisy copies of a contracting system
//! driven by different inputs, against the incremental NISS envelope.

use contractive_sde::bounds::{BoundParams, Envelope, EnvelopeKind, Profile};
use contractive_sde::integrate::CouplingMode;
use contractive_sde::montecarlo::{check_envelope, pair_error_moment, AlphaPolicy, Ensemble, InitialLaw, PairScenario};
use contractive_sde::{InputNorm, InputSignal, SystemSpec, TimeGrid};

fn main() -> contractive_sde::Result<()> {
    let sys = SystemSpec::linear_tracker(1, 1.0, 0.3)?;
    let ux = InputSignal::scalar_sine(0.0, 1.0, 1.0);
    let uy = InputSignal::zero(1);
    let sc = PairScenario {
        sys_x: sys.clone(),
        sys_y: sys.clone(),
        x0: InitialLaw::Point(vec![1.0]),
        y0: InitialLaw::Point(vec![0.0]),
        u_x: ux.clone(),
        u_y: uy.clone(),
        mode: CouplingMode::Independent,
        grid: TimeGrid::over(10.0, 1e-3)?,
        record_every: 100,
        versus_ode: false,
    };
    let series = pair_error_moment(&sc, &Ensemble::new(4000, 7))?;

    let k = sys.constants();
    let mut p = BoundParams::new(k.c, k.ell, k.sigma_x_sq);
    p.e0 = 1.0;
    p.input_gap_sq = Profile::input_gap(&ux, &uy, InputNorm::L2, 2)?;
    p.input_gap_sq_limsup = Some(1.0);
    let env = Envelope::new(EnvelopeKind::NissTwoTraj, p)?;

    for policy in [AlphaPolicy::Fixed(0.3), AlphaPolicy::Fixed(0.7), AlphaPolicy::Optimized] {
        let v = check_envelope(&series, &env, policy)?;
        println!(
            "alpha={:.3}: holds={} worst relative margin {:.3} at t={:.1}",
            v.alpha.unwrap_or(f64::NAN),
            v.holds,
            v.worst_margin,
            v.worst_t
        );
    }
    Ok(())
}
