//! A contracting system following a moving equilibrium x*(θ(t)) = sin t,
//! with the tracking envelope at several α and its tail limsup.

use contractive_sde::bounds::{optimize_alpha, AlphaTarget, BoundParams, Envelope, EnvelopeKind, Profile};
use contractive_sde::montecarlo::{
    check_envelope, check_limsup, tracking_error_moment, AlphaPolicy, Ensemble, InitialLaw, TrackingInput,
    TrackingScenario, TrackingTarget,
};
use contractive_sde::{InputNorm, InputSignal, SystemSpec, TimeGrid};

fn main() -> contractive_sde::Result<()> {
    let (c, sigma) = (2.0, 0.2);
    let sys = SystemSpec::linear_tracker(1, c, sigma)?;
    let theta = InputSignal::scalar_sine(0.0, 1.0, 1.0);
    let sc = TrackingScenario {
        eq_map: sys.equilibrium_map()?,
        sys: sys.clone(),
        input: TrackingInput::Deterministic(theta.clone()),
        target: TrackingTarget::DeterministicCurve,
        x0: InitialLaw::Point(vec![0.0]),
        grid: TimeGrid::over(20.0, 1e-3)?,
        record_every: 100,
    };
    let series = tracking_error_moment(&sc, &Ensemble::new(2000, 11))?;

    let mut p = BoundParams::new(c, c, sigma * sigma);
    p.theta_dot_sq = Profile::derivative_sq(&theta, InputNorm::L2)?;
    p.theta_dot_sq_limsup = Some(1.0);
    let env = Envelope::new(EnvelopeKind::TrackDidc, p)?;
    let (alpha, lim) = optimize_alpha(&env, AlphaTarget::Limsup)?;
    println!("alpha* = {alpha:.4}, limsup bound = {lim:.5}");
    for a in [0.2, 0.5, 0.8] {
        println!("alpha={a}: {:?}", check_envelope(&series, &env, AlphaPolicy::Fixed(a))?.holds);
    }
    let tail = check_limsup(&series, &env, alpha, 0.2)?;
    println!("tail window: holds={} margin={:.3}", tail.holds, tail.worst_margin);
    Ok(())
}
