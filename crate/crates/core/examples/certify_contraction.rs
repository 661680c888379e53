//! Contraction certificates: exact for an affine drift in a weighted
//! metric, sampled for a nonlinear one, plus the cascade metric check.

use std::sync::Arc;

use contractive_sde::contraction::{cascade_drift, cascade_metric, certify_affine, certify_system, oslip_sampled};
use contractive_sde::{Constants, Dispersion, InputBox, Metric, SystemSpec};
use nalgebra::dmatrix;

fn main() -> contractive_sde::Result<()> {
    let a = dmatrix![-2.0, 1.0; 0.0, -1.5];
    let b = dmatrix![1.0; 0.5];
    let sigma = dmatrix![0.2, 0.0; 0.0, 0.1];
    let p = Metric::new(dmatrix![1.0, 0.2; 0.2, 2.0])?;
    println!("affine in P: {:?}", certify_affine(&a, &b, &sigma, &p)?);

    // dx = (−x − x³ + u)dt + 0.1 dB
    let sys = SystemSpec::new(
        1,
        1,
        Arc::new(|x: &[f64], u: &[f64], out: &mut [f64]| out[0] = -x[0] - x[0].powi(3) + u[0]),
        Dispersion::isotropic(1, 0.1),
        Metric::identity(1),
        Constants::new(1.0, 1.0, 0.01)?,
    )?;
    let cert = certify_system(&sys, &InputBox::cube(1, -2.0, 2.0)?, &InputBox::cube(1, -1.0, 1.0)?, 50_000, 3)?;
    println!("cubic (sampled): {cert:?}");

    let tracker = SystemSpec::linear_tracker(1, 2.0, 0.2)?;
    let pc = cascade_metric(tracker.metric(), 2.0, 2.0, 1)?;
    let field = cascade_drift(&tracker, 2.0, vec![0.0]);
    let osl = oslip_sampled(&field, 2, &InputBox::cube(2, -3.0, 3.0)?, &InputBox::cube(0, 0.0, 0.0)?, &pc, 100_000, 5)?;
    println!("cascade osLip = {osl:.4} (rate c/2 gives -1.0)");
    Ok(())
}
