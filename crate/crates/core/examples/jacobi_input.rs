//! Bounded input noise: a Jacobi diffusion on (0, 1) feeding a tracker,
//! with the boundary-attainment check and clamp accounting.

use contractive_sde::integrate::{integrate_cascade_every, CascadeInput};
use contractive_sde::noise::{feller_check, JDParams};
use contractive_sde::{InputSignal, RngLineage, SystemSpec, TimeGrid};

fn main() -> contractive_sde::Result<()> {
    let theta = InputSignal::constant(vec![0.5]);
    let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
    let p = JDParams::new(1.0, theta.clone(), 0.5f64.sqrt(), vec![1.0], &times, false)?;
    println!("Feller: {:?}", feller_check(&p, &times)?);

    let bad = JDParams::new(1.0, theta, 1.2, vec![1.0], &times, false);
    println!("sigma_u = 1.2 rejected: {}", bad.unwrap_err());

    let sys = SystemSpec::linear_tracker(1, 1.0, 0.2)?;
    let grid = TimeGrid::over(100.0, 1e-3)?;
    let (u, x) = integrate_cascade_every(&CascadeInput::Jd(p), &sys, &[0.0], &[0.3], &grid, RngLineage::new(4, 0), 1000)?;
    let (lo, hi) = u.states.iter().fold((1.0f64, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    println!("{} steps, clamps = {}, u range [{lo:.4}, {hi:.4}], x(T) = {:.4}", grid.steps, u.clamp_count, x.terminal()[0]);
    Ok(())
}
