//! Second moment of an Ornstein–Uhlenbeck process: exact-transition and
//! Euler–Maruyama ensembles against the closed form.

use contractive_sde::montecarlo::{ou_exact_moment, state_moment, Ensemble};
use contractive_sde::noise::{ou_second_moment, OUParams};
use contractive_sde::{InputSignal, SystemSpec, TimeGrid};

fn main() -> contractive_sde::Result<()> {
    let (c, sigma, x0) = (1.0, 1.0, 2.0);
    let grid = TimeGrid::over(4.0, 1e-3)?;
    let ens = Ensemble::new(5000, 1);

    let exact = ou_exact_moment(&OUParams::new(c, sigma, 1)?, &[x0], &grid, 250, &ens)?;
    let sys = SystemSpec::linear_tracker(1, c, sigma)?;
    let em = state_moment(&sys, &[x0], &InputSignal::zero(1), &grid, 250, &ens)?;

    println!("{:>6} {:>10} {:>18} {:>18}", "t", "closed", "exact ± SE", "EM ± SE");
    for (k, t) in exact.grid.times().enumerate() {
        println!(
            "{t:>6.2} {:>10.5} {:>10.5} ± {:.4} {:>10.5} ± {:.4}",
            ou_second_moment(x0 * x0, c, sigma, t),
            exact.mean_sq[k],
            exact.std_err[k],
            em.mean_sq[k],
            em.std_err[k]
        );
    }
    Ok(())
}
