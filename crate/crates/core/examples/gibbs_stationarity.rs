//! Long-run Langevin samples against the Gibbs law e^{−2f/σ²}, and the
//! discrete stationarity residual for a quartic potential.

use contractive_sde::wasserstein::{gibbs_check, ks_statistic, long_run_samples, normal_cdf, Grid1d};
use contractive_sde::{InputSignal, RngLineage, SystemSpec, TimeGrid};

fn main() -> contractive_sde::Result<()> {
    let sys = SystemSpec::gradient_flow(1, |x, out| out[0] = x[0], 1.0, 1.0)?;
    let grid = TimeGrid::over(400.0, 1e-2)?;
    let mut rng = RngLineage::new(2, 0).stream();
    let rows = long_run_samples(&sys, &[0.0], &InputSignal::zero(0), &grid, 10.0, 2.0, &mut rng)?;
    let xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let rep = gibbs_check(|x| x * x / 2.0, |x| x, 1.0, &xs, &Grid1d::new(-5.0, 5.0, 1001)?)?;
    let ks = ks_statistic(&xs, |x| normal_cdf(x, 0.0, 0.5))?;
    println!("{} samples: KS vs grid law {:.4}, vs N(0,1/2) {ks:.4}, critical {:.4}", xs.len(), rep.ks_stat, rep.ks_critical);

    for points in [101, 201, 401, 801] {
        let g = Grid1d::new(-4.0, 4.0, points)?;
        let r = gibbs_check(|x| x.powi(4) / 4.0, |x| x.powi(3), 1.0, &xs, &g)?.residual;
        println!("quartic residual, h={:.4}: {r:.3e}", g.h());
    }
    Ok(())
}
