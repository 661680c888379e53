//! Every tracking envelope for one parameter set: finite-time values,
//! limsups and the α minimizing each limsup.

use contractive_sde::bounds::{optimize_alpha, AlphaTarget, BoundParams, Envelope, EnvelopeKind};

fn main() -> contractive_sde::Result<()> {
    let mut p = BoundParams::new(2.0, 2.0, 0.04);
    p.e0 = 0.25;
    p.sigma_xi_sq = 0.09;
    p.sigma_u_sq = 0.5;
    p.a_norm_sq = 1.0;
    p.theta_dot_sq = contractive_sde::bounds::Profile::Constant(1.0);
    for kind in EnvelopeKind::ALL {
        let env = Envelope::new(kind, p.clone())?;
        let (a, lim) = optimize_alpha(&env, AlphaTarget::Limsup)?;
        let (a5, v5) = optimize_alpha(&env, AlphaTarget::At(5.0))?;
        println!("{kind:?}: limsup {lim:.5} at alpha {a:.4}; t=5 bound {v5:.5} at alpha {a5:.4}");
    }
    Ok(())
}
