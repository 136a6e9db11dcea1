//! Projects observed returns onto the categorical support and reads off the
//! CVaR-minus-mean regret of a few distributions.

use add_core::regret::{cvar, project_returns, regret_estimate, ReturnDistribution, ReturnSupport};

pub fn run_example() -> add_core::Result<()> {
    let support = ReturnSupport::new(10, 0.0, 1.0)?;
    let alpha = 0.15;

    let always = project_returns(&[0.95, 0.95, 0.95], &support)?;
    let sometimes = project_returns(&[0.0, 0.0, 0.0, 0.9], &support)?;
    let never = ReturnDistribution::point_mass(support.len(), 0);
    for (name, d) in [("always solved", &always), ("sometimes solved", &sometimes), ("never solved", &never)] {
        println!(
            "{name:16}: mean {:.3}  CVaR {:.3}  regret {:.3}",
            d.mean(&support),
            cvar(d, &support, alpha)?,
            regret_estimate(d, &support, alpha)?
        );
    }
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
