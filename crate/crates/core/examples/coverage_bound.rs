//! Distribution-shift coverage bound and the calibration size it requires.
//!
//! cargo run -p calpro --example coverage_bound

use calpro::bounds::{
    choose_posterior_scale, coverage_lower_bound, default_sigma_grid, kl_gaussian, required_ncal,
    PosteriorSurrogate,
};

fn main() -> calpro::Result<()> {
    let center = vec![0.4, -0.2, 0.1];
    let grid = default_sigma_grid(1.0, 31);
    let (sigma, kl) = choose_posterior_scale(&center, 1.0, 0.1, 2000, 0.05, &grid)?;
    let direct = kl_gaussian(&PosteriorSurrogate {
        center: center.clone(),
        sigma,
        sigma_p: 1.0,
    })?;
    println!("posterior scale {sigma:.4}, kl {kl:.4} (direct {direct:.4})");

    println!(
        "\n{:>6} {:>8} {:>10} {:>10} {:>8}",
        "n_cal", "eps", "bound", "raw", "vacuous"
    );
    for n in [250, 1000, 4000] {
        for eps in [0.0, 0.02, 0.05] {
            let b = coverage_lower_bound(0.1, kl, 0.05, n, 1.5, eps)?;
            println!(
                "{n:>6} {eps:>8} {:>10.5} {:>10.5} {:>8}",
                b.value, b.raw, b.vacuous
            );
        }
    }

    println!();
    for allowed in [0.05, 0.03, 0.01] {
        match required_ncal(allowed, 0.01, 1.5, kl, 0.05) {
            Ok(n) => println!("degradation <= {allowed} at eps 0.01 needs n_cal >= {n}"),
            Err(e) => println!("degradation <= {allowed}: {e}"),
        }
    }
    Ok(())
}
