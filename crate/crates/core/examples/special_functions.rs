//! Log-gamma, digamma and the quantile helpers used by calibration.
//!
//! cargo run -p calpro --example special_functions

use calpro::numerics::{
    conformal_quantile, digamma, lgamma, normal_quantile, soft_quantile, spearman,
};

fn main() -> calpro::Result<()> {
    println!("{:>6} {:>14} {:>14}", "x", "lgamma", "digamma");
    for x in [0.5, 1.0, 2.5, 10.0, 49.5] {
        println!("{x:>6} {:>14.10} {:>14.10}", lgamma(x)?, digamma(x)?);
    }

    let scores: Vec<f64> = (1..=10).map(f64::from).collect();
    println!(
        "\nconformal quantile at alpha 0.1: {}",
        conformal_quantile(&scores, 0.1)?
    );
    for gamma in [0.1, 1.0, 10.0] {
        println!(
            "soft quantile, gamma {gamma:>4}: {:.6}",
            soft_quantile(&scores, gamma)?
        );
    }
    println!("z at 0.975: {:.6}", normal_quantile(0.975)?);

    let u = [1.0, 2.0, 3.0, 4.0, 5.0];
    let v = [2.0, 1.0, 4.0, 3.0, 5.0];
    println!("spearman: {:?}", spearman(&u, &v)?);
    Ok(())
}
