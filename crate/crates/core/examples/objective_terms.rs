//! Individual loss terms: evidence regularizer, prior penalty, soft conformal loss.
//!
//! cargo run -p calpro --example objective_terms

use calpro::objective::{evidence_reg, prior_penalty, soft_conf_loss, MonotoneMap, Reduction};

fn main() -> calpro::Result<()> {
    let alphas = [1.5, 2.0, 4.0];
    println!("evidence regularizer: {:.5}", evidence_reg(&alphas));

    let map = MonotoneMap::new(8)?;
    let priors = [0.1, 0.4, 0.9];
    let uncertainty = [1.5, 0.5, 0.05];
    let pen = prior_penalty(&priors, &uncertainty, &map, Reduction::Mean)?;
    println!("prior penalty: {:.5}  d/du {:.4?}", pen.value, pen.d_u);

    let scores = [0.2, 0.8, 1.1, 1.9, 3.5];
    for gamma in [0.5, 5.0] {
        let s = soft_conf_loss(&scores, gamma, 0.5, false)?;
        println!(
            "soft conformal loss gamma {gamma}: value {:.5} quantile {:.5}",
            s.value, s.quantile
        );
    }
    Ok(())
}
