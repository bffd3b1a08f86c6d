//! The evidential head: raw outputs to NIG parameters, variances and likelihood.
//!
//! cargo run -p calpro --example nig_head

use calpro::data::{gen_chain_dataset, GeneratorConfig};
use calpro::head::{risk_probability, HeadConfig, HeadParams, NigParams};
use calpro::objective::{nig_nll, nig_nll_grad};

fn main() -> calpro::Result<()> {
    let p = NigParams::from_raw(&[0.3, 0.0, 0.5, -0.2, 1.0]);
    println!("raw -> {p:?}");
    println!(
        "predictive {:.4}  epistemic {:.4}  aleatoric {:.4}",
        p.predictive_variance(),
        p.epistemic_variance(),
        p.aleatoric_variance()
    );
    for y in [0.3, 1.0, 3.0] {
        let (nll, g) = nig_nll_grad(&p, y);
        assert!((nll - nig_nll(&p, y)).abs() < 1e-12);
        println!("y {y:>4}: nll {nll:.5}  d/d(mu,nu,alpha,beta) {g:.4?}");
    }

    let ds = gen_chain_dataset(&GeneratorConfig {
        n_chains: 2,
        ..Default::default()
    })?;
    let head = HeadParams::init(HeadConfig::default(), ds.feature_dim() + 1)?;
    let out = head.predict(&ds)?;
    println!(
        "\nuntrained head with {} parameters on {} nodes",
        head.n_params(),
        ds.len()
    );
    for i in 0..3 {
        println!(
            "node {i}: {:?} risk {:.3}",
            out.nig[i],
            risk_probability(out.risk_logit[i])
        );
    }
    Ok(())
}
