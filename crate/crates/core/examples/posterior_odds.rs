//! Log-posterior odds of memorizing over generalizing on an (N, D) grid,
//! with measured loss gaps and complexities, and the predicted crossover.

use std::collections::BTreeMap;

use icl_bayes::complexity::{estimate_k, generalizing_bundle, memorizing_bundle};
use icl_bayes::hbayes::{compute_delta_l, posterior_grid, transience_time};
use icl_bayes::taskgen::{make_eval_set, sample_mixture};
use icl_bayes::{DiversityTerms, EvalMode, FitParams, MixtureSpec, SettingKind};

fn main() -> icl_bayes::Result<()> {
    let params = FitParams::new(0.3, 0.4, 1.0)?;
    let k_g = estimate_k(&generalizing_bundle(SettingKind::BallsUrns))?.bits;
    let mut terms = BTreeMap::new();
    for d in [2, 8, 32, 128] {
        let mix = sample_mixture(&MixtureSpec::new(SettingKind::BallsUrns, d, 8, 64, 0))?;
        let eval = make_eval_set(&mix, 300, EvalMode::Id, 1)?;
        let dl = compute_delta_l(&mix, &eval)?;
        let k_m = estimate_k(&memorizing_bundle(&mix))?.bits;
        terms.insert(
            d,
            DiversityTerms {
                delta_l: dl.delta_l,
                k_m_bits: k_m,
                k_g_bits: k_g,
            },
        );
    }

    let checkpoints: Vec<u64> = (2..=7).map(|e| 10u64.pow(e)).collect();
    let grid = posterior_grid(&params, &checkpoints, &terms);
    print!("{:>6}", "D \\ N");
    for n in &checkpoints {
        print!(" {n:>9}");
    }
    println!(" {:>12}", "N*");
    for (&d, t) in &terms {
        print!("{d:>6}");
        for &n in &checkpoints {
            print!(" {:>9.3}", grid.entries[&(n, d)].p_m);
        }
        println!(" {:>12.4e}", transience_time(&params, t).n_star);
    }
    Ok(())
}
