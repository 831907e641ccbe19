//! Compression-based complexity of both predictors as the mixture grows.
//! K_M tracks the stored task table; K_G is the same program for every D.

use icl_bayes::complexity::{estimate_k, generalizing_bundle, memorizing_bundle};
use icl_bayes::taskgen::sample_mixture;
use icl_bayes::{MixtureSpec, SettingKind};

fn main() -> icl_bayes::Result<()> {
    for setting in [
        SettingKind::BallsUrns,
        SettingKind::LinearRegression,
        SettingKind::Classification,
    ] {
        let k_g = estimate_k(&generalizing_bundle(setting))?;
        println!("{setting:?}: K_G = {} bits ({:?})", k_g.bits, k_g.codec_chosen);
        for d in [4, 16, 64, 256, 1024] {
            let mix = sample_mixture(&MixtureSpec::new(setting, d, 8, 16, 0))?;
            let k_m = estimate_k(&memorizing_bundle(&mix))?;
            let sizes: Vec<String> = k_m.per_codec_bits.iter().map(|(c, b)| format!("{c:?}={b}")).collect();
            println!("  D={d:>5}  K_M = {:>8} bits  [{}]", k_m.bits, sizes.join(" "));
        }
    }
    Ok(())
}
