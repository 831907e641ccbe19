//! Logistic fit of a relative-distance series on the u = N^(1-alpha) axis,
//! its curvature in N, and an exponential trend of beta against width.

use icl_bayes::hbayes::{beta_trend, crossover_curvature, empirical_transience, fit_logistic};

fn main() -> icl_bayes::Result<()> {
    let alpha = 0.3;
    let (a, b, n0) = (0.95, 0.05, 120.0);
    let series: Vec<(f64, f64)> = (0..16)
        .map(|i| {
            let n = 10f64.powf(1.0 + 0.25 * i as f64);
            let u = n.powf(1.0 - alpha);
            (n, a / (1.0 + (-b * (u - n0)).exp()))
        })
        .collect();
    let fit = fit_logistic(&series, alpha)?;
    println!(
        "logistic a={:.4} b={:.4} N0={:.3} (u units), sse={:.2e}",
        fit.a, fit.b, fit.n0, fit.sse
    );

    let grid: Vec<f64> = (0..200).map(|i| 10f64.powf(1.0 + 4.0 * i as f64 / 199.0)).collect();
    let prof = crossover_curvature(&fit, &grid)?;
    println!("max |d2 d_rel / dN2| = {:.3e} at N = {:.0}", prof.peak_abs, prof.peak_n);
    if let Some(n_half) = empirical_transience(&series) {
        println!("series crosses 0.5 at N = {n_half:.0}");
    }

    let widths: [f64; 5] = [16.0, 32.0, 64.0, 128.0, 256.0];
    let betas: Vec<(f64, f64)> = widths.iter().map(|&w| (w, 0.9 * (-0.02 * w).exp() + 0.1)).collect();
    let trend = beta_trend(&betas)?;
    println!("beta(w) = {:.3} exp(-{:.4} w) + {:.3}", trend.c0, trend.c1, trend.c2);
    Ok(())
}
