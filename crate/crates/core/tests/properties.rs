use proptest::prelude::*;
use rand::Rng;

use icl_bayes::hbayes::{log_posterior_odds, odds_from_terms, transience_time, TransienceStatus};
use icl_bayes::io::{read_eval_set, write_eval_set};
use icl_bayes::metrics::{blend, kl, rel_from_distances, smooth};
use icl_bayes::predictors::SequencePredictions;
use icl_bayes::rng::{stream, Domain};
use icl_bayes::stats::{median_of_means, sigmoid};
use icl_bayes::taskgen::{make_eval_set, sample_mixture};
use icl_bayes::{
    DiversityTerms, EvalMode, FitParams, MixtureSpec, OddsInput, PredictionSet, PredictiveOutput, SettingKind,
};

fn params() -> impl Strategy<Value = FitParams> {
    (0.01f64..0.99, 0.01f64..5.0, -6.0f64..6.0).prop_map(|(a, b, lg)| FitParams::new(a, b, 10f64.powf(lg)).unwrap())
}

fn distribution(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, m).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn categorical_set(rows: Vec<Vec<f64>>) -> PredictionSet {
    let m = rows[0].len();
    PredictionSet {
        setting: SettingKind::BallsUrns,
        m,
        sequences: vec![SequencePredictions {
            seq_id: 0,
            positions: rows
                .into_iter()
                .enumerate()
                .map(|(i, p)| (i, PredictiveOutput::Categorical(p)))
                .collect(),
        }],
    }
}

proptest! {
    #[test]
    fn sigmoid_halves_sum_to_one_exactly(x in -800.0f64..800.0) {
        prop_assert_eq!(sigmoid(x) + sigmoid(-x), 1.0);
    }

    #[test]
    fn odds_rise_with_n(p in params(), dl in 1e-4f64..1.0, km in 1.0f64..1e5, kg in 1.0f64..1e5, n in 1u64..1_000_000) {
        let terms = DiversityTerms { delta_l: dl, k_m_bits: km, k_g_bits: kg };
        let lo = log_posterior_odds(&p, &OddsInput::new(n, 1, terms));
        let hi = log_posterior_odds(&p, &OddsInput::new(n + 1, 1, terms));
        // strict in exact arithmetic; a huge complexity term can absorb the step
        prop_assert!(hi >= lo);
        prop_assert!(sigmoid(hi) >= sigmoid(lo));
    }

    #[test]
    fn odds_fall_with_diversity(
        p in params(),
        dl in 1e-4f64..1.0,
        shrink in 0.0f64..1.0,
        km in 1.0f64..1e5,
        grow in 0.0f64..1e4,
        n in 1u64..1_000_000,
    ) {
        let kg = 500.0;
        let low_d = DiversityTerms { delta_l: dl, k_m_bits: km, k_g_bits: kg };
        let high_d = DiversityTerms { delta_l: dl * shrink, k_m_bits: km + grow, k_g_bits: kg };
        prop_assert!(
            log_posterior_odds(&p, &OddsInput::new(n, 4, high_d)) <= log_posterior_odds(&p, &OddsInput::new(n, 1, low_d))
        );
    }

    #[test]
    fn crossover_zeroes_the_odds(p in params(), dl in 1e-3f64..1.0, kg in 1.0f64..100.0, gap in 1.0f64..500.0) {
        let terms = DiversityTerms { delta_l: dl, k_m_bits: kg + gap, k_g_bits: kg };
        let f = transience_time(&p, &terms);
        prop_assert_eq!(f.status, TransienceStatus::Finite);
        prop_assume!(f.n_star < 1e300);
        let complexity = std::f64::consts::LN_2 * (terms.k_m_bits.powf(p.beta) - kg.powf(p.beta));
        let eta = odds_from_terms(&p, f.n_star, dl, complexity);
        prop_assert!(eta.abs() <= 1e-9 * complexity.max(1.0), "eta at N* = {}", eta);
    }

    #[test]
    fn blends_stay_normalized(m in 2usize..10, w in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = stream(seed, Domain::Jitter, 0, 0);
        let mut row = || -> Vec<f64> {
            let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-9).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        };
        let a = categorical_set(vec![row(), row()]);
        let b = categorical_set(vec![row(), row()]);
        for out in blend(&a, &b, w).unwrap().outputs() {
            let PredictiveOutput::Categorical(p) = out else { unreachable!() };
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn relative_distance_is_clamped(d_hm in 0.0f64..10.0, d_hg in 0.0f64..10.0, d_mg in 1e-6f64..10.0) {
        let r = rel_from_distances(d_hm, d_hg, d_mg);
        prop_assert!((0.0..=1.0).contains(&r.d_rel));
        let raw = ((d_hg - d_hm) / d_mg + 1.0) / 2.0;
        prop_assert_eq!(r.clamped, !(0.0..=1.0).contains(&raw));
        if !r.clamped {
            prop_assert!((r.d_rel - raw).abs() <= 1e-15);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(p in distribution(6), q in distribution(6)) {
        prop_assert!(kl(&p, &q) >= -1e-15);
        prop_assert!(kl(&p, &p).abs() <= 1e-15);
        let s = smooth(&p);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn median_of_means_stays_within_the_sample(v in prop::collection::vec(-1e3f64..1e3, 1..200), k in 1usize..70) {
        let est = median_of_means(&v, k);
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(est >= lo - 1e-9 && est <= hi + 1e-9);
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let x: Vec<u64> = (0..4).map({ let mut r = stream(seed, Domain::Task, a, b); move |_| r.random() }).collect();
        let y: Vec<u64> = (0..4).map({ let mut r = stream(seed, Domain::Task, a, b); move |_| r.random() }).collect();
        let z: Vec<u64> = (0..4).map({ let mut r = stream(seed, Domain::Restart, a, b); move |_| r.random() }).collect();
        prop_assert_eq!(&x, &y);
        prop_assert_ne!(&x, &z);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eval_sets_survive_the_file_round_trip(
        setting in prop_oneof![
            Just(SettingKind::BallsUrns),
            Just(SettingKind::LinearRegression),
            Just(SettingKind::Classification)
        ],
        d in 1usize..6,
        m in 2usize..6,
        c in 2usize..8,
        seed in any::<u64>(),
        ood in any::<bool>(),
    ) {
        let mix = sample_mixture(&MixtureSpec::new(setting, d, m, c, seed)).unwrap();
        let mode = if ood { EvalMode::Ood } else { EvalMode::Id };
        let eval = make_eval_set(&mix, 5, mode, seed ^ 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        write_eval_set(&path, &eval).unwrap();
        prop_assert_eq!(read_eval_set(&path).unwrap(), eval);
    }
}
