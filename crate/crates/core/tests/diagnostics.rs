//! Link comparison on data simulated under a probit truth.

use cpmdid::simulation::{generate_dataset, Scenario, Transform};
use cpmdid::{compare_links, fit_cpm, omer_residuals, FitOptions, Link};

#[test]
fn probit_truth_prefers_probit_over_logit() {
    let mut wins = 0;
    for seed in 0..100u64 {
        let s = Scenario {
            n_subjects: 1400,
            seed,
            ..Scenario::paper_fig1()
        };
        let ds = generate_dataset(&s).unwrap();
        let cmp = compare_links(&ds, &[Link::Probit, Link::Logit], &FitOptions::new(Link::Probit)).unwrap();
        let ll: Vec<f64> = cmp.fits.iter().map(|f| f.loglik.unwrap()).collect();
        if ll[0] >= ll[1] {
            wins += 1;
        }
    }
    assert!(wins >= 90, "probit preferred in only {wins} of 100 datasets");
}

#[test]
fn residual_table_covers_every_row() {
    let s = Scenario {
        n_subjects: 500,
        transform: Transform::Identity,
        ..Scenario::paper_fig1()
    };
    let ds = generate_dataset(&s).unwrap();
    let fit = fit_cpm(&ds, &FitOptions::new(Link::Probit)).unwrap();
    let table = omer_residuals(&fit, &ds).unwrap();
    assert_eq!(table.len(), ds.len());
    for (r, o) in table.rows.iter().zip(ds.observations()) {
        assert_eq!(r.outcome, o.outcome);
        assert!((r.outcome - r.expected - r.residual).abs() < 1e-12);
        assert_eq!(r.covariates, o.covariates);
    }
}

#[test]
fn single_pattern_data_share_one_expectation() {
    let rows = (0..40)
        .map(|i| cpmdid::Observation::new((i * 7 % 13) as f64, i % 2 == 0, (i / 2) % 2 == 0, vec![]))
        .collect();
    let ds = cpmdid::Dataset::new(rows, vec![]).unwrap();
    let mut fit = fit_cpm(&ds, &FitOptions::new(Link::Logit)).unwrap();
    fit.betas.iter_mut().for_each(|b| *b = 0.0);
    let table = omer_residuals(&fit, &ds).unwrap();
    let e0 = table.rows[0].expected;
    for r in &table.rows {
        assert!((r.expected - e0).abs() < 1e-12);
        assert!((r.residual - (r.outcome - e0)).abs() < 1e-12);
    }
}
