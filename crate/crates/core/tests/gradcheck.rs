mod common;

use std::time::Instant;

use common::{gradcheck, gradcheck_suite, random_case, Term, TERMS};

#[test]
fn suite_of_105_random_cases_passes_within_budget() {
    let start = Instant::now();
    let results = gradcheck_suite(105);
    let elapsed = start.elapsed();
    let mut failures = Vec::new();
    for (term, seed, r) in &results {
        assert!(r.params > 0);
        if r.max_rel_error >= term.tolerance() {
            failures.push(format!("{term:?} seed {seed}: {:.3e}", r.max_rel_error));
        }
    }
    assert!(failures.is_empty(), "gradient mismatches: {failures:#?}");
    for t in TERMS {
        assert!(results.iter().filter(|(term, _, _)| *term == t).count() >= 15);
    }
    assert!(elapsed.as_secs() < 120, "gradcheck took {elapsed:?}");
}

#[test]
fn reconstruction_gradient_is_tight() {
    for seed in 0..5 {
        let r = gradcheck(&random_case(Term::Rec, seed));
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {}", r.max_rel_error);
    }
}

#[test]
fn tied_decoder_gradients_sum_over_both_uses() {
    // TCAE cases have decoder weights excluded from the free parameters.
    let case = random_case(Term::Tcae, 77);
    let mut m = case.model.clone();
    let free = m.param_slots_mut().len();
    assert_eq!(free, 2 * case.model.encoder.layers.len() + case.model.decoder.layers.len());
    assert!(gradcheck(&case).max_rel_error < 1e-3);
}
