mod common;

use common::{random_guesses, reference_aggregate};
use foresight::domain::ProbabilityGuess;
use foresight::estimator::{aggregate, extract_guesses, AnchorPolicy};
use foresight::llm::{Completion, TokenAlternative, TokenPosition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn guess_set() -> impl Strategy<Value = Vec<ProbabilityGuess>> {
    prop::collection::vec((0.0..=1.0f64, -10.0..=0.0f64), 1..=20)
        .prop_map(|v| v.into_iter().map(|(p, w)| ProbabilityGuess::new(p, w)).collect())
}

proptest! {
    #[test]
    fn matches_the_double_double_reference(guesses in guess_set()) {
        let a = aggregate(&guesses).unwrap();
        let (p, u) = reference_aggregate(&guesses);
        prop_assert!((a.p_hat - p).abs() <= 1e-12, "{} vs {}", a.p_hat, p);
        prop_assert!((a.u_hat - u).abs() <= 1e-12, "{} vs {}", a.u_hat, u);
    }

    #[test]
    fn shifting_every_logprob_changes_nothing(guesses in guess_set(), c in -5.0..=5.0f64) {
        let a = aggregate(&guesses).unwrap();
        let shifted: Vec<_> = guesses.iter().map(|g| ProbabilityGuess::new(g.value, g.logprob + c)).collect();
        let b = aggregate(&shifted).unwrap();
        prop_assert!((a.p_hat - b.p_hat).abs() <= 1e-12);
        prop_assert!((a.u_hat - b.u_hat).abs() <= 1e-12);
    }

    #[test]
    fn order_of_guesses_is_irrelevant(guesses in guess_set(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = guesses.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(aggregate(&guesses).unwrap(), aggregate(&shuffled).unwrap());
    }

    #[test]
    fn estimate_stays_in_the_guess_hull(guesses in guess_set()) {
        let a = aggregate(&guesses).unwrap();
        let lo = guesses.iter().map(|g| g.value).fold(f64::INFINITY, f64::min);
        let hi = guesses.iter().map(|g| g.value).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= a.p_hat && a.p_hat <= hi);
        prop_assert!(a.u_hat >= 0.0 && a.u_hat <= (hi - lo) / 2.0 + 1e-12);
    }

    #[test]
    fn uncertainty_is_zero_exactly_when_guesses_agree(v in 0.0..=1.0f64, w in prop::collection::vec(-10.0..=0.0f64, 1..=20)) {
        let same: Vec<_> = w.iter().map(|&w| ProbabilityGuess::new(v, w)).collect();
        let a = aggregate(&same).unwrap();
        prop_assert_eq!(a.u_hat, 0.0);
        prop_assert_eq!(a.p_hat, v);
    }
}

#[test]
fn seeded_sets_with_ties_match_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let g = random_guesses(&mut rng);
        let a = aggregate(&g).unwrap();
        let (p, u) = reference_aggregate(&g);
        assert!((a.p_hat - p).abs() <= 1e-12 && (a.u_hat - u).abs() <= 1e-12);
        let all_equal = g.iter().all(|x| x.value == g[0].value);
        assert_eq!(a.u_hat == 0.0, all_equal);
    }
}

#[test]
fn extreme_logprobs_do_not_overflow() {
    let g = [ProbabilityGuess::new(0.2, -1000.0), ProbabilityGuess::new(0.6, -1000.0 - 2f64.ln())];
    let a = aggregate(&g).unwrap();
    assert!((a.p_hat - (0.2 * 2.0 + 0.6) / 3.0).abs() < 1e-12);
}

#[test]
fn extraction_then_aggregation() {
    let alts = [("35", -0.4), ("40", -1.3), ("abc", -1.5), ("30", -2.2)];
    let anchor = TokenPosition::new(
        "35",
        -0.4,
        alts.iter().map(|(t, l)| TokenAlternative::new(*t, *l)).collect(),
    );
    let positions = vec![TokenPosition::single("Reasoning.\nProbability: ", 0.0), anchor, TokenPosition::single("%", 0.0)];
    let completion = Completion {
        full_text: "Reasoning.\nProbability: 35%".into(),
        positions,
        provider_name: "test".into(),
        request_fingerprint: String::new(),
    };
    let guesses = extract_guesses(&completion, &AnchorPolicy::default()).unwrap();
    assert_eq!(guesses.len(), 3);
    let a = aggregate(&guesses).unwrap();
    let w: Vec<f64> = [-0.4f64, -1.3, -2.2].iter().map(|l| l.exp()).collect();
    let expect = (0.35 * w[0] + 0.40 * w[1] + 0.30 * w[2]) / w.iter().sum::<f64>();
    assert!((a.p_hat - expect).abs() < 1e-12);
}
