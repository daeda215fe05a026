// Values the players of a small cooperative game exactly and with truncated
// Monte Carlo, then scores real model updates on a held-out set.
//
// `cargo run --example shapley_valuation`

use std::collections::BTreeMap;

use fedtoken::data::synth_gaussian;
use fedtoken::learning::LossKind;
use fedtoken::valuation::{exact_shapley, tmc_shapley, CandidateForm, PermutationPlan, UtilityContext, VRef};
use fedtoken::{Purpose, RngStream};

pub fn run_example() -> fedtoken::Result<()> {
    // glove game: 0 holds a left glove, 1 and 2 hold right ones
    let glove = |s: &[u32]| f64::from(u8::from(s.contains(&0) && (s.contains(&1) || s.contains(&2))));
    let players = [0, 1, 2];
    let exact = exact_shapley(&glove, &players)?;
    let approx = tmc_shapley(&glove, &players, &PermutationPlan::sampled(200, 0.0, RngStream::new(1, Purpose::Permutation)))?;
    for p in players {
        println!("player {p}: exact {:.4}  sampled {:.4}", exact.get(p), approx.get(p));
    }

    // three updates: two helpful, one pointing the wrong way
    let test = synth_gaussian(400, 2, 3.0, &RngStream::new(2, Purpose::Synth))?;
    let deltas = BTreeMap::from([(0, vec![0.4, 0.5]), (1, vec![0.5, 0.3]), (2, vec![-0.9, -0.8])]);
    let ctx = UtilityContext::new(vec![0.0, 0.0], deltas, &test, LossKind::Logistic, VRef::RoundStart, CandidateForm::Mean);
    let u = exact_shapley(&ctx, &[0, 1, 2])?;
    println!("update values: {:?}", u.u);
    assert!(u.get(2) < 0.0 && u.get(0) > 0.0);
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedtoken::Result<()> {
    run_example()
}
