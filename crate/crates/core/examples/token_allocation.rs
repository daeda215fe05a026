// Settles a few rounds of a token budget under proportional-fair and equal
// pay, including discounted participation awards.
//
// `cargo run --example token_allocation`

use std::collections::BTreeMap;

use fedtoken::tokenomics::{settle_round, AllocationKind, AllocationPolicy, Budget, MICROTOKENS_PER_TOKEN};

pub fn run_example() -> fedtoken::Result<()> {
    let m = MICROTOKENS_PER_TOKEN;
    let u = BTreeMap::from([(0, 3.0), (1, 1.0), (2, 0.5), (3, -0.2)]);
    let cohort = [0, 1, 2, 3];
    let selected = [0, 1];

    for kind in [AllocationKind::ProportionalFair, AllocationKind::EqualPay] {
        let policy = AllocationPolicy {
            kind,
            discount_zeta: 0.7,
            pay_selected_participation: false,
        };
        let mut budget = Budget::new(300 * m, 100 * m, 20 * m)?;
        println!("{kind:?}");
        for round in 1..=4 {
            let s = settle_round(&budget, &policy, Some(&u), &cohort, &selected, round);
            println!(
                "  round {round}: contribution {:?} participation {:?} remaining {}",
                s.allocation.contribution_awards, s.allocation.participation_awards, s.budget.remaining
            );
            budget = s.budget;
            if s.exhausted {
                println!("  budget exhausted");
                break;
            }
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedtoken::Result<()> {
    run_example()
}
