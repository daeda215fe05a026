// Runs a short simulation, audits the persisted token ledger, then corrupts
// one byte and shows where verification stops trusting the chain.
//
// `cargo run --example ledger_audit`

use fedtoken::config::ExperimentConfig;
use fedtoken::harness::LEDGER_FILE;
use fedtoken::ledger::{verify_bytes, Chain};

pub fn run_example() -> fedtoken::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.n_train = 300;
    cfg.data.n_test = 100;
    cfg.data.dim = 4;
    cfg.scheduler.n_clients = 8;
    cfg.scheduler.m_fraction = 0.5;
    cfg.scheduler.rounds = 5;

    let dir = std::env::temp_dir().join(format!("fedtoken-ledger-audit-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| fedtoken::Error::io(&dir, e))?;
    fedtoken::run(&cfg, Some(&dir))?;

    let path = dir.join(LEDGER_FILE);
    let chain = Chain::load(&path)?;
    println!("{} blocks, {} microtokens issued", chain.len(), chain.total_issued());
    for (id, bal) in chain.balances() {
        println!("  client {id}: {bal}");
    }
    let round2 = chain.query_round(2)?;
    println!("round 2 contribution awards: {:?}", round2.contribution_awards);

    let mut bytes = std::fs::read(&path).map_err(|e| fedtoken::Error::io(&path, e))?;
    println!("untouched: {:?}", verify_bytes(&bytes));
    let at = bytes.len() - 40;
    bytes[at] ^= 0x01;
    println!("one bit flipped near the end: {:?}", verify_bytes(&bytes));

    std::fs::remove_dir_all(&dir).map_err(|e| fedtoken::Error::io(&dir, e))?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedtoken::Result<()> {
    run_example()
}
