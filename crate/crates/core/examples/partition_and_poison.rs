// Splits a synthetic dataset across clients three ways and flips the labels
// of one client.
//
// `cargo run --example partition_and_poison`

use fedtoken::data::{partition, poison_labels, synth_gaussian, PartitionKind, PartitionScheme};
use fedtoken::{Purpose, RngStream};

pub fn run_example() -> fedtoken::Result<()> {
    let data = synth_gaussian(600, 4, 2.0, &RngStream::new(3, Purpose::Synth))?;

    for kind in [
        PartitionKind::Iid,
        PartitionKind::LabelShards { k: 1 },
        PartitionKind::Dirichlet { beta: 0.3 },
    ] {
        let parts = partition(&data, 6, &PartitionScheme { kind, seed: 3 })?;
        let line: Vec<String> = parts
            .iter()
            .map(|p| {
                let pos = p.sample_indices.iter().filter(|&&i| data.point(i).y() > 0.0).count();
                format!("{}:{pos}+/{}", p.client_id, p.len())
            })
            .collect();
        println!("{kind:?}\n  {}", line.join("  "));
    }

    let parts = partition(&data, 6, &PartitionScheme { kind: PartitionKind::Iid, seed: 3 })?;
    let victim = &parts[0];
    let poisoned = poison_labels(victim, &data, 1.0, &RngStream::new(3, Purpose::Poison).for_client(0))?;
    let flipped = victim
        .sample_indices
        .iter()
        .filter(|&&i| poisoned.point(i).label != data.point(i).label)
        .count();
    println!("client 0: {flipped} of {} labels flipped", victim.len());
    assert_eq!(flipped, victim.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedtoken::Result<()> {
    run_example()
}
