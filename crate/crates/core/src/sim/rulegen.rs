//! Synthetic large rule files for parser and evaluation benchmarks.

use rand::Rng;

use crate::rng::SplitMix64;

const REGIONS: [&str; 6] = ["domestic", "eu", "us", "apac", "latam", "offshore"];
const CHANNELS: [&str; 3] = ["online", "branch", "api"];
const ACTIONS: [&str; 3] = ["approve", "reject", "escalate"];

/// `n` syntactically valid rules with unique ids `GEN-00001…`, seeded.
pub fn generate_rules(n: usize, seed: u64) -> String {
    let mut rng = SplitMix64::new(seed);
    let mut out = format!("# {n} generated rules, seed {seed}\n");
    for i in 0..n {
        let region = REGIONS[rng.random_range(0..REGIONS.len())];
        let channel = CHANNELS[rng.random_range(0..CHANNELS.len())];
        let low = (rng.random_range(0..2_000) * 50) as f64;
        let high = low + (rng.random_range(1..200) * 50) as f64;
        let action = ACTIONS[rng.random_range(0..ACTIONS.len())];
        let priority = rng.random_range(100..10_000);
        let cond = match rng.random_range(0..3) {
            0 => format!("region = \"{region}\" AND channel = \"{channel}\" AND amount > {low} AND amount <= {high}"),
            1 => format!("(region = \"{region}\" OR channel = \"{channel}\") AND amount > {low} AND amount <= {high}"),
            _ => format!("NOT region = \"{region}\" AND channel = \"{channel}\" AND amount >= {low} AND amount < {high}"),
        };
        out.push_str(&format!("GEN-{:05} {priority} {cond} -> {action}\n", i + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_rules;

    #[test]
    fn generated_file_parses() {
        let text = generate_rules(2_000, 4);
        let set = parse_rules(&text).unwrap();
        assert_eq!(set.len(), 2_000);
        assert_eq!(generate_rules(2_000, 4), text);
    }
}
