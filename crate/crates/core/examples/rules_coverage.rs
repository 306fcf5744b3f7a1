//! Evaluate the demo rule set over a generated workload: coverage, action
//! mix and the busiest rules.

use std::collections::BTreeMap;

use complyflow::rules::{parse_rules, RuleInput, DEMO_RULES};
use complyflow::sim::{generate_workload, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rules = parse_rules(DEMO_RULES)?;
    println!("{} rules; canonical order starts:", rules.len());
    for line in rules.canonical().lines().take(5) {
        println!("  {line}");
    }
    for name in ["securities-firm", "cloud-provider"] {
        let workload = generate_workload(&preset(name)?)?;
        let mut by_rule: BTreeMap<&str, usize> = BTreeMap::new();
        let mut by_action: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &workload.events {
            let d = rules.evaluate(&RuleInput::event(e))?;
            if let Some(id) = d.matched_rule_id {
                *by_rule.entry(id).or_default() += 1;
                *by_action.entry(d.action.as_str()).or_default() += 1;
            }
        }
        let coverage = rules.coverage(workload.events.iter().map(RuleInput::event))?;
        let mut top: Vec<_> = by_rule.into_iter().collect();
        top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        println!("\n{name}: {} events, coverage {coverage:.4}, actions {by_action:?}", workload.events.len());
        for (id, n) in top.iter().take(5) {
            println!("  {id:<10} {n}");
        }
    }
    Ok(())
}
