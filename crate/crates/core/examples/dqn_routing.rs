//! Learn the escalation routing policy and compare it with fixed rules.

use complyflow::dqn::{average_return, train_dqn, Action, ComplianceState, DqnConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = DqnConfig::default();
    let (policy, history) = train_dqn(&config)?;
    println!("{} episodes, {} updates", history.episode_returns.len(), history.updates);
    println!("{:<28} {:>9} {:>9} {:>9}  action", "state", "approve", "reject", "escalate");
    for s in ComplianceState::all() {
        let q = policy.q.row(s);
        println!("{:<28} {:>9.3} {:>9.3} {:>9.3}  {}", s.key(), q[0], q[1], q[2], policy.action(s).as_str());
    }
    let eval = |name: &str, f: &dyn Fn(ComplianceState) -> Action| {
        println!("{name:<16} mean return {:.3}", average_return(&config.mdp, 2000, 99, f));
    };
    eval("learned", &|s| policy.action(s));
    eval("always escalate", &|_| Action::Escalate);
    eval("always approve", &|_| Action::AutoApprove);
    Ok(())
}
