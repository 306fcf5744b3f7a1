use complyflow::domain::{Channel, Event};
use complyflow::rules::{parse_rules, RuleAction, RuleInput};
use proptest::prelude::*;

const REGIONS: [&str; 4] = ["domestic", "eu", "offshore", "apac"];

/// Independent model of a generated rule: the DSL text plus a direct evaluator.
#[derive(Clone, Debug)]
enum Atom {
    AmountLe(f64),
    AmountGt(f64),
    Channel(usize),
    Region(usize),
    NotRegion(usize),
}

#[derive(Clone, Debug)]
struct GenRule {
    priority: i64,
    atoms: Vec<Atom>,
    any: bool,
    action: RuleAction,
}

impl Atom {
    fn text(&self) -> String {
        match self {
            Atom::AmountLe(v) => format!("amount <= {v}"),
            Atom::AmountGt(v) => format!("amount > {v}"),
            Atom::Channel(c) => format!("channel = \"{}\"", Channel::ALL[*c].as_str()),
            Atom::Region(r) => format!("region = \"{}\"", REGIONS[*r]),
            Atom::NotRegion(r) => format!("NOT region = \"{}\"", REGIONS[*r]),
        }
    }

    fn holds(&self, e: &Event) -> bool {
        match self {
            Atom::AmountLe(v) => e.amount <= *v,
            Atom::AmountGt(v) => e.amount > *v,
            Atom::Channel(c) => e.channel == Channel::ALL[*c],
            Atom::Region(r) => e.region == REGIONS[*r],
            Atom::NotRegion(r) => e.region != REGIONS[*r],
        }
    }
}

impl GenRule {
    fn line(&self, i: usize) -> String {
        let parts: Vec<String> = self.atoms.iter().map(|a| format!("({})", a.text())).collect();
        let join = if self.any { " OR " } else { " AND " };
        format!("R{i:03} {} {} -> {}", self.priority, parts.join(join), self.action.as_str())
    }

    fn holds(&self, e: &Event) -> bool {
        if self.any {
            self.atoms.iter().any(|a| a.holds(e))
        } else {
            self.atoms.iter().all(|a| a.holds(e))
        }
    }
}

fn atom() -> impl Strategy<Value = Atom> {
    prop_oneof![
        (0u32..50).prop_map(|v| Atom::AmountLe(f64::from(v) * 100.0)),
        (0u32..50).prop_map(|v| Atom::AmountGt(f64::from(v) * 100.0)),
        (0usize..3).prop_map(Atom::Channel),
        (0usize..4).prop_map(Atom::Region),
        (0usize..4).prop_map(Atom::NotRegion),
    ]
}

fn rule() -> impl Strategy<Value = GenRule> {
    (0i64..5, prop::collection::vec(atom(), 1..4), any::<bool>(), 0usize..3).prop_map(|(priority, atoms, any, a)| GenRule {
        priority,
        atoms,
        any,
        action: [RuleAction::Approve, RuleAction::Reject, RuleAction::Escalate][a],
    })
}

fn event() -> impl Strategy<Value = Event> {
    (0u32..5000, 0usize..3, 0usize..4).prop_map(|(amount, c, r)| Event {
        id: "e".into(),
        timestamp: 0,
        account: "a".into(),
        amount: f64::from(amount),
        channel: Channel::ALL[c],
        region: REGIONS[r].into(),
        features: None,
        doc_text: None,
    })
}

fn text(rules: &[GenRule]) -> String {
    rules.iter().enumerate().map(|(i, r)| r.line(i) + "\n").collect()
}

proptest! {
    #[test]
    fn first_match_by_priority_then_order(rules in prop::collection::vec(rule(), 1..12), events in prop::collection::vec(event(), 1..30)) {
        let set = parse_rules(&text(&rules)).unwrap();
        for e in &events {
            let expected = rules
                .iter()
                .enumerate()
                .filter(|(_, r)| r.holds(e))
                .min_by_key(|(i, r)| (r.priority, *i));
            let got = set.evaluate(&RuleInput::event(e)).unwrap();
            match expected {
                Some((i, r)) => {
                    let id = format!("R{i:03}");
                    prop_assert_eq!(got.matched_rule_id, Some(id.as_str()));
                    prop_assert_eq!(got.action, r.action);
                }
                None => {
                    prop_assert!(!got.matched);
                    prop_assert_eq!(got.action, set.default_action);
                }
            }
        }
    }

    #[test]
    fn adding_a_rule_never_lowers_coverage(rules in prop::collection::vec(rule(), 0..8), extra in rule(), events in prop::collection::vec(event(), 1..40)) {
        let before = parse_rules(&text(&rules)).unwrap();
        let mut more = rules.clone();
        more.push(extra);
        let after = parse_rules(&text(&more)).unwrap();
        let a = before.coverage(events.iter().map(RuleInput::event)).unwrap();
        let b = after.coverage(events.iter().map(RuleInput::event)).unwrap();
        prop_assert!(b >= a);
    }

    #[test]
    fn canonical_form_reparses_to_the_same_rules(rules in prop::collection::vec(rule(), 1..10), events in prop::collection::vec(event(), 1..20)) {
        let set = parse_rules(&text(&rules)).unwrap();
        let canon = set.canonical();
        let again = parse_rules(&canon).unwrap();
        prop_assert_eq!(again.canonical(), canon);
        for e in &events {
            let (x, y) = (set.evaluate(&RuleInput::event(e)).unwrap(), again.evaluate(&RuleInput::event(e)).unwrap());
            prop_assert_eq!(x.matched_rule_id, y.matched_rule_id);
            prop_assert_eq!(x.action, y.action);
        }
    }
}
