//! Walks the built-in synthetic ledger: vocabularies, transition lookups,
//! fade targets along a segment and validation of a broken edit.

use stateact::ledger::{fade_weights, state_target_vector, Ledger};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ledger = Ledger::synthetic();
    let report = ledger.validate();
    println!(
        "{} verbs, {} nouns, {} states, {} actions, {} rules",
        report.verb_count, report.noun_count, report.state_count, report.action_count, report.rule_count
    );

    for (v, verb) in ledger.verbs.iter() {
        let group = ledger.group(v);
        let noun = ledger.nouns.lookup("disc").expect("disc noun");
        match ledger.lookup_transition(v, noun) {
            Ok(rule) => println!(
                "{verb:<10} {:<14} {} -> {}",
                group.as_str(),
                ledger.states.name(rule.pre_state).unwrap_or("?"),
                ledger.states.name(rule.post_state).unwrap_or("?")
            ),
            Err(e) => println!("{verb:<10} {:<14} {e}", group.as_str()),
        }
    }

    let cut = ledger.verbs.lookup("cut").expect("cut verb");
    let rule = ledger.lookup_transition(cut, 0)?;
    let len = 5;
    println!("\nstate targets for `cut` over {len} frames:");
    for pos in 0..len {
        let (pre, post) = fade_weights(pos, len)?;
        let v = state_target_vector(&rule, &Default::default(), pos, len, ledger.states.len())?;
        println!("  frame {pos}: pre {pre:.2} post {post:.2} target {v:?}");
    }

    let mut broken = ledger.clone();
    broken.rules.pop();
    for violation in broken.validate().violations {
        println!("\nafter dropping a rule: {violation}");
    }
    Ok(())
}
