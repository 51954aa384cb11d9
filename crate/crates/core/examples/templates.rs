//! Template syntax: variables, metavariables, escapes and fill history.

use std::collections::BTreeMap;

use forge::template::{fill, parse_template, Bindings, TemplateValue};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = parse_template("{command} {question} \\{expected: {#Ideal}\\}")?;
    println!("variables {:?}, metavariables {:?}", t.variables(), t.metavariables());

    let row = BTreeMap::from([("Ideal".to_string(), "4".to_string())]);
    let bindings = Bindings::from([
        ("command".to_string(), TemplateValue::literal("Answer:")),
        ("question".to_string(), TemplateValue::literal("What is 1 + 3?").with_metadata(row)),
    ]);
    let filled = fill(&t, &bindings)?;
    println!("{}", filled.text);
    println!("fill history {:?}", filled.fill_history);

    // A filled value fed into another template keeps its history.
    let outer = parse_template("Please, {prompt}")?;
    let again = fill(&outer, &Bindings::from([("prompt".to_string(), filled)]))?;
    println!("{} (depth {})", again.text, again.depth);
    println!("fill history {:?}", again.fill_history);
    Ok(())
}
