mod props;

#[test]
fn all_properties_hold() {
    let mut failed = Vec::new();
    for (name, property) in props::ALL {
        match property() {
            Ok(()) => println!("{name}: ok"),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    assert!(failed.is_empty(), "{failed:#?}");
}
