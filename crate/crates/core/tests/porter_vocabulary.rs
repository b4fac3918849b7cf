use sentivote::textprep::porter_stem;

#[test]
fn matches_reference_vocabulary() {
    let data = include_str!("fixtures/porter_vocabulary.tsv");
    let mut mismatches = Vec::new();
    let mut total = 0;
    for line in data.lines().filter(|l| !l.is_empty()) {
        let (word, expected) = line.split_once('\t').expect("word<TAB>stem");
        total += 1;
        let got = porter_stem(word);
        if got != expected {
            mismatches.push(format!("{word}: got {got}, expected {expected}"));
        }
    }
    assert!(total > 20_000, "{total}");
    assert!(
        mismatches.is_empty(),
        "{} of {total} differ, first: {:?}",
        mismatches.len(),
        &mismatches[..mismatches.len().min(10)]
    );
}
