use sqzgan::gradcheck::{run_suite, Suite};

fn assert_suite(suite: Suite) {
    let report = run_suite(suite).unwrap();
    println!("{}", report.to_text());
    assert!(report.passed(), "{}", report.to_text());
}

#[test]
fn core_suite_passes() {
    assert_suite(Suite::Core);
}

#[test]
fn loss_suite_passes() {
    assert_suite(Suite::Losses);
}

#[test]
fn r1_suite_passes() {
    assert_suite(Suite::R1);
}
