use anosov_lab::lab::acceptance::run_criterion;

fn check(id: u8) {
    let outcome = run_criterion(id);
    println!("{}", outcome.line());
    assert!(outcome.pass, "{}", outcome.line());
}

#[test]
fn criterion_01_lyapunov_exactness() {
    check(1);
}

#[test]
fn criterion_02_metric_axioms_and_convexity() {
    check(2);
}

#[test]
fn criterion_03_invariance_defect() {
    check(3);
}

#[test]
fn criterion_04_lebesgue_basin_rate() {
    check(4);
}

#[test]
fn criterion_05_dirac_basin_rate() {
    check(5);
}

#[test]
fn criterion_06_entropy_pipeline() {
    check(6);
}

#[test]
fn criterion_07_cylinder_count_bound() {
    check(7);
}

#[test]
fn criterion_08_entropy_guard() {
    check(8);
}

#[test]
fn criterion_09_mixture_affinity() {
    check(9);
}

#[test]
fn criterion_10_perturbed_map() {
    check(10);
}
