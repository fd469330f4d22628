// SPDX-License-Identifier: MIT OR Apache-2.0

//! The acceptance suite at desk size. Each criterion prints one PASS/FAIL
//! line (plus indented diagnostics) straight to stdout, so the lines show
//! up without `--nocapture`.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use glp::experiments::criteria::*;
use glp::experiments::{build_trained, CriterionOutcome, Profile, Sizes, Trained};

const SEED: u64 = 0;

fn sizes() -> Sizes {
    Sizes::of(Profile::Desk)
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| build_trained(sizes(), SEED).expect("desk world builds"))
}

fn report(o: &CriterionOutcome) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", o.line());
    for d in &o.details {
        let _ = writeln!(out, "    {d}");
    }
    let _ = out.flush();
}

fn check(o: glp::Result<CriterionOutcome>) {
    let o = o.expect("criterion ran to completion");
    report(&o);
    assert!(o.passed, "criterion {} failed: {}", o.id, o.summary);
}

#[test]
fn criterion_01_gradient_correctness() {
    check(gradient_check(SEED));
}

#[test]
fn criterion_02_gaussian_flow_oracle() {
    check(gaussian_oracle(&sizes(), SEED));
}

#[test]
fn criterion_03_sampling_convergence() {
    check(sampling_convergence(trained(), SEED));
}

#[test]
fn criterion_04_frechet_distance() {
    check(frechet_checks(SEED));
}

#[test]
fn criterion_05_power_law_fit() {
    check(power_law_recovery(SEED));
}

#[test]
fn criterion_06_scaling_trends() {
    check(scaling_run(&trained().world, SEED));
}

#[test]
fn criterion_07_steering_pareto() {
    check(steering_pareto(trained(), SEED));
}

#[test]
fn criterion_08_delta_lm_ordering() {
    check(delta_lm_ordering(trained(), SEED));
}

#[test]
fn criterion_09_probing_ordering() {
    check(probing_ordering(trained(), SEED));
}

#[test]
fn criterion_10_pipeline_integrity() {
    let scratch = tempfile::tempdir().expect("temp dir");
    let exe = Path::new(env!("CARGO_BIN_EXE_glp"));
    check(pipeline_integrity(&sizes(), SEED, Some((exe, scratch.path()))));
}
