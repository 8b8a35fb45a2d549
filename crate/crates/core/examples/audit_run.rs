//! End-to-end smoke drive: pick a benchmark, check its hypotheses, solve
//! the semilinear problem on the grid backend, and run a few audits.
//!
//!     cargo run -p evoflow --example audit_run --release

use evoflow::auditor::{
    check_harnack, check_hypercontractivity, check_m_delta_lambda, check_stability, HyperParams,
};
use evoflow::benchmarks;
use evoflow::fields::named_field;
use evoflow::report::AuditRecord;
use evoflow::semilinear::evolve;

fn show(rec: &AuditRecord) {
    println!(
        "{:24} {:5} lhs {:>12.5e} rhs {:>12.5e} [{}]",
        rec.check,
        match rec.status {
            evoflow::report::AuditStatus::Pass => "pass",
            evoflow::report::AuditStatus::Fail => "FAIL",
            evoflow::report::AuditStatus::Skip => "skip",
        },
        rec.lhs.0,
        rec.rhs.0,
        rec.paper_ref,
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let b = benchmarks::by_name("ou-arctan")?;
    let report = b.verify(&b.sample_box())?;
    println!("hypotheses: all_pass = {}", report.all_pass());

    let backend = b.grid_backend();
    let fam = b.measure_family()?;
    let f = named_field("sin").unwrap();
    let sol = evolve(&b.op, &backend, &b.nonlinearity, 0.0, f.field.as_ref(), "sin", 2.0)?;
    println!(
        "solved {} on [0, 2]: {} windows, |u(2)|_sup = {:.5}",
        b.name,
        sol.windows.len(),
        sol.interior_sup(2.0)
    );

    let pr = HyperParams::for_benchmark(&b, 2.0, 2.0);
    let mut records = check_hypercontractivity(&sol, &fam, &pr, &[0.5, 1.0, 2.0])?;
    let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
    records.push(check_harnack(&b.op, &backend, &sol, &pr, f.field.as_ref(), 1.0, &grid, &grid)?);

    // the Gaussian-payoff hypothesis needs confinement stronger than OU;
    // the quartic family is the catalogue instance that satisfies it.
    let q = benchmarks::by_name("quartic-arctan")?;
    records.push(check_m_delta_lambda(
        &q.op,
        &q.grid_backend(),
        0.5,
        0.5,
        &[0.0, 0.5, 1.0, 2.0],
        &grid,
        q.state_scale,
    )?);
    records.push(check_stability(&sol, &fam, &b.nonlinearity, &pr, 0, &[0.5, 1.0, 1.5, 2.0])?);

    let mut failed = 0;
    for rec in &records {
        show(rec);
        if !rec.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(format!("{failed} audit(s) failed").into());
    }
    Ok(())
}
