//! Runs the finite-difference gradient suite, then runs it again with a
//! corrupted conv2d backward pass to show that the suite catches it.
//!
//!     cargo run --example gradient_check -- small

use adar::gradsuite::{run_suite, Scale};
use adar::tensor::Fault;

fn main() -> adar::Result<()> {
    let scale: Scale = std::env::args().nth(1).as_deref().unwrap_or("micro").parse()?;
    let report = run_suite(scale, None)?;
    for o in &report.outcomes {
        println!("{}", o.line());
    }
    println!("{} checks, {} failed, {:.1}s", report.outcomes.len(), report.failures().len(), report.seconds);

    let broken = run_suite(Scale::Micro, Some(Fault::Conv2dBackward))?;
    println!("\nwith a faulty conv2d backward:");
    for o in broken.failures().iter().take(5) {
        println!("{}", o.line());
    }
    println!("{} of {} checks fail", broken.failures().len(), broken.outcomes.len());
    Ok(())
}
