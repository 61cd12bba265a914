//! Ad-hoc wall-clock probe for the expensive pipeline stages. Not part of
//! the test suite; run manually when re-budgeting the acceptance runtimes.

use psnn::evaluate::{gray_scott_field, kernel_check};
use psnn::system::AxisBox;

fn main() {
    let domain = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let omega = AxisBox::new(vec![0.0, 0.0], vec![0.3, 0.08]).unwrap();
    let field = gray_scott_field(&domain);
    let start = std::time::Instant::now();
    let report = kernel_check(
        &field,
        &domain,
        &[61, 61],
        &omega,
        &[41, 41],
        &[1, 2, 4, 8, 16],
    )
    .unwrap();
    println!("kernel check {:.1}s", start.elapsed().as_secs_f64());
    println!("rank {} decay {:?}", report.rank, report.decay_exponent);
    for t in &report.truncations {
        println!(
            "N={} err_sq={:.6e} tail={:.6e} gap={:.2e}",
            t.n,
            t.err_sq,
            t.tail,
            t.relative_gap()
        );
    }
}
