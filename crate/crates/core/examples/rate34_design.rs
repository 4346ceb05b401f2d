//! The four-antenna orthogonal design: three symbols per four-sample
//! codeword (rate 3/4). Prints the codeword layout for one symbol triple
//! and checks that every filled codeword is unitary.

use cfdiff::diffcoding::{stbc_map, PskConstellation, StbcDesign};
use cfdiff::math::{CMat, RandomStream, StreamId};

fn main() -> cfdiff::error::Result<()> {
    let design = StbcDesign::rate34();
    println!(
        "{} symbols over {} samples, rate {}",
        design.ns,
        design.p,
        design.rate()
    );

    let cons = PskConstellation::new(8);
    let syms = [cons.points[1], cons.points[4], cons.points[6]];
    let x = stbc_map(&design, &syms)?;
    println!("codeword for symbol indices [1, 4, 6]:");
    for r in 0..x.rows() {
        let row: Vec<String> = (0..x.cols())
            .map(|c| format!("{:+.3}{:+.3}i", x[(r, c)].re, x[(r, c)].im))
            .collect();
        println!("  [{}]", row.join("  "));
    }

    let mut rng = RandomStream::new(3, StreamId { setup: 0, block: 0, sub: 0 });
    let eye = CMat::identity(design.p);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let syms: Vec<_> = (0..design.ns).map(|_| cons.points[rng.index(8)]).collect();
        let x = stbc_map(&design, &syms)?;
        worst = worst.max(x.herm().matmul(&x).sub(&eye).frob_norm());
    }
    println!("worst orthogonality deviation over 1000 random fills: {worst:.2e}");
    Ok(())
}
