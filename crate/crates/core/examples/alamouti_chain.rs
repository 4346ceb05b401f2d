//! Differential Alamouti walkthrough: accumulate codewords into a running
//! chain and decode each one from two consecutive received blocks, never
//! estimating the channel.

use cfdiff::diffcoding::{
    diff_encode_step, dstbc_ml_decode_fast, stbc_map, PskConstellation, StbcDesign,
};
use cfdiff::math::{CMat, C64, RandomStream, StreamId};

fn main() -> cfdiff::error::Result<()> {
    let design = StbcDesign::alamouti();
    let cons = PskConstellation::new(8);
    let mut rng = RandomStream::new(7, StreamId { setup: 0, block: 0, sub: 0 });

    // a channel the receiver never learns: one complex gain per codeword row
    let v: Vec<C64> = (0..design.p).map(|_| rng.complex_gaussian(1.0)).collect();
    let receive = |c: &CMat| -> Vec<C64> {
        (0..design.p)
            .map(|col| (0..design.p).map(|r| v[r] * c[(r, col)]).sum())
            .collect()
    };

    let total = 200;
    let mut correct = 0;
    let mut state = CMat::identity(design.p);
    for _ in 0..total {
        let sent: Vec<usize> = (0..design.ns).map(|_| rng.index(cons.order())).collect();
        let syms: Vec<C64> = sent.iter().map(|&i| cons.points[i]).collect();
        let next = diff_encode_step(&state, &stbc_map(&design, &syms)?)?;
        let decoded = dstbc_ml_decode_fast(&receive(&state), &receive(&next), &design, &cons)?;
        if decoded == sent {
            correct += 1;
        }
        state = next;
    }
    println!("{correct}/{total} codewords recovered without channel knowledge");

    let eye = CMat::identity(design.p);
    let drift = state.herm().matmul(&state).sub(&eye).frob_norm();
    println!("unitarity drift after {total} accumulation steps: {drift:.2e}");
    Ok(())
}
