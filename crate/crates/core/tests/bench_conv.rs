//! Manual throughput probe (run with --ignored --nocapture).

use std::time::Instant;
use stylelab_core::nn::{Conv3x3, Tensor};

#[test]
#[ignore]
fn conv_throughput() {
    let mut rng = stylelab_core::rng::stream(1, "bench");
    for (ci, co, h, w) in [(4usize, 8usize, 128usize, 128usize), (8, 16, 64, 64), (16, 32, 128, 128), (1, 8, 128, 128)] {
        let mut conv = Conv3x3::new(ci, co, &mut rng);
        let x = Tensor::from_vec(ci, h, w, (0..ci * h * w).map(|v| (v as f32 * 0.01).sin()).collect());
        let reps = 50;
        let t0 = Instant::now();
        let mut sink = 0f32;
        for _ in 0..reps {
            let y = conv.forward(&x);
            sink += y.data[0];
        }
        let fwd = t0.elapsed().as_secs_f64() / reps as f64;
        let y = conv.forward(&x);
        let t0 = Instant::now();
        for _ in 0..reps {
            let dx = conv.backward(&y);
            sink += dx.data[0];
        }
        let bwd = t0.elapsed().as_secs_f64() / reps as f64;
        let macs = (ci * co * 9 * h * w) as f64;
        println!(
            "conv {ci}->{co} @{h}x{w}: fwd {:.3} ms ({:.2} GFLOP/s), bwd {:.3} ms ({:.2} GFLOP/s) [{sink}]",
            fwd * 1e3,
            2.0 * macs / fwd / 1e9,
            bwd * 1e3,
            2.0 * 2.0 * macs / bwd / 1e9
        );
    }
}
