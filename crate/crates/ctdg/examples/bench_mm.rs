use ctdg::autodiff::tensor::{Tensor, matmul_acc, matmul_nt_acc, matmul_tn_acc};
use std::time::Instant;
fn bench(name: &str, m: usize, k: usize, n: usize, reps: usize, which: u8) {
    let a = Tensor::from_vec(if which==2 {k} else {m}, if which==2 {m} else {k}, (0..m*k).map(|i| (i as f64).sin()).collect());
    let b = Tensor::from_vec(if which==1 {n} else {k}, if which==1 {k} else {n}, (0..k*n).map(|i| (i as f64).cos()).collect());
    let mut out = Tensor::zeros(m, n);
    let t0 = Instant::now();
    for _ in 0..reps {
        match which {
            0 => matmul_acc(a.data(), b.data(), m, k, n, out.data_mut()),
            1 => matmul_nt_acc(a.data(), b.data(), m, k, n, out.data_mut()),
            _ => matmul_tn_acc(a.data(), b.data(), m, k, n, out.data_mut()),
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    let gf = (2.0 * (m*k*n*reps) as f64) / dt / 1e9;
    println!("{name}: {m}x{k}x{n} x{reps}: {:.3}s  {:.2} Gflop/s  (sink {})", dt, gf, out.data()[0]);
}
fn main() {
    // transformer shapes at acceptance scale: n=66 tokens, 4d=128, ffn 512
    bench("nn ffn1", 66, 128, 512, 4000, 0);
    bench("nn ffn2", 66, 512, 128, 4000, 0);
    bench("nn qkv ", 66, 128, 64, 20000, 0);
    bench("nt bwd ", 66, 512, 128, 4000, 1);
    bench("tn bwd ", 128, 66, 512, 4000, 2);
    bench("nn big ", 512, 512, 512, 200, 0);
}
