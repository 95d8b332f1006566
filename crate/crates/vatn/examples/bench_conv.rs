use vatn::kernels::{conv3d, conv3d_backward_input, conv3d_backward_weight, Conv3dSpec};
use vatn::tensor::Tensor;
use std::time::Instant;

fn main() {
    // stem-like conv: 8->8 channels at 64^3, k=3, pad 1
    let x = Tensor::<f32>::from_fn(vec![1, 8, 64, 64, 64], |i| (i[4] as f32 * 0.01).sin());
    let w = Tensor::<f32>::from_fn(vec![8, 8, 3, 3, 3], |i| (i[0] as f32 * 0.1).cos() * 0.1);
    let spec = Conv3dSpec { stride: [1,1,1], padding: [1,1,1], groups: 1 };
    let t0 = Instant::now();
    let y = conv3d(&x, &w, None, &spec);
    let fwd = t0.elapsed();
    let t1 = Instant::now();
    let _dx = conv3d_backward_input(&y, &w, x.shape(), &spec);
    let bwd_x = t1.elapsed();
    let t2 = Instant::now();
    let _dw = conv3d_backward_weight(&y, &x, w.shape(), &spec);
    let bwd_w = t2.elapsed();
    let macs = 64f64.powi(3) * 8.0 * 8.0 * 27.0;
    println!("8->8 @64^3: fwd {:?} ({:.2} GMAC/s), bwd_x {:?}, bwd_w {:?}",
             fwd, macs / fwd.as_secs_f64() / 1e9, bwd_x, bwd_w);

    // grouped conv at 32^3: 16ch groups 4
    let x2 = Tensor::<f32>::from_fn(vec![2, 16, 32, 32, 32], |i| (i[4] as f32 * 0.01).sin());
    let w2 = Tensor::<f32>::from_fn(vec![16, 4, 3, 3, 3], |i| (i[0] as f32 * 0.1).cos() * 0.1);
    let spec2 = Conv3dSpec { stride: [1,1,1], padding: [1,1,1], groups: 4 };
    let t3 = Instant::now();
    let _y2 = conv3d(&x2, &w2, None, &spec2);
    println!("grouped 16ch g4 @32^3 b2: fwd {:?}", t3.elapsed());

    // 1->8 at 96^3 (inference stem)
    let x3 = Tensor::<f32>::from_fn(vec![1, 1, 96, 96, 96], |i| (i[4] as f32 * 0.01).sin());
    let w3 = Tensor::<f32>::from_fn(vec![8, 1, 3, 3, 3], |_| 0.1);
    let t4 = Instant::now();
    let y3 = conv3d(&x3, &w3, None, &spec);
    let fwd3 = t4.elapsed();
    let x4 = y3;
    let w4 = Tensor::<f32>::from_fn(vec![8, 8, 3, 3, 3], |_| 0.05);
    let t5 = Instant::now();
    let _y4 = conv3d(&x4, &w4, None, &spec);
    println!("stem @96^3: conv1 {:?}, conv2 {:?}", fwd3, t5.elapsed());
}
