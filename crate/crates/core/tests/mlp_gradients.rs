use oodgate::nets::loss::cross_entropy;
use oodgate::nets::MlpModel;
use oodgate::{Matrix, RngStream};

/// Central differences of cross-entropy against backprop on small 2-4-3 nets.
#[test]
fn backward_matches_central_differences() {
    let mut rng = RngStream::new(5, 0);
    let mut checked = 0;
    while checked < 20 {
        let mut m = MlpModel::new(&[2, 4, 3], &mut rng).unwrap();
        for l in m.layers_mut() {
            l.bias = rng.gaussian_vec(l.bias.len());
        }
        let x = Matrix::new(4, 2, rng.gaussian_vec(8)).unwrap();
        let y = vec![0, 1, 2, 1];
        let pre = x.matmul(&m.layers()[0].weights).unwrap();
        if pre.as_slice().chunks(4).any(|r| r.iter().zip(&m.layers()[0].bias).any(|(a, b)| (a + b).abs() < 1e-3)) {
            continue;
        }
        checked += 1;
        let loss = |m: &MlpModel| cross_entropy(&m.forward(&x).unwrap(), &y).unwrap().0;
        let (_, up) = cross_entropy(&m.forward(&x).unwrap(), &y).unwrap();
        let g = m.backward(&x, &up).unwrap();
        let h = 1e-6;
        for li in 0..2 {
            let n = m.layers()[li].weights.as_slice().len();
            for k in 0..n {
                let mut a = m.clone();
                a.layers_mut()[li].weights.as_mut_slice()[k] += h;
                let mut b = m.clone();
                b.layers_mut()[li].weights.as_mut_slice()[k] -= h;
                let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                let an = g.layers[li].weights.as_slice()[k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-4), "layer {li} w{k}: {fd} vs {an}");
            }
        }
    }
}
