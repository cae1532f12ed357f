use overload_core::attack::{loss, AttackConfig, LossKind};
use overload_core::detector::{backward_input, forward, init_weights, DetectorTensor, ImageTensor, ANCHORS};
use overload_core::geometry::sigmoid;
use overload_core::rng::SplitMix64;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_output(w: &overload_core::detector::ModelWeights, x: &ImageTensor, u: &[f64]) -> f64 {
    dot(&forward(w, x).unwrap().data, u)
}

#[test]
fn detector_input_gradient_matches_central_differences() {
    let h = 1e-5;
    for seed in 0..5u64 {
        let w = init_weights(seed);
        let x = ImageTensor::noise(64, 64, 3, 100 + seed);
        let out = forward(&w, &x).unwrap();
        let mut rng = SplitMix64::new(seed ^ 0xABCD);
        let u: Vec<f64> = (0..out.data.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let grad = backward_input(&w, &x, &u).unwrap();

        for _ in 0..20 {
            let i = rng.below(x.data.len() as u64) as usize;
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.data[i] += h;
            minus.data[i] -= h;
            let fd = (projected_output(&w, &plus, &u) - projected_output(&w, &minus, &u)) / (2.0 * h);
            let err = (fd - grad[i]).abs();
            assert!(
                err <= 1e-4 * fd.abs().max(grad[i].abs()).max(1e-3),
                "seed {seed} pixel {i}: analytic {} numeric {fd}",
                grad[i]
            );
        }
    }
}

fn random_head(rng: &mut SplitMix64, slots: usize, k: usize) -> DetectorTensor {
    let cols = 5 + k;
    let data = (0..slots * cols).map(|_| rng.uniform(-3.0, 3.0)).collect();
    DetectorTensor { grid_h: 1, grid_w: slots / ANCHORS.len(), anchors: ANCHORS.to_vec(), num_classes: k, stride: 8, data }
}

/// Keeps the perturbed logits away from the `c * p == t_conf` switch.
fn near_switch(t: &DetectorTensor, cfg: &AttackConfig, margin: f64) -> bool {
    (0..t.rows()).any(|r| {
        let row = t.row(r);
        let c = sigmoid(row[4]);
        row[5..].iter().any(|&l| (c * sigmoid(l) - cfg.t_conf).abs() < margin)
    })
}

#[test]
fn loss_gradient_matches_central_differences() {
    let h = 1e-6;
    for kind in LossKind::ALL {
        let cfg = AttackConfig { loss: kind, ..AttackConfig::default() };
        let mut rng = SplitMix64::new(7);
        let mut checked = 0;
        while checked < 5 {
            let t = random_head(&mut rng, 6, 4);
            if near_switch(&t, &cfg, 1e-3) {
                continue;
            }
            checked += 1;
            let (_, grad) = loss(&t, &cfg);
            for i in 0..t.data.len() {
                let mut plus = t.clone();
                let mut minus = t.clone();
                plus.data[i] += h;
                minus.data[i] -= h;
                let fd = (loss(&plus, &cfg).0 - loss(&minus, &cfg).0) / (2.0 * h);
                let err = (fd - grad[i]).abs();
                assert!(
                    err <= 1e-6 * fd.abs().max(1.0),
                    "{} entry {i}: analytic {} numeric {fd}",
                    kind.name(),
                    grad[i]
                );
            }
        }
    }
}

#[test]
fn box_logits_do_not_receive_gradient() {
    let mut rng = SplitMix64::new(3);
    let t = random_head(&mut rng, 3, 4);
    let (_, grad) = loss(&t, &AttackConfig::default());
    for r in 0..t.rows() {
        assert!(grad[r * t.cols()..r * t.cols() + 4].iter().all(|&g| g == 0.0));
    }
}
