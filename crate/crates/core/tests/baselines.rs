mod common;

use common::{gaussian, sign, spd};
use splus_core::optim::{ScalingMode, ShampooLayer};
use splus_core::{
    kron, sym_power, Adam, AdamConfig, CounterRng, Matrix, Optimizer, ParamMap, SPlusConfig, SPlusState, Sgd,
    SgdConfig, Shampoo, ShampooConfig, SignSgd, SignSgdConfig, Tensor,
};

fn single(t: Tensor<f64>) -> ParamMap<f64> {
    ParamMap::from([("w".to_string(), t)])
}

/// Adam written out on flat vectors with no shared code, as an oracle.
struct ReferenceAdam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    wd: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl ReferenceAdam {
    fn step(&mut self, x: &mut [f64], g: &[f64]) {
        self.t += 1;
        for i in 0..x.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - self.b1.powi(self.t));
            let vh = self.v[i] / (1.0 - self.b2.powi(self.t));
            x[i] -= self.lr * (mh / (vh.sqrt() + self.eps) + self.wd * x[i]);
        }
    }
}

#[test]
fn adam_matches_reference_on_random_quadratic() {
    let mut rng = CounterRng::new(30, "adam-ref");
    let d = 6;
    let a = spd(d, &mut rng);
    let target: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let x0: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let grad =
        |x: &[f64]| -> Vec<f64> { (0..d).map(|i| (0..d).map(|j| a[(i, j)] * (x[j] - target[j])).sum()).collect() };
    let config = AdamConfig { learning_rate: 0.05, weight_decay: 0.01, ..Default::default() };
    let mut reference =
        ReferenceAdam { lr: 0.05, b1: 0.9, b2: 0.999, eps: 1e-8, wd: 0.01, m: vec![0.0; d], v: vec![0.0; d], t: 0 };
    let mut params = single(Tensor::vector(x0.clone()));
    let mut adam = Adam::new(&params, config);
    let mut x = x0;
    for _ in 0..100 {
        let g = grad(&x);
        reference.step(&mut x, &g);
        let g2 = grad(params["w"].as_slice());
        adam.step(&mut params, &single(Tensor::vector(g2))).unwrap();
        for (p, r) in params["w"].as_slice().iter().zip(&x) {
            assert!((p - r).abs() <= 1e-12, "{p} vs {r}");
        }
    }
}

#[test]
fn adam_first_step_moves_every_element_by_lr() {
    let mut rng = CounterRng::new(31, "adam-1");
    let g = gaussian(5, 4, &mut rng);
    let mut params = single(Tensor::zeros(&[5, 4]));
    let mut adam = Adam::new(&params, AdamConfig { learning_rate: 0.01, eps: 1e-16, ..Default::default() });
    adam.step(&mut params, &single(Tensor::from(g.clone()))).unwrap();
    for (p, gi) in params["w"].as_slice().iter().zip(g.as_slice()) {
        assert!((p + 0.01 * sign(*gi)).abs() < 1e-12);
    }
}

#[test]
fn adam_zero_gradient_only_decays() {
    let mut params = single(Tensor::vector(vec![1.0, -2.0]));
    let mut adam = Adam::new(&params, AdamConfig { learning_rate: 0.1, weight_decay: 0.5, ..Default::default() });
    adam.step(&mut params, &single(Tensor::vector(vec![0.0, 0.0]))).unwrap();
    assert_eq!(params["w"].as_slice(), &[0.95, -1.9]);
}

#[test]
fn sgd_quadratic_oscillates_at_lr_one_past_newton() {
    // f = theta^2 / 2 with lr = 2 flips the sign each step: theta <- (1 - lr) theta.
    let mut params = single(Tensor::vector(vec![3.0]));
    let mut sgd = Sgd::new(&params, SgdConfig { learning_rate: 2.0, ..Default::default() });
    for k in 1..=6 {
        let g = params["w"].clone();
        sgd.step(&mut params, &single(g)).unwrap();
        assert_eq!(params["w"].as_slice()[0], 3.0 * (-1f64).powi(k));
    }
    let mut params = single(Tensor::vector(vec![3.0]));
    let mut sgd = Sgd::new(&params, SgdConfig { learning_rate: 1.0, ..Default::default() });
    let g = params["w"].clone();
    sgd.step(&mut params, &single(g)).unwrap();
    assert_eq!(params["w"].as_slice()[0], 0.0);
}

#[test]
fn signsgd_equals_splus_in_identity_basis_without_scaling() {
    let mut rng = CounterRng::new(32, "sign-eq");
    let init = gaussian(4, 3, &mut rng);
    let lr = 0.01;
    let mut a = single(Tensor::from(init.clone()));
    let mut b = a.clone();
    let mut sign_opt = SignSgd::new(&a, SignSgdConfig { learning_rate: lr, ..Default::default() });
    let mut splus = SPlusState::init(
        &b,
        SPlusConfig {
            learning_rate: lr,
            scaling_mode: ScalingMode::None,
            weight_decay: 0.0,
            warmup_steps: 0,
            inverse_every: 1_000_000,
            ..Default::default()
        },
    )
    .unwrap();
    for _ in 0..50 {
        let g = single(Tensor::from(gaussian(4, 3, &mut rng)));
        sign_opt.step(&mut a, &g).unwrap();
        splus.step(&mut b, &g).unwrap();
        assert_eq!(a, b);
    }
}

fn shampoo_with(l: Matrix<f64>, r: Matrix<f64>, momentum: Matrix<f64>) -> Shampoo<f64> {
    let (m, n) = momentum.shape();
    let params = single(Tensor::zeros(&[m, n]));
    let mut s = Shampoo::new(&params, ShampooConfig { eps_clamp: 0.0, ..Default::default() }).unwrap();
    s.layers.insert(
        "w".into(),
        ShampooLayer::Standard {
            l: Some(l),
            r: Some(r),
            l_inv_sqrt: Some(Matrix::identity(m)),
            r_inv_sqrt: Some(Matrix::identity(n)),
            momentum,
        },
    );
    s.refresh_inverses().unwrap();
    s
}

#[test]
fn shampoo_matches_full_kronecker_inverse() {
    let mut rng = CounterRng::new(33, "shampoo-kron");
    for _ in 0..100 {
        let (m, n) = (1 + rng.below(4) as usize, 1 + rng.below(4) as usize);
        let (l, r) = (spd(m, &mut rng), spd(n, &mut rng));
        let mom = gaussian(m, n, &mut rng);
        let s = shampoo_with(l.clone(), r.clone(), mom.clone());
        let u = s.compute_update("w").unwrap().to_matrix().unwrap();
        let full = sym_power(&kron(&l, &r).unwrap(), -0.5, 0.0).unwrap();
        let oracle = full.matmul(&mom.vec_r()).unwrap();
        assert!(u.vec_r().sub(&oracle).unwrap().frobenius() <= 1e-8);
    }
}

#[test]
fn shampoo_update_scales_inversely_with_gradient_scale() {
    // L, R pick up c^2, each inverse root 1/c, momentum c: U(c g) = U(g) / c.
    let mut rng = CounterRng::new(34, "shampoo-scale");
    let tape: Vec<Matrix<f64>> = (0..40).map(|_| gaussian(4, 3, &mut rng)).collect();
    let run = |c: f64| -> Vec<Matrix<f64>> {
        let mut params = single(Tensor::zeros(&[4, 3]));
        let mut s = Shampoo::new(&params, ShampooConfig { inverse_every: 1, ..Default::default() }).unwrap();
        tape.iter()
            .map(|g| {
                s.step(&mut params, &single(Tensor::from(g.scale(c)))).unwrap();
                s.compute_update("w").unwrap().to_matrix().unwrap()
            })
            .collect()
    };
    let base = run(1.0);
    for c in [0.01, 100.0] {
        for (a, b) in base.iter().zip(run(c)) {
            assert!(b.scale(c).sub(a).unwrap().frobenius() <= 1e-9 * a.frobenius());
        }
    }
}

#[test]
fn shampoo_caches_refresh_only_on_cadence() {
    let mut rng = CounterRng::new(35, "shampoo-cadence");
    let mut params = single(Tensor::zeros(&[3, 2]));
    let mut s = Shampoo::new(&params, ShampooConfig { inverse_every: 4, ..Default::default() }).unwrap();
    let cache = |s: &Shampoo<f64>| match &s.layers["w"] {
        ShampooLayer::Standard { l_inv_sqrt, .. } => l_inv_sqrt.clone(),
        ShampooLayer::Nonstandard { .. } => unreachable!(),
    };
    let mut last = cache(&s);
    for n in 1..=12u64 {
        s.step(&mut params, &single(Tensor::from(gaussian(3, 2, &mut rng)))).unwrap();
        let now = cache(&s);
        assert_eq!(now != last, n % 4 == 0, "step {n}");
        last = now;
    }
}

#[test]
fn every_baseline_reports_divergence() {
    let params = single(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
    let huge = single(Tensor::new(vec![1, 1], vec![f64::INFINITY]).unwrap());
    let mut opts: Vec<Box<dyn Optimizer<f64>>> = vec![
        Box::new(Sgd::new(&params, SgdConfig::default())),
        Box::new(Adam::new(&params, AdamConfig::default())),
        Box::new(Shampoo::new(&params, ShampooConfig::default()).unwrap()),
    ];
    for opt in opts.iter_mut() {
        let mut p = params.clone();
        let err = opt.step(&mut p, &huge).unwrap_err();
        assert!(matches!(err, splus_core::Error::Divergence { step: 1, .. }), "{}: {err}", opt.name());
    }
}
