use acnet_tensor::gradcheck::{self, GradCheckConfig};
use acnet_tensor::ops::conv;
use acnet_tensor::{BnConfig, BnMode, ConvGeom, Graph, PoolKind, Result, RunningStats, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

/// Contracts `out` with a fixed random tensor so every output element carries
/// a distinct weight in the scalar root.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let shape = g.value(out).shape().to_vec();
    let r = g.constant(rand_tensor(&mut rng, &shape));
    let m = g.mul(out, r)?;
    g.sum(m)
}

fn assert_passes(name: &str, report: gradcheck::GradCheckReport) {
    assert!(
        report.passed(),
        "{name}: max rel {:.3e}, max abs {:.3e}, {:?}",
        report.max_rel_err(),
        report.max_abs_err(),
        report.inputs
    );
}

#[test]
fn elementwise_binary_with_broadcast() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[2, 3, 3, 2]);
        let b = rand_tensor(&mut rng, &[1, 3, 1, 1]);
        for op in 0..3 {
            let rep = gradcheck::check(&[a.clone(), b.clone()], GradCheckConfig::default(), |g, v| {
                let y = match op {
                    0 => g.add(v[0], v[1])?,
                    1 => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                project(g, y, seed)
            })
            .unwrap();
            assert_passes(&format!("binary op {op} seed {seed}"), rep);
        }
    }
}

#[test]
fn elementwise_unary() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(&mut rng, &[2, 2, 3, 3]);
        for op in 0..3 {
            let rep = gradcheck::check(&[a.clone()], GradCheckConfig::default(), |g, v| {
                let y = match op {
                    0 => g.relu(v[0])?,
                    1 => g.sigmoid(v[0])?,
                    _ => g.scale(v[0], -1.7)?,
                };
                project(g, y, seed)
            })
            .unwrap();
            assert_passes(&format!("unary op {op} seed {seed}"), rep);
        }
    }
}

#[test]
fn conv2d_gradients_over_geometries() {
    let geoms = [(3, ConvGeom::new(1, 1)), (3, ConvGeom::new(2, 1)), (1, ConvGeom::new(1, 0)), (2, ConvGeom::new(2, 0))];
    for seed in SEEDS {
        let (k, geom) = geoms[seed as usize % geoms.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 3, 5, 4]);
        let w = rand_tensor(&mut rng, &[2, 3, k, k]);
        let b = rand_tensor(&mut rng, &[2]);
        let rep = gradcheck::check(&[x, w, b], GradCheckConfig::default(), |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), geom)?;
            project(g, y, seed)
        })
        .unwrap();
        assert_passes(&format!("conv2d seed {seed}"), rep);
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let geoms = [(2, ConvGeom::new(2, 0)), (3, ConvGeom::new(2, 1)), (3, ConvGeom::new(1, 1)), (1, ConvGeom::new(1, 0))];
    for seed in SEEDS {
        let (k, geom) = geoms[seed as usize % geoms.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 3, 3, 4]);
        let w = rand_tensor(&mut rng, &[3, 2, k, k]);
        let b = rand_tensor(&mut rng, &[2]);
        let rep = gradcheck::check(&[x, w, b], GradCheckConfig::default(), |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), geom)?;
            project(g, y, seed)
        })
        .unwrap();
        assert_passes(&format!("conv_transpose2d seed {seed}"), rep);
    }
}

#[test]
fn batch_norm_train_and_eval_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 3, 3, 3]);
        let gamma = rand_tensor(&mut rng, &[3]);
        let beta = rand_tensor(&mut rng, &[3]);
        for mode in [BnMode::Train, BnMode::Eval] {
            let rep = gradcheck::check(&[x.clone(), gamma.clone(), beta.clone()], GradCheckConfig::default(), |g, v| {
                let mut stats = RunningStats::new(3);
                stats.tracked = 1;
                stats.mean = vec![0.1, -0.2, 0.3];
                stats.var = vec![0.5, 1.5, 2.0];
                let y = g.batch_norm2d(v[0], v[1], v[2], &mut stats, mode, BnConfig::default())?;
                project(g, y, seed)
            })
            .unwrap();
            assert_passes(&format!("batch_norm {mode:?} seed {seed}"), rep);
        }
    }
}

#[test]
fn pooling_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[2, 2, 5, 6]);
        for kind in [PoolKind::Max3x3S2, PoolKind::GlobalAvg] {
            let rep = gradcheck::check(&[x.clone()], GradCheckConfig::default(), |g, v| {
                let y = g.pool(kind, v[0])?;
                project(g, y, seed)
            })
            .unwrap();
            assert_passes(&format!("pool {kind:?} seed {seed}"), rep);
        }
    }
}

#[test]
fn two_layer_conv_bn_relu_network() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let inputs = vec![
            rand_tensor(&mut rng, &[2, 2, 6, 6]),
            rand_tensor(&mut rng, &[3, 2, 3, 3]),
            rand_tensor(&mut rng, &[3]),
            rand_tensor(&mut rng, &[3]),
            rand_tensor(&mut rng, &[2, 3, 3, 3]),
            rand_tensor(&mut rng, &[2]),
            rand_tensor(&mut rng, &[2]),
        ];
        let rep = gradcheck::check(&inputs, GradCheckConfig::default(), |g, v| {
            let mut s1 = RunningStats::new(3);
            let mut s2 = RunningStats::new(2);
            let h = g.conv2d(v[0], v[1], None, ConvGeom::new(1, 1))?;
            let h = g.batch_norm2d(h, v[2], v[3], &mut s1, BnMode::Train, BnConfig::default())?;
            let h = g.relu(h)?;
            let h = g.conv2d(h, v[4], None, ConvGeom::new(2, 1))?;
            let h = g.batch_norm2d(h, v[5], v[6], &mut s2, BnMode::Train, BnConfig::default())?;
            let h = g.relu(h)?;
            project(g, h, seed)
        })
        .unwrap();
        assert_passes(&format!("conv-bn-relu seed {seed}"), rep);
    }
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let cases = [
        (5, 5, 3, ConvGeom::new(1, 1)),
        (7, 5, 3, ConvGeom::new(2, 1)),
        (8, 8, 2, ConvGeom::new(2, 0)),
        (6, 3, 1, ConvGeom::new(1, 0)),
        (9, 9, 7, ConvGeom::new(2, 3)),
    ];
    // Every case satisfies (extent + 2p − k) % stride == 0, so the transposed
    // output recovers the conv input extent exactly.
    for (seed, (h, w, k, geom)) in cases.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let x = rand_tensor(&mut rng, &[2, 3, h, w]);
        let wt = rand_tensor(&mut rng, &[4, 3, k, k]);
        let y_shape = conv::conv2d(&x, &wt, None, geom).unwrap().shape().to_vec();
        let y = rand_tensor(&mut rng, &y_shape);
        // ⟨conv(x), y⟩ with a conv2d weight Cout×Cin reused as Cin'×Cout' = 4×3.
        let lhs = dot(&conv::conv2d(&x, &wt, None, geom).unwrap(), &y);
        let back = conv::conv_transpose2d(&y, &wt, None, geom).unwrap();
        assert_eq!(back.shape(), x.shape());
        let rhs = dot(&x, &back);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        assert!(rel < 1e-6, "case {seed}: {lhs} vs {rhs}");
    }
}
