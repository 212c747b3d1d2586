#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rls_prune::data::one_hot;
use rls_prune::network::{Activation, LayerTopology, Network, NetworkSpec, SampleShape};
use rls_prune::prune::{
    apply_prune, cut_len, rank, score_p, score_w, select_prune_set, PruneSet, ScoreLayout,
    UnitKind,
};
use rls_prune::rls::update_p;
use rls_prune::tensor::{matmul_tn, Float, Matrix, Tensor};

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// `RLS_PRUNE_MNIST_DIR`, else `data/mnist` under the workspace root.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("RLS_PRUNE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/mnist"));
    dir.join("train-images-idx3-ubyte").is_file().then_some(dir)
}

/// `RLS_PRUNE_CIFAR_DIR`, else `data/cifar10` under the workspace root.
pub fn cifar_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("RLS_PRUNE_CIFAR_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/cifar10"));
    let found = dir.join("data_batch_1.bin").is_file()
        || dir.join("cifar-10-batches-bin/data_batch_1.bin").is_file();
    found.then_some(dir)
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn fc_6_8_4_2() -> NetworkSpec {
    NetworkSpec::fnn(&[6, 8, 4, 2])
}

/// 2×6×6 input, 3 filters of 3×3, 2×2 pooling, fc to 2 outputs.
pub fn conv_2_3_pool_fc() -> NetworkSpec {
    NetworkSpec {
        input: SampleShape::Spatial {
            channels: 2,
            height: 6,
            width: 6,
        },
        layers: vec![
            LayerTopology::Conv {
                in_channels: 2,
                out_channels: 3,
                kernel: (3, 3),
                stride: 1,
                activation: Activation::Relu,
            },
            LayerTopology::MaxPool {
                window: 2,
                stride: 2,
            },
            LayerTopology::Fc {
                in_nodes: 12,
                out_nodes: 2,
                activation: Activation::Linear,
            },
        ],
    }
}

/// Largest relative error between backprop and central differences over
/// every weight on `batches` random minibatches. Pairs where both values are
/// below `1e-8` in magnitude count by their absolute difference instead.
pub fn gradient_check(spec: &NetworkSpec, batch: usize, batches: usize, seed: u64) -> f64 {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for b in 0..batches {
        let mut net = Network::new(spec.clone(), seed + b as u64, None).unwrap();
        let mut shape = vec![batch];
        match spec.input {
            SampleShape::Flat(n) => shape.push(n),
            SampleShape::Spatial {
                channels,
                height,
                width,
            } => shape.extend([channels, height, width]),
        }
        let x = uniform_tensor(&mut rng, shape);
        let classes = spec.num_classes();
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        let y = one_hot(&labels, classes);
        let grads = net.backward(&net.forward(&x).unwrap(), &y).unwrap();
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            for idx in 0..g.len() {
                let w = &mut net.states[i].as_mut().unwrap().weights;
                let orig = w.data()[idx];
                w.data_mut()[idx] = orig + h;
                let lp = net.loss(&x, &y).unwrap();
                net.states[i].as_mut().unwrap().weights.data_mut()[idx] = orig - h;
                let lm = net.loss(&x, &y).unwrap();
                net.states[i].as_mut().unwrap().weights.data_mut()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let a = g.data()[idx];
                let scale = a.abs().max(fd.abs());
                let err = if scale < 1e-8 {
                    (a - fd).abs()
                } else {
                    (a - fd).abs() / scale
                };
                worst = worst.max(err);
            }
        }
    }
    worst
}

/// One random case of the given family. Returns the pruned network's
/// output and the zeroed original's output on the same random input.
pub fn pruning_equivalence_case(family: usize, rng: &mut ChaCha8Rng) -> (Matrix, Matrix, String) {
    let m = rng.gen_range(1..5);
    match family % 4 {
        // fc predecessor
        0 => {
            let widths: Vec<usize> = (0..rng.gen_range(3..6))
                .map(|_| rng.gen_range(2..10))
                .collect();
            let mut net = Network::new(NetworkSpec::fnn(&widths), rng.gen(), Some(1.0)).unwrap();
            randomize_p(&mut net, rng);
            let l = rng.gen_range(1..widths.len() - 1);
            let units = random_subset(rng, widths[l]);
            let x = uniform_tensor(rng, vec![m, widths[0]]);
            let mut zeroed = net.clone();
            let w = &mut zeroed.states[l - 1].as_mut().unwrap().weights;
            zero_columns(w, &units);
            let set = PruneSet {
                layer: l,
                units: units.clone(),
                kind: UnitKind::InputNode,
            };
            apply_prune(&mut net, &set).unwrap();
            net.check_consistency().unwrap();
            (
                net.predict(&x).unwrap(),
                zeroed.predict(&x).unwrap(),
                format!("fc {widths:?} layer {l} units {units:?}"),
            )
        }
        // input features of an fc network
        1 => {
            let widths: Vec<usize> = (0..3).map(|_| rng.gen_range(2..10)).collect();
            let mut net = Network::new(NetworkSpec::fnn(&widths), rng.gen(), Some(1.0)).unwrap();
            randomize_p(&mut net, rng);
            let units = random_subset(rng, widths[0]);
            let x = uniform_tensor(rng, vec![m, widths[0]]);
            let mut x0 = x.clone();
            for r in 0..m {
                for &u in &units {
                    x0.data_mut()[r * widths[0] + u] = 0.0;
                }
            }
            let reference = net.predict(&x0).unwrap();
            let set = PruneSet {
                layer: 0,
                units: units.clone(),
                kind: UnitKind::InputNode,
            };
            apply_prune(&mut net, &set).unwrap();
            net.check_consistency().unwrap();
            let got = net.predict(&net.prepare_input(&x).unwrap()).unwrap();
            (got, reference, format!("input {widths:?} units {units:?}"))
        }
        // conv → conv and conv → fc
        f => {
            let (spec, dims) = random_conv_spec(rng);
            let mut net = Network::new(spec.clone(), rng.gen(), Some(1.0)).unwrap();
            randomize_p(&mut net, rng);
            let x = uniform_tensor(rng, vec![m, dims[0], dims[1], dims[2]]);
            let (layer, producer, channels, kind) = if f == 2 {
                (1, 0, out_channels(&spec, 0), UnitKind::InputChannel)
            } else {
                (2, 1, out_channels(&spec, 1), UnitKind::FlattenedChannel)
            };
            let units = random_subset(rng, channels);
            let mut zeroed = net.clone();
            zero_columns(&mut zeroed.states[producer].as_mut().unwrap().weights, &units);
            let set = PruneSet {
                layer,
                units: units.clone(),
                kind,
            };
            apply_prune(&mut net, &set).unwrap();
            net.check_consistency().unwrap();
            (
                net.predict(&x).unwrap(),
                zeroed.predict(&x).unwrap(),
                format!("{kind:?} {spec:?} units {units:?}"),
            )
        }
    }
}

fn out_channels(spec: &NetworkSpec, position: usize) -> usize {
    match spec.layers[position] {
        LayerTopology::Conv { out_channels, .. } => out_channels,
        _ => unreachable!(),
    }
}

/// conv, conv, pool, fc, fc(linear) with random extents.
fn random_conv_spec(rng: &mut ChaCha8Rng) -> (NetworkSpec, [usize; 3]) {
    let c0 = rng.gen_range(1..4);
    let c1 = rng.gen_range(2..6);
    let c2 = rng.gen_range(2..6);
    let k1 = rng.gen_range(2..4);
    let k2 = rng.gen_range(2..4);
    let pooled = rng.gen_range(1..4);
    let side = 2 * pooled + k1 + k2 - 2;
    let hidden = rng.gen_range(2..7);
    let spec = NetworkSpec {
        input: SampleShape::Spatial {
            channels: c0,
            height: side,
            width: side,
        },
        layers: vec![
            LayerTopology::Conv {
                in_channels: c0,
                out_channels: c1,
                kernel: (k1, k1),
                stride: 1,
                activation: Activation::Relu,
            },
            LayerTopology::Conv {
                in_channels: c1,
                out_channels: c2,
                kernel: (k2, k2),
                stride: 1,
                activation: Activation::Relu,
            },
            LayerTopology::MaxPool {
                window: 2,
                stride: 2,
            },
            LayerTopology::Fc {
                in_nodes: c2 * pooled * pooled,
                out_nodes: hidden,
                activation: Activation::Relu,
            },
            LayerTopology::Fc {
                in_nodes: hidden,
                out_nodes: rng.gen_range(2..5),
                activation: Activation::Linear,
            },
        ],
    };
    (spec, [c0, side, side])
}

/// Non-empty proper subset, ascending.
pub fn random_subset(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let k = rng.gen_range(1..n);
    let mut all: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        all.swap(i, j);
    }
    let mut s = all[..k].to_vec();
    s.sort_unstable();
    s
}

fn zero_columns(w: &mut Matrix, cols: &[usize]) {
    for r in 0..w.rows() {
        for &c in cols {
            w.set(r, c, 0.0);
        }
    }
}

/// Replaces every P with a random symmetric positive definite matrix.
pub fn randomize_p(net: &mut Network, rng: &mut ChaCha8Rng) {
    for s in net.states.iter_mut().flatten() {
        let n = s.weights.rows();
        let b = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut p = matmul_tn(&b, &b).unwrap();
        p.add_scaled(&Matrix::identity(n), 1.0).unwrap();
        s.p = Some(p);
        s.velocity = Matrix::from_fn(s.velocity.rows(), s.velocity.cols(), |_, _| rng.gen());
    }
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Brute-force check of scoring, ranking and selection on one random
/// instance with integer-valued entries (so every sum is exact). Returns a
/// description of the first mismatch.
pub fn scoring_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.gen_range(1..=64);
    let group = [1usize, 4, 9][rng.gen_range(0..3)];
    let extent = n * group;
    let p = Matrix::from_fn(extent, extent, |_, _| rng.gen_range(-4..=4) as Float);
    let layout = if group == 1 {
        ScoreLayout::Fc
    } else {
        ScoreLayout::Conv { kernel_area: group }
    };
    let s_p = score_p(&p, layout, n).map_err(|e| e.to_string())?;
    for c in 0..n {
        let mut acc = 0.0;
        for r in c * group..(c + 1) * group {
            for j in 0..extent {
                acc += p.get(r, j);
            }
        }
        if s_p[c] != acc {
            return Err(format!("s_P[{c}] = {} vs brute force {acc}", s_p[c]));
        }
    }

    let fan_in = rng.gen_range(1..6);
    let prev = Matrix::from_fn(fan_in, n, |_, _| rng.gen_range(-3..=3) as Float);
    let s_w = score_w(&prev);
    for c in 0..n {
        let acc: Float = (0..fan_in).map(|r| prev.get(r, c).abs()).sum();
        if s_w[c] != acc {
            return Err(format!("s_W[{c}] = {} vs brute force {acc}", s_w[c]));
        }
    }

    let (k_p, k_w) = rank(&s_p, Some(&s_w)).map_err(|e| e.to_string())?;
    let k_w = k_w.unwrap();
    let mut by_p: Vec<(i64, usize)> = s_p.iter().enumerate().map(|(i, &v)| (-(v as i64), i)).collect();
    by_p.sort();
    let mut by_w: Vec<(i64, usize)> = s_w.iter().enumerate().map(|(i, &v)| (v as i64, i)).collect();
    by_w.sort();
    if k_p != by_p.iter().map(|x| x.1).collect::<Vec<_>>() {
        return Err("k_P differs from the reference sort".into());
    }
    if k_w != by_w.iter().map(|x| x.1).collect::<Vec<_>>() {
        return Err("k_W differs from the reference sort".into());
    }

    let xi = rng.gen_range(0.05..0.95);
    let cut = (xi * n as f64).floor() as usize;
    let cut_p: BTreeSet<usize> = k_p[..cut].iter().copied().collect();
    let cut_w: BTreeSet<usize> = k_w[..cut].iter().copied().collect();
    let expect: Vec<usize> = cut_p.intersection(&cut_w).copied().collect();
    let set = select_prune_set(&k_p, Some(&k_w), xi, n, 1, UnitKind::InputNode);
    if set.units != expect {
        return Err(format!("selection {:?} vs intersection {expect:?}", set.units));
    }
    if set.units.len() > cut || set.units.len() >= n {
        return Err("cardinality bound violated".into());
    }
    if !set.units.iter().all(|u| cut_p.contains(u) && cut_w.contains(u)) {
        return Err("selection is not a subset of both cuts".into());
    }
    if cut_len(xi, n) != cut {
        return Err("cut length differs from floor(xi*n)".into());
    }

    let first = select_prune_set(&k_p, None, xi, n, 0, UnitKind::InputNode);
    let half = (0.5 * xi * n as f64).floor() as usize;
    let mut expect_first: Vec<usize> = k_p[..half].to_vec();
    expect_first.sort_unstable();
    if first.units != expect_first {
        return Err(format!("input-layer selection {:?} vs {expect_first:?}", first.units));
    }
    Ok(())
}

/// Explicit inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut m = a.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .unwrap();
        for j in 0..n {
            let (x, y) = (m.get(col, j), m.get(pivot, j));
            m.set(col, j, y);
            m.set(pivot, j, x);
            let (x, y) = (inv.get(col, j), inv.get(pivot, j));
            inv.set(col, j, y);
            inv.set(pivot, j, x);
        }
        let d = m.get(col, col);
        for j in 0..n {
            m.set(col, j, m.get(col, j) / d);
            inv.set(col, j, inv.get(col, j) / d);
        }
        for i in 0..n {
            if i != col {
                let f = m.get(i, col);
                for j in 0..n {
                    m.set(i, j, m.get(i, j) - f * m.get(col, j));
                    inv.set(i, j, inv.get(i, j) - f * inv.get(col, j));
                }
            }
        }
    }
    inv
}

/// 200 rank-one updates of `P₀ = I` against the explicitly inverted
/// `A_t = λA_{t−1} + x xᵀ`, `A₀ = I`. Returns the worst relative Frobenius
/// error and the worst asymmetry over the whole trajectory.
pub fn sherman_morrison_run(dim: usize, lambda: Float, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Matrix::identity(dim);
    let mut a = Matrix::identity(dim);
    let (mut worst_rel, mut worst_asym): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let x: Vec<Float> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // k = 1 makes each update an exact rank-one Sherman-Morrison step
        p = update_p(&p, &x, lambda, 1.0, 1e-12).unwrap().0;
        a.scale(lambda);
        let outer = Matrix::from_fn(dim, dim, |i, j| x[i] * x[j]);
        a.add_scaled(&outer, 1.0).unwrap();
        let explicit = invert(&a);
        let mut diff = p.clone();
        diff.add_scaled(&explicit, -1.0).unwrap();
        worst_rel = worst_rel.max(diff.frobenius_norm() / explicit.frobenius_norm());
        worst_asym = worst_asym.max(p.max_asymmetry());
    }
    (worst_rel, worst_asym)
}
