use hmamba::corpus::ScoreScaler;
use hmamba::losses::LossConfig;
use hmamba::model::HMambaModel;
use hmamba::numerics::{concat, ConvMode, DiffTensor, Tape, Tensor};
use hmamba::rng::substream;
use hmamba::ssm::selective_scan;
use hmamba::trainer::{utterance_loss, BatchCounts, Example};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Op = for<'t> fn(&[DiffTensor<'t>]) -> DiffTensor<'t>;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Reduces the op output with fixed random weights so every output entry
/// contributes differently, then compares every input partial derivative
/// against a central difference.
pub fn check(name: &str, op: Op, inputs: &[Tensor]) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe = {
        let tape = Tape::new();
        let xs: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        op(&xs).value()
    };
    let weights = random(&mut rng, probe.shape(), -1.0, 1.0);
    let eval = |xs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vs: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        op(&vs).value().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.var(x.clone())).collect();
    let out = op(&vars).mul(tape.constant(weights.clone())).unwrap().sum();
    tape.backward(out).unwrap();

    let h = 1e-6;
    for (k, x) in inputs.iter().enumerate() {
        let grad = vars[k].grad().unwrap();
        for i in 0..x.numel() {
            let mut shifted = inputs.to_vec();
            let mut plus = x.to_vec();
            plus[i] += h;
            shifted[k] = Tensor::new(x.shape().to_vec(), plus).unwrap();
            let fp = eval(&shifted);
            let mut minus = x.to_vec();
            minus[i] -= h;
            shifted[k] = Tensor::new(x.shape().to_vec(), minus).unwrap();
            let fm = eval(&shifted);
            let fd = (fp - fm) / (2.0 * h);
            let an = grad.data()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-7);
            assert!(rel < 1e-4, "{name}: input {k}[{i}] analytic {an:e} numeric {fd:e}");
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(5)
}

pub fn elementwise_ops() {
    let mut r = rng();
    let x = random(&mut r, &[3, 4], -2.0, 2.0);
    let pos = random(&mut r, &[3, 4], 0.2, 3.0);
    check("exp", |v| v[0].exp(), &[x.clone()]);
    check("log", |v| v[0].log(), &[pos.clone()]);
    check("powf", |v| v[0].powf(1.7), &[pos.clone()]);
    check("square", |v| v[0].square(), &[x.clone()]);
    check("sigmoid", |v| v[0].sigmoid(), &[x.clone()]);
    check("silu", |v| v[0].silu(), &[x.clone()]);
    check("softplus", |v| v[0].softplus(), &[x.clone()]);
    check("tanh", |v| v[0].tanh(), &[x.clone()]);
    check("neg", |v| v[0].neg(), &[x.clone()]);
    check("scale", |v| v[0].scale(-0.3), &[x.clone()]);
    check("add_scalar", |v| v[0].add_scalar(4.0), &[x.clone()]);
    check("clamp_min", |v| v[0].clamp_min(-10.0), &[x]);
}

pub fn binary_and_broadcast_ops() {
    let mut r = rng();
    let a = random(&mut r, &[3, 4], -1.0, 1.0);
    let b = random(&mut r, &[3, 4], -1.0, 1.0);
    let row = random(&mut r, &[4], -1.0, 1.0);
    let col = random(&mut r, &[3, 1], -1.0, 1.0);
    check("add", |v| v[0].add(v[1]).unwrap(), &[a.clone(), b.clone()]);
    check("sub", |v| v[0].sub(v[1]).unwrap(), &[a.clone(), b.clone()]);
    check("mul", |v| v[0].mul(v[1]).unwrap(), &[a.clone(), b.clone()]);
    check("mul row", |v| v[0].mul(v[1]).unwrap(), &[a.clone(), row.clone()]);
    check("add col", |v| v[0].add(v[1]).unwrap(), &[a.clone(), col]);
    check("broadcast_to", |v| v[0].broadcast_to(&[3, 4]).unwrap(), &[row]);
    let m = random(&mut r, &[4, 2], -1.0, 1.0);
    check("matmul", |v| v[0].matmul(v[1]).unwrap(), &[a, m]);
}

pub fn shape_and_reduction_ops() {
    let mut r = rng();
    let x = random(&mut r, &[4, 3], -1.0, 1.0);
    let y = random(&mut r, &[2, 3], -1.0, 1.0);
    check("reshape", |v| v[0].reshape(&[2, 6]).unwrap(), &[x.clone()]);
    check("transpose", |v| v[0].transpose().unwrap(), &[x.clone()]);
    check("flip_sequence", |v| v[0].flip_sequence().unwrap(), &[x.clone()]);
    check("slice rows", |v| v[0].slice(0, 1, 3).unwrap(), &[x.clone()]);
    check("slice cols", |v| v[0].slice(1, 1, 2).unwrap(), &[x.clone()]);
    check("sum", |v| v[0].sum(), &[x.clone()]);
    check("mean", |v| v[0].mean(), &[x.clone()]);
    check("sum_axis 0", |v| v[0].sum_axis(0).unwrap(), &[x.clone()]);
    check("mean_axis 1", |v| v[0].mean_axis(1).unwrap(), &[x.clone()]);
    check("gather_rows", |v| v[0].gather_rows(&[2, 0, 2]).unwrap(), &[x.clone()]);
    check("pick", |v| v[0].pick(&[0, 2, 1, 1]).unwrap(), &[x.clone()]);
    check("concat rows", |v| concat(&[v[0], v[1]], 0).unwrap(), &[x.clone(), y]);
    check("concat cols", |v| concat(&[v[0], v[0].scale(2.0)], 1).unwrap(), &[x]);
}

pub fn network_ops() {
    let mut r = rng();
    let x = random(&mut r, &[5, 3], -1.0, 1.0);
    let g = random(&mut r, &[3], 0.5, 1.5);
    let b = random(&mut r, &[3], -0.5, 0.5);
    check("layer_norm", |v| v[0].layer_norm(v[1], v[2], 1e-5).unwrap(), &[x.clone(), g, b]);
    check("softmax", |v| v[0].softmax().unwrap(), &[x.clone()]);
    check("log_softmax", |v| v[0].log_softmax().unwrap(), &[x.clone()]);
    let w = random(&mut r, &[2, 3, 3], -1.0, 1.0);
    check("conv1d same", |v| v[0].conv1d(v[1], ConvMode::Same).unwrap(), &[x.clone(), w.clone()]);
    check("conv1d causal", |v| v[0].conv1d(v[1], ConvMode::Causal).unwrap(), &[x.clone(), w]);
    let dw = random(&mut r, &[3, 4], -1.0, 1.0);
    check(
        "conv1d_depthwise",
        |v| v[0].conv1d_depthwise(v[1], ConvMode::Causal).unwrap(),
        &[x.clone(), dw.clone()],
    );
    check(
        "conv1d_depthwise same",
        |v| v[0].conv1d_depthwise(v[1], ConvMode::Same).unwrap(),
        &[x, dw],
    );
}

pub fn scan_gradients() {
    let mut r = rng();
    let (t, c, n) = (5, 3, 2);
    check(
        "selective_scan",
        |v| selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap(),
        &[
            random(&mut r, &[t, c], -1.0, 1.0),
            random(&mut r, &[t, c], 0.05, 0.8),
            random(&mut r, &[c, n], -2.0, -0.1),
            random(&mut r, &[t, n], -1.0, 1.0),
            random(&mut r, &[t, n], -1.0, 1.0),
            random(&mut r, &[c], -1.0, 1.0),
        ],
    );
}

/// Every differentiable primitive, each checked elementwise.
pub fn all_ops() {
    elementwise_ops();
    binary_and_broadcast_ops();
    shape_and_reduction_ops();
    network_ops();
    scan_gradients();
}

/// Full forward and loss on a d=8, five-position utterance; returns the
/// worst relative error over the sampled parameter entries.
pub fn full_model() -> f64 {
    let data = super::tiny_data(40, 0, 3);
    let record = super::record_of_len(&data, 5);
    let mut model = HMambaModel::new(super::tiny_config(&data), 11).unwrap();
    let scaler = ScoreScaler::new(model.config.score_ranges.clone()).unwrap();
    let ex = Example::new(&record, &scaler, &model).unwrap();
    let counts = BatchCounts::of([&ex]);
    let bundle = model
        .assemble(&record, data.features.get(&record.utt_id).unwrap(), false, &mut substream(0, "eval"))
        .unwrap();
    let loss_cfg = LossConfig { beta: 0.5, ..Default::default() };
    let weight = 2.5;

    let loss_of = |m: &HMambaModel| {
        let tape = Tape::new();
        let p = m.store.bind_constants(&tape);
        utterance_loss(m, &p, &ex, &bundle, counts, weight, &loss_cfg).unwrap().1.total
    };
    let tape = Tape::new();
    let p = model.store.bind(&tape);
    let (loss, _) = utterance_loss(&model, &p, &ex, &bundle, counts, weight, &loss_cfg).unwrap();
    tape.backward(loss).unwrap();
    let grads = p.grads();

    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (id, grad) in ids.into_iter().zip(grads) {
        let numel = grad.numel();
        let stride = (numel / 6).max(1);
        for i in (0..numel).step_by(stride) {
            let base = model.store.get(id).clone();
            let mut plus = base.to_vec();
            plus[i] += h;
            model.store.set(id, hmamba::numerics::Tensor::new(base.shape().to_vec(), plus).unwrap());
            let lp = loss_of(&model);
            let mut minus = base.to_vec();
            minus[i] -= h;
            model.store.set(id, hmamba::numerics::Tensor::new(base.shape().to_vec(), minus).unwrap());
            let lm = loss_of(&model);
            model.store.set(id, base);
            let fd = (lp - lm) / (2.0 * h);
            let an = grad.data()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
            assert!(
                rel < 1e-3,
                "{}[{i}]: analytic {an:e} vs numeric {fd:e}",
                model.store.param(id).name
            );
        }
    }
    worst
}
