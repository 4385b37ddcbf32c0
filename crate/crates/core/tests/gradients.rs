//! Central finite-difference checks for every differentiable op and for the
//! full sentiment path of a small encoder.

use msnt_core::model::{EncoderConfig, SentimentModel, Variant};
use msnt_core::rng::{self, Rng};
use msnt_core::tape::{Tape, Var};
use msnt_core::tokenizer::Vocab;

/// `|a - n| / max(|a|, |n|)`, treating pairs that are both below `floor`
/// as exact.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < floor {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn random_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng::unit(rng)).collect()
}

/// Builds `loss = Σ w ⊙ op(inputs)` on a fresh tape. Returns analytic
/// gradients for every input and the worst relative error against central
/// differences.
fn check<F>(inputs: &[(Vec<usize>, Vec<f64>)], step: f64, op: F) -> f64
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Var,
{
    let loss_of = |vals: &[Vec<f64>]| -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(vals)
            .map(|((s, _), v)| t.variable(s, v.clone()).unwrap())
            .collect();
        let out = op(&mut t, &vars);
        let n = t.value(out).len();
        let mut wr = rng::seeded(99);
        let w = t.constant(t.shape(out).to_vec().as_slice(), random_vec(&mut wr, n, -1.0, 1.0)).unwrap();
        let p = t.mul(out, w).unwrap();
        let s = t.sum(p);
        t.value(s)[0]
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|(s, v)| t.variable(s, v.clone()).unwrap()).collect();
    let out = op(&mut t, &vars);
    let n = t.value(out).len();
    let mut wr = rng::seeded(99);
    let w = t.constant(t.shape(out).to_vec().as_slice(), random_vec(&mut wr, n, -1.0, 1.0)).unwrap();
    let p = t.mul(out, w).unwrap();
    let s = t.sum(p);
    let grads = t.backward(s).unwrap();
    let mut worst: f64 = 0.0;
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; base[k].len()]);
        for i in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k][i] += step;
            let mut minus = base.clone();
            minus[k][i] -= step;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
            worst = worst.max(rel_err(analytic[i], numeric, 1e-9));
        }
    }
    worst
}

fn mat(rng: &mut Rng, r: usize, c: usize) -> (Vec<usize>, Vec<f64>) {
    (vec![r, c], random_vec(rng, r * c, -1.5, 1.5))
}

const TRIALS: u64 = 10;
const TOL: f64 = 1e-4;

fn over_trials(name: &str, tol: f64, mut f: impl FnMut(&mut Rng) -> f64) {
    let mut worst: f64 = 0.0;
    for trial in 0..TRIALS {
        let mut rng = rng::seeded(1000 + trial);
        worst = worst.max(f(&mut rng));
    }
    println!("{name:<14} worst relative error {worst:.3e}");
    assert!(worst < tol, "{name}: {worst:e}");
}

#[test]
fn matmul_gradient_matches_central_differences() {
    // Gradient of sum(a×b) w.r.t. a at random 3×3 inputs, step 1e-5.
    over_trials("matmul-sum", 1e-6, |rng| {
        let a = mat(rng, 3, 3);
        let b = mat(rng, 3, 3);
        let loss_grad = {
            let mut t = Tape::new();
            let va = t.variable(&a.0, a.1.clone()).unwrap();
            let vb = t.constant(&b.0, b.1.clone()).unwrap();
            let c = t.matmul(va, vb).unwrap();
            let s = t.sum(c);
            t.backward(s).unwrap().wrt(va).unwrap().to_vec()
        };
        let f = |av: &[f64]| {
            let mut t = Tape::new();
            let va = t.constant(&a.0, av.to_vec()).unwrap();
            let vb = t.constant(&b.0, b.1.clone()).unwrap();
            let c = t.matmul(va, vb).unwrap();
            let s = t.sum(c);
            t.value(s)[0]
        };
        let mut worst: f64 = 0.0;
        for i in 0..9 {
            let mut p = a.1.clone();
            p[i] += 1e-5;
            let mut m = a.1.clone();
            m[i] -= 1e-5;
            let numeric = (f(&p) - f(&m)) / 2e-5;
            worst = worst.max(rel_err(loss_grad[i], numeric, 1e-12));
        }
        worst
    });
    over_trials("matmul", TOL, |rng| {
        check(&[mat(rng, 3, 4), mat(rng, 4, 2)], 1e-3, |t, v| t.matmul(v[0], v[1]).unwrap())
    });
    over_trials("matmul_nt", TOL, |rng| {
        check(&[mat(rng, 3, 4), mat(rng, 5, 4)], 1e-3, |t, v| t.matmul_nt(v[0], v[1]).unwrap())
    });
}

#[test]
fn elementwise_gradients() {
    over_trials("add", TOL, |rng| check(&[mat(rng, 2, 3), mat(rng, 2, 3)], 1e-3, |t, v| t.add(v[0], v[1]).unwrap()));
    over_trials("sub", TOL, |rng| check(&[mat(rng, 2, 3), mat(rng, 2, 3)], 1e-3, |t, v| t.sub(v[0], v[1]).unwrap()));
    over_trials("mul", TOL, |rng| check(&[mat(rng, 2, 3), mat(rng, 2, 3)], 1e-3, |t, v| t.mul(v[0], v[1]).unwrap()));
    over_trials("add_row", TOL, |rng| {
        let b = (vec![3], random_vec(rng, 3, -1.0, 1.0));
        check(&[mat(rng, 4, 3), b], 1e-3, |t, v| t.add_row(v[0], v[1]).unwrap())
    });
    over_trials("scale", TOL, |rng| check(&[mat(rng, 2, 2)], 1e-3, |t, v| t.scale(v[0], -0.7)));
    over_trials("mean", TOL, |rng| check(&[mat(rng, 2, 5)], 1e-3, |t, v| t.mean(v[0])));
    over_trials("gelu", TOL, |rng| check(&[mat(rng, 3, 3)], 1e-3, |t, v| t.gelu(v[0])));
    over_trials("tanh", TOL, |rng| check(&[mat(rng, 3, 3)], 1e-3, |t, v| t.tanh(v[0])));
    over_trials("reshape", TOL, |rng| check(&[mat(rng, 2, 3)], 1e-3, |t, v| t.reshape(v[0], &[3, 2]).unwrap()));
}

#[test]
fn normalization_gradients() {
    for axis in 0..2 {
        over_trials("softmax", TOL, |rng| check(&[mat(rng, 3, 4)], 1e-3, |t, v| t.softmax(v[0], axis).unwrap()));
    }
    over_trials("log_softmax", TOL, |rng| check(&[mat(rng, 3, 4)], 1e-3, |t, v| t.log_softmax(v[0])));
    over_trials("layernorm", TOL, |rng| {
        let g = (vec![4], random_vec(rng, 4, 0.5, 1.5));
        let b = (vec![4], random_vec(rng, 4, -0.5, 0.5));
        check(&[mat(rng, 3, 4), g, b], 1e-3, |t, v| t.layernorm(v[0], v[1], v[2], 1e-5).unwrap())
    });
    over_trials("layernorm-fine", 1e-5, |rng| {
        let g = (vec![4], random_vec(rng, 4, 0.5, 1.5));
        let b = (vec![4], random_vec(rng, 4, -0.5, 0.5));
        check(&[mat(rng, 3, 4), g, b], 1e-4, |t, v| t.layernorm(v[0], v[1], v[2], 1e-5).unwrap())
    });
    over_trials("cross_entropy", TOL, |rng| {
        check(&[mat(rng, 4, 3)], 1e-3, |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2]).unwrap())
    });
}

#[test]
fn indexing_gradients() {
    over_trials("embedding", TOL, |rng| check(&[mat(rng, 5, 3)], 1e-3, |t, v| t.embedding(v[0], &[4, 1, 4, 0]).unwrap()));
    over_trials("select_rows", TOL, |rng| check(&[mat(rng, 4, 3)], 1e-3, |t, v| t.select_rows(v[0], &[3, 3, 1]).unwrap()));
    over_trials("slice_cols", TOL, |rng| check(&[mat(rng, 3, 5)], 1e-3, |t, v| t.slice_cols(v[0], 1, 3).unwrap()));
    over_trials("concat_cols", TOL, |rng| {
        check(&[mat(rng, 3, 2), mat(rng, 3, 4)], 1e-3, |t, v| t.concat_cols(&[v[1], v[0], v[1]]).unwrap())
    });
    over_trials("dropout", TOL, |rng| {
        let seed = rand::RngCore::next_u64(rng);
        check(&[mat(rng, 3, 3)], 1e-3, move |t, v| {
            let mut r = rng::seeded(seed);
            t.dropout(v[0], 0.3, Some(&mut r)).unwrap()
        })
    });
}

#[test]
fn shared_input_sums_contributions() {
    // x feeds two consumers: tanh(x)·x.
    over_trials("dag", TOL, |rng| {
        check(&[mat(rng, 3, 3)], 1e-3, |t, v| {
            let a = t.tanh(v[0]);
            let b = t.matmul(a, v[0]).unwrap();
            t.add(b, v[0]).unwrap()
        })
    });
}

/// Worst per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)` at step
/// 1e-3, and worst elementwise relative error at step 1e-4, over every
/// parameter of a 2-layer, hidden-8 encoder on the sentiment path.
pub fn full_path_errors(variant: Variant, seed: u64) -> (f64, f64, usize) {
    let vocab = Vocab::build(&["the build is broken again", "great fix thanks", "updated the docs"], 24, 1).unwrap();
    let cfg = EncoderConfig::new(vocab.len(), 10).with_hidden(8, 2).with_layers(2).with_dropout(0.0).for_variant(variant);
    let mut model = SentimentModel::new(cfg, variant, seed).unwrap();
    // Larger weights than the default init give gradients well above noise.
    let mut r = rng::seeded(seed + 1);
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * (rng::unit(&mut r) - 0.5);
        }
    }
    let ex = vocab.encode_single("great fix", 10).unwrap();
    let loss_of = |m: &SentimentModel| {
        let mut t = Tape::new();
        let vars = m.bind(&mut t);
        let logits = m.classify_on(&mut t, &vars, &ex, None).unwrap();
        let l = t.cross_entropy(logits, &[2]).unwrap();
        t.value(l)[0]
    };
    let mut t = Tape::new();
    let vars = model.bind(&mut t);
    let logits = model.classify_on(&mut t, &vars, &ex, None).unwrap();
    let l = t.cross_entropy(logits, &[2]).unwrap();
    let grads = t.backward(l).unwrap();
    let analytic: Vec<(usize, Vec<f64>)> = grads.params().map(|(id, g)| (id, g.to_vec())).collect();
    drop(t);
    let numeric = |id: usize, i: usize, step: f64| {
        let mut plus = model.clone();
        plus.params_mut().tensors_mut()[id].data_mut()[i] += step;
        let mut minus = model.clone();
        minus.params_mut().tensors_mut()[id].data_mut()[i] -= step;
        (loss_of(&plus) - loss_of(&minus)) / (2.0 * step)
    };
    let (mut tensor_worst, mut element_worst, mut checked) = (0.0f64, 0.0f64, 0);
    for (id, g) in &analytic {
        let coarse: Vec<f64> = (0..g.len()).map(|i| numeric(*id, i, 1e-3)).collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = g.iter().zip(&coarse).map(|(a, n)| a - n).collect();
        let scale = norm(g).max(norm(&coarse));
        if scale > 1e-12 {
            tensor_worst = tensor_worst.max(norm(&diff) / scale);
        }
        for i in 0..g.len() {
            element_worst = element_worst.max(rel_err(g[i], numeric(*id, i, 1e-4), 1e-7));
        }
        checked += g.len();
    }
    assert_eq!(analytic.len(), model.params().len() - 7, "all but the pretraining heads receive gradients");
    let _ = &mut model;
    (tensor_worst, element_worst, checked)
}

#[test]
fn full_classify_path_matches_finite_differences() {
    for variant in Variant::ALL {
        let (tensor, element, checked) = full_path_errors(variant, 4);
        println!("{variant}: {checked} scalars, per-tensor {tensor:.3e} (step 1e-3), elementwise {element:.3e} (step 1e-4)");
        assert!(tensor < 1e-4, "{variant}: {tensor:e}");
        assert!(element < 1e-4, "{variant}: {element:e}");
    }
}
