//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::Rng;
use ttadc::autodiff::{Graph, NodeId, Tensor};
use ttadc::calibration::{calibrated_bce, HeadSpec};
use ttadc::metrics::ScoredPrediction;
use ttadc::model::{ordinal_targets, Architecture, HeadLayout, MultiHeadModel};
use ttadc::ordinal::{DominatingSpec, LabelDistribution};
use ttadc::rng::seeded;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;

pub fn random_tensor(shape: &[usize], rng: &mut ttadc::rng::Rng, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_TOL || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// `build` maps fresh leaves for `inputs` to a scalar root.
pub fn check<F>(name: &str, inputs: &[Tensor], build: F) -> Result<(), String>
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |values: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|v| g.leaf(v.clone())).collect();
        let root = build(&mut g, &ids);
        (g, ids, root)
    };
    let (mut g, ids, root) = eval(inputs);
    g.backward(root).unwrap();
    for (a, id) in ids.iter().enumerate() {
        let analytic = g.grad(*id).unwrap().data().to_vec();
        for e in 0..inputs[a].numel() {
            let mut plus = inputs.to_vec();
            plus[a].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[a].data_mut()[e] -= STEP;
            let (gp, _, rp) = eval(&plus);
            let (gm, _, rm) = eval(&minus);
            let numeric = (gp.value(rp).item() - gm.value(rm).item()) / (2.0 * STEP);
            if !close(analytic[e], numeric) {
                return Err(format!(
                    "{name}: input {a} element {e}: analytic {} vs numeric {numeric}",
                    analytic[e]
                ));
            }
        }
    }
    Ok(())
}

/// Weighted sum with fixed coefficients, so every output element matters.
pub fn weighted(g: &mut Graph, x: NodeId) -> NodeId {
    let n = g.value(x).numel();
    let shape = g.value(x).shape().to_vec();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect()).unwrap();
    let c = g.constant(w);
    let p = g.mul(x, c).unwrap();
    g.sum(p)
}

pub fn binary_ops() -> Result<(), String> {
    let mut rng = seeded(1);
    for trial in 0..5 {
        let a = random_tensor(&[2, 3], &mut rng, -3.0, 3.0);
        let b = random_tensor(&[2, 3], &mut rng, -3.0, 3.0);
        let positive = random_tensor(&[2, 3], &mut rng, 0.5, 3.0);
        let s = random_tensor(&[1], &mut rng, 0.5, 3.0);
        check(&format!("add#{trial}"), &[a.clone(), b.clone()], |g, x| {
            let y = g.add(x[0], x[1]).unwrap();
            weighted(g, y)
        })?;
        check(&format!("sub#{trial}"), &[a.clone(), b.clone()], |g, x| {
            let y = g.sub(x[0], x[1]).unwrap();
            weighted(g, y)
        })?;
        check(&format!("mul#{trial}"), &[a.clone(), b.clone()], |g, x| {
            let y = g.mul(x[0], x[1]).unwrap();
            weighted(g, y)
        })?;
        check(&format!("div#{trial}"), &[a.clone(), positive.clone()], |g, x| {
            let y = g.div(x[0], x[1]).unwrap();
            weighted(g, y)
        })?;
        check(&format!("broadcast#{trial}"), &[a.clone(), s.clone()], |g, x| {
            let y = g.mul(x[0], x[1]).unwrap();
            let z = g.div(y, x[1]).unwrap();
            let w = g.add(z, x[1]).unwrap();
            let v = g.sub(w, x[1]).unwrap();
            let u = g.mul(v, x[1]).unwrap();
            weighted(g, u)
        })?;
    }
    Ok(())
}

pub fn unary_ops() -> Result<(), String> {
    let mut rng = seeded(2);
    for trial in 0..5 {
        let x = random_tensor(&[7], &mut rng, -3.0, 3.0);
        let positive = random_tensor(&[7], &mut rng, 0.2, 3.0);
        let away_from_kink = Tensor::vector(
            x.data().iter().map(|v| if v.abs() < 0.1 { v + 0.3 } else { *v }).collect(),
        );
        type Unary = fn(&mut Graph, NodeId) -> NodeId;
        let ops: [(&str, Unary, &Tensor); 10] = [
            ("neg", |g, x| g.neg(x), &x),
            ("scale", |g, x| g.scale(x, -1.7), &x),
            ("add_scalar", |g, x| g.add_scalar(x, 0.4), &x),
            ("sigmoid", |g, x| g.sigmoid(x), &x),
            ("log_sigmoid", |g, x| g.log_sigmoid(x), &x),
            ("exp", |g, x| g.exp(x), &x),
            ("tanh", |g, x| g.tanh(x), &x),
            ("relu", |g, x| g.relu(x), &away_from_kink),
            ("log", |g, x| g.log(x).unwrap(), &positive),
            ("sqrt", |g, x| g.sqrt(x).unwrap(), &positive),
        ];
        for (name, op, input) in ops {
            check(&format!("{name}#{trial}"), &[input.clone()], |g, x| {
                let y = op(g, x[0]);
                weighted(g, y)
            })?;
        }
    }
    Ok(())
}

pub fn reduction_ops() -> Result<(), String> {
    let mut rng = seeded(3);
    for trial in 0..5 {
        let m = random_tensor(&[3, 4], &mut rng, -3.0, 3.0);
        let a = random_tensor(&[5], &mut rng, -3.0, 3.0);
        let b = random_tensor(&[5], &mut rng, -3.0, 3.0);
        check(&format!("sum#{trial}"), &[m.clone()], |g, x| {
            let y = g.mul(x[0], x[0]).unwrap();
            g.sum(y)
        })?;
        check(&format!("mean#{trial}"), &[m.clone()], |g, x| {
            let y = g.exp(x[0]);
            g.mean(y)
        })?;
        check(&format!("sum_rows#{trial}"), &[m.clone()], |g, x| {
            let y = g.sum_rows(x[0]).unwrap();
            weighted(g, y)
        })?;
        check(&format!("softmax#{trial}"), &[a.clone()], |g, x| {
            let y = g.softmax(x[0]).unwrap();
            weighted(g, y)
        })?;
        check(&format!("dot#{trial}"), &[a.clone(), b.clone()], |g, x| g.dot(x[0], x[1]).unwrap())?;
        check(&format!("l2_norm#{trial}"), &[a.clone()], |g, x| g.l2_norm(x[0]))?;
        check(&format!("select#{trial}"), &[a.clone()], |g, x| {
            let s = g.select(x[0], 2).unwrap();
            let t = g.select(x[0], 4).unwrap();
            let p = g.mul(s, t).unwrap();
            let q = g.mul(p, s).unwrap();
            g.sum(q)
        })?;
        check(&format!("concat#{trial}"), &[a.clone(), b.clone()], |g, x| {
            let y = g.concat(&[x[0], x[1], x[0]]).unwrap();
            let z = g.tanh(y);
            weighted(g, z)
        })?;
    }
    Ok(())
}

pub fn matrix_ops() -> Result<(), String> {
    let mut rng = seeded(4);
    for trial in 0..5 {
        let x = random_tensor(&[3, 4], &mut rng, -3.0, 3.0);
        let w = random_tensor(&[4, 2], &mut rng, -3.0, 3.0);
        let bias = random_tensor(&[2], &mut rng, -3.0, 3.0);
        check(&format!("matmul#{trial}"), &[x.clone(), w.clone()], |g, v| {
            let y = g.matmul(v[0], v[1]).unwrap();
            weighted(g, y)
        })?;
        check(&format!("dense#{trial}"), &[x.clone(), w.clone(), bias.clone()], |g, v| {
            let y = g.matmul(v[0], v[1]).unwrap();
            let z = g.add_bias(y, v[2]).unwrap();
            let t = g.tanh(z);
            weighted(g, t)
        })?;
    }
    Ok(())
}

pub fn calibrated_loss() -> Result<(), String> {
    let train = LabelDistribution::new(vec![0.4, 0.25, 0.15, 0.12, 0.08]).unwrap();
    let mut rng = seeded(5);
    for trial in 0..3 {
        let spec = HeadSpec::one_dominating(&DominatingSpec::new(trial + 2, 2.0, 5).unwrap(), &train).unwrap();
        let phi = random_tensor(&[3, 4], &mut rng, -3.0, 3.0);
        let targets = ordinal_targets(&[1, 3, 5], 5).unwrap();
        check(&format!("calibrated_bce#{trial}"), &[phi], |g, x| {
            calibrated_bce(g, x[0], &targets, &spec).unwrap()
        })?;
    }
    Ok(())
}

/// Three-class model with two-wide trunk and three-wide heads, distinct head inits.
pub fn toy_model(seed: u64) -> (MultiHeadModel, Tensor, Vec<usize>) {
    let train = LabelDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
    let arch = Architecture {
        trunk: vec![4],
        head: vec![3],
        shared_head_init: false,
    };
    let model =
        MultiHeadModel::with_layout(2, arch, HeadLayout::OneDominating { lambda: 2.0 }, &train, seed).unwrap();
    let x = Tensor::matrix(3, 2, vec![0.5, -1.0, 1.5, 0.2, -0.7, 2.0]).unwrap();
    (model, x, vec![1, 2, 3])
}

/// Head-averaged training loss against finite differences in every parameter.
pub fn model_loss(seed: u64) -> Result<(), String> {
    let (mut model, x, labels) = toy_model(seed);
    let loss_of = |m: &MultiHeadModel| {
        let mut g = Graph::new();
        let params = m.bind(&mut g, true);
        let (total, _) = m.loss_bound(&mut g, &params, &x, &labels).unwrap();
        g.value(total).item()
    };
    let mut g = Graph::new();
    let params = model.bind(&mut g, true);
    let (total, _) = model.loss_bound(&mut g, &params, &x, &labels).unwrap();
    g.backward(total).unwrap();
    let analytic: Vec<Vec<f64>> = params.ids.iter().map(|id| g.grad(*id).unwrap().data().to_vec()).collect();

    for p in 0..model.parameters().len() {
        for e in 0..model.parameters()[p].numel() {
            let original = model.parameters()[p].data()[e];
            model.parameters_mut()[p].data_mut()[e] = original + STEP;
            let up = loss_of(&model);
            model.parameters_mut()[p].data_mut()[e] = original - STEP;
            let down = loss_of(&model);
            model.parameters_mut()[p].data_mut()[e] = original;
            let numeric = (up - down) / (2.0 * STEP);
            if !close(analytic[p][e], numeric) {
                return Err(format!(
                    "parameter {p} element {e}: analytic {} vs numeric {numeric}",
                    analytic[p][e]
                ));
            }
        }
    }
    Ok(())
}

/// `P(pos > neg) + ½ P(tie)` by enumerating every pair.
pub fn brute_auc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &p in pos {
        for &n in neg {
            total += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(total / (pos.len() * neg.len()) as f64)
}

pub fn brute_split_aucs(preds: &[ScoredPrediction], classes: usize) -> Vec<Option<f64>> {
    (1..classes)
        .map(|i| {
            let pos: Vec<f64> = preds.iter().filter(|p| p.truth > i).map(|p| p.score).collect();
            let neg: Vec<f64> = preds.iter().filter(|p| p.truth <= i).map(|p| p.score).collect();
            brute_auc(&pos, &neg)
        })
        .collect()
}

/// Double loop over every cross-class sample pair, averaged per class pair.
pub fn brute_obuchowski(preds: &[ScoredPrediction], classes: usize) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0;
    for s in 1..=classes {
        for t in s + 1..=classes {
            let (mut wins, mut count) = (0.0, 0usize);
            for a in preds.iter().filter(|p| p.truth == t) {
                for b in preds.iter().filter(|p| p.truth == s) {
                    wins += if a.score > b.score {
                        1.0
                    } else if a.score == b.score {
                        0.5
                    } else {
                        0.0
                    };
                    count += 1;
                }
            }
            if count > 0 {
                total += wins / count as f64;
                pairs += 1;
            }
        }
    }
    total / pairs as f64
}

/// Random predictions with scores from a coarse grid, so ties occur.
pub fn random_predictions(n: usize, classes: usize, seed: u64) -> Vec<ScoredPrediction> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let truth = rng.random_range(1..=classes);
            let score = (truth as f64 + rng.random_range(-2.0..2.0) * 1.5).round() / 4.0;
            ScoredPrediction {
                truth,
                predicted: rng.random_range(1..=classes),
                score,
            }
        })
        .collect()
}
