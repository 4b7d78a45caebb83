//! Finite-difference cases for every differentiable op and composite loss.

use super::{grad_check, random_tensor, rng};
use diverse_replay::losses::{
    distillation, gram_distance, generator_losses, semantic_distance, task_objective, DistillReduction,
    GeneratorLossWeights, TaskLossWeights, TripletMaps,
};
use diverse_replay::nets::{BackboneConfig, FeatureGenerator, Network};
use diverse_replay::tensor::{Parameter, Tape, Var};
use diverse_replay::{Result, Tensor};

pub type Case = (&'static str, f64);

fn small_net() -> Network<f64> {
    let cfg = BackboneConfig {
        in_channels: 1,
        image_size: 6,
        widths: vec![2, 2, 3],
        plug_point: 2,
    };
    let mut r = rng(90);
    let mut net = Network::new(cfg, &mut r).unwrap();
    net.head.grow(3, &mut r).unwrap();
    net
}

/// FD check of a loss with respect to every parameter of a generator.
fn generator_param_check<F>(gen: &FeatureGenerator<f64>, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &FeatureGenerator<f64>) -> Result<Var>,
{
    const EPS: f64 = 1e-5;
    let mut tape = Tape::new();
    let loss = build(&mut tape, gen).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = gen
        .params()
        .iter()
        .map(|p| (p.name().to_string(), grads.param(p.name()).unwrap().data().to_vec()))
        .collect();
    let eval = |g: &FeatureGenerator<f64>| {
        let mut tape = Tape::no_grad();
        let l = build(&mut tape, g).unwrap();
        tape.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for (pi, (_, an)) in analytic.iter().enumerate() {
        // sample a subset of entries to bound runtime
        for j in (0..an.len()).step_by(7) {
            let mut plus = gen.clone();
            plus.params_mut()[pi].value_mut().data_mut()[j] += EPS;
            let mut minus = gen.clone();
            minus.params_mut()[pi].value_mut().data_mut()[j] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let err = (an[j] - numeric).abs() / an[j].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

fn frozen(net: &Network<f64>) -> Network<f64> {
    let mut n = net.clone();
    n.set_frozen(true);
    n
}

pub fn op_cases() -> Vec<Case> {
    let mut r = rng(100);
    let mut cases = Vec::new();
    let x = random_tensor(&mut r, &[2, 2, 4, 4]);
    let w = random_tensor(&mut r, &[3, 2, 3, 3]);
    for (name, stride, pad) in [("conv2d s1 p1", 1, 1), ("conv2d s2 p1", 2, 1), ("conv2d s1 p0", 1, 0)] {
        let e = grad_check(&[x.clone(), w.clone()], |t, v| {
            let y = t.conv2d(v[0], v[1], stride, pad)?;
            let y2 = t.mul(y, y)?;
            Ok(t.sum(y2))
        });
        cases.push((name, e));
    }
    let w1 = random_tensor(&mut r, &[3, 2, 1, 1]);
    cases.push((
        "conv2d 1x1",
        grad_check(&[x.clone(), w1], |t, v| {
            let y = t.conv2d(v[0], v[1], 1, 0)?;
            let y2 = t.mul(y, y)?;
            Ok(t.sum(y2))
        }),
    ));
    let a = random_tensor(&mut r, &[3, 5]);
    let b = random_tensor(&mut r, &[3, 5]);
    cases.push((
        "relu",
        grad_check(&[a.clone(), b.clone()], |t, v| {
            let y = t.relu(v[0]);
            let p = t.mul(y, v[1])?;
            Ok(t.sum(p))
        }),
    ));
    let lw = random_tensor(&mut r, &[4, 5]);
    let lb = random_tensor(&mut r, &[4]);
    cases.push((
        "linear",
        grad_check(&[a.clone(), lw, lb], |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            let y2 = t.mul(y, y)?;
            Ok(t.sum(y2))
        }),
    ));
    cases.push((
        "global_avg_pool",
        grad_check(std::slice::from_ref(&x), |t, v| {
            let y = t.global_avg_pool(v[0])?;
            let y2 = t.mul(y, y)?;
            Ok(t.sum(y2))
        }),
    ));
    cases.push((
        "softmax_cross_entropy",
        grad_check(std::slice::from_ref(&a), |t, v| t.softmax_cross_entropy(v[0], &[4, 0, 2])),
    ));
    cases.push((
        "row_cosine",
        grad_check(&[a.clone(), b.clone()], |t, v| {
            let c = t.row_cosine(v[0], v[1])?;
            let c2 = t.mul(c, c)?;
            Ok(t.sum(c2))
        }),
    ));
    cases.push((
        "row_l2_distance",
        grad_check(&[a.clone(), b.clone()], |t, v| {
            let d = t.row_l2_distance(v[0], v[1])?;
            Ok(t.sum(d))
        }),
    ));
    for (name, norm) in [("gram (normalised)", true), ("gram (raw)", false)] {
        cases.push((
            name,
            grad_check(std::slice::from_ref(&x), |t, v| {
                let g = t.gram(v[0], norm)?;
                let g2 = t.mul(g, g)?;
                Ok(t.sum(g2))
            }),
        ));
    }
    let x2 = random_tensor(&mut r, &[2, 1, 4, 4]);
    cases.push((
        "concat_channels",
        grad_check(&[x.clone(), x2], |t, v| {
            let c = t.concat_channels(v[0], v[1])?;
            let s = t.mul(c, c)?;
            let g = t.global_avg_pool(s)?;
            let wsum = t.reshape(g, &[6])?;
            let k = t.constant(Tensor::from_f64(&[6], &[1.0, -2.0, 0.5, 3.0, 1.5, -1.0])?);
            let p = t.mul(wsum, k)?;
            Ok(t.sum(p))
        }),
    ));
    let c = random_tensor(&mut r, &[2, 5]);
    cases.push((
        "select_rows/concat_rows",
        grad_check(&[a.clone(), c, b.clone()], |t, v| {
            let joined = t.concat_rows(&[v[0], v[1]])?;
            let picked = t.select_rows(joined, &[4, 0, 0, 2, 3, 1])?;
            let w = t.select_rows(v[2], &[0, 1, 2, 2, 1, 0])?;
            let p = t.mul(picked, w)?;
            let p2 = t.mul(p, picked)?;
            Ok(t.sum(p2))
        }),
    ));
    cases.push((
        "add/sub/scale/weighted_sum/mean",
        grad_check(&[a.clone(), b.clone()], |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(v[0], v[1])?;
            let p = t.mul(s, d)?;
            let q = t.scale(p, 0.3);
            let ws = t.weighted_sum(&[(q, 2.0), (v[0], -1.5)])?;
            let sq = t.mul(ws, ws)?;
            Ok(t.mean(sq))
        }),
    ));
    cases
}

pub fn loss_cases() -> Vec<Case> {
    let mut r = rng(200);
    let mut cases = Vec::new();
    let va = random_tensor(&mut r, &[3, 4]);
    let vb = random_tensor(&mut r, &[3, 4]);
    cases.push((
        "semantic distance",
        grad_check(&[va.clone(), vb.clone()], |t, v| {
            let d = semantic_distance(t, v[0], v[1])?;
            Ok(t.mean(d))
        }),
    ));
    let ha = random_tensor(&mut r, &[2, 3, 3, 3]);
    let hb = random_tensor(&mut r, &[2, 3, 3, 3]);
    cases.push((
        "gram distance",
        grad_check(&[ha.clone(), hb.clone()], |t, v| {
            let wa = t.gram(v[0], true)?;
            let wb = t.gram(v[1], true)?;
            let d = gram_distance(t, wa, wb)?;
            Ok(t.mean(d))
        }),
    ));
    for red in [DistillReduction::Mean, DistillReduction::Sum] {
        cases.push((
            if red == DistillReduction::Mean { "distillation (mean)" } else { "distillation (sum)" },
            grad_check(&[va.clone(), vb.clone()], |t, v| distillation(t, v[0], v[1], red)),
        ));
    }

    // Generator objective through both generator passes and frozen f2/Φ.
    let net = small_net();
    let fnet = frozen(&net);
    let mut gen = FeatureGenerator::<f64>::new(1, 2, 1, 7);
    // move away from the pass-through start so every path carries gradient
    for p in gen.params_mut() {
        let shape = p.value().shape().to_vec();
        *p.value_mut() = random_tensor(&mut r, &shape);
    }
    let hm = random_tensor(&mut r, &[2, 2, 3, 3]);
    let hu = random_tensor(&mut r, &[2, 2, 3, 3]);
    let hk = random_tensor(&mut r, &[2, 2, 3, 3]);
    let weights = GeneratorLossWeights {
        lambda: 0.7,
        lambda_cyc: 1.3,
    };
    let build = |t: &mut Tape<f64>, g: &FeatureGenerator<f64>, v: &[Var]| -> Result<Var> {
        let maps = TripletMaps {
            h_m: v[0],
            h_u: v[1],
            h_k: v[2],
        };
        let l = generator_losses(t, g, &fnet, maps, &[1, 1], &weights, true)?;
        Ok(t.mean(l.total))
    };
    cases.push((
        "generator objective wrt maps",
        grad_check(&[hm.clone(), hu.clone(), hk.clone()], |t, v| build(t, &gen, v)),
    ));
    cases.push((
        "generator objective wrt generator params",
        generator_param_check(&gen, |t, g| {
            let v = [t.constant(hm.clone()), t.constant(hu.clone()), t.constant(hk.clone())];
            build(t, g, &v)
        }),
    ));
    {
        let w = GeneratorLossWeights::default();
        cases.push((
            "cycle terms only",
            generator_param_check(&gen, |t, g| {
                let v = [t.constant(hm.clone()), t.constant(hu.clone()), t.constant(hk.clone())];
                let maps = TripletMaps {
                    h_m: v[0],
                    h_u: v[1],
                    h_k: v[2],
                };
                let l = generator_losses(t, g, &fnet, maps, &[1, 1], &w, false)?;
                let a = t.add(l.sc_cyc.unwrap(), l.sdc_cyc.unwrap())?;
                Ok(t.sum(a))
            }),
        ));
    }
    cases.push((
        "generated-map cross-entropy",
        generator_param_check(&gen, |t, g| {
            let (a, b) = (t.constant(hm.clone()), t.constant(hu.clone()));
            let h = g.generate(t, a, b)?;
            let z = fnet.logits_from_map(t, h)?;
            t.softmax_cross_entropy(z, &[2, 0])
        }),
    ));

    // Task objective with every component, differentiated w.r.t. the images.
    let old = small_net();
    let x_new = random_tensor(&mut r, &[2, 1, 6, 6]).cast::<f64>();
    let x_mem = random_tensor(&mut r, &[2, 1, 6, 6]);
    let h_gen = random_tensor(&mut r, &[2, 2, 3, 3]);
    let tw = TaskLossWeights {
        alpha1: 0.8,
        alpha2: 1.7,
    };
    let mut old_tape = Tape::no_grad();
    let xm = old_tape.constant(x_mem.clone());
    let f_old = old.backbone.forward(&mut old_tape, xm).unwrap();
    let f_old = old_tape.value(f_old).clone();
    cases.push((
        "task objective",
        grad_check(&[x_new, x_mem, h_gen], |t, v| {
            let z = net.logits(t, v[0])?;
            let cls = t.softmax_cross_entropy(z, &[0, 2])?;
            let fm = net.backbone.forward(t, v[1])?;
            let zm = net.head.forward(t, fm)?;
            let mem = t.softmax_cross_entropy(zm, &[1, 1])?;
            let zg = net.logits_from_map(t, v[2])?;
            let gen = t.softmax_cross_entropy(zg, &[1, 0])?;
            let fo = t.constant(f_old.clone());
            let dist = distillation(t, fo, fm, DistillReduction::Mean)?;
            task_objective(t, cls, Some(mem), Some(gen), Some(dist), &tw)
        }),
    ));
    // and w.r.t. network parameters via a flattened parameter probe
    cases.push(("task objective wrt backbone and head params", task_param_check(&net, &tw)));
    cases
}

fn task_param_check(net: &Network<f64>, tw: &TaskLossWeights) -> f64 {
    const EPS: f64 = 1e-5;
    let mut r = rng(300);
    let x = random_tensor(&mut r, &[3, 1, 6, 6]);
    let build = |t: &mut Tape<f64>, n: &Network<f64>| -> Result<Var> {
        let xv = t.constant(x.clone());
        let z = n.logits(t, xv)?;
        let cls = t.softmax_cross_entropy(z, &[0, 1, 2])?;
        let feats = n.backbone.forward(t, xv)?;
        let ones = t.constant(Tensor::full(&[3, 3], 1.0));
        let dist = distillation(t, ones, feats, DistillReduction::Sum)?;
        task_objective(t, cls, None, None, Some(dist), tw)
    };
    let mut tape = Tape::new();
    let l = build(&mut tape, net).unwrap();
    let grads = tape.backward(l).unwrap();
    let names: Vec<String> = net.params().iter().map(|p| p.name().to_string()).collect();
    let mut worst: f64 = 0.0;
    for (pi, name) in names.iter().enumerate() {
        let an = grads.param(name).unwrap().data().to_vec();
        for j in (0..an.len()).step_by(3) {
            let eval = |delta: f64| {
                let mut n = net.clone();
                let ps: Vec<&mut Parameter<f64>> = n.params_mut();
                let p = ps.into_iter().nth(pi).unwrap();
                p.value_mut().data_mut()[j] += delta;
                let mut t = Tape::no_grad();
                let l = build(&mut t, &n).unwrap();
                t.value(l).item()
            };
            let numeric = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
            let err = (an[j] - numeric).abs() / an[j].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
