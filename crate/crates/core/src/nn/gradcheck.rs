//! Central finite-difference verification of graph gradients.

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::SeededRng;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-4;

/// Relative error with an absolute floor so near-zero gradients compare by
/// absolute difference.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Outcome of a gradient check: the worst relative error among probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
}

/// Reduces a non-scalar output to a scalar with a fixed random projection.
fn project(g: &mut Graph, y: Var, proj: &Option<Tensor>) -> Result<Var> {
    match proj {
        None => Ok(y),
        Some(p) => {
            let c = g.constant(p.clone());
            let m = g.mul(y, c)?;
            Ok(g.sum(m))
        }
    }
}

fn projection(shape: &[usize], rng: &mut SeededRng) -> Option<Tensor> {
    if shape == [1] {
        return None;
    }
    let n = shape.iter().product();
    Some(Tensor { shape: shape.to_vec(), data: (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect() })
}

/// Checks gradients with respect to `inputs` of the function built by
/// `build`, probing `probes` random coordinates of each input.
pub fn check_inputs<F>(inputs: &[Tensor], probes: usize, rng: &mut SeededRng, build: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor], proj: &Option<Tensor>| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let y = build(&mut g, &vars)?;
        let l = project(&mut g, y, proj)?;
        Ok((g, vars, l))
    };
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let y = build(&mut g, &vars)?;
        g.value(y).shape.clone()
    };
    let proj = projection(&shape, rng);
    let (g, vars, l) = eval(inputs, &proj)?;
    let grads = g.gradients(l)?;
    let mut worst = 0.0f64;
    let mut count = 0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
        for _ in 0..probes {
            let i = rng.below(t.len());
            let mut plus = inputs.to_vec();
            plus[k].data[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data[i] -= FD_STEP;
            let (gp, _, lp) = eval(&plus, &proj)?;
            let (gm, _, lm) = eval(&minus, &proj)?;
            let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i], numeric));
            count += 1;
        }
    }
    Ok(CheckReport { max_rel_error: worst, probes: count })
}

/// Checks gradients with respect to every trainable parameter in `store`,
/// probing `probes` random coordinates of each.
pub fn check_params<F>(store: &ParamStore, probes: usize, rng: &mut SeededRng, build: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let shape = {
        let mut g = Graph::new();
        let y = build(&mut g, store)?;
        g.value(y).shape.clone()
    };
    let proj = projection(&shape, rng);
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let y = build(&mut g, s)?;
        let l = project(&mut g, y, &proj)?;
        Ok(g.value(l).item())
    };
    let mut s = store.clone();
    s.zero_grad();
    {
        let mut g = Graph::new();
        let y = build(&mut g, &s)?;
        let l = project(&mut g, y, &proj)?;
        g.backward(l, &mut s)?;
    }
    let mut worst = 0.0f64;
    let mut count = 0;
    let ids: Vec<usize> = (0..s.len()).filter(|&i| s.get(super::ParamId(i)).requires_grad).collect();
    for pid in ids {
        let id = super::ParamId(pid);
        let n = s.get(id).value.len();
        for _ in 0..probes {
            let i = rng.below(n);
            let analytic = s.get(id).grad[i];
            let orig = s.get(id).value[i];
            s.get_mut(id).value[i] = orig + FD_STEP;
            let fp = eval(&s)?;
            s.get_mut(id).value[i] = orig - FD_STEP;
            let fm = eval(&s)?;
            s.get_mut(id).value[i] = orig;
            worst = worst.max(relative_error(analytic, (fp - fm) / (2.0 * FD_STEP)));
            count += 1;
        }
    }
    Ok(CheckReport { max_rel_error: worst, probes: count })
}

fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: rng.normals(n) }
}

fn randomize(store: &mut ParamStore, rng: &mut SeededRng, scale: f64) {
    for p in store.iter_mut() {
        p.value.iter_mut().for_each(|v| *v = scale * rng.normal());
    }
}

/// Finite-difference checks of every differentiable layer kind on small
/// random problems, `probes` coordinates per tensor.
pub fn layer_suite(seed: u64, probes: usize) -> Result<Vec<(&'static str, CheckReport)>> {
    use super::layers::{DaConv, Init, Rrdb};
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    let r = &mut rng;

    let ins = [random(&[2, 5, 6], r), random(&[3, 2, 3, 3], r), random(&[3], r)];
    out.push(("conv3x3", check_inputs(&ins, probes, r, |g, v| g.conv2d(v[0], v[1], Some(v[2])))?));
    let ins = [random(&[3, 4, 4], r), random(&[2, 3, 1, 1], r), random(&[2], r)];
    out.push(("conv1x1", check_inputs(&ins, probes, r, |g, v| g.conv2d(v[0], v[1], Some(v[2])))?));
    let ins = [random(&[2, 4, 4], r)];
    out.push(("leaky_relu", check_inputs(&ins, probes, r, |g, v| Ok(g.leaky_relu(v[0], 0.2)))?));
    let ins = [random(&[2, 3, 3], r), random(&[2, 3, 3], r)];
    out.push(("add", check_inputs(&ins, probes, r, |g, v| g.add(v[0], v[1]))?));
    out.push(("sub", check_inputs(&ins, probes, r, |g, v| g.sub(v[0], v[1]))?));
    out.push(("mul", check_inputs(&ins, probes, r, |g, v| g.mul(v[0], v[1]))?));
    let ins = [random(&[2, 3, 3], r), random(&[1, 3, 3], r)];
    out.push(("concat", check_inputs(&ins, probes, r, |g, v| g.concat(&[v[0], v[1]]))?));
    let ins = [random(&[3, 4, 5], r)];
    out.push(("channel_mean", check_inputs(&ins, probes, r, |g, v| g.channel_mean(v[0]))?));
    out.push(("global_avg_pool", check_inputs(&ins, probes, r, |g, v| g.global_avg_pool(v[0]))?));
    out.push(("select_channel", check_inputs(&ins, probes, r, |g, v| g.select_channel(v[0], 1))?));
    let ins = [random(&[5], r)];
    out.push(("softmax", check_inputs(&ins, probes, r, |g, v| g.softmax(v[0]))?));
    let ins = [random(&[4], r), random(&[3, 4], r), random(&[3], r)];
    out.push(("dense", check_inputs(&ins, probes, r, |g, v| g.dense(v[0], v[1], v[2]))?));
    let ins = [random(&[3, 4, 4], r), random(&[3], r)];
    out.push(("scale_channels", check_inputs(&ins, probes, r, |g, v| g.scale_channels(v[0], v[1]))?));
    out.push(("add_channel_bias", check_inputs(&ins, probes, r, |g, v| g.add_channel_bias(v[0], v[1]))?));
    out.push((
        "weighted_channel_sum",
        check_inputs(&ins, probes, r, |g, v| g.weighted_channel_sum(v[0], v[1]))?,
    ));
    let ins = [random(&[2, 9, 8], r), Tensor::scalar(1.3)];
    out.push(("gaussian_blur", check_inputs(&ins, probes, r, |g, v| g.gaussian_blur(v[0], v[1]))?));
    let ins = [random(&[2, 4, 6], r)];
    out.push(("avg_pool", check_inputs(&ins, probes, r, |g, v| g.avg_pool(v[0], 2))?));
    out.push(("upsample_bicubic", check_inputs(&ins, probes, r, |g, v| g.upsample_bicubic(v[0], 3))?));
    out.push(("pixel_fold", check_inputs(&ins, probes, r, |g, v| g.pixel_fold(v[0], 2))?));
    let ins = [random(&[8, 2, 3], r)];
    out.push(("pixel_unfold", check_inputs(&ins, probes, r, |g, v| g.pixel_unfold(v[0], 2))?));
    let ins = [random(&[2, 3, 4], r), random(&[2, 3, 4], r)];
    out.push(("l1", check_inputs(&ins, probes, r, |g, v| g.l1_loss(v[0], v[1]))?));
    let ins = [random(&[6], r), random(&[6], r), random(&[6], r), random(&[6], r)];
    out.push(("infonce", check_inputs(&ins, probes, r, |g, v| g.infonce(v[0], v[1], &v[2..], 0.5))?));

    let mut store = ParamStore::new();
    let rrdb = Rrdb::new(&mut store, "rrdb", 4, 3, 2, r);
    randomize(&mut store, r, 0.3);
    let x = random(&[4, 5, 5], r);
    let rep = check_params(&store, probes, r, |g, s| {
        let xv = g.constant(x.clone());
        rrdb.forward(g, s, xv)
    })?;
    let rep_x = check_inputs(&[x.clone()], probes, r, |g, v| rrdb.forward(g, &store, v[0]))?;
    out.push(("rrdb", worst(rep, rep_x)));

    let mut store = ParamStore::new();
    let da = DaConv::new(&mut store, "da", 3, 4, 5, Init::DEFAULT, r);
    randomize(&mut store, r, 0.3);
    let x = random(&[3, 4, 4], r);
    let v = random(&[5], r);
    let rep = check_params(&store, probes, r, |g, s| {
        let (xv, vv) = (g.constant(x.clone()), g.constant(v.clone()));
        da.forward(g, s, xv, vv)
    })?;
    let rep_in = check_inputs(&[x, v], probes, r, |g, ins| da.forward(g, &store, ins[0], ins[1]))?;
    out.push(("daconv", worst(rep, rep_in)));
    Ok(out)
}

fn worst(a: CheckReport, b: CheckReport) -> CheckReport {
    CheckReport { max_rel_error: a.max_rel_error.max(b.max_rel_error), probes: a.probes + b.probes }
}
