//! The tensor tape on its own: build a small expression, check its gradient
//! against finite differences, then fit a linear map with Adam.

use tkgmatch::autodiff::{grad_check, Adam, Graph, ParamStore, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // f(x) = sum(tanh(x W) * x W) for a fixed W
    let w = Tensor::matrix(3, 2, vec![0.5, -1.0, 0.25, 0.8, -0.3, 0.1])?;
    let x = Tensor::matrix(2, 3, vec![0.1, 0.2, -0.4, 0.7, -0.5, 0.3])?;
    let err = grad_check(
        |g, x| {
            let w = g.constant(w.clone());
            let xw = g.matmul(x, w)?;
            let t = g.tanh(xw)?;
            let p = g.mul(t, xw)?;
            g.sum(p)
        },
        &x,
        1e-5,
    )?;
    println!("worst relative gradient error: {err:.2e}");

    // Recover y = x A with A = [[2], [-1]] from eight samples.
    let xs: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let ys: Vec<f64> = xs.chunks(2).map(|r| 2.0 * r[0] - r[1]).collect();
    let inputs = Tensor::matrix(8, 2, xs)?;
    let targets = Tensor::matrix(8, 1, ys)?;

    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::zeros(vec![2, 1]))?;
    let adam = Adam::with_lr(0.05);
    for step in 0..=300 {
        store.zero_grad();
        let mut g = Graph::new(true, 0);
        let (x, y, a_node) = (g.constant(inputs.clone()), g.constant(targets.clone()), g.param(&store, a));
        let pred = g.matmul(x, a_node)?;
        let diff = g.sub(pred, y)?;
        let sq = g.mul(diff, diff)?;
        let loss = g.sum(sq)?;
        if step % 100 == 0 {
            println!("step {step:>3}  loss {:.6}", g.value(loss).item());
        }
        g.backward(loss, &mut store)?;
        adam.step(&mut store)?;
    }
    println!("learned A = {:?}", store.get(a).tensor().values());
    Ok(())
}
