//! Central finite-difference checks of the reverse sweep.

use super::{Graph, GraphError, NodeId, ParamId, ParamStore, Tensor};

/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

fn scalar_of(graph: &Graph, node: NodeId) -> Result<f64, GraphError> {
    let v = graph.value(node);
    if !v.is_scalar() {
        return Err(GraphError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Largest coordinate-wise relative error between the reverse-mode gradient
/// of `f` at `x` and a central difference with step `eps`. `f` runs on an
/// inference graph, so dropout is disabled.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, GraphError>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, GraphError>,
{
    if eps <= 0.0 {
        return Err(GraphError::Invalid {
            op: "grad_check",
            detail: format!("eps must be positive, got {eps}"),
        });
    }
    let eval = |x: &Tensor| -> Result<f64, GraphError> {
        let mut g = Graph::inference();
        let leaf = g.input(x.clone());
        let out = f(&mut g, leaf)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::inference();
    let leaf = g.input(x.clone());
    let out = f(&mut g, leaf)?;
    scalar_of(&g, out)?;
    let grads = g.gradients(out)?;
    let zeros = vec![0.0; x.len()];
    let analytic = grads.wrt(leaf).unwrap_or(&zeros);

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.values()[i];
        probe.values_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.values_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.values_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Checks the gradient of a loss built from `store` with respect to each
/// listed parameter. Returns `(name, max relative error)` per parameter.
/// The store's gradient slots are left cleared.
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: F,
    eps: f64,
) -> Result<Vec<(String, f64)>, GraphError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId, GraphError>,
{
    let eval = |store: &ParamStore| -> Result<f64, GraphError> {
        let mut g = Graph::inference();
        let out = f(&mut g, store)?;
        scalar_of(&g, out)
    };

    store.zero_grad();
    let mut g = Graph::inference();
    let out = f(&mut g, store)?;
    scalar_of(&g, out)?;
    g.backward(out, store)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| store.get(id).tensor().grad().expect("backward fills every slot").to_vec())
        .collect();
    store.zero_grad();

    let mut report = Vec::with_capacity(ids.len());
    for (&id, analytic) in ids.iter().zip(&analytic) {
        let mut worst = 0.0f64;
        for i in 0..analytic.len() {
            let orig = store.get(id).tensor().values()[i];
            store.get_mut(id).tensor_mut().values_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).tensor_mut().values_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).tensor_mut().values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i], numeric));
        }
        report.push((store.get(id).name().to_string(), worst));
    }
    Ok(report)
}
