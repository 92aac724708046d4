use super::{Forward, ModelState};
use crate::autodiff::{relative_error, NodeId};
use crate::Error;

/// Worst relative error per parameter between the reverse-mode gradient of
/// the scalar built by `loss` and a central difference with step `eps`.
/// Runs without dropout.
pub fn grad_check_model<F>(state: &mut ModelState, loss: F, eps: f64) -> Result<Vec<(String, f64)>, Error>
where
    F: Fn(&mut Forward) -> Result<NodeId, Error>,
{
    let eval = |state: &ModelState| -> Result<f64, Error> {
        let mut fw = Forward::inference(state);
        let out = loss(&mut fw)?;
        Ok(fw.graph.value(out).item())
    };

    let analytic = {
        let mut work = state.clone();
        work.store_mut().zero_grad();
        let mut fw = Forward::inference(state);
        let out = loss(&mut fw)?;
        fw.graph.backward(out, work.store_mut())?;
        work.store()
            .iter()
            .map(|(_, p)| p.tensor().grad().map(<[f64]>::to_vec).unwrap_or_default())
            .collect::<Vec<_>>()
    };

    let ids: Vec<_> = state.store().iter().map(|(id, _)| id).collect();
    let mut report = Vec::with_capacity(ids.len());
    for (id, grad) in ids.into_iter().zip(analytic) {
        let mut worst = 0.0f64;
        for (i, &a) in grad.iter().enumerate() {
            let orig = state.store().get(id).tensor().values()[i];
            state.store_mut().get_mut(id).tensor_mut().values_mut()[i] = orig + eps;
            let plus = eval(state);
            state.store_mut().get_mut(id).tensor_mut().values_mut()[i] = orig - eps;
            let minus = eval(state);
            state.store_mut().get_mut(id).tensor_mut().values_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            worst = worst.max(relative_error(a, numeric));
        }
        report.push((state.store().get(id).name().to_string(), worst));
    }
    Ok(report)
}
