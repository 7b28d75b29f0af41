use serde::{Deserialize, Serialize};

use super::Result;
use crate::data::ClientDataset;
use crate::fairness::LabeledPrediction;
use crate::models::{self, Batch, LossKind, ModelSpec, ParameterVector};

/// Validation scores. Each client is scored with the hypothesis that fits
/// its own data best, as it would pick during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean of the per-client losses.
    pub global_loss: f64,
    /// Mean loss of the clients assigned to each hypothesis (`None` if none).
    pub per_hypothesis: Vec<Option<f64>>,
    /// Best hypothesis of every client.
    pub assignments: Vec<usize>,
    pub client_losses: Vec<f64>,
}

pub fn evaluate_batches(
    hypotheses: &[ParameterVector],
    batches: &[Batch],
    spec: &ModelSpec,
    kind: LossKind,
) -> Result<Evaluation> {
    let mut assignments = Vec::with_capacity(batches.len());
    let mut client_losses = Vec::with_capacity(batches.len());
    for b in batches {
        let j = models::select_hypothesis(b, hypotheses, spec, kind)?;
        client_losses.push(models::loss(spec, &hypotheses[j], b, kind)?);
        assignments.push(j);
    }
    let mut sums = vec![(0.0, 0usize); hypotheses.len()];
    for (&j, &l) in assignments.iter().zip(&client_losses) {
        sums[j].0 += l;
        sums[j].1 += 1;
    }
    let global_loss = if client_losses.is_empty() {
        f64::NAN
    } else {
        client_losses.iter().sum::<f64>() / client_losses.len() as f64
    };
    Ok(Evaluation {
        global_loss,
        per_hypothesis: sums
            .into_iter()
            .map(|(s, n)| (n > 0).then(|| s / n as f64))
            .collect(),
        assignments,
        client_losses,
    })
}

pub fn evaluate(
    hypotheses: &[ParameterVector],
    clients: &[ClientDataset],
    spec: &ModelSpec,
    kind: LossKind,
) -> Result<Evaluation> {
    let batches = clients
        .iter()
        .map(|c| c.to_batch(spec, kind))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    evaluate_batches(hypotheses, &batches, spec, kind)
}

/// Binary predictions of every sample of every client that carries a
/// sensitive attribute: the client's best hypothesis (by cross-entropy) is
/// applied and the positive-class probability thresholded at 0.5.
pub fn fairness_predictions(
    hypotheses: &[ParameterVector],
    clients: &[ClientDataset],
    spec: &ModelSpec,
) -> Result<Vec<LabeledPrediction>> {
    let mut out = Vec::new();
    for c in clients {
        let Some(sensitive) = c.sensitive else { continue };
        let batch = c.to_batch(spec, LossKind::CrossEntropy)?;
        let j = models::select_hypothesis(&batch, hypotheses, spec, LossKind::CrossEntropy)?;
        let logits = models::predict(spec, &hypotheses[j], &c.features)?;
        for (i, &t) in c.targets.iter().enumerate() {
            let row: Vec<f64> = logits.row(i).iter().copied().collect();
            out.push(LabeledPrediction::new(
                models::positive_probability(&row) >= 0.5,
                t == 1.0,
                sensitive,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_population, PopulationSpec};
    use crate::rng;

    #[test]
    fn single_hypothesis_mean_loss() {
        let spec = ModelSpec::linear(2, 1, false);
        let clients = gen_population(&PopulationSpec::two_regressions(5), "c", &mut rng::derive(1, &[])).unwrap();
        let h = vec![ParameterVector::new(vec![1.0, 1.0])];
        let e = evaluate(&h, &clients, &spec, LossKind::Rmse).unwrap();
        let direct: f64 = clients
            .iter()
            .map(|c| models::loss(&spec, &h[0], &c.to_batch(&spec, LossKind::Rmse).unwrap(), LossKind::Rmse).unwrap())
            .sum::<f64>()
            / clients.len() as f64;
        assert_eq!(e.global_loss, direct);
        assert_eq!(e.per_hypothesis, vec![Some(direct)]);
    }

    #[test]
    fn true_parameters_reach_residual_floor() {
        // with θ = θ*, the residual is u ~ U[0,1) so per-client RMSE < 1
        let spec = ModelSpec::linear(2, 1, false);
        let clients = gen_population(&PopulationSpec::two_regressions(20), "c", &mut rng::derive(2, &[])).unwrap();
        let h = vec![ParameterVector::new(vec![5.0, 6.0]), ParameterVector::new(vec![4.0, -4.5])];
        let e = evaluate(&h, &clients, &spec, LossKind::Rmse).unwrap();
        for (c, (l, j)) in clients.iter().zip(e.client_losses.iter().zip(&e.assignments)) {
            assert!(*l < 1.0);
            assert_eq!(Some(*j), c.generator);
        }
    }

    #[test]
    fn worse_extra_hypothesis_changes_nothing() {
        let spec = ModelSpec::linear(2, 1, false);
        let clients = gen_population(&PopulationSpec::two_regressions(8), "c", &mut rng::derive(3, &[])).unwrap();
        let base = vec![ParameterVector::new(vec![5.0, 6.0]), ParameterVector::new(vec![4.0, -4.5])];
        let mut more = base.clone();
        more.push(ParameterVector::new(vec![1e3, -1e3]));
        let a = evaluate(&base, &clients, &spec, LossKind::Rmse).unwrap();
        let b = evaluate(&more, &clients, &spec, LossKind::Rmse).unwrap();
        assert_eq!(a.client_losses, b.client_losses);
        assert_eq!(b.per_hypothesis[2], None);
    }
}
