use super::coef::Coefficients;
use super::design::Design;
use super::Family;

fn link(eta: f64, family: Family) -> f64 {
    match family {
        Family::Linear => eta,
        Family::Logistic => 1.0 / (1.0 + (-eta).exp()),
    }
}

/// Predictions for encoded rows: `levels[i][j]` is the training code of
/// variable `j` in row `i` (`None` for a level unseen in training) and
/// `z[i]` the raw continuous values. Logistic fits return probabilities.
pub fn predict(coef: &Coefficients, family: Family, levels: &[Vec<Option<usize>>], z: &[Vec<f64>]) -> Vec<f64> {
    levels
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let zi = z.get(i).map_or(&[][..], |v| v.as_slice());
            link(coef.predict_row(row, zi), family)
        })
        .collect()
}

/// Fitted values on the training design.
pub fn predict_training(coef: &Coefficients, family: Family, design: &Design) -> Vec<f64> {
    coef.linear_predictor(design).into_iter().map(|e| link(e, family)).collect()
}
