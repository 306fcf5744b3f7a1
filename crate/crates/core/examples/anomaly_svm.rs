//! One-class SVM on a Gaussian-mixture benchmark with planted anomalies.

use complyflow::domain::AnomalyFlag;
use complyflow::linalg::Matrix;
use complyflow::sim::tasks::{anomaly_benchmark, roc_auc};
use complyflow::svm::{train_with_config, SvmConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bench = anomaly_benchmark(8, 600, 300, 60, 11);
    let train = Matrix::from_rows(&bench.train).ok_or("ragged rows")?;
    for nu in [0.02, 0.05, 0.1, 0.2] {
        let model = train_with_config(&train, &SvmConfig { nu, ..SvmConfig::default() })?;
        let mut flagged = 0;
        for x in &bench.train {
            if model.decision(x)?.1 == AnomalyFlag::Outlier {
                flagged += 1;
            }
        }
        let scores: Vec<f64> = bench.test.iter().map(|x| model.decision(x).map(|(s, _)| -s)).collect::<Result<_, _>>()?;
        println!(
            "nu={nu:<4}  support vectors={:>3}  train outlier share={:.3}  test AUC={:.4}",
            model.alphas.len(),
            flagged as f64 / bench.train.len() as f64,
            roc_auc(&scores, &bench.test_is_anomaly)
        );
    }
    Ok(())
}
