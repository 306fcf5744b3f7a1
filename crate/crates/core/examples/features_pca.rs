//! Fit the standardize + PCA pipeline on a generated workload and report how
//! much variance the kept components explain.

use complyflow::features::{FeaturePipeline, DEFAULT_COMPONENTS};
use complyflow::linalg::Matrix;
use complyflow::sim::{generate_workload, preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scenario = preset("securities-firm")?;
    scenario.count = 3000;
    let workload = generate_workload(&scenario)?;
    let rows: Vec<&[f64]> = workload.events.iter().filter_map(|e| e.features.as_deref()).collect();
    let data = Matrix::from_rows(&rows).ok_or("ragged feature rows")?;
    for k in [8, 16, 24, 32, DEFAULT_COMPONENTS] {
        let p = FeaturePipeline::fit(&data, k)?;
        println!("k={k:>3}  input={}  output={}  explained={:.4}", p.input_dim(), p.output_dim(), p.pca.coverage());
    }
    let p = FeaturePipeline::fit(&data, DEFAULT_COMPONENTS)?;
    let z = p.transform(rows[0])?;
    println!("first event projected: [{:.3}, {:.3}, {:.3}, ...]", z[0], z[1], z[2]);
    Ok(())
}
