//! TF-IDF + softmax classifier over the four compliance document classes.

use complyflow::doc::{train_doc_classifier, DocTrainConfig};
use complyflow::sim::tasks::doc_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (train, test) = doc_corpus(800, 200, 5);
    let model = train_doc_classifier(&train, &DocTrainConfig::default())?;
    println!("test accuracy {:.4}", model.accuracy(&test));
    for text in [
        "quarterly memo on firewall patching after the phishing attempt",
        "client consent and retention policy for personal data",
        "settlement backlog and vendor outage follow up",
        "possible structuring and laundering through shell accounts",
    ] {
        let c = model.classify(text);
        let p = c.probabilities.iter().cloned().fold(0.0, f64::max);
        println!("{:<20} p={p:.3}  {text}", c.label.as_str());
    }
    Ok(())
}
