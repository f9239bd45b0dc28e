//! SMOTENC oversampling followed by majority downsampling on generated
//! sequences where delirium is the minority class.

use delirium_risk::cohort::{build_cohort, CohortCriteria};
use delirium_risk::comorbidity::CharlsonMap;
use delirium_risk::features::{
    build_sequences, downsample_majority, feature_names, flatten, smotenc, ResampleConfig, SampleSource, SequenceConfig,
};
use delirium_risk::syngen::{generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = generate(&SynthConfig {
        n_patients: 1500,
        baseline_logit: -11.0,
        ..SynthConfig::default()
    })?;
    let cohort = build_cohort(&synth.dataset, &CohortCriteria::default());
    let config = SequenceConfig::default();
    let (sequences, _) = build_sequences(&synth.dataset, &cohort, &CharlsonMap::default(), config)?;
    let samples = sequences
        .iter()
        .map(|s| flatten(s, config.max_seq_len))
        .collect::<Result<Vec<_>, _>>()?;
    let counts = |s: &[delirium_risk::features::FlatSample]| {
        let pos = s.iter().filter(|x| x.label).count();
        (pos, s.len() - pos)
    };
    println!("input: {:?} (positive, negative)", counts(&samples));

    let rc = ResampleConfig::default();
    let over = smotenc(&samples, rc.k, rc.smote_ratio, 1)?;
    println!("after SMOTENC to {:.1}:1: {:?}", rc.smote_ratio, counts(&over));
    let balanced = downsample_majority(&over, rc.majority_ratio, 2)?;
    println!("after downsampling to {:.1}:1: {:?}", rc.majority_ratio, counts(&balanced));

    if let Some(s) = over.iter().find(|s| matches!(s.source, SampleSource::Synthetic { .. })) {
        if let SampleSource::Synthetic { seed, neighbor } = &s.source {
            println!("\nfirst synthetic sample: seed {seed}, neighbor {neighbor}, {} real steps", s.mask_len);
        }
        let last = s.step(s.max_seq_len() - 1);
        for (name, v) in feature_names().iter().zip(last) {
            println!("  {name:<28} {v:.3}");
        }
    }
    Ok(())
}
