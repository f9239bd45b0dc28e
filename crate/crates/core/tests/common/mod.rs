#![allow(dead_code)]

use delirium_risk::cohort::{build_cohort, CohortCriteria};
use delirium_risk::comorbidity::CharlsonMap;
use delirium_risk::features::{build_sequences, flatten, FeatureSequence, FlatSample, SequenceConfig};
use delirium_risk::syngen::{generate, SynthConfig, SynthOutput};

pub fn synth(n_patients: usize, seed: u64) -> SynthOutput {
    generate(&SynthConfig {
        n_patients,
        seed,
        ..SynthConfig::default()
    })
    .expect("default generator config is valid")
}

pub fn sequences(n_patients: usize, seed: u64) -> Vec<FeatureSequence> {
    let out = synth(n_patients, seed);
    let cohort = build_cohort(&out.dataset, &CohortCriteria::default());
    build_sequences(&out.dataset, &cohort, &CharlsonMap::default(), SequenceConfig::default())
        .expect("generated data builds sequences")
        .0
}

pub fn flat_samples(n_patients: usize, seed: u64) -> Vec<FlatSample> {
    sequences(n_patients, seed)
        .iter()
        .map(|s| flatten(s, s.max_seq_len()).unwrap())
        .collect()
}

pub fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["delirium-risk"];
    argv.extend_from_slice(args);
    delirium_risk::cli::run(argv)
}
