#![allow(dead_code)]

pub mod grad;

use hmamba::corpus::{generate_synthetic, DataSet, SynthConfig, UtteranceRecord};
use hmamba::model::HMambaConfig;
use hmamba::ssm::SsmConfig;

pub fn tiny_data(n_train: usize, n_test: usize, seed: u64) -> DataSet {
    let cfg = SynthConfig {
        n_train,
        n_test,
        phones_per_utt: 4,
        seed,
        ..Default::default()
    };
    DataSet::from_synthetic(&generate_synthetic(&cfg).unwrap()).unwrap()
}

pub fn tiny_config(data: &DataSet) -> HMambaConfig {
    HMambaConfig {
        d: 8,
        ssm: SsmConfig {
            d_state: 4,
            ..Default::default()
        },
        word_conv_kernels: 12,
        head_hidden: 6,
        max_len: 32,
        ..Default::default()
    }
    .with_data(data)
}

/// First training record with exactly `n` positions.
pub fn record_of_len(data: &DataSet, n: usize) -> UtteranceRecord {
    data.train
        .records
        .iter()
        .find(|r| r.len() == n)
        .cloned()
        .expect("no record of the requested length")
}
