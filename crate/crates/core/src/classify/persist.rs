//! Versioned JSON model files.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "sleepstate-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    format: &'a str,
    version: u32,
    model: &'a Model,
}

#[derive(Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    model: Model,
}

pub fn save_model<W: Write>(model: &Model, mut out: W) -> Result<()> {
    let env = EnvelopeRef {
        format: MODEL_FORMAT,
        version: MODEL_VERSION,
        model,
    };
    serde_json::to_writer(&mut out, &env).map_err(|e| Error::Model(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_model<R: Read>(input: R) -> Result<Model> {
    let env: Envelope = serde_json::from_reader(input).map_err(|e| Error::Model(e.to_string()))?;
    if env.format != MODEL_FORMAT {
        return Err(Error::Model(format!(
            "unknown model format {:?}",
            env.format
        )));
    }
    if env.version != MODEL_VERSION {
        return Err(Error::Model(format!(
            "unsupported model version {} (expected {MODEL_VERSION})",
            env.version
        )));
    }
    Ok(env.model)
}

#[cfg(test)]
mod tests {
    use super::super::{ForestModel, LogisticModel, Node, Tree};
    use super::*;

    #[test]
    fn logistic_round_trip_is_exact() {
        let m = Model::Logistic(LogisticModel {
            column_names: vec!["a".into(), "b".into()],
            weights: vec![0.1 + 0.2, -1.0 / 3.0],
            bias: std::f64::consts::PI,
            means: vec![1e-300, 5e-324],
            stds: vec![1.0, 7.0 / 9.0],
        });
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        assert_eq!(load_model(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn forest_round_trip_is_exact() {
        let m = Model::Forest(ForestModel {
            column_names: vec!["x".into()],
            trees: vec![Tree {
                nodes: vec![
                    Node::Split {
                        feature: 0,
                        threshold: 0.1 + 0.7,
                        left: 1,
                        right: 2,
                        n_samples: 3,
                        impurity_decrease: 2.0 / 3.0,
                    },
                    Node::Leaf {
                        value: 0.0,
                        n_samples: 1,
                    },
                    Node::Leaf {
                        value: 1.0,
                        n_samples: 2,
                    },
                ],
            }],
            n_estimators: 1,
            min_samples_leaf: 1,
            max_depth: 4,
            features_per_split: 1,
            rng_seed: u64::MAX,
        });
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        assert_eq!(load_model(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn foreign_files_are_rejected() {
        assert!(load_model(&b"{\"format\":\"other\",\"version\":1,\"model\":{}}"[..]).is_err());
        assert!(load_model(&b"not json"[..]).is_err());
        let m = Model::Logistic(LogisticModel::zeros(vec!["a".into()]));
        let mut buf = Vec::new();
        save_model(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace("\"version\":1", "\"version\":2");
        assert!(load_model(text.as_bytes()).is_err());
    }
}
