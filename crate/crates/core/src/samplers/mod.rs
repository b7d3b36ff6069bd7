//! Proposals, Metropolis-Hastings, delayed acceptance and the multiscale
//! Metropolis-within-Gibbs driver.

pub mod chain;
pub mod metropolis;
pub mod proposal;

pub use chain::{
    ChainRecord, ChainState, ChainStats, Checkpoint, FlatLikelihood, LogLikelihood, MsmConfig,
    MsmSampler, PriorHandling, RngSnapshot, SamplerMode, SubdomainStats,
};
pub use metropolis::{
    accept, log_acceptance, log_g, log_rho_simplified, mh_step, two_stage_step, Candidate,
    MhDecision, Scored, Staged, TwoStageDecision,
};
pub use proposal::{Block, Proposal, ProposalKind};

/// Serde adapter writing non-finite log values as strings (`"-inf"`, `"inf"`, `"nan"`).
pub mod log_value {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn encode(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("unrecognised log value {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(encode).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Repr>::deserialize(d)?.map(decode).transpose()
    }
}
